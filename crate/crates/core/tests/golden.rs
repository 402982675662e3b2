//! Byte-exact snapshots of prompts and reports. Regenerate with
//! `UPDATE_GOLDEN=1 cargo test -p tacos-core --test golden`.

use std::path::PathBuf;
use std::sync::Arc;

use tacos::actions::render_api_doc;
use tacos::harness::{plot_csv, report_text, run_batch_in, run_trial, BackendSource, TaskId, TaskSpec, TrialConfig};
use tacos::llm::Role;
use tacos::par::Execution;
use tacos::{AblationMode, ActionRegistry, WorldState};

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    if expected != actual {
        let line = expected.lines().zip(actual.lines()).position(|(a, b)| a != b).map_or(0, |i| i + 1);
        panic!("{name} differs from the snapshot (first differing line {line}):\n{actual}");
    }
}

#[test]
fn api_doc() {
    golden("api_doc.txt", &render_api_doc(&ActionRegistry::default()));
}

#[test]
fn prompts_of_a_task1_trial() {
    let world = Arc::new(WorldState::urban());
    let cfg = TrialConfig { task: TaskSpec::new(TaskId::Task1), mode: AblationMode::Full, swarm_size: 4, seed: 1 };
    let t = run_trial(&cfg, &world, 0, &BackendSource::Fixture);
    assert!(t.record.success);
    let records = &t.transcript.records;
    let coord = &records[0].request;
    assert_eq!(coord.messages[0].role, Role::System);
    golden("coordinator_system.txt", &coord.messages[0].content);
    // the task instruction, after the warmup plan ran
    let task_req = records
        .iter()
        .map(|r| &r.request)
        .find(|r| r.last_user().is_some_and(|u| u.ends_with(&cfg.task.instruction)))
        .unwrap();
    golden("coordinator_user.txt", task_req.last_user().unwrap());
    let sup = records.iter().map(|r| &r.request).find(|r| r.last_user().is_some_and(|u| u.starts_with("PLAN plan-0002"))).unwrap();
    golden("supervisor_system.txt", &sup.messages[0].content);
    golden("supervisor_cycle.txt", sup.last_user().unwrap());
}

#[test]
fn report_table_and_csv() {
    let world = Arc::new(WorldState::urban());
    let mut results = Vec::new();
    for task in TaskId::ALL {
        for mode in AblationMode::ALL {
            let cfg = TrialConfig { task: TaskSpec::new(task), mode, swarm_size: 4, seed: 7 };
            results.push(run_batch_in(&cfg, &world, 3, &BackendSource::Fixture, Execution::Sequential));
        }
    }
    golden("report.txt", &report_text(&results));
    golden("plot.csv", &plot_csv(&results));
}
