use super::BatchResult;

fn sorted(results: &[BatchResult]) -> Vec<&BatchResult> {
    let mut v: Vec<&BatchResult> = results.iter().collect();
    v.sort_by_key(|r| (r.task, r.mode, r.swarm_size));
    v
}

/// Table grouped by task, then ablation mode, then swarm size.
pub fn report_text(results: &[BatchResult]) -> String {
    let mut out = String::from("task   mode  size  runs  success      L\n");
    let mut last_task = None;
    for r in sorted(results) {
        if last_task.is_some_and(|t| t != r.task) {
            out.push('\n');
        }
        last_task = Some(r.task);
        let l = r.avg_steps_l.map_or_else(|| "-".to_string(), |l| format!("{l:.2}"));
        out.push_str(&format!(
            "{:<6} {:<5} {:>4} {:>5} {:>7.1}% {:>6}\n",
            r.task.to_string(),
            r.mode.as_str(),
            r.swarm_size,
            r.n_runs,
            100.0 * r.success_rate,
            l
        ));
    }
    out
}

/// Bar-chart data: one row per (task, mode, size). `avg_steps_l` is empty
/// when no trial succeeded.
pub fn plot_csv(results: &[BatchResult]) -> String {
    let mut out = String::from("task,mode,size,runs,success_rate,avg_steps_l\n");
    for r in sorted(results) {
        let l = r.avg_steps_l.map_or_else(String::new, |l| format!("{l:.4}"));
        out.push_str(&format!(
            "{},{},{},{},{:.4},{}\n",
            r.task,
            r.mode.as_str(),
            r.swarm_size,
            r.n_runs,
            r.success_rate,
            l
        ));
    }
    out
}
