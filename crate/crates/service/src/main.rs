use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tacos::audit::audit_trace;
use tacos::harness::fixtures::{demo_script, task_script};
use tacos::harness::fuzz::{fuzz_suite, FuzzConfig};
use tacos::harness::{callsigns, plot_csv, report_text, run_batch_in, spawn_positions, BackendSource, BatchResult, TaskId, TaskSpec, TrialConfig};
use tacos::llm::{LlmBackend, RecordingBackend, RemoteConfig, Script, StubServer};
use tacos::par::Execution;
use tacos::planner::PlannerConfig;
use tacos::swarm::Limits;
use tacos::{AblationMode, Pipeline, SimConfig, Simulator, Trace, WorldState};
use tacos_service::{router, AppState, BackendChoice, ServiceConfig};

macro_rules! outln {
    ($($t:tt)*) => { emit(&format!("{}\n", format_args!($($t)*))) };
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

#[derive(Parser)]
#[command(name = "tacos", version, about = "Natural-language control of a simulated UAV swarm")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run instructions one after another and print the execution reports.
    Run(RunArgs),
    /// Seeded benchmark batches over tasks, ablation modes and swarm sizes.
    Bench(BenchArgs),
    /// Serve the HTTP API and telemetry stream.
    Serve(ServeArgs),
    /// Trajectory CSV from a trace, or bar-chart CSV from bench results.
    Plot(PlotArgs),
    /// Audit a trace for separation, clearance and speed violations.
    Audit(AuditArgs),
    /// Random planner missions with a trace audit each.
    Fuzz(FuzzArgs),
    /// Write the scripted model behaviour used by the benchmarks.
    Fixture(FixtureArgs),
    /// OpenAI-compatible endpoint answering from a script.
    MockLlm(MockArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// Built-in scripted demo (benchmark tasks, "Alfa, take off", refusals).
    Demo,
    /// Script file given with --script.
    Script,
    /// OpenAI-compatible endpoint.
    Remote,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "demo")]
    backend: BackendKind,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, env = "TACOS_LLM_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "TACOS_LLM_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, env = "TACOS_LLM_MODEL")]
    model: Option<String>,
    #[arg(long, env = "TACOS_LLM_TIMEOUT_SECS")]
    timeout: Option<f64>,
}

impl BackendArgs {
    fn remote(&self) -> Result<RemoteConfig> {
        let endpoint = self.endpoint.clone().context("a remote backend needs --endpoint or TACOS_LLM_ENDPOINT")?;
        let mut cfg = RemoteConfig::new(endpoint);
        cfg.api_key = self.api_key.clone().filter(|k| !k.is_empty());
        if let Some(t) = self.timeout {
            cfg.timeout_secs = t;
        }
        Ok(cfg)
    }

    fn choice(&self) -> Result<BackendChoice> {
        Ok(match self.backend {
            BackendKind::Demo => BackendChoice::Demo,
            BackendKind::Script => {
                let path = self.script.as_ref().context("--backend script needs --script FILE")?;
                BackendChoice::Script(Script::load(path).with_context(|| format!("reading {}", path.display()))?)
            }
            BackendKind::Remote => BackendChoice::Remote(self.remote()?),
        })
    }
}

fn load_world(path: Option<&Path>) -> Result<WorldState> {
    match path {
        None => Ok(WorldState::urban()),
        Some(p) => WorldState::load(p).with_context(|| format!("loading scenario {}", p.display())),
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; the bundled urban scenario by default.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Repeat to send several instructions in one session.
    #[arg(long, short, required = true)]
    instruction: Vec<String>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "full")]
    mode: AblationMode,
    #[arg(long, default_value_t = 4)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = tacos::supervisor::DEFAULT_CYCLE_PERIOD)]
    cycle_period: f64,
    /// Write the simulation trace (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the model transcript (JSON lines).
    #[arg(long)]
    transcript: Option<PathBuf>,
}

fn run(a: RunArgs) -> Result<bool> {
    let world = Arc::new(load_world(a.scenario.as_deref())?);
    let ids = callsigns(a.size);
    let backend = a.backend.choice()?.build(&world, &ids).map_err(anyhow::Error::msg)?;
    let recorder = Arc::new(RecordingBackend::new(backend));
    let mut sim_cfg = SimConfig::new(spawn_positions(&world, a.size, a.seed, 0));
    sim_cfg.seed = a.seed;
    let mut sim = Simulator::new(world.clone(), sim_cfg)?;
    let service = ServiceConfig { cycle_period: a.cycle_period, model_id: a.backend.model.clone(), ..ServiceConfig::new(WorldState::urban(), BackendChoice::Demo) };
    let mut pipeline = Pipeline::new(recorder.clone() as Arc<dyn LlmBackend>, &world, service.pipeline_config(a.mode));

    let mut all_ok = true;
    for text in &a.instruction {
        match pipeline.handle_instruction(text, &mut sim) {
            Ok((_, report)) => {
                all_ok &= report.success;
                outln!("{}", report.to_json());
            }
            Err(e) => {
                all_ok = false;
                eprintln!("instruction {text:?} rejected: {e}");
            }
        }
    }
    if let Some(p) = &a.trace {
        sim.trace().write_jsonl(fs::File::create(p)?)?;
    }
    if let Some(p) = &a.transcript {
        recorder.transcript().save(p)?;
    }
    Ok(all_ok)
}

#[derive(Args)]
struct BenchArgs {
    /// 0, 1 or 2; comma separated for several.
    #[arg(long, value_delimiter = ',', default_values = ["0", "1", "2"])]
    task: Vec<TaskId>,
    #[arg(long, value_delimiter = ',', default_values = ["full", "woc", "wor"])]
    mode: Vec<AblationMode>,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 12])]
    size: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Query the model endpoint instead of the scripted fixtures.
    #[arg(long)]
    live: bool,
    #[command(flatten)]
    backend: BackendArgs,
    /// Run trials one after another.
    #[arg(long)]
    sequential: bool,
    /// Directory for results.json, report.txt and plot.csv.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

fn bench(a: BenchArgs) -> Result<bool> {
    let world = Arc::new(load_world(a.scenario.as_deref())?);
    let source = if a.live {
        BackendSource::Live(Arc::new(tacos::llm::RemoteBackend::new(a.backend.remote()?)))
    } else {
        BackendSource::Fixture
    };
    let exec = if a.sequential { Execution::Sequential } else { Execution::default() };
    let mut results = Vec::new();
    for &task in &a.task {
        for &mode in &a.mode {
            for &size in &a.size {
                let cfg = TrialConfig { task: TaskSpec::new(task), mode, swarm_size: size, seed: a.seed };
                let r = run_batch_in(&cfg, &world, a.runs, &source, exec);
                eprintln!("{task} {mode} size {size}: success {:.2}", r.success_rate);
                results.push(r);
            }
        }
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("results.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    fs::write(a.out.join("report.txt"), report_text(&results))?;
    fs::write(a.out.join("plot.csv"), plot_csv(&results))?;
    emit(&report_text(&results));
    eprintln!("wrote {}", a.out.display());
    Ok(true)
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "TACOS_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "TACOS_SCENARIO")]
    scenario: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "full")]
    mode: AblationMode,
    /// Default swarm size for new sessions.
    #[arg(long, default_value_t = 4)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "TACOS_CYCLE_PERIOD", default_value_t = tacos::supervisor::DEFAULT_CYCLE_PERIOD)]
    cycle_period: f64,
    /// Wall seconds per simulated second (0 = as fast as possible).
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    #[arg(long)]
    transcript_dir: Option<PathBuf>,
}

async fn serve(a: ServeArgs) -> Result<bool> {
    let world = load_world(a.scenario.as_deref())?;
    let mut cfg = ServiceConfig::new(world, a.backend.choice()?);
    if let Some(p) = &a.scenario {
        cfg.scenario = p.display().to_string();
    }
    cfg.mode = a.mode;
    cfg.swarm_size = a.size;
    cfg.seed = a.seed;
    cfg.cycle_period = a.cycle_period;
    cfg.time_scale = a.time_scale;
    cfg.model_id = a.backend.model.clone();
    if let Some(d) = &a.transcript_dir {
        fs::create_dir_all(d)?;
    }
    cfg.transcript_dir = a.transcript_dir;
    let app = router(AppState::new(cfg));
    let listener = tokio::net::TcpListener::bind(a.listen).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(true)
}

#[derive(Args)]
struct PlotArgs {
    /// Trace file (JSON lines) to turn into trajectory rows.
    trace: Option<PathBuf>,
    /// results.json from `tacos bench`, turned into bar-chart rows.
    #[arg(long, conflicts_with = "trace")]
    results: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn plot(a: PlotArgs) -> Result<bool> {
    let csv = match (&a.trace, &a.results) {
        (Some(t), _) => read_trace(t)?.plot_csv(),
        (None, Some(r)) => {
            let results: Vec<BatchResult> = serde_json::from_str(&fs::read_to_string(r)?)?;
            plot_csv(&results)
        }
        (None, None) => bail!("give a trace file or --results"),
    };
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => emit(&csv),
    }
    Ok(true)
}

fn read_trace(p: &Path) -> Result<Trace> {
    let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
    Ok(Trace::read_jsonl(BufReader::new(f))?)
}

#[derive(Args)]
struct AuditArgs {
    trace: PathBuf,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = PlannerConfig::default().d_min)]
    d_min: f64,
    #[arg(long, default_value_t = Limits::default().v_max)]
    v_max: f64,
}

fn audit(a: AuditArgs) -> Result<bool> {
    let world = load_world(a.scenario.as_deref())?;
    let report = audit_trace(&read_trace(&a.trace)?, &world, a.d_min, a.v_max);
    outln!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.is_clean())
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

fn fuzz(a: FuzzArgs) -> Result<bool> {
    let world = Arc::new(load_world(a.scenario.as_deref())?);
    let exec = if a.sequential { Execution::Sequential } else { Execution::default() };
    let mut clean = true;
    for o in fuzz_suite(&world, a.size, a.seed, a.count, &FuzzConfig::default(), exec) {
        match o {
            Ok(o) => {
                clean &= o.audit.is_clean();
                outln!(
                    "seed {:>6}  arrivals {:>3}/{:<3} min_d {:.3}  max_v {:.3}  violations {}",
                    o.seed,
                    o.arrivals,
                    o.goals,
                    o.audit.min_pairwise_distance,
                    o.audit.max_speed,
                    o.audit.violations.len()
                );
            }
            Err(e) => {
                clean = false;
                outln!("error: {e}");
            }
        }
    }
    Ok(clean)
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, required_unless_present = "demo")]
    task: Option<TaskId>,
    #[arg(long, default_value = "full")]
    mode: AblationMode,
    #[arg(long, default_value_t = 4)]
    size: usize,
    /// The interactive demo script instead of a task fixture.
    #[arg(long)]
    demo: bool,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn fixture_script(world: &WorldState, task: Option<TaskId>, mode: AblationMode, size: usize) -> Script {
    let ids = callsigns(size);
    match task {
        Some(t) => task_script(&TaskSpec::new(t), mode, world, &ids),
        None => demo_script(world, &ids),
    }
}

fn fixture(a: FixtureArgs) -> Result<bool> {
    let world = load_world(a.scenario.as_deref())?;
    let script = fixture_script(&world, if a.demo { None } else { a.task }, a.mode, a.size);
    match &a.out {
        Some(p) => script.save(p)?,
        None => emit(&(serde_json::to_string_pretty(&script)? + "\n")),
    }
    Ok(true)
}

#[derive(Args)]
struct MockArgs {
    #[arg(long, default_value = "127.0.0.1:8081")]
    listen: String,
    #[arg(long, conflicts_with = "demo")]
    script: Option<PathBuf>,
    /// Serve the demo script for this swarm size.
    #[arg(long)]
    demo: bool,
    #[arg(long, default_value_t = 4)]
    size: usize,
}

fn mock_llm(a: MockArgs) -> Result<bool> {
    let script = match &a.script {
        Some(p) => Script::load(p)?,
        None => demo_script(&WorldState::urban(), &callsigns(a.size)),
    };
    let backend = Arc::new(tacos::llm::ScriptedBackend::new(script)?);
    let server = StubServer::start(backend, &a.listen)?;
    outln!("{}", server.url());
    server.join();
    Ok(true)
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().cmd {
        Cmd::Run(a) => run(a),
        Cmd::Bench(a) => bench(a),
        Cmd::Serve(a) => tokio::runtime::Runtime::new().map_err(Into::into).and_then(|rt| rt.block_on(serve(a))),
        Cmd::Plot(a) => plot(a),
        Cmd::Audit(a) => audit(a),
        Cmd::Fuzz(a) => fuzz(a),
        Cmd::Fixture(a) => fixture(a),
        Cmd::MockLlm(a) => mock_llm(a),
    };
    match result {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
