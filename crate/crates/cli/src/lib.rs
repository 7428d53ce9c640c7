#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Command implementations behind the `retsim` binary. Each `cmd_*` returns
//! what it wrote on success, or a [`Failure`] carrying the exit status.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use retsim_core::sim::{
    self, metrics, ExperimentOptions, ExperimentReport, LogHeader, Mode, RunLog, RunReport, SimConfig, Simulation,
};
use retsim_core::Error;
use retsim_gateway::{Gateway, GatewayConfig, Session};
use serde::Serialize;

/// Exit status for bad input: config, arguments, unknown names, busy port.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for a run that hit the tissue or a joint limit.
pub const EXIT_RUN_FAILED: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUN_FAILED,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } | Error::InvalidArgument(_) | Error::UnknownExperiment(_) => {
                Failure::usage(e.to_string())
            }
            other => Failure::runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::runtime(format!("{}: {e}", path.display()))
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

/// Reads and validates a run configuration. Every problem is a usage error.
pub fn load_config(path: &Path) -> CmdResult<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    SimConfig::from_toml_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CmdResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_failure(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn ensure_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub log_path: PathBuf,
    pub report_path: PathBuf,
}

/// One scripted run. Writes `run.jsonl` and `report.json` into `out`; a run
/// that touched the tissue or a joint limit is reported and exits 1.
pub fn cmd_run(args: &RunArgs) -> CmdResult<RunOutput> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    ensure_dir(&args.out)?;
    let header = LogHeader::for_config(&cfg);
    let mut sim = Simulation::new(cfg)?;
    let summary = sim.run_to_end()?;
    let motion_smoothness = metrics::motion_smoothness(&sim.task_trajectory(1), sim.engine.config().dt()).ok();
    let log = sim.engine.take_log();

    let log_path = args.out.join("run.jsonl");
    log.write_jsonl(&header, create(&log_path)?)?;
    let report = RunReport {
        seed: summary.seed,
        summary,
        motion_smoothness,
        path: None,
        score_trace: None,
    };
    let report_path = args.out.join("report.json");
    write_json(&report_path, &report)?;

    let s = &report.summary;
    if s.contacts > 0 || s.limit_hits > 0 || s.status != sim::RunStatus::Ok {
        return Err(Failure::runtime(format!(
            "run failed: {} contacts, {} limit hits, status {:?}; outputs in {}",
            s.contacts,
            s.limit_hits,
            s.status,
            args.out.display()
        )));
    }
    Ok(RunOutput {
        report,
        log_path,
        report_path,
    })
}

/// Keeps the ticks on which a frame was read out or something happened.
pub fn thin_to_frames(log: &RunLog) -> RunLog {
    RunLog {
        records: log
            .records
            .iter()
            .filter(|r| r.frame.is_some() || !r.events.is_empty())
            .cloned()
            .collect(),
    }
}

/// Runs a named suite. Writes `report.json` and one frame-rate log per run
/// under `out/logs/`.
pub fn cmd_experiment(name: &str, out: &Path, opts: &ExperimentOptions) -> CmdResult<ExperimentReport> {
    if !sim::EXPERIMENTS.contains(&name) {
        return Err(Failure::usage(format!(
            "unknown experiment `{name}`; expected one of {}",
            sim::EXPERIMENTS.join(", ")
        )));
    }
    let opts = ExperimentOptions {
        keep_logs: true,
        ..opts.clone()
    };
    let (report, logs) = sim::run_experiment_with_logs(name, &opts)?;
    let log_dir = out.join("logs");
    ensure_dir(&log_dir)?;
    for (arm, seed, log) in &logs {
        let a = report.arm(arm).expect("every log belongs to an arm");
        let header = LogHeader {
            mode: a.mode,
            axial_controller: a.axial_controller.unwrap_or(report.config.axial_controller),
            seed: *seed,
            ..LogHeader::for_config(&report.config)
        };
        let path = log_dir.join(format!("{arm}_seed{seed}.jsonl"));
        thin_to_frames(log).write_jsonl(&header, create(&path)?)?;
    }
    let text = report.to_json()?;
    let path = out.join("report.json");
    fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub distance_um: f64,
    pub cr: f64,
    pub intensity: f64,
}

/// Distances from `min` to `max` inclusive (to within a thousandth of a
/// step), in µm.
pub fn sweep_distances(min_um: f64, max_um: f64, step_um: f64) -> CmdResult<Vec<f64>> {
    if !(min_um.is_finite() && max_um.is_finite() && step_um.is_finite()) {
        return Err(Failure::usage("sweep bounds must be finite"));
    }
    if !(min_um > 0.0 && min_um < max_um) {
        return Err(Failure::usage(format!("need 0 < min_um < max_um, got {min_um} and {max_um}")));
    }
    if !(step_um > 0.0) {
        return Err(Failure::usage(format!("step_um must be positive, got {step_um}")));
    }
    let n = ((max_um - min_um) / step_um + 1e-3).floor() as usize + 1;
    if n > 1_000_000 {
        return Err(Failure::usage(format!("{n} sweep points is too many")));
    }
    Ok((0..n).map(|k| min_um + step_um * k as f64).collect())
}

/// Scores frames from `min_um` to `max_um` over the default tissue and writes
/// `distance_um,cr,intensity` rows to `out`.
pub fn cmd_focus_sweep(min_um: f64, max_um: f64, step_um: f64, out: &Path) -> CmdResult<Vec<SweepRow>> {
    let distances = sweep_distances(min_um, max_um, step_um)?;
    let renderer = sim::build_renderer(&SimConfig::default())?;
    let rows = distances
        .iter()
        .map(|&d| {
            let (cr, intensity) = renderer.sample_at(d * 1e-6)?;
            Ok(SweepRow {
                distance_um: d,
                cr,
                intensity,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut w = csv::Writer::from_writer(create(out)?);
    for r in &rows {
        w.serialize(r).map_err(|e| io_failure(out, e))?;
    }
    w.flush().map_err(|e| io_failure(out, e))?;
    Ok(rows)
}

/// Loads the config and binds the gateway; the session log streams to
/// `log_path`. Fails with a usage error before binding on a bad config.
pub async fn start_gateway(port: u16, config: &Path, log_path: &Path) -> CmdResult<Gateway> {
    let cfg = load_config(config)?;
    let mut session = Session::new(cfg, GatewayConfig::default())?;
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Failure::usage(format!("cannot listen on {addr}: {e}")))?;
    let log = create(log_path)?;
    session.set_log_sink(Box::new(log))?;
    Gateway::start(listener, session).map_err(|e| Failure::runtime(e.to_string()))
}

/// Serves until ctrl-c, then shuts down and flushes the session log.
pub fn cmd_serve(port: u16, config: &Path, log_path: &Path) -> CmdResult<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::runtime(e.to_string()))?;
    rt.block_on(async {
        let gw = start_gateway(port, config, log_path).await?;
        println!("listening on http://{} (session log {})", gw.addr, log_path.display());
        tokio::signal::ctrl_c()
            .await
            .map_err(|e| Failure::runtime(format!("cannot wait for ctrl-c: {e}")))?;
        log::info!("shutting down");
        let mut session = gw.shutdown().await;
        session.flush_log()?;
        println!("stopped after {:.1} s of session time", session.time());
        Ok(())
    })
}

/// `RETSIM_LOG_LEVEL` ∈ {error, warn, info, debug}; default warn.
pub fn init_logging() {
    let level = std::env::var("RETSIM_LOG_LEVEL").unwrap_or_default();
    let filter = match level.to_ascii_lowercase().as_str() {
        "" => "warn".to_string(),
        l @ ("error" | "warn" | "info" | "debug") => l.to_string(),
        other => {
            eprintln!("RETSIM_LOG_LEVEL `{other}` not recognised; using warn");
            "warn".to_string()
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&filter).try_init();
}

