//! Scripted experiment suites and their reports.
//!
//! * `exp1`: freehand scanning against the hybrid teleoperated framework.
//! * `exp2`: optimizer-only, model-only and combined axial control in the
//!   hybrid teleoperated framework.
//! * `exp3`: the four robotic frameworks, compared on path smoothness and
//!   completion time.
//! * `user_task`: the four frameworks with patient motion switched on.
//!
//! Runs are independent and may execute on several threads; reports do not
//! depend on the thread count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::config::{AxialController, Mode, SimConfig};
use super::driver::{RunSummary, Simulation};
use super::engine::build_renderer;
use super::log::{Phase, RunLog};
use super::metrics;
use crate::error::{Error, Result};
use crate::geometry::Polygon;
use crate::imaging::Renderer;

pub const EXPERIMENTS: [&str; 4] = ["exp1", "exp2", "exp3", "user_task"];
pub const REPORT_VERSION: u32 = 1;

/// Every this many control ticks one path point is kept in reports.
const PATH_DECIMATION: usize = 24;
/// Every this many frames one score is kept in exp1 traces.
const TRACE_DECIMATION: usize = 6;

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub seeds: Vec<u64>,
    /// Configuration the suite starts from; each suite then sets its own mode,
    /// controller and scenario.
    pub base: SimConfig,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
    /// Keep the full run logs next to the report.
    pub keep_logs: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            seeds: (1..=5).collect(),
            base: SimConfig::default(),
            threads: 0,
            keep_logs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub summary: RunSummary,
    /// Mean jerk norm of the task-phase tip path (m/s³).
    pub motion_smoothness: Option<f64>,
    /// Decimated task-phase tip path (m).
    pub path: Option<Vec<[f64; 3]>>,
    /// Decimated `(t, score)` trace of the task phase.
    pub score_trace: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub mode: Mode,
    pub axial_controller: Option<AxialController>,
    pub runs: Vec<RunReport>,
    /// Means over seeds of the per-run values.
    pub mean_cr: Option<f64>,
    pub in_focus_fraction: Option<f64>,
    pub motion_smoothness: Option<f64>,
    pub completion_time_s: Option<f64>,
    pub registration_time_s: f64,
    pub contacts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub version: u32,
    pub seeds: Vec<u64>,
    /// Scenario shared by all arms, before the per-arm mode is set.
    pub config: SimConfig,
    pub arms: Vec<ArmReport>,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(super::log::json_err)
    }
}

/// Full logs of a suite, keyed by arm name and seed.
pub type ExperimentLogs = Vec<(String, u64, RunLog)>;

/// Arm definition: name, mode and axial controller.
#[derive(Debug, Clone)]
struct Arm {
    name: &'static str,
    mode: Mode,
    controller: AxialController,
}

impl Arm {
    const fn new(name: &'static str, mode: Mode, controller: AxialController) -> Self {
        Self { name, mode, controller }
    }
}

const FRAMEWORKS: [Arm; 4] = [
    Arm::new("cooperative", Mode::Cooperative, AxialController::Combined),
    Arm::new("hybrid_cooperative", Mode::HybridCooperative, AxialController::Combined),
    Arm::new("teleoperated", Mode::Teleoperated, AxialController::Combined),
    Arm::new("hybrid_teleoperated", Mode::HybridTeleoperated, AxialController::Combined),
];

/// The scripted hand force saturates at the force that moves the tool at the
/// scripted speed, and the spring reaches it at the capture radius.
pub fn cooperative_operator(cfg: &mut SimConfig) {
    cfg.operator.force_cap_n = cfg.operator.speed_m_s / cfg.alpha_m_s_n;
    cfg.operator.force_gain_n_m = cfg.operator.force_cap_n / cfg.operator.capture_radius_m;
}

/// Scenario for the axial-controller comparison: a wider triangle over the
/// curved floor, scanned briskly with short pauses along each edge during
/// which the pedal is released, after a slower registration pass.
pub fn exp2_scenario(base: &SimConfig) -> Result<SimConfig> {
    let mut cfg = base.clone();
    cfg.mode = Mode::HybridTeleoperated;
    cfg.stop_when_finished = true;
    cfg.phantom.patient_motion = false;
    let op = &mut cfg.operator;
    op.triangle_side_m = 6e-3;
    op.waypoints_m = None;
    op.speed_m_s = 1e-3;
    op.registration_speed_m_s = Some(300e-6);
    op.stops_per_edge = 4;
    op.dwell_s = 1.0;
    op.release_pedal_on_dwell = true;
    let region = Polygon::equilateral(Vector2::zeros(), op.triangle_side_m)?.scaled(1.2);
    cfg.phantom.registration_region_m = Some(region.vertices().iter().map(|p| [p.x, p.y]).collect());
    cfg.validate()?;
    Ok(cfg)
}

fn task_scenario(base: &SimConfig, patient_motion: bool) -> Result<SimConfig> {
    let mut cfg = base.clone();
    cfg.stop_when_finished = true;
    cfg.phantom.patient_motion = patient_motion;
    cfg.validate()?;
    Ok(cfg)
}

fn arm_config(scenario: &SimConfig, arm: &Arm, seed: u64) -> SimConfig {
    let mut cfg = scenario.clone();
    cfg.mode = arm.mode;
    cfg.axial_controller = arm.controller;
    cfg.seed = seed;
    if arm.mode.is_cooperative() {
        cooperative_operator(&mut cfg);
    }
    cfg
}

struct Collected {
    arm: String,
    seed: u64,
    report: RunReport,
    log: Option<RunLog>,
}

fn finish_run(sim: &mut Simulation, arm: &str, detail: bool, keep_log: bool) -> Result<Collected> {
    let summary = sim.run_to_end()?;
    let cfg = sim.engine.config();
    let traj = sim.task_trajectory(1);
    let motion_smoothness = metrics::motion_smoothness(&traj, cfg.dt()).ok();
    let (path, score_trace) = if detail {
        let path = traj.iter().step_by(PATH_DECIMATION).map(|p| [p.x, p.y, p.z]).collect();
        let trace = sim
            .engine
            .log()
            .frames()
            .filter(|(r, _)| r.phase == Phase::Task)
            .step_by(TRACE_DECIMATION)
            .map(|(r, f)| [r.t, f.score])
            .collect();
        (Some(path), Some(trace))
    } else {
        (None, None)
    };
    let seed = cfg.seed;
    let log = keep_log.then(|| sim.engine.log().clone());
    Ok(Collected {
        arm: arm.to_string(),
        seed,
        report: RunReport {
            seed,
            summary,
            motion_smoothness,
            path,
            score_trace,
        },
        log,
    })
}

type Job<'a> = Box<dyn FnOnce() -> Result<Vec<Collected>> + Send + 'a>;

fn run_jobs(jobs: Vec<Job<'_>>, threads: usize) -> Result<Vec<Collected>> {
    let threads = if threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        threads
    }
    .clamp(1, jobs.len().max(1));
    let n = jobs.len();
    let queue: Mutex<Vec<Option<Job<'_>>>> = Mutex::new(jobs.into_iter().map(Some).collect());
    let results: Mutex<Vec<Option<Result<Vec<Collected>>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = queue.lock().expect("queue lock")[i].take().expect("each job runs once");
                let out = job();
                results.lock().expect("results lock")[i] = Some(out);
            });
        }
    });
    let mut all = Vec::new();
    for r in results.into_inner().expect("results lock") {
        all.extend(r.expect("every job ran")?);
    }
    Ok(all)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    match v {
        Some(v) if !v.is_empty() => Some(v.iter().sum::<f64>() / v.len() as f64),
        _ => None,
    }
}

fn assemble(
    name: &str,
    opts: &ExperimentOptions,
    scenario: SimConfig,
    arms: &[Arm],
    collected: Vec<Collected>,
) -> (ExperimentReport, ExperimentLogs) {
    let mut logs = Vec::new();
    let mut by_arm: Vec<(Arm, Vec<RunReport>)> = arms.iter().map(|a| (a.clone(), Vec::new())).collect();
    for c in collected {
        if let Some((_, runs)) = by_arm.iter_mut().find(|(a, _)| a.name == c.arm) {
            runs.push(c.report);
        }
        if let Some(log) = c.log {
            logs.push((c.arm, c.seed, log));
        }
    }
    let arms = by_arm
        .into_iter()
        .map(|(arm, mut runs)| {
            runs.sort_by_key(|r| r.seed);
            ArmReport {
                name: arm.name.to_string(),
                mode: arm.mode,
                axial_controller: arm.mode.is_hybrid().then_some(arm.controller),
                mean_cr: mean(runs.iter().map(|r| r.summary.mean_cr)),
                in_focus_fraction: mean(runs.iter().map(|r| r.summary.in_focus_fraction)),
                motion_smoothness: mean(runs.iter().map(|r| r.motion_smoothness)),
                completion_time_s: mean(runs.iter().map(|r| r.summary.completion_time_s)),
                registration_time_s: mean(runs.iter().map(|r| Some(r.summary.registration_time_s))).unwrap_or(0.0),
                contacts: runs.iter().map(|r| r.summary.contacts).sum(),
                runs,
            }
        })
        .collect();
    (
        ExperimentReport {
            experiment: name.to_string(),
            version: REPORT_VERSION,
            seeds: opts.seeds.clone(),
            config: scenario,
            arms,
        },
        logs,
    )
}

fn simple_jobs<'a>(
    scenario: &'a SimConfig,
    arms: &'a [Arm],
    seeds: &'a [u64],
    renderer: &'a Arc<Renderer>,
    detail: bool,
    keep_logs: bool,
) -> Vec<Job<'a>> {
    let mut jobs: Vec<Job<'a>> = Vec::new();
    for &seed in seeds {
        for arm in arms {
            jobs.push(Box::new(move || {
                let cfg = arm_config(scenario, arm, seed);
                let mut sim = Simulation::with_renderer(cfg, renderer.clone())?;
                Ok(vec![finish_run(&mut sim, arm.name, detail, keep_logs)?])
            }));
        }
    }
    jobs
}

/// Runs a named suite and returns its report and, if requested, the logs.
pub fn run_experiment_with_logs(name: &str, opts: &ExperimentOptions) -> Result<(ExperimentReport, ExperimentLogs)> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Error::UnknownExperiment(name.to_string()));
    }
    if opts.seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    opts.base.validate()?;
    let renderer = build_renderer(&opts.base)?;
    let keep = opts.keep_logs;

    match name {
        "exp1" => {
            let arms = [
                Arm::new("manual", Mode::Manual, AxialController::Combined),
                Arm::new("hybrid_teleoperated", Mode::HybridTeleoperated, AxialController::Combined),
            ];
            let scenario = task_scenario(&opts.base, false)?;
            let jobs = simple_jobs(&scenario, &arms, &opts.seeds, &renderer, true, keep);
            let collected = run_jobs(jobs, opts.threads)?;
            Ok(assemble(name, opts, scenario, &arms, collected))
        }
        "exp2" => {
            let arms = [
                Arm::new("optimizer", Mode::HybridTeleoperated, AxialController::Optimizer),
                Arm::new("model", Mode::HybridTeleoperated, AxialController::Model),
                Arm::new("combined", Mode::HybridTeleoperated, AxialController::Combined),
            ];
            let scenario = exp2_scenario(&opts.base)?;
            let mut jobs: Vec<Job<'_>> = Vec::new();
            for &seed in &opts.seeds {
                let (scenario, arms, renderer) = (&scenario, &arms, &renderer);
                jobs.push(Box::new(move || {
                    let mut sim = Simulation::with_renderer(arm_config(scenario, &arms[0], seed), renderer.clone())?;
                    Ok(vec![finish_run(&mut sim, arms[0].name, false, keep)?])
                }));
                // the model-based arms share one registration pass
                jobs.push(Box::new(move || {
                    let mut sim = Simulation::with_renderer(arm_config(scenario, &arms[2], seed), renderer.clone())?;
                    sim.run_registration()?;
                    let mut model = sim.clone();
                    model.engine.set_axial_controller(AxialController::Model);
                    Ok(vec![
                        finish_run(&mut model, arms[1].name, false, keep)?,
                        finish_run(&mut sim, arms[2].name, false, keep)?,
                    ])
                }));
            }
            let collected = run_jobs(jobs, opts.threads)?;
            Ok(assemble(name, opts, scenario, &arms, collected))
        }
        _ => {
            let scenario = task_scenario(&opts.base, name == "user_task")?;
            let jobs = simple_jobs(&scenario, &FRAMEWORKS, &opts.seeds, &renderer, true, keep);
            let collected = run_jobs(jobs, opts.threads)?;
            Ok(assemble(name, opts, scenario, &FRAMEWORKS, collected))
        }
    }
}

pub fn run_experiment(name: &str, opts: &ExperimentOptions) -> Result<ExperimentReport> {
    run_experiment_with_logs(name, opts).map(|(r, _)| r)
}
