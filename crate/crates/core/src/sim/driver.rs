//! Scripted operator driving an [`Engine`]: an optional registration pass
//! around the registration region, then the triangular scanning task.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::config::{AxialController, Mode, SimConfig};
use super::engine::{Engine, HumanInput, RunStatus};
use super::log::{Event, Phase, RunLog};
use super::metrics;
use crate::error::Result;
use crate::geometry::RigidTransform;
use crate::imaging::Renderer;
use crate::operator::{
    operator_force, operator_mtm_motion, AxialPolicy, NaivePolicy, NavigationState, OperatorScript, ScriptMode,
    TremorModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Registration,
    Task,
    Done,
}

/// Where the master handle sits when teleoperation is engaged.
fn mtm_home() -> RigidTransform {
    RigidTransform::from_translation(Vector3::new(0.0, 0.3, 0.1))
}

#[derive(Debug, Clone)]
struct Driver {
    stage: Stage,
    script: OperatorScript,
    task_waypoints: Vec<Vector2<f64>>,
    task_speed: f64,
    tremor: TremorModel,
    nav: NavigationState,
    naive: NaivePolicy,
    /// The user's own axial travel along the normal.
    z_user: f64,
    stage_start: f64,
    /// Tip position when the stage started (manual mode).
    origin: Vector3<f64>,
    last_frame_seen: Option<u64>,
    /// Release the pedal for one tick to re-engage the master.
    clutch: bool,
    was_handover: bool,
}

impl Driver {
    fn script_mode(mode: Mode) -> ScriptMode {
        if mode.is_cooperative() {
            ScriptMode::CooperativeForce
        } else {
            ScriptMode::TeleopPose
        }
    }

    fn input(&mut self, engine: &Engine) -> Result<HumanInput> {
        let cfg = engine.config();
        let mode = engine.mode();
        let dt = cfg.dt();
        let t = engine.time();
        let ts = t - self.stage_start;

        if let Some(c) = engine.available_frame() {
            if self.last_frame_seen != Some(c.index) {
                self.last_frame_seen = Some(c.index);
                self.naive.observe(t, c.score);
            }
        }
        let naive_v = match self.script.axial_policy {
            AxialPolicy::NaiveFocusAttempt => self.naive.velocity(t),
            AxialPolicy::Hold => 0.0,
        };
        let handover = engine.in_handover();
        if handover != self.was_handover {
            // the master reference is rebased when axial control changes hands
            self.z_user = 0.0;
            self.was_handover = handover;
        }
        let user_axial = !mode.is_hybrid() || handover;
        if user_axial {
            self.z_user += naive_v * dt;
        }

        let pausing = mode.is_teleoperated() && self.script.release_pedal_on_dwell && self.script.in_dwell(ts);
        if self.clutch || pausing || self.stage == Stage::Done {
            self.clutch = false;
            return Ok(HumanInput::default());
        }
        let mut input = HumanInput {
            pedal: true,
            ..HumanInput::default()
        };
        match mode {
            Mode::Manual => {
                let p = self.script.path_point(ts) - self.script.waypoints[0];
                input.hand_tip = Some(self.origin + Vector3::new(p.x, p.y, self.z_user) + self.tremor.sample(t));
            }
            Mode::Cooperative | Mode::HybridCooperative => {
                let tip = engine.tip_pose().translation;
                let mut f = operator_force(&self.script, &self.tremor, t, &tip.xy(), &mut self.nav)?;
                if user_axial && naive_v != 0.0 {
                    f.force += engine.normal()? * (naive_v / cfg.alpha_m_s_n);
                }
                input.force = Some(f);
            }
            Mode::Teleoperated | Mode::HybridTeleoperated => {
                input.mtm = Some(operator_mtm_motion(
                    &self.script,
                    &self.tremor,
                    ts,
                    &mtm_home(),
                    &Matrix3::identity(),
                    cfg.beta,
                    self.z_user,
                )?);
            }
        }
        Ok(input)
    }

    fn stage_finished(&self, engine: &Engine) -> bool {
        let ts = engine.time() - self.stage_start;
        match engine.mode() {
            Mode::Manual => ts >= self.script.path_duration(),
            Mode::Cooperative | Mode::HybridCooperative => self.nav.finished(),
            Mode::Teleoperated | Mode::HybridTeleoperated => {
                let last = *self.script.waypoints.last().expect("validated non-empty");
                ts >= self.script.path_duration()
                    && (engine.tip_pose().translation.xy() - last).norm() < self.script.capture_radius
            }
        }
    }

    fn start_task(&mut self, engine: &Engine) {
        let tip = engine.tip_pose().translation;
        let mut waypoints = self.task_waypoints.clone();
        if !engine.mode().is_cooperative() {
            waypoints.insert(0, tip.xy());
        }
        self.script.waypoints = waypoints;
        self.script.speed = self.task_speed;
        self.stage = Stage::Task;
        self.nav = NavigationState::default();
        self.stage_start = engine.time();
        self.origin = tip;
        self.z_user = 0.0;
        self.clutch = true;
    }
}

/// Outcome of a scripted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub axial_controller: AxialController,
    pub seed: u64,
    pub status: RunStatus,
    pub completed: bool,
    pub completion_time_s: Option<f64>,
    pub registration_time_s: f64,
    pub mean_cr: Option<f64>,
    pub in_focus_fraction: Option<f64>,
    pub contacts: usize,
    pub limit_hits: usize,
    pub registration_points: Option<usize>,
    pub ticks: u64,
}

impl RunSummary {
    pub fn from_log(engine: &Engine, log: &RunLog, completed: bool) -> Result<Self> {
        let t2 = engine.config().autofocus.t2;
        let count = |name: &str| log.events().filter(|(_, e)| e.name() == name).count();
        let registration_points = log.events().find_map(|(_, e)| match e {
            Event::RegistrationDone { points } => Some(*points),
            _ => None,
        });
        Ok(Self {
            mode: engine.mode(),
            axial_controller: engine.axial_controller(),
            seed: engine.config().seed,
            status: engine.status().clone(),
            completed,
            completion_time_s: metrics::completion_time(log)?,
            registration_time_s: metrics::registration_time(log),
            mean_cr: metrics::mean_cr(log).ok(),
            in_focus_fraction: metrics::in_focus_fraction(log, t2).ok(),
            contacts: count("contact"),
            limit_hits: count("limit_hit"),
            registration_points,
            ticks: engine.tick(),
        })
    }
}

/// An engine together with the scripted operator that drives it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub engine: Engine,
    driver: Driver,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let renderer = super::engine::build_renderer(&cfg)?;
        Self::with_renderer(cfg, renderer)
    }

    pub fn with_renderer(cfg: SimConfig, renderer: Arc<Renderer>) -> Result<Self> {
        let mode = cfg.mode;
        let mut script = OperatorScript::from_config(&cfg.operator, Driver::script_mode(mode))?;
        let task_waypoints = script.waypoints.clone();
        let script_speed = script.speed;
        let register = mode.is_hybrid() && cfg.axial_controller.needs_registration();
        let phantom = crate::phantom::TissueModel::from_config(&cfg.phantom)?;
        if register {
            let mut v = phantom.registration_region().vertices().to_vec();
            v.push(v[0]);
            script.waypoints = v;
            script.speed = cfg.operator.registration_speed_m_s.unwrap_or(cfg.operator.speed_m_s);
            script.validate()?;
        }
        let start = script.waypoints[0];
        let tremor = TremorModel::new(
            cfg.operator.tremor_amplitude_m,
            (cfg.operator.tremor_band_hz[0], cfg.operator.tremor_band_hz[1]),
            cfg.seed ^ 0x7e3a_11c5,
        )?;
        let naive = NaivePolicy::new(cfg.operator.naive_speed_m_s, cfg.operator.reaction_delay_s, cfg.autofocus.t2);
        let mut engine = Engine::with_renderer_at(cfg, renderer, Some(start))?;
        if register {
            engine.begin_registration();
        }
        let origin = engine.tip_pose().translation;
        Ok(Self {
            driver: Driver {
                stage: if register { Stage::Registration } else { Stage::Task },
                script,
                task_waypoints,
                task_speed: script_speed,
                tremor,
                nav: NavigationState::default(),
                naive,
                z_user: 0.0,
                stage_start: 0.0,
                origin,
                last_frame_seen: None,
                clutch: false,
                was_handover: false,
            },
            engine,
        })
    }

    pub fn stage(&self) -> Stage {
        self.driver.stage
    }

    fn out_of_time(&self) -> bool {
        self.engine.terminated() || self.engine.time() >= self.engine.config().duration_s
    }

    /// One tick of operator plus engine.
    pub fn step(&mut self) -> Result<()> {
        let input = self.driver.input(&self.engine)?;
        self.engine.step(&input)?;
        if self.driver.stage != Stage::Done && self.driver.stage_finished(&self.engine) {
            match self.driver.stage {
                Stage::Registration => {
                    // a failed fit is logged; the task then runs without a model
                    let _ = self.engine.finish_registration();
                    self.driver.start_task(&self.engine);
                }
                Stage::Task => {
                    self.engine.push_event(Event::TaskFinished);
                    self.driver.stage = Stage::Done;
                }
                Stage::Done => {}
            }
        }
        Ok(())
    }

    /// Runs until the registration pass is over.
    pub fn run_registration(&mut self) -> Result<()> {
        while self.driver.stage == Stage::Registration && !self.out_of_time() {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until the task is finished (or the time limit) and summarises.
    pub fn run_to_end(&mut self) -> Result<RunSummary> {
        while !self.out_of_time() {
            if self.driver.stage == Stage::Done && self.engine.config().stop_when_finished {
                break;
            }
            self.step()?;
        }
        let completed = self.driver.stage == Stage::Done;
        RunSummary::from_log(&self.engine, self.engine.log(), completed)
    }

    /// Task-phase tip trajectory sampled every `every` ticks.
    pub fn task_trajectory(&self, every: usize) -> Vec<Vector3<f64>> {
        self.engine
            .log()
            .records
            .iter()
            .filter(|r| r.phase == Phase::Task && r.pedal)
            .step_by(every.max(1))
            .map(|r| Vector3::from(r.tip_continuous))
            .collect()
    }
}

/// Runs one scripted simulation from a configuration.
pub fn run_scripted(cfg: SimConfig) -> Result<(RunSummary, RunLog)> {
    let mut sim = Simulation::new(cfg)?;
    let summary = sim.run_to_end()?;
    Ok((summary, sim.engine.take_log()))
}
