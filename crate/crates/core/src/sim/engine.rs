//! Fixed-step simulation of one probe-holding robot scanning the phantom.
//!
//! Each control tick: read the tip pose and its distance to the tissue; on
//! camera ticks capture a frame and, once it has been read out one frame
//! period later, hand it to the axial controller; build the lateral command
//! from the human input; merge the channels; solve for joint velocities and
//! advance the joints.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::config::{AxialController, AxialFrame, Mode, SimConfig};
use super::log::{Event, FrameRecord, Phase, RunLog, TickRecord};
use crate::control::{
    admittance, autofocus_step, autofocus_with_model, compliance_wrench, hybrid_combine, register_prior,
    teleop_error, teleop_lateral, AutoFocusState, AxialDecision, PriorModel, ScanSample, TeleopState,
};
use crate::error::{Error, Result};
use crate::geometry::{motion_spec, normal_frame, RigidTransform, Twist, Wrench};
use crate::imaging::{intensity, PcleFrame, RenderOptions, Renderer, TextureOptions, TissueTexture};
use crate::phantom::TissueModel;
use crate::robot::{low_level_step, mid_level_optimize, JointState, JointVector, RobotModel};

/// Human input for one tick. Which fields matter depends on the mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HumanInput {
    /// Activation pedal; when released every human channel is ignored.
    pub pedal: bool,
    /// Hand force on the end-effector (cooperative modes).
    pub force: Option<Wrench>,
    /// Master pose (teleoperated modes).
    pub mtm: Option<RigidTransform>,
    /// Freehand tip position (manual mode).
    pub hand_tip: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { reason: String },
}

/// A frame waiting to be read out, or already available to the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapturedFrame {
    pub index: u64,
    pub t: f64,
    pub score: f64,
    pub tip: Vector3<f64>,
}

/// Builds the renderer described by a configuration. Calibration takes a
/// moment, so callers running many simulations should share the result.
pub fn build_renderer(cfg: &SimConfig) -> Result<Arc<Renderer>> {
    let texture = TissueTexture::generate(&TextureOptions {
        tile_px: cfg.render.texture_tile_px,
        seed: cfg.render.texture_seed,
        pitch: cfg.render.fov_m / cfg.render.frame_px as f64,
        ..TextureOptions::default()
    })?;
    let options = RenderOptions {
        frame_px: cfg.render.frame_px,
        fov: cfg.render.fov_m,
        noise_std: cfg.render.noise_std,
        gain_per_mm: cfg.render.gain_per_mm,
        band_edge_cr: cfg.autofocus.t2,
        ..RenderOptions::default()
    };
    Ok(Arc::new(Renderer::new(Arc::new(texture), cfg.focus, options)?))
}

fn frame_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 step over the pair
    let mut z = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: SimConfig,
    renderer: Arc<Renderer>,
    phantom: TissueModel,
    robot: RobotModel,
    joints: JointState,
    /// Freehand tip in manual mode.
    hand_tip: Vector3<f64>,
    tick: u64,
    mode: Mode,
    axial_controller: AxialController,
    phase: Phase,
    autofocus: AutoFocusState,
    prior: Option<PriorModel>,
    scan: Vec<ScanSample>,
    pending: Option<CapturedFrame>,
    available: Option<CapturedFrame>,
    last_frame: Option<PcleFrame>,
    /// Axial displacement requested by the last controller update.
    held_dx: f64,
    handover: bool,
    teleop: Option<TeleopState>,
    prev_pedal: bool,
    prev_limit: bool,
    status: RunStatus,
    terminated: bool,
    log: RunLog,
    last_record: Option<TickRecord>,
}

impl Engine {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let renderer = build_renderer(&cfg)?;
        Self::with_renderer(cfg, renderer)
    }

    /// Starts with the probe above `start_xy` at the configured distance.
    pub fn with_renderer(cfg: SimConfig, renderer: Arc<Renderer>) -> Result<Self> {
        Self::with_renderer_at(cfg, renderer, None)
    }

    pub fn with_renderer_at(
        cfg: SimConfig,
        renderer: Arc<Renderer>,
        start_xy: Option<nalgebra::Vector2<f64>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let phantom = TissueModel::from_config(&cfg.phantom)?;
        let robot = RobotModel::from_config(&cfg.robot)?;
        let start_xy = start_xy.unwrap_or_else(nalgebra::Vector2::zeros);
        let surface = phantom.surface_height(&start_xy, 0.0)?;
        let n = phantom.surface_normal(&start_xy, 0.0)?;
        let foot = Vector3::new(start_xy.x, start_xy.y, surface);
        let tip = foot + n * cfg.start_distance_m;
        let q = tip - robot.tool_offset.translation;
        let q = JointVector::new(q.x, q.y, q.z, 0.0, 0.0);
        robot.check_limits(&q)?;
        Ok(Self {
            mode: cfg.mode,
            axial_controller: cfg.axial_controller,
            cfg,
            renderer,
            phantom,
            robot,
            joints: JointState::at_rest(q),
            hand_tip: tip,
            tick: 0,
            phase: Phase::Task,
            autofocus: AutoFocusState::default(),
            prior: None,
            scan: Vec::new(),
            pending: None,
            available: None,
            last_frame: None,
            held_dx: 0.0,
            handover: false,
            teleop: None,
            prev_pedal: false,
            prev_limit: false,
            status: RunStatus::Ok,
            terminated: false,
            log: RunLog::default(),
            last_record: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn renderer(&self) -> &Arc<Renderer> {
        &self.renderer
    }

    pub fn phantom(&self) -> &TissueModel {
        &self.phantom
    }

    pub fn robot(&self) -> &RobotModel {
        &self.robot
    }

    pub fn joints(&self) -> &JointState {
        &self.joints
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn axial_controller(&self) -> AxialController {
        self.axial_controller
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn prior(&self) -> Option<&PriorModel> {
        self.prior.as_ref()
    }

    pub fn status(&self) -> &RunStatus {
        &self.status
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn take_log(&mut self) -> RunLog {
        std::mem::take(&mut self.log)
    }

    pub fn last_record(&self) -> Option<&TickRecord> {
        self.last_record.as_ref()
    }

    /// Newest frame read out and available to the controller.
    pub fn available_frame(&self) -> Option<&CapturedFrame> {
        self.available.as_ref()
    }

    /// Newest rendered image.
    pub fn last_frame(&self) -> Option<&PcleFrame> {
        self.last_frame.as_ref()
    }

    pub fn autofocus_state(&self) -> &AutoFocusState {
        &self.autofocus
    }

    /// The user currently holds axial control because the view is out of
    /// range.
    pub fn in_handover(&self) -> bool {
        self.handover
    }

    pub fn tip_pose(&self) -> RigidTransform {
        match self.mode {
            Mode::Manual => RigidTransform::from_translation(self.hand_tip),
            _ => self.robot.fk_unchecked(&self.joints.positions),
        }
    }

    fn tip_continuous(&self) -> Vector3<f64> {
        match self.mode {
            Mode::Manual => self.hand_tip,
            _ => self.robot.fk_unchecked(&(self.joints.positions + self.joints.residual)).translation,
        }
    }

    /// Axial direction used by the hybrid split at the current tip.
    pub fn normal(&self) -> Result<Vector3<f64>> {
        match self.cfg.axial_frame {
            AxialFrame::Vertical => Ok(Vector3::z()),
            AxialFrame::SurfaceNormal => {
                let tip = self.tip_pose().translation;
                self.phantom.surface_normal(&tip.xy(), self.time())
            }
        }
    }

    pub fn set_axial_controller(&mut self, c: AxialController) {
        self.axial_controller = c;
    }

    /// Switches the framework; controller memories are cleared.
    pub fn set_mode(&mut self, mode: Mode) {
        if mode == self.mode {
            return;
        }
        if mode == Mode::Manual {
            self.hand_tip = self.tip_pose().translation;
        } else if self.mode == Mode::Manual {
            let q = self.hand_tip - self.robot.tool_offset.translation;
            let q = JointVector::new(q.x, q.y, q.z, 0.0, 0.0).zip_zip_map(&self.robot.q_lower, &self.robot.q_upper, |v, l, u| v.clamp(l, u));
            self.joints = JointState::at_rest(q);
        }
        self.mode = mode;
        self.autofocus = AutoFocusState::default();
        self.held_dx = 0.0;
        self.handover = false;
        self.teleop = None;
    }

    /// Starts recording the registration scan.
    pub fn begin_registration(&mut self) {
        self.phase = Phase::Registration;
        self.scan.clear();
    }

    /// Fits the prior model from the recorded scan and switches to the task
    /// phase. A failed fit leaves the previous model in place.
    pub fn finish_registration(&mut self) -> Result<&PriorModel> {
        self.phase = Phase::Task;
        let result = register_prior(&self.scan, self.cfg.autofocus.t2);
        let event = match &result {
            Ok(m) => Event::RegistrationDone {
                points: m.sample_count(),
            },
            Err(e) => Event::RegistrationFailed { reason: e.to_string() },
        };
        self.push_event(event);
        let model = result?;
        self.prior = Some(model);
        Ok(self.prior.as_ref().expect("just set"))
    }

    pub fn scan_samples(&self) -> &[ScanSample] {
        &self.scan
    }

    /// Adds an event to the most recent record.
    pub fn push_event(&mut self, e: Event) {
        if let Some(r) = self.log.records.last_mut() {
            r.events.push(e.clone());
        }
        if let Some(r) = self.last_record.as_mut() {
            r.events.push(e);
        }
    }

    fn fail(&mut self, reason: &str) {
        if self.status == RunStatus::Ok {
            self.status = RunStatus::Failed { reason: reason.into() };
        }
    }

    /// Advances one control tick.
    pub fn step(&mut self, input: &HumanInput) -> Result<&TickRecord> {
        if self.terminated {
            return Err(Error::InvalidArgument("run has terminated".into()));
        }
        let dt = self.cfg.dt();
        let t = self.time();
        let mut events = Vec::new();

        if self.mode == Mode::Manual && input.pedal {
            if let Some(h) = input.hand_tip {
                self.hand_tip = h;
            }
        }
        let pose = self.tip_pose();
        let tip = pose.translation;
        let (_, distance) = self.phantom.probe_foot(&tip, t)?;
        let n = match self.cfg.axial_frame {
            AxialFrame::Vertical => Vector3::z(),
            AxialFrame::SurfaceNormal => self.phantom.surface_normal(&tip.xy(), t)?,
        };
        if distance <= 0.0 {
            events.push(Event::Contact { distance_m: distance });
            self.fail("probe touched the tissue");
            if self.cfg.safety_strict {
                self.terminated = true;
            }
        }

        // Lateral channel from the human.
        let pedal = input.pedal;
        if pedal && !self.prev_pedal {
            self.teleop = None;
        }
        let mut steering_consumed = false;
        let mut haptic_n = 0.0;
        let lateral = if !pedal {
            Twist::zero()
        } else {
            match self.mode {
                Mode::Manual => {
                    steering_consumed = input.hand_tip.is_some();
                    Twist::zero()
                }
                Mode::Cooperative | Mode::HybridCooperative => match &input.force {
                    Some(f) => {
                        steering_consumed = true;
                        // Twists are referenced at the tip, so only the
                        // rotation of the tip frame enters the adjoint.
                        admittance(f, self.cfg.alpha_m_s_n, &RigidTransform::from_rotation(pose.rotation))
                    }
                    None => Twist::zero(),
                },
                Mode::Teleoperated | Mode::HybridTeleoperated => match &input.mtm {
                    Some(mtm) => {
                        steering_consumed = true;
                        let st = match self.teleop {
                            Some(st) => st,
                            None => {
                                let st = TeleopState::new(*mtm, pose, Matrix3::identity(), self.cfg.beta)?;
                                self.teleop = Some(st);
                                st
                            }
                        };
                        let (eps, theta) = teleop_error(&st, mtm, &pose)?;
                        let v = self.robot.jacobian(&self.joints.positions)? * self.joints.velocities;
                        let w = compliance_wrench(&self.cfg.haptic, &eps, &theta, &v.fixed_rows::<3>(0).into_owned());
                        haptic_n = w.force.norm();
                        teleop_lateral(&eps, &theta, dt)?
                    }
                    None => Twist::zero(),
                },
            }
        };
        self.prev_pedal = pedal;

        // Camera: the frame captured last camera tick becomes available now.
        let mut frame_rec = None;
        let mut controller_ran = false;
        if self.tick.is_multiple_of(self.cfg.ticks_per_frame()) {
            let index = self.tick / self.cfg.ticks_per_frame();
            self.available = self.pending.take();
            let frame = self
                .renderer
                .render(tip.xy(), distance.max(0.0), frame_seed(self.cfg.seed, index))?;
            let score = self.renderer.metric().score(&frame)?;
            frame_rec = Some(FrameRecord {
                index,
                score,
                intensity: intensity(&frame),
                distance_m: distance,
            });
            self.pending = Some(CapturedFrame { index, t, score, tip });
            self.last_frame = Some(frame.with_timestamp(t));
            if let Some(c) = self.available {
                if self.mode.is_hybrid() {
                    self.update_axial(&c, &n, n.dot(&lateral.linear));
                    controller_ran = true;
                }
                if self.phase == Phase::Registration {
                    self.scan.push(ScanSample {
                        xy: c.tip.xy(),
                        z: c.tip.z,
                        score: c.score,
                    });
                }
            }
        }

        // outside the hybrid modes, and on handover, the user owns the axis
        let axial_velocity = if !self.mode.is_hybrid() || self.handover {
            n.dot(&lateral.linear)
        } else {
            self.held_dx / self.cfg.frame_period()
        };

        let twist = if self.mode.is_hybrid() {
            let spec = motion_spec(&normal_frame(&n)?)?;
            hybrid_combine(&spec, &lateral, &Twist::new(n * axial_velocity, Vector3::zeros()))
        } else {
            lateral
        };

        // Robot.
        let mut qd = JointVector::zeros();
        if self.mode != Mode::Manual {
            match mid_level_optimize(&self.robot, &self.joints.positions, &twist.to_vector(), dt) {
                Ok(v) => qd = v,
                Err(Error::InfeasibleBox { joint, .. }) => {
                    events.push(Event::LimitHit { joints: vec![joint] });
                    self.fail("joint limit reached");
                }
                Err(e) => return Err(e),
            }
            self.joints = low_level_step(&self.robot, &self.joints, &qd, dt);
            let at_limit = self.robot.joints_at_limit(&self.joints.positions);
            if !at_limit.is_empty() && !self.prev_limit {
                events.push(Event::LimitHit { joints: at_limit.clone() });
                self.fail("joint limit reached");
            }
            self.prev_limit = !at_limit.is_empty();
        }

        let tip_c = self.tip_continuous();
        let q = self.joints.positions;
        let record = TickRecord {
            tick: self.tick,
            t,
            phase: self.phase,
            tip: tip.into(),
            tip_continuous: tip_c.into(),
            q: q.into(),
            qd: qd.into(),
            twist: twist.to_vector().into(),
            axial_cmd: axial_velocity,
            axial_decision: controller_ran.then_some(self.autofocus.last),
            cr: self.available.map(|c| c.score),
            frame: frame_rec,
            distance_m: distance,
            pedal,
            steering_consumed,
            haptic_n,
            events,
        };
        if self.tick.is_multiple_of(self.cfg.log_every as u64) || !record.events.is_empty() || record.frame.is_some() {
            self.log.records.push(record.clone());
        }
        self.last_record = Some(record);
        self.tick += 1;
        Ok(self.last_record.as_ref().expect("just set"))
    }

    fn update_axial(&mut self, c: &CapturedFrame, n: &Vector3<f64>, user_axial_velocity: f64) {
        let cfg = &self.cfg.autofocus;
        let period = self.cfg.frame_period();
        let registering = self.phase == Phase::Registration;
        let (dx, st) = match self.axial_controller {
            AxialController::Optimizer => autofocus_step(cfg, &self.autofocus, c.score, &c.tip, n, user_axial_velocity, period),
            _ if registering => autofocus_step(cfg, &self.autofocus, c.score, &c.tip, n, user_axial_velocity, period),
            AxialController::Combined => autofocus_with_model(
                cfg,
                &self.autofocus,
                self.prior.as_ref(),
                c.score,
                &c.tip,
                n,
                user_axial_velocity,
                period,
            ),
            AxialController::Model => self.model_only(c, n),
        };
        let handover = st.last == AxialDecision::Handover;
        if handover != self.handover {
            // re-engage the master so no axial error built up while the
            // robot held the axis is released at once
            self.teleop = None;
        }
        self.handover = handover;
        self.autofocus = st;
        self.held_dx = dx.clamp(-cfg.max_step_m, cfg.max_step_m);
    }

    /// Prior model without image feedback: always head for the model height
    /// inside the model region, hold still outside it.
    fn model_only(&self, c: &CapturedFrame, n: &Vector3<f64>) -> (f64, AutoFocusState) {
        let cfg = &self.cfg.autofocus;
        let mut st = AutoFocusState {
            q_prev: c.score,
            x_probe_prev: c.tip,
            primed: true,
            ..self.autofocus
        };
        let dx = match &self.prior {
            Some(m) if m.region().contains(&c.tip.xy()) => {
                let dx = (m.evaluate(c.tip.x, c.tip.y) - c.tip.z) / n.z.max(1e-6);
                st.f_m = dx.abs() < cfg.resolution_m;
                st.last = AxialDecision::Model;
                dx
            }
            _ => {
                st.last = AxialDecision::InFocus;
                0.0
            }
        };
        st.dx_prev = dx;
        (dx, st)
    }
}
