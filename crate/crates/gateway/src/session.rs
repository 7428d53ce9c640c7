//! The engine-side state of a live session. Everything here is synchronous;
//! the server owns one [`Session`] on a dedicated thread and feeds it
//! commands between ticks.

use std::io::Write;
use std::sync::Arc;

use base64::Engine as _;
use nalgebra::{Vector2, Vector3};
use retsim_core::geometry::{RigidTransform, Wrench};
use retsim_core::imaging::Renderer;
use retsim_core::sim::{build_renderer, Engine, Event, HumanInput, LogHeader, Mode, SimConfig, Simulation, Stage};
use retsim_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::protocol::{Ack, SessionCommand, TelemetryFrame, Thumbnail};

pub const THUMBNAIL_PX: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub telemetry_rate_hz: f64,
    pub force_cap_n: f64,
    pub mtm_delta_cap_mm: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            telemetry_rate_hz: 30.0,
            force_cap_n: 5.0,
            mtm_delta_cap_mm: 10.0,
        }
    }
}

/// Where the master handle rests when a session starts.
fn mtm_home() -> RigidTransform {
    RigidTransform::from_translation(Vector3::new(0.0, 0.3, 0.1))
}

/// Scales `v` down to norm `cap`; returns whether it had to.
fn clamp_norm<const N: usize>(v: [f64; N], cap: f64) -> Option<([f64; N], bool)> {
    if v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > cap {
        Some((v.map(|x| x * cap / norm), true))
    } else {
        Some((v, false))
    }
}

pub struct Session {
    gw: GatewayConfig,
    cfg: SimConfig,
    renderer: Arc<Renderer>,
    engine: Engine,
    registration: Option<Simulation>,
    pedal: bool,
    /// Held hand force until replaced or the pedal is released.
    force: Vector2<f64>,
    /// Latest master displacement not yet consumed.
    pending_delta: Option<Vector3<f64>>,
    mtm: RigidTransform,
    hand_tip: Vector3<f64>,
    /// Session time of the current engine's t = 0.
    t_offset: f64,
    ticks_per_telemetry: u64,
    ticks: u64,
    events: Vec<Event>,
    log: Option<Box<dyn Write + Send>>,
}

impl Session {
    pub fn new(cfg: SimConfig, gw: GatewayConfig) -> Result<Self> {
        cfg.validate()?;
        if !(gw.telemetry_rate_hz > 0.0 && gw.telemetry_rate_hz <= cfg.control_rate_hz) {
            return Err(Error::InvalidConfig {
                key: "telemetry_rate_hz".into(),
                reason: "must be positive and at most the control rate".into(),
            });
        }
        if !(gw.force_cap_n > 0.0 && gw.mtm_delta_cap_mm > 0.0) {
            return Err(Error::InvalidConfig {
                key: "force_cap_n".into(),
                reason: "safety caps must be positive".into(),
            });
        }
        let renderer = build_renderer(&cfg)?;
        let engine = Engine::with_renderer(cfg.clone(), renderer.clone())?;
        let hand_tip = engine.tip_pose().translation;
        Ok(Self {
            ticks_per_telemetry: (cfg.control_rate_hz / gw.telemetry_rate_hz).round().max(1.0) as u64,
            gw,
            cfg,
            renderer,
            engine,
            registration: None,
            pedal: false,
            force: Vector2::zeros(),
            pending_delta: None,
            mtm: mtm_home(),
            hand_tip,
            t_offset: 0.0,
            ticks: 0,
            events: Vec::new(),
            log: None,
        })
    }

    /// Streams every tick record to `w` as JSON lines, after a header.
    pub fn set_log_sink(&mut self, mut w: Box<dyn Write + Send>) -> Result<()> {
        let header = LogHeader::for_config(&self.cfg);
        writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?)?;
        self.log = Some(w);
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn gateway_config(&self) -> &GatewayConfig {
        &self.gw
    }

    pub fn engine(&self) -> &Engine {
        match &self.registration {
            Some(sim) => &sim.engine,
            None => &self.engine,
        }
    }

    pub fn time(&self) -> f64 {
        self.t_offset + self.engine().time()
    }

    pub fn pedal(&self) -> bool {
        self.pedal
    }

    pub fn registering(&self) -> bool {
        self.registration.is_some()
    }

    pub fn ticks_per_telemetry(&self) -> u64 {
        self.ticks_per_telemetry
    }

    fn release(&mut self) {
        self.pedal = false;
        self.force = Vector2::zeros();
        self.pending_delta = None;
    }

    /// The client went away: release the pedal. Auto-focus keeps running.
    pub fn disconnect(&mut self) {
        self.release();
    }

    pub fn apply(&mut self, cmd: &SessionCommand) -> Ack {
        let kind = cmd.name();
        let mode = self.engine().mode();
        match cmd {
            SessionCommand::SteerForce { force_n } => {
                if let Some(reason) = self.steering_blocked() {
                    return Ack::reject(Some(kind), reason);
                }
                if !mode.is_cooperative() {
                    return Ack::reject(Some(kind), format!("hand force is not used in {} mode", mode.name()));
                }
                let Some((f, clamped)) = clamp_norm(*force_n, self.gw.force_cap_n) else {
                    return Ack::reject(Some(kind), "force must be finite");
                };
                self.force = Vector2::from(f);
                Ack {
                    clamped,
                    ..Ack::ok(kind)
                }
            }
            SessionCommand::SteerMtmDelta { delta_mm } => {
                if let Some(reason) = self.steering_blocked() {
                    return Ack::reject(Some(kind), reason);
                }
                if mode.is_cooperative() {
                    return Ack::reject(Some(kind), format!("master motion is not used in {} mode", mode.name()));
                }
                let Some((d, clamped)) = clamp_norm(*delta_mm, self.gw.mtm_delta_cap_mm) else {
                    return Ack::reject(Some(kind), "displacement must be finite");
                };
                self.pending_delta = Some(Vector3::from(d) * 1e-3);
                Ack {
                    clamped,
                    ..Ack::ok(kind)
                }
            }
            SessionCommand::SetMode { mode: m } => {
                if self.pedal {
                    return Ack::reject(Some(kind), "release the pedal before changing mode");
                }
                if self.registering() {
                    return Ack::reject(Some(kind), "registration in progress");
                }
                self.engine.set_mode(*m);
                self.hand_tip = self.engine.tip_pose().translation;
                Ack::ok(kind)
            }
            SessionCommand::Pedal { pressed } => {
                if self.registering() && *pressed {
                    return Ack::reject(Some(kind), "registration in progress");
                }
                if *pressed {
                    self.pedal = true;
                } else {
                    self.release();
                }
                Ack::ok(kind)
            }
            SessionCommand::StartRegistration => {
                if self.registering() {
                    return Ack::reject(Some(kind), "registration already running");
                }
                if !mode.is_hybrid() || !self.cfg.axial_controller.needs_registration() {
                    return Ack::reject(Some(kind), "registration needs a hybrid mode with a model-based controller");
                }
                let mut cfg = self.cfg.clone();
                cfg.mode = mode;
                match Simulation::with_renderer(cfg, self.renderer.clone()) {
                    Ok(sim) => {
                        self.release();
                        self.t_offset += self.engine.time();
                        self.registration = Some(sim);
                        Ack::ok(kind)
                    }
                    Err(e) => Ack::reject(Some(kind), e.to_string()),
                }
            }
            SessionCommand::Reset => {
                let mut cfg = self.cfg.clone();
                cfg.mode = mode;
                match Engine::with_renderer(cfg, self.renderer.clone()) {
                    Ok(engine) => {
                        self.release();
                        self.t_offset += self.engine().time();
                        self.engine = engine;
                        self.registration = None;
                        self.hand_tip = self.engine.tip_pose().translation;
                        self.mtm = mtm_home();
                        Ack::ok(kind)
                    }
                    Err(e) => Ack::reject(Some(kind), e.to_string()),
                }
            }
        }
    }

    fn steering_blocked(&self) -> Option<&'static str> {
        if self.registering() {
            Some("registration in progress")
        } else if !self.pedal {
            Some("pedal released")
        } else {
            None
        }
    }

    fn human_input(&mut self) -> HumanInput {
        if !self.pedal {
            return HumanInput::default();
        }
        let mut input = HumanInput {
            pedal: true,
            ..HumanInput::default()
        };
        let delta = self.pending_delta.take();
        match self.engine.mode() {
            Mode::Manual => {
                if let Some(d) = delta {
                    self.hand_tip += d * self.cfg.beta;
                }
                input.hand_tip = Some(self.hand_tip);
            }
            Mode::Cooperative | Mode::HybridCooperative => {
                input.force = Some(Wrench::from_force(Vector3::new(self.force.x, self.force.y, 0.0)));
            }
            Mode::Teleoperated | Mode::HybridTeleoperated => {
                if let Some(d) = delta {
                    self.mtm.translation += d;
                }
                input.mtm = Some(self.mtm);
            }
        }
        input
    }

    /// Advances one control tick; returns a telemetry frame when one is due.
    pub fn tick(&mut self) -> Result<Option<TelemetryFrame>> {
        if let Some(sim) = &mut self.registration {
            sim.step()?;
            let done = sim.stage() != Stage::Registration;
            let records = sim.engine.take_log().records;
            self.absorb(&records)?;
            if done {
                let sim = self.registration.take().expect("checked above");
                self.engine = sim.engine;
                self.hand_tip = self.engine.tip_pose().translation;
                self.mtm = mtm_home();
            }
        } else {
            let input = self.human_input();
            if self.engine.terminated() {
                return Err(Error::InvalidArgument("engine stopped; reset the session".into()));
            }
            self.engine.step(&input)?;
            let records = self.engine.take_log().records;
            self.absorb(&records)?;
        }
        self.ticks += 1;
        Ok(self.ticks.is_multiple_of(self.ticks_per_telemetry).then(|| self.telemetry()))
    }

    fn absorb(&mut self, records: &[retsim_core::sim::TickRecord]) -> Result<()> {
        for r in records {
            self.events.extend(r.events.iter().cloned());
            if let Some(w) = &mut self.log {
                let mut r = r.clone();
                r.t += self.t_offset;
                writeln!(w, "{}", serde_json::to_string(&r).map_err(|e| Error::Io(e.to_string()))?)?;
            }
        }
        Ok(())
    }

    pub fn flush_log(&mut self) -> Result<()> {
        if let Some(w) = &mut self.log {
            w.flush()?;
        }
        Ok(())
    }

    /// Snapshot of the current state; drains the pending events.
    pub fn telemetry(&mut self) -> TelemetryFrame {
        let t2 = self.cfg.autofocus.t2;
        let t = self.time();
        let registering = self.registering();
        let engine = self.engine();
        let rec = engine.last_record();
        let cr = engine.available_frame().map(|c| c.score);
        let thumbnail = engine.last_frame().map(|f| {
            let factor = (f.rows() / THUMBNAIL_PX).max(1);
            let (height, width, px) = f.downscale_u8(factor);
            Thumbnail {
                width,
                height,
                data_b64: base64::engine::general_purpose::STANDARD.encode(px),
            }
        });
        let frame = TelemetryFrame {
            t,
            mode: engine.mode(),
            pedal: self.pedal,
            registering,
            probe_position_m: engine.tip_pose().translation.into(),
            probe_distance_m: rec.map_or(f64::NAN, |r| r.distance_m),
            cr,
            in_focus: cr.is_some_and(|c| c >= t2),
            axial_cmd_m_s: rec.map_or(0.0, |r| r.axial_cmd),
            axial_decision: engine.autofocus_state().primed.then_some(engine.autofocus_state().last),
            thumbnail,
            events: std::mem::take(&mut self.events),
        };
        frame
    }
}
