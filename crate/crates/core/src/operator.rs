//! Scripted stand-in for the surgeon: hand tremor, a waypoint path, the hand
//! force fed to the cooperative robot, the master pose fed to the
//! teleoperation channel, and a deliberately imperfect manual focusing habit.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Polygon, RigidTransform, Wrench};

const TREMOR_COMPONENTS: usize = 8;

/// Hand tremor as a sum of seeded sinusoids per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TremorModel {
    amplitude: f64,
    band: (f64, f64),
    /// (frequency, phase) per axis and component; each component has
    /// amplitude `amplitude / 8`, so no axis ever exceeds `amplitude`.
    components: [[(f64, f64); TREMOR_COMPONENTS]; 3],
}

impl TremorModel {
    pub fn new(amplitude: f64, band: (f64, f64), seed: u64) -> Result<Self> {
        if !(amplitude >= 0.0) || !(band.0 > 0.0 && band.0 <= band.1 && band.1 <= 30.0) {
            return Err(Error::InvalidConfig {
                key: "operator.tremor".into(),
                reason: "amplitude must be >= 0 and the band inside (0, 30] Hz".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e3a_0b11);
        let mut components = [[(0.0, 0.0); TREMOR_COMPONENTS]; 3];
        for axis in components.iter_mut() {
            for c in axis.iter_mut() {
                *c = (rng.random_range(band.0..=band.1), rng.random_range(0.0..TAU));
            }
        }
        Ok(Self {
            amplitude,
            band,
            components,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn band(&self) -> (f64, f64) {
        self.band
    }

    pub fn sample(&self, t: f64) -> Vector3<f64> {
        let a = self.amplitude / TREMOR_COMPONENTS as f64;
        Vector3::from_fn(|axis, _| {
            self.components[axis]
                .iter()
                .map(|&(f, phase)| a * (TAU * f * t + phase).sin())
                .sum()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    CooperativeForce,
    TeleopPose,
}

impl ScriptMode {
    fn name(self) -> &'static str {
        match self {
            ScriptMode::CooperativeForce => "cooperative_force",
            ScriptMode::TeleopPose => "teleop_pose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxialPolicy {
    Hold,
    NaiveFocusAttempt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorConfig {
    pub triangle_side_m: f64,
    /// Explicit lateral path; replaces the triangle when set.
    pub waypoints_m: Option<Vec<[f64; 2]>>,
    pub speed_m_s: f64,
    /// Speed of the registration pass; the task speed when unset.
    pub registration_speed_m_s: Option<f64>,
    pub capture_radius_m: f64,
    /// Pause at each waypoint.
    pub dwell_s: f64,
    /// Waypoints per triangle edge; values above 1 add evenly spaced stops.
    pub stops_per_edge: usize,
    /// Let go of the pedal while pausing at a waypoint (teleoperation).
    pub release_pedal_on_dwell: bool,
    pub force_cap_n: f64,
    pub force_gain_n_m: f64,
    pub tremor_amplitude_m: f64,
    pub tremor_band_hz: [f64; 2],
    /// Hand stiffness turning tremor displacement into force on the tool.
    pub tremor_stiffness_n_m: f64,
    pub reaction_delay_s: f64,
    pub naive_speed_m_s: f64,
    pub axial_policy: AxialPolicy,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            triangle_side_m: 3e-3,
            waypoints_m: None,
            speed_m_s: 150e-6,
            registration_speed_m_s: None,
            capture_radius_m: 0.5e-3,
            dwell_s: 0.5,
            stops_per_edge: 1,
            release_pedal_on_dwell: false,
            force_cap_n: 2.0,
            force_gain_n_m: 4e3,
            tremor_amplitude_m: 200e-6,
            tremor_band_hz: [6.0, 12.0],
            tremor_stiffness_n_m: 500.0,
            reaction_delay_s: 0.3,
            naive_speed_m_s: 150e-6,
            axial_policy: AxialPolicy::NaiveFocusAttempt,
        }
    }
}

/// Closed path around an equilateral triangle centred on the origin,
/// starting and ending at the top vertex, with `stops` waypoints per edge.
pub fn triangle_path(side: f64, stops: usize) -> Result<Vec<Vector2<f64>>> {
    let tri = Polygon::equilateral(Vector2::zeros(), side)?;
    let v = tri.vertices();
    let stops = stops.max(1);
    let mut path = Vec::with_capacity(3 * stops + 1);
    for i in 0..3 {
        let (a, b) = (v[i], v[(i + 1) % 3]);
        for k in 0..stops {
            path.push(a + (b - a) * (k as f64 / stops as f64));
        }
    }
    path.push(v[0]);
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorScript {
    pub waypoints: Vec<Vector2<f64>>,
    pub speed: f64,
    pub mode: ScriptMode,
    pub axial_policy: AxialPolicy,
    pub capture_radius: f64,
    pub dwell: f64,
    pub force_cap: f64,
    pub force_gain: f64,
    pub tremor_stiffness: f64,
    pub release_pedal_on_dwell: bool,
}

impl OperatorScript {
    pub fn from_config(cfg: &OperatorConfig, mode: ScriptMode) -> Result<Self> {
        let waypoints = match &cfg.waypoints_m {
            Some(w) => w.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
            None => triangle_path(cfg.triangle_side_m, cfg.stops_per_edge)?,
        };
        let s = Self {
            waypoints,
            speed: cfg.speed_m_s,
            mode,
            axial_policy: cfg.axial_policy,
            capture_radius: cfg.capture_radius_m,
            dwell: cfg.dwell_s,
            force_cap: cfg.force_cap_n,
            force_gain: cfg.force_gain_n_m,
            tremor_stiffness: cfg.tremor_stiffness_n_m,
            release_pedal_on_dwell: cfg.release_pedal_on_dwell,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidConfig {
                key: "operator".into(),
                reason: reason.into(),
            })
        };
        if self.waypoints.is_empty() {
            return bad("waypoints must not be empty");
        }
        if !(self.speed > 0.0) {
            return bad("speed must be positive");
        }
        if !(self.capture_radius > 0.0 && self.dwell >= 0.0 && self.force_cap >= 0.0 && self.force_gain >= 0.0) {
            return bad("capture radius must be positive; dwell, force cap and gain non-negative");
        }
        Ok(())
    }

    fn require(&self, mode: ScriptMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::WrongOperatorMode {
                expected: mode.name(),
                actual: self.mode.name(),
            })
        }
    }

    /// Total time of the timed path used for master motion, dwell included.
    pub fn path_duration(&self) -> f64 {
        let len: f64 = self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        len / self.speed + self.dwell * self.waypoints.len().saturating_sub(1) as f64
    }

    /// The timed path is pausing at a waypoint at `t`.
    pub fn in_dwell(&self, t: f64) -> bool {
        let mut remaining = t.max(0.0);
        for w in self.waypoints.windows(2) {
            remaining -= (w[1] - w[0]).norm() / self.speed;
            if remaining < 0.0 {
                return false;
            }
            if remaining < self.dwell {
                return true;
            }
            remaining -= self.dwell;
        }
        false
    }

    /// Lateral point of the timed path at `t`: constant speed along each
    /// segment and a dwell after reaching every waypoint.
    pub fn path_point(&self, t: f64) -> Vector2<f64> {
        let mut remaining = t.max(0.0);
        for w in self.waypoints.windows(2) {
            let seg = (w[1] - w[0]).norm();
            let travel = seg / self.speed;
            if remaining < travel {
                return w[0] + (w[1] - w[0]) * (remaining / travel);
            }
            remaining -= travel;
            if remaining < self.dwell {
                return w[1];
            }
            remaining -= self.dwell;
        }
        *self.waypoints.last().expect("validated non-empty")
    }
}

/// Progress of the force-driven navigation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NavigationState {
    /// Index of the waypoint being approached; equals the waypoint count once
    /// the path is finished.
    pub waypoint: usize,
    pub dwell_until: Option<f64>,
    /// Time the final waypoint was reached.
    pub finished_at: Option<f64>,
}

impl NavigationState {
    pub fn finished(&self) -> bool {
        self.finished_at.is_some()
    }
}

/// Hand force on the end-effector in cooperative mode: a capped spring
/// toward the current waypoint plus the tremor pushed through the hand.
/// Waypoints are captured within the capture radius, held for the dwell
/// time, then the next one is targeted.
pub fn operator_force(
    script: &OperatorScript,
    tremor: &TremorModel,
    t: f64,
    probe_lateral: &Vector2<f64>,
    nav: &mut NavigationState,
) -> Result<Wrench> {
    script.require(ScriptMode::CooperativeForce)?;
    let tremor_force = script.tremor_stiffness * tremor.sample(t);
    let n = script.waypoints.len();

    loop {
        if nav.waypoint >= n {
            break;
        }
        if let Some(until) = nav.dwell_until {
            if t < until {
                return Ok(Wrench::from_force(tremor_force));
            }
            nav.dwell_until = None;
            nav.waypoint += 1;
            if nav.waypoint >= n {
                nav.finished_at.get_or_insert(t);
            }
            continue;
        }
        let target = script.waypoints[nav.waypoint];
        if (target - probe_lateral).norm() < script.capture_radius {
            if nav.waypoint + 1 == n {
                nav.waypoint = n;
                nav.finished_at.get_or_insert(t);
                break;
            }
            nav.dwell_until = Some(t + script.dwell);
            if script.dwell > 0.0 {
                return Ok(Wrench::from_force(tremor_force));
            }
            continue;
        }
        let pull = script.force_gain * (target - probe_lateral);
        let norm = pull.norm();
        let pull = if norm > script.force_cap {
            pull * (script.force_cap / norm)
        } else {
            pull
        };
        return Ok(Wrench::from_force(Vector3::new(pull.x, pull.y, 0.0) + tremor_force));
    }
    Ok(Wrench::from_force(tremor_force))
}

/// Master pose in teleoperation: the timed path scaled up by `1/β`, plus the
/// user's own axial travel `axial_offset` (probe-space metres, also scaled),
/// mapped into the master base, plus unscaled tremor at the hand. The
/// orientation stays at its initial value.
pub fn operator_mtm_motion(
    script: &OperatorScript,
    tremor: &TremorModel,
    t: f64,
    mtm_initial: &RigidTransform,
    base_map: &Matrix3<f64>,
    beta: f64,
    axial_offset: f64,
) -> Result<RigidTransform> {
    script.require(ScriptMode::TeleopPose)?;
    let p = script.path_point(t) - script.waypoints[0];
    let probe_space = Vector3::new(p.x, p.y, axial_offset) / beta;
    Ok(RigidTransform {
        rotation: mtm_initial.rotation,
        translation: mtm_initial.translation + base_map * probe_space + tremor.sample(t),
    })
}

/// A user trying to focus by hand: move at constant speed in one direction
/// while the (delayed) view is blurry, and reverse once the view has been
/// getting worse for longer than the reaction delay.
#[derive(Debug, Clone, PartialEq)]
pub struct NaivePolicy {
    pub speed: f64,
    pub delay: f64,
    pub t2: f64,
    /// +1 away from the tissue, −1 toward it.
    direction: f64,
    history: VecDeque<(f64, f64)>,
    best_since_flip: f64,
    falling_since: Option<f64>,
}

impl NaivePolicy {
    pub fn new(speed: f64, delay: f64, t2: f64) -> Self {
        Self {
            speed,
            delay,
            t2,
            direction: -1.0,
            history: VecDeque::new(),
            best_since_flip: f64::NEG_INFINITY,
            falling_since: None,
        }
    }

    pub fn direction(&self) -> f64 {
        self.direction
    }

    /// Records the score of a new frame shown to the user at `t`.
    pub fn observe(&mut self, t: f64, score: f64) {
        self.history.push_back((t, score));
    }

    /// Score the user perceives at `t`, i.e. the newest frame older than
    /// the reaction delay.
    fn perceived(&mut self, t: f64) -> Option<f64> {
        let horizon = t - self.delay;
        while self.history.len() > 1 && self.history[1].0 <= horizon {
            self.history.pop_front();
        }
        match self.history.front() {
            Some(&(ts, s)) if ts <= horizon => Some(s),
            _ => None,
        }
    }

    /// Axial velocity along the outward normal.
    pub fn velocity(&mut self, t: f64) -> f64 {
        let Some(score) = self.perceived(t) else {
            return 0.0;
        };
        if score >= self.t2 {
            self.best_since_flip = score;
            self.falling_since = None;
            return 0.0;
        }
        if score >= self.best_since_flip {
            self.best_since_flip = score;
            self.falling_since = None;
        } else {
            let since = *self.falling_since.get_or_insert(t);
            if t - since > self.delay {
                self.direction = -self.direction;
                self.best_since_flip = score;
                self.falling_since = None;
            }
        }
        self.direction * self.speed
    }
}
