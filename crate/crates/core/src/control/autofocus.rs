//! Axial auto-focus: a sign-based gradient ascent on the blur score, and a
//! variant that first jumps to the height predicted by a registered prior
//! model of the retina.
//!
//! Axial displacements are scalars along the local tissue normal; positive
//! values move the probe away from the retina.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::prior::PriorModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignLaw {
    /// `SIGN(Δq·ΔX_probe)`: keep going while the score improves.
    #[default]
    TextGradient,
    /// `SIGN(ΔX_probe·Δq)·SIGN(ΔX_probe)`, which reduces to `SIGN(Δq)`.
    PaperListing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoFocusConfig {
    pub t1: f64,
    pub t2: f64,
    /// Step length per unit of missing score (m).
    pub gain_m: f64,
    pub resolution_m: f64,
    pub sign_law: SignLaw,
    /// Safety rail on one axial command, applied by the caller.
    pub max_step_m: f64,
}

impl Default for AutoFocusConfig {
    fn default() -> Self {
        Self {
            t1: 0.10,
            t2: 0.47,
            gain_m: 40e-6,
            resolution_m: 1e-6,
            sign_law: SignLaw::TextGradient,
            max_step_m: 200e-6,
        }
    }
}

impl AutoFocusConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.t1)
            && self.t1 < self.t2
            && self.t2 <= 1.0
            && self.gain_m > 0.0
            && self.resolution_m > 0.0
            && self.max_step_m > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig {
                key: "autofocus".into(),
                reason: "need 0 <= t1 < t2 <= 1 and positive gain, resolution and max step".into(),
            })
        }
    }
}

/// Which branch produced the last axial command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AxialDecision {
    /// Score too low: the user keeps axial control.
    Handover,
    /// Stationary probe and falling score: step away from the retina.
    Explore,
    /// Stationary probe and rising score: repeat the previous step.
    Repeat,
    Gradient,
    #[default]
    InFocus,
    /// Move to the prior-model height.
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoFocusState {
    pub q_prev: f64,
    pub x_probe_prev: Vector3<f64>,
    pub dx_prev: f64,
    /// The prior-model height has been reached.
    pub f_m: bool,
    /// False until the first frame has been seen.
    pub primed: bool,
    pub last: AxialDecision,
}

impl Default for AutoFocusState {
    fn default() -> Self {
        Self {
            q_prev: 0.0,
            x_probe_prev: Vector3::zeros(),
            dx_prev: 0.0,
            f_m: false,
            primed: false,
            last: AxialDecision::InFocus,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One update of the image optimizer.
///
/// `x_probe` is the tip position at which the frame scored `q` was taken,
/// `axial_unit` the outward tissue normal and `user_axial_velocity` the
/// user's own command along it. Without history the probe counts as
/// stationary with a falling score, so the first move is away from the
/// retina.
pub fn autofocus_step(
    cfg: &AutoFocusConfig,
    st: &AutoFocusState,
    q: f64,
    x_probe: &Vector3<f64>,
    axial_unit: &Vector3<f64>,
    user_axial_velocity: f64,
    dt: f64,
) -> (f64, AutoFocusState) {
    let (dq, dx_probe) = if st.primed {
        (q - st.q_prev, axial_unit.dot(&(x_probe - st.x_probe_prev)))
    } else {
        (-1.0, 0.0)
    };
    let stationary = dx_probe.abs() < cfg.resolution_m;
    let step = cfg.gain_m * (1.0 - q);

    let (dx, decision) = if q < cfg.t1 {
        (user_axial_velocity * dt, AxialDecision::Handover)
    } else if q < cfg.t2 {
        if stationary && dq < 0.0 {
            (step, AxialDecision::Explore)
        } else if stationary && dq > 0.0 {
            (st.dx_prev, AxialDecision::Repeat)
        } else {
            let dir = match cfg.sign_law {
                SignLaw::TextGradient => sign(dq * dx_probe),
                SignLaw::PaperListing => sign(dx_probe * dq) * sign(dx_probe),
            };
            (dir * step, AxialDecision::Gradient)
        }
    } else {
        (0.0, AxialDecision::InFocus)
    };

    let next = AutoFocusState {
        q_prev: q,
        x_probe_prev: *x_probe,
        dx_prev: dx,
        f_m: st.f_m,
        primed: true,
        last: decision,
    };
    (dx, next)
}

/// Image optimizer seeded by a prior model. Outside the model's region, or
/// once the model height is reached and the user holds still, this is
/// [`autofocus_step`]; otherwise it commands the displacement along the
/// normal that brings the tip to the model height.
#[allow(clippy::too_many_arguments)]
pub fn autofocus_with_model(
    cfg: &AutoFocusConfig,
    st: &AutoFocusState,
    model: Option<&PriorModel>,
    q: f64,
    x_probe: &Vector3<f64>,
    axial_unit: &Vector3<f64>,
    user_axial_velocity: f64,
    dt: f64,
) -> (f64, AutoFocusState) {
    let model = match model {
        Some(m) if m.region().contains(&x_probe.xy()) => m,
        _ => return autofocus_step(cfg, st, q, x_probe, axial_unit, user_axial_velocity, dt),
    };

    let mut next = AutoFocusState {
        q_prev: q,
        x_probe_prev: *x_probe,
        primed: true,
        ..*st
    };
    if q >= cfg.t2 {
        next.dx_prev = 0.0;
        next.last = AxialDecision::InFocus;
        return (0.0, next);
    }

    let moved = if st.primed { x_probe - st.x_probe_prev } else { Vector3::zeros() };
    let lateral = moved - axial_unit * axial_unit.dot(&moved);
    if st.f_m && lateral.norm() < cfg.resolution_m {
        return autofocus_step(cfg, st, q, x_probe, axial_unit, user_axial_velocity, dt);
    }

    // Moving s along the normal changes the height by s·n_z.
    let dz = model.evaluate(x_probe.x, x_probe.y) - x_probe.z;
    let dx = dz / axial_unit.z.max(1e-6);
    next.f_m = dx.abs() < cfg.resolution_m;
    next.dx_prev = dx;
    next.last = AxialDecision::Model;
    (dx, next)
}
