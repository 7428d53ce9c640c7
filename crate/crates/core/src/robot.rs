//! Five-axis probe holder: an XYZ stage carrying two tilt joints (about x,
//! then about y) and a fixed tool offset to the probe tip.

use nalgebra::{Matrix6x5, SMatrix, SVector, Vector3, Vector5, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_about_x, rotation_about_y, RigidTransform};

pub const JOINTS: usize = 5;
pub type JointVector = Vector5<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointType {
    Prismatic,
    Revolute,
}

pub const JOINT_TYPES: [JointType; JOINTS] = [
    JointType::Prismatic,
    JointType::Prismatic,
    JointType::Prismatic,
    JointType::Revolute,
    JointType::Revolute,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub prismatic_limit_m: f64,
    pub revolute_limit_rad: f64,
    pub prismatic_speed_m_s: f64,
    pub revolute_speed_rad_s: f64,
    pub resolution_m: f64,
    pub tracking_time_constant_s: f64,
    /// Distance from the wrist to the probe tip along the tool's −z.
    pub tool_length_m: f64,
    /// Freeze both tilt joints.
    pub orientation_lock: bool,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            prismatic_limit_m: 50e-3,
            revolute_limit_rad: 30f64.to_radians(),
            prismatic_speed_m_s: 5e-3,
            revolute_speed_rad_s: 0.5,
            resolution_m: 1e-6,
            tracking_time_constant_s: 10e-3,
            tool_length_m: 10e-3,
            orientation_lock: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub tool_offset: RigidTransform,
    pub q_lower: JointVector,
    pub q_upper: JointVector,
    pub qd_lower: JointVector,
    pub qd_upper: JointVector,
    /// Positioning resolution of the prismatic joints (m).
    pub resolution: f64,
    pub tracking_time_constant: f64,
    pub orientation_lock: bool,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::from_config(&RobotConfig::default()).expect("default robot is valid")
    }
}

impl RobotModel {
    pub fn from_config(cfg: &RobotConfig) -> Result<Self> {
        let p = cfg.prismatic_limit_m;
        let r = cfg.revolute_limit_rad;
        let v = cfg.prismatic_speed_m_s;
        let w = cfg.revolute_speed_rad_s;
        let m = Self {
            tool_offset: RigidTransform::from_translation(Vector3::new(0.0, 0.0, -cfg.tool_length_m)),
            q_lower: JointVector::new(-p, -p, -p, -r, -r),
            q_upper: JointVector::new(p, p, p, r, r),
            qd_lower: JointVector::new(-v, -v, -v, -w, -w),
            qd_upper: JointVector::new(v, v, v, w, w),
            resolution: cfg.resolution_m,
            tracking_time_constant: cfg.tracking_time_constant_s,
            orientation_lock: cfg.orientation_lock,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::InvalidConfig {
                key: format!("robot.{key}"),
                reason: reason.into(),
            })
        };
        if (0..JOINTS).any(|i| !(self.q_lower[i] < self.q_upper[i])) {
            return bad("limits", "lower joint limits must be below upper limits");
        }
        if (0..JOINTS).any(|i| !(self.qd_lower[i] <= 0.0 && self.qd_upper[i] >= 0.0 && self.qd_lower[i] < self.qd_upper[i])) {
            return bad("speed", "velocity limits must bracket zero");
        }
        if !(self.resolution > 0.0) {
            return bad("resolution_m", "must be positive");
        }
        if !(self.tracking_time_constant > 0.0) {
            return bad("tracking_time_constant_s", "must be positive");
        }
        Ok(())
    }

    pub fn check_limits(&self, q: &JointVector) -> Result<()> {
        for i in 0..JOINTS {
            if !(q[i] >= self.q_lower[i] && q[i] <= self.q_upper[i]) {
                return Err(Error::JointOutOfLimits {
                    joint: i,
                    value: q[i],
                    lower: self.q_lower[i],
                    upper: self.q_upper[i],
                });
            }
        }
        Ok(())
    }

    /// Probe-tip pose in the base frame.
    pub fn forward_kinematics(&self, q: &JointVector) -> Result<RigidTransform> {
        self.check_limits(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &JointVector) -> RigidTransform {
        let wrist = RigidTransform {
            rotation: rotation_about_x(q[3]) * rotation_about_y(q[4]),
            translation: Vector3::new(q[0], q[1], q[2]),
        };
        wrist.compose(&self.tool_offset)
    }

    /// Maps joint velocities to the tip twist (linear velocity of the tip
    /// point, angular velocity), both in the base frame.
    pub fn jacobian(&self, q: &JointVector) -> Result<Matrix6x5<f64>> {
        self.check_limits(q)?;
        let tip = self.fk_unchecked(q).translation;
        let wrist = Vector3::new(q[0], q[1], q[2]);
        let mut j = Matrix6x5::zeros();
        for i in 0..3 {
            j[(i, i)] = 1.0;
        }
        let axes = [Vector3::x(), rotation_about_x(q[3]) * Vector3::y()];
        for (k, axis) in axes.iter().enumerate() {
            let lin = axis.cross(&(tip - wrist));
            j.fixed_view_mut::<3, 1>(0, 3 + k).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, 3 + k).copy_from(axis);
        }
        Ok(j)
    }

    /// Joints currently pressed against a position limit.
    pub fn joints_at_limit(&self, q: &JointVector) -> Vec<usize> {
        (0..JOINTS)
            .filter(|&i| q[i] <= self.q_lower[i] || q[i] >= self.q_upper[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub positions: JointVector,
    pub velocities: JointVector,
    /// Commanded prismatic travel not yet realised because it is below the
    /// positioning resolution.
    pub residual: JointVector,
}

impl JointState {
    pub fn at_rest(positions: JointVector) -> Self {
        Self {
            positions,
            velocities: JointVector::zeros(),
            residual: JointVector::zeros(),
        }
    }
}

/// Velocity box for one tick: the velocity limits intersected with the range
/// that keeps every joint inside its position limits after `dt`.
pub fn velocity_box(model: &RobotModel, q: &JointVector, dt: f64) -> Result<(JointVector, JointVector)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let mut lo = JointVector::zeros();
    let mut hi = JointVector::zeros();
    for i in 0..JOINTS {
        lo[i] = model.qd_lower[i].max((model.q_lower[i] - q[i]) / dt);
        hi[i] = model.qd_upper[i].min((model.q_upper[i] - q[i]) / dt);
        if model.orientation_lock && JOINT_TYPES[i] == JointType::Revolute {
            lo[i] = lo[i].max(0.0);
            hi[i] = hi[i].min(0.0);
        }
        if !(lo[i] <= hi[i]) {
            return Err(Error::InfeasibleBox {
                joint: i,
                lower: lo[i],
                upper: hi[i],
            });
        }
    }
    Ok((lo, hi))
}

/// Joint velocities minimising `‖J q̇ − ẋ_des‖` inside the velocity box.
pub fn mid_level_optimize(
    model: &RobotModel,
    q: &JointVector,
    xdot_des: &Vector6<f64>,
    dt: f64,
) -> Result<JointVector> {
    let j = model.jacobian(q)?;
    let (lo, hi) = velocity_box(model, q, dt)?;
    Ok(box_least_squares(&j, xdot_des, &lo, &hi))
}

/// Box-constrained least squares `min ‖A x − b‖` s.t. `lo ≤ x ≤ hi`.
///
/// Every split of the variables into {at lower, at upper, free} is tried; the
/// free part is solved exactly and kept if it lands inside the box. For a
/// full-column-rank `A` the problem is strictly convex, so its minimiser is
/// one of these candidates.
pub fn box_least_squares<const M: usize>(
    a: &SMatrix<f64, M, JOINTS>,
    b: &SVector<f64, M>,
    lo: &JointVector,
    hi: &JointVector,
) -> JointVector {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let objective = |x: &JointVector| (a * x - b).norm_squared();

    let inside = |x: &JointVector| (0..JOINTS).all(|i| x[i] >= lo[i] && x[i] <= hi[i]);

    // Joints whose box is a single point are never free.
    let pinned: [bool; JOINTS] = std::array::from_fn(|i| lo[i] == hi[i]);
    let mut x = lo.zip_map(hi, |l, h| 0.0f64.clamp(l, h));
    let free: [bool; JOINTS] = std::array::from_fn(|i| !pinned[i]);
    if free.iter().any(|&f| f) && solve_free(&ata, &atb, &free, &mut x) && inside(&x) {
        // strictly convex, so an interior stationary point is the minimiser
        return x;
    }

    let mut best = lo.zip_map(hi, |l, h| 0.0f64.clamp(l, h));
    let mut best_obj = objective(&best);
    let patterns = 3usize.pow(JOINTS as u32);
    'patterns: for code in 0..patterns {
        let mut x = JointVector::zeros();
        let mut free = [false; JOINTS];
        let mut c = code;
        for i in 0..JOINTS {
            let digit = c % 3;
            c /= 3;
            if pinned[i] && digit != 1 {
                continue 'patterns;
            }
            match digit {
                0 => free[i] = true,
                1 => x[i] = lo[i],
                _ => x[i] = hi[i],
            }
        }
        if free.iter().any(|&f| f) && !solve_free(&ata, &atb, &free, &mut x) {
            continue;
        }
        if !inside(&x) {
            continue;
        }
        let obj = objective(&x);
        if obj < best_obj {
            best_obj = obj;
            best = x;
        }
    }
    best
}

/// Solves the normal equations for the `free` entries with the others held
/// fixed. Returns false when the reduced system is singular.
fn solve_free(
    ata: &SMatrix<f64, JOINTS, JOINTS>,
    atb: &JointVector,
    free: &[bool; JOINTS],
    x: &mut JointVector,
) -> bool {
    // Fixed entries become identity rows so one 5×5 factorisation serves
    // every pattern without allocating.
    let mut m = SMatrix::<f64, JOINTS, JOINTS>::identity();
    let mut rhs = *x;
    for i in 0..JOINTS {
        if !free[i] {
            continue;
        }
        let mut v = atb[i];
        for k in 0..JOINTS {
            if free[k] {
                m[(i, k)] = ata[(i, k)];
            } else {
                v -= ata[(i, k)] * x[k];
            }
        }
        rhs[i] = v;
    }
    match m.cholesky() {
        Some(ch) => {
            *x = ch.solve(&rhs);
            true
        }
        None => false,
    }
}

/// First-order velocity tracking followed by position integration. Prismatic
/// joints move in whole multiples of the resolution; the remainder is carried
/// to the next tick. Positions saturate at the limits.
pub fn low_level_step(model: &RobotModel, state: &JointState, qd_des: &JointVector, dt: f64) -> JointState {
    let a = 1.0 - (-dt / model.tracking_time_constant).exp();
    let mut next = *state;
    for i in 0..JOINTS {
        let v = state.velocities[i] + a * (qd_des[i] - state.velocities[i]);
        next.velocities[i] = v;
        let travel = state.residual[i] + v * dt;
        let moved = match JOINT_TYPES[i] {
            JointType::Prismatic => {
                let steps = (travel / model.resolution).trunc();
                next.residual[i] = travel - steps * model.resolution;
                steps * model.resolution
            }
            JointType::Revolute => {
                next.residual[i] = 0.0;
                travel
            }
        };
        let p = state.positions[i] + moved;
        if p < model.q_lower[i] || p > model.q_upper[i] {
            next.positions[i] = p.clamp(model.q_lower[i], model.q_upper[i]);
            next.velocities[i] = 0.0;
            next.residual[i] = 0.0;
        } else {
            next.positions[i] = p;
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_configuration_is_tool_offset() {
        let m = RobotModel::default();
        let t = m.forward_kinematics(&JointVector::zeros()).unwrap();
        assert_eq!(t, m.tool_offset);
    }

    #[test]
    fn out_of_limit_configuration_is_rejected() {
        let m = RobotModel::default();
        let q = JointVector::new(0.06, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(m.forward_kinematics(&q), Err(Error::JointOutOfLimits { joint: 0, .. })));
    }

    #[test]
    fn sub_resolution_step_does_not_move() {
        let m = RobotModel::default();
        let s = JointState::at_rest(JointVector::zeros());
        let qd = JointVector::new(1e-5, 0.0, 0.0, 0.0, 0.0);
        let next = low_level_step(&m, &s, &qd, 1.0 / 240.0);
        assert_eq!(next.positions, s.positions);
    }

    #[test]
    fn locked_orientation_freezes_tilt() {
        let m = RobotModel::default();
        let (lo, hi) = velocity_box(&m, &JointVector::zeros(), 0.005).unwrap();
        assert_eq!((lo[3], hi[3], lo[4], hi[4]), (0.0, 0.0, 0.0, 0.0));
    }
}
