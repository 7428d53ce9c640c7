use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{check_rotation, rotation_log, RigidTransform, Twist};

/// Reference poses captured when teleoperation is engaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeleopState {
    pub mtm_initial: RigidTransform,
    pub sher_initial: RigidTransform,
    /// Rotation from the robot base to the master base.
    pub base_map: Matrix3<f64>,
    /// Master-to-robot motion scale β.
    pub scale: f64,
}

impl TeleopState {
    pub fn new(mtm_initial: RigidTransform, sher_initial: RigidTransform, base_map: Matrix3<f64>, scale: f64) -> Result<Self> {
        check_rotation(&base_map)?;
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("motion scale must be positive, got {scale}")));
        }
        Ok(Self {
            mtm_initial,
            sher_initial,
            base_map,
            scale,
        })
    }
}

/// Tracking error between the scaled master displacement and the robot
/// displacement, and the orientation error between the two.
pub fn teleop_error(st: &TeleopState, mtm_now: &RigidTransform, sher_now: &RigidTransform) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let map_inv = st.base_map.transpose();
    let eps = st.scale * map_inv * (mtm_now.translation - st.mtm_initial.translation)
        - (sher_now.translation - st.sher_initial.translation);
    let r = sher_now.rotation.transpose() * map_inv * mtm_now.rotation;
    Ok((eps, rotation_log(&r)?))
}

/// Velocity that closes the error within one control period.
pub fn teleop_lateral(eps: &Vector3<f64>, theta: &Vector3<f64>, dt: f64) -> Result<Twist> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    Ok(Twist::new(eps / dt, theta / dt))
}
