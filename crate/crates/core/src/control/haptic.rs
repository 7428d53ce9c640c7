use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Wrench;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HapticConfig {
    pub k_p_n_m: f64,
    pub k_r_nm_rad: f64,
    pub b_n_s_m: f64,
}

impl Default for HapticConfig {
    fn default() -> Self {
        Self {
            k_p_n_m: 50.0,
            k_r_nm_rad: 0.1,
            b_n_s_m: 5.0,
        }
    }
}

impl HapticConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.k_p_n_m, self.k_r_nm_rad, self.b_n_s_m].iter().all(|v| *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig {
                key: "haptic".into(),
                reason: "gains must be non-negative".into(),
            })
        }
    }
}

/// Wrench rendered on the master: a spring on the tracking error plus
/// velocity damping, `F_p = k_p·ε + b·V`, and a torsional spring `F_R = k_R·θ`.
pub fn compliance_wrench(cfg: &HapticConfig, eps: &Vector3<f64>, theta: &Vector3<f64>, velocity: &Vector3<f64>) -> Wrench {
    Wrench {
        force: cfg.k_p_n_m * eps + cfg.b_n_s_m * velocity,
        torque: cfg.k_r_nm_rad * theta,
    }
}

/// Joint torques balancing a tip wrench, `τ = Jᵀ·W`. Gravity compensation is
/// zero in simulation.
pub fn wrench_to_joint_torques(jacobian: &DMatrix<f64>, w: &Wrench) -> Result<DVector<f64>> {
    if jacobian.nrows() != 6 {
        return Err(Error::InvalidArgument(format!(
            "master Jacobian must have 6 rows, got {}",
            jacobian.nrows()
        )));
    }
    let wv = w.to_vector();
    Ok(jacobian.transpose() * DVector::from_column_slice(wv.as_slice()))
}
