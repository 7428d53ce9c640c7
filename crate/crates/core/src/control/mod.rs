//! Control laws of the shared-control scheme. Lateral motion comes from the
//! human (hand force or master motion), axial motion from the image-based
//! auto-focus, and the two are merged by orthogonal projectors.

mod admittance;
mod autofocus;
mod haptic;
mod hybrid;
mod prior;
mod teleop;

pub use admittance::admittance;
pub use autofocus::{
    autofocus_step, autofocus_with_model, AutoFocusConfig, AutoFocusState, AxialDecision, SignLaw,
};
pub use haptic::{compliance_wrench, wrench_to_joint_torques, HapticConfig};
pub use hybrid::hybrid_combine;
pub use prior::{farthest_point_sample, register_prior, PriorModel, ScanSample, REGISTRATION_POINTS};
pub use teleop::{teleop_error, teleop_lateral, TeleopState};
