use crate::geometry::{adjoint, RigidTransform, Twist, Wrench};

/// Admittance law: the end-effector twist is `α·F`, mapped to the base frame
/// through the adjoint of `base_ee`.
pub fn admittance(force: &Wrench, alpha: f64, base_ee: &RigidTransform) -> Twist {
    Twist::from_vector(&(adjoint(base_ee) * (alpha * force.to_vector())))
}
