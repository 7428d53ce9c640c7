use crate::geometry::{MotionSpec, Twist};

/// `K_lat·ẋ_lateral + K_ax·ẋ_axial`.
pub fn hybrid_combine(spec: &MotionSpec, lateral: &Twist, axial: &Twist) -> Twist {
    Twist::from_vector(&(spec.lateral * lateral.to_vector() + spec.axial * axial.to_vector()))
}
