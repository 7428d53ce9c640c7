//! Frame algebra shared by every controller: rigid transforms, twists and
//! wrenches, the adjoint map, the rotation logarithm and the lateral/axial
//! motion-specification projectors.
//!
//! All quantities are expressed in the robot base frame unless a function
//! says otherwise.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Checks `R^T R = I` and `det R = +1` within 1e-9.
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !err.is_finite() || err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(err.max((det - 1.0).abs())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting a rotation block that is not proper.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Six-dimensional velocity, linear part first.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: v.fixed_rows::<3>(0).into_owned(),
            angular: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.angular);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|c| c.is_finite())
    }
}

/// Force-torque pair, force first.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_force(force: Vector3<f64>) -> Self {
        Self {
            force,
            torque: Vector3::zeros(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.force);
        v.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        v
    }
}

/// Matrix form of the cross product: `skew(v) * u == v × u`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Adjoint of a rigid transform, `[[R, skew(p) R], [0, R]]`, mapping a twist
/// expressed in the transform's child frame into its parent frame.
pub fn adjoint(t: &RigidTransform) -> Matrix6<f64> {
    let r = t.rotation;
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&t.translation) * r));
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad
}

/// Exponential map from a rotation vector to a rotation matrix (Rodrigues).
pub fn rotation_exp(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = skew(theta);
    if angle < 1e-8 {
        // second-order series is exact to machine precision here
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = angle.sin() / angle;
    let b = (1.0 - angle.cos()) / (angle * angle);
    Matrix3::identity() + a * k + b * k * k
}

/// Rotation vector of `r` with norm in `[0, π]`.
///
/// At exactly π the axis sign is chosen so that its first nonzero component is
/// positive.
pub fn rotation_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    check_rotation(r)?;
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);

    if angle < 1e-6 {
        // sin(a)/a ≈ 1 - a²/6
        return Ok(vee * 0.5 * (1.0 + angle * angle / 6.0));
    }
    if std::f64::consts::PI - angle > 1e-6 {
        return Ok(vee * (angle / (2.0 * angle.sin())));
    }

    // Near π: axis from the symmetric part, n nᵀ = (S - cos I) / (1 - cos).
    let s = (r + r.transpose()) * 0.5;
    let nn = (s - Matrix3::identity() * cos) / (1.0 - cos);
    let (mut best, mut best_val) = (0, nn[(0, 0)]);
    for i in 1..3 {
        if nn[(i, i)] > best_val {
            best = i;
            best_val = nn[(i, i)];
        }
    }
    let mut axis = nn.column(best).into_owned() / best_val.max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();
    // vee = 2 sin(a) n, usable for the sign while sin(a) is not tiny
    if vee.norm() > 1e-12 {
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            axis = -axis;
        }
    }
    Ok(axis * angle)
}

pub fn rotation_about_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rotation_about_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_about_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Lateral and axial motion-specification matrices for one tissue-normal
/// orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSpec {
    pub lateral: Matrix6<f64>,
    pub axial: Matrix6<f64>,
    pub normal_rotation: Matrix3<f64>,
}

impl MotionSpec {
    pub fn lateral_translation(&self) -> Matrix3<f64> {
        self.lateral.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn axial_translation(&self) -> Matrix3<f64> {
        self.axial.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Unit tissue normal: the third row of the normal rotation.
    pub fn axial_unit(&self) -> Vector3<f64> {
        self.normal_rotation.row(2).transpose()
    }
}

/// `K_lat = blockdiag(Rᵀ Σ_c R, I₃)`, `K_ax = blockdiag(Rᵀ Σ_a R, 0₃)` with
/// `Σ_c = diag(1, 1, 0)` and `Σ_a = diag(0, 0, 1)`.
pub fn motion_spec(normal_rotation: &Matrix3<f64>) -> Result<MotionSpec> {
    check_rotation(normal_rotation)?;
    let r = normal_rotation;
    let sigma_c = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    let sigma_a = Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, 1.0));

    let mut lateral = Matrix6::zeros();
    lateral
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(r.transpose() * sigma_c * r));
    lateral
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&Matrix3::identity());

    let mut axial = Matrix6::zeros();
    axial
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(r.transpose() * sigma_a * r));

    Ok(MotionSpec {
        lateral,
        axial,
        normal_rotation: *r,
    })
}

/// A rotation whose third row is the unit vector `n`, so that
/// `motion_spec(normal_frame(n))` projects onto `n` axially.
pub fn normal_frame(n: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = n.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidArgument(format!("normal {n:?} has no direction")));
    }
    let n = n / norm;
    // Pick the helper axis least aligned with n.
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let mut e1 = helper - n * n.dot(&helper);
    e1 /= e1.norm();
    let e2 = n.cross(&e1);
    Ok(Matrix3::from_rows(&[e1.transpose(), e2.transpose(), n.transpose()]))
}

/// Simple polygon in the lateral (x, y) plane, vertices in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Vector2<f64>>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vector2<f64>>) -> Result<Self> {
        if vertices.len() < 3 || vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("a polygon needs at least 3 finite vertices".into()));
        }
        Ok(Self { vertices })
    }

    /// Equilateral triangle with side `side`, centred on `centre`, one vertex
    /// pointing along +y.
    pub fn equilateral(centre: Vector2<f64>, side: f64) -> Result<Self> {
        let r = side / 3f64.sqrt();
        let vertices = (0..3)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                centre + r * Vector2::new(a.cos(), a.sin())
            })
            .collect();
        Self::new(vertices)
    }

    /// Convex hull by the monotone-chain method, counter-clockwise.
    pub fn convex_hull(points: &[Vector2<f64>]) -> Result<Self> {
        let mut pts: Vec<Vector2<f64>> = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() < 3 {
            return Err(Error::InvalidArgument("hull needs at least 3 distinct points".into()));
        }
        let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
            (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
        };
        let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
        for pass in 0..2 {
            let start = hull.len();
            let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
                Box::new(pts.iter())
            } else {
                Box::new(pts.iter().rev())
            };
            for p in iter {
                while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                    hull.pop();
                }
                hull.push(*p);
            }
            hull.pop();
        }
        if hull.len() < 3 {
            return Err(Error::InvalidArgument("points are collinear".into()));
        }
        Self::new(hull)
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    pub fn centroid(&self) -> Vector2<f64> {
        self.vertices.iter().sum::<Vector2<f64>>() / self.vertices.len() as f64
    }

    /// Copy scaled by `factor` about the vertex centroid.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.centroid();
        Self {
            vertices: self.vertices.iter().map(|v| c + (v - c) * factor).collect(),
        }
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).norm()).sum()
    }

    fn edges(&self) -> impl Iterator<Item = (Vector2<f64>, Vector2<f64>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Point-in-polygon by ray crossing; points on an edge count as inside.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if on_segment(p, &a, &b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Largest distance of any vertex from the origin.
    pub fn max_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn on_segment(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let ab = b - a;
    let ap = p - a;
    let len2 = ab.norm_squared();
    let cross = ab.x * ap.y - ab.y * ap.x;
    let scale = len2.sqrt().max(1e-300);
    if (cross / scale).abs() > 1e-12 {
        return false;
    }
    let t = ap.dot(&ab) / len2.max(1e-300);
    (0.0..=1.0).contains(&t)
}
