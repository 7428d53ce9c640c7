use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polygon;

/// In-focus points used for the fit.
pub const REGISTRATION_POINTS: usize = 20;

/// One observation from the registration scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSample {
    pub xy: Vector2<f64>,
    /// Axial (base z) coordinate of the tip.
    pub z: f64,
    pub score: f64,
}

/// Quadratic height model `z = a x² + b y² + c xy + d x + e y + f` valid
/// inside `region`.
///
/// The fit runs on centred, scaled coordinates; `coefficients` converts back
/// to raw metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    centre: Vector2<f64>,
    scale: f64,
    normalised: [f64; 6],
    region: Polygon,
    sample_count: usize,
}

impl PriorModel {
    /// Least-squares fit to at least six points; `region` is where the model
    /// may be used.
    pub fn fit(points: &[(Vector2<f64>, f64)], region: Polygon) -> Result<Self> {
        if points.len() < 6 {
            return Err(Error::InvalidArgument(format!(
                "a quadratic fit needs at least 6 points, got {}",
                points.len()
            )));
        }
        let n = points.len() as f64;
        let centre = points.iter().map(|p| p.0).sum::<Vector2<f64>>() / n;
        let scale = points
            .iter()
            .map(|p| (p.0 - centre).norm())
            .fold(0.0, f64::max)
            .max(1e-12);

        let mut a = DMatrix::<f64>::zeros(points.len(), 6);
        let mut z = DVector::<f64>::zeros(points.len());
        for (r, (xy, h)) in points.iter().enumerate() {
            let u = (xy.x - centre.x) / scale;
            let v = (xy.y - centre.y) / scale;
            let row = [u * u, v * v, u * v, u, v, 1.0];
            for (c, val) in row.iter().enumerate() {
                a[(r, c)] = *val;
            }
            z[r] = *h;
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::InvalidArgument(
                "sample layout does not determine a quadratic surface".into(),
            ));
        }
        let sol = svd
            .solve(&z, 0.0)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut normalised = [0.0; 6];
        normalised.copy_from_slice(sol.as_slice());
        Ok(Self {
            centre,
            scale,
            normalised,
            region,
            sample_count: points.len(),
        })
    }

    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.centre.x) / self.scale;
        let v = (y - self.centre.y) / self.scale;
        let [a, b, c, d, e, f] = self.normalised;
        a * u * u + b * v * v + c * u * v + d * u + e * v + f
    }

    /// `(a, b, c, d, e, f)` in raw coordinates.
    pub fn coefficients(&self) -> [f64; 6] {
        let [a, b, c, d, e, f] = self.normalised;
        let (cx, cy) = (self.centre.x, self.centre.y);
        let s = self.scale;
        let s2 = s * s;
        [
            a / s2,
            b / s2,
            c / s2,
            (-2.0 * a * cx - c * cy) / s2 + d / s,
            (-2.0 * b * cy - c * cx) / s2 + e / s,
            (a * cx * cx + b * cy * cy + c * cx * cy) / s2 - (d * cx + e * cy) / s + f,
        ]
    }

    pub fn region(&self) -> &Polygon {
        &self.region
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

/// Indices of `k` points spread over the set: start from the point farthest
/// from the centroid, then repeatedly take the point farthest from those
/// already chosen. Ties go to the lower index.
pub fn farthest_point_sample(points: &[Vector2<f64>], k: usize) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let centroid = points.iter().sum::<Vector2<f64>>() / points.len() as f64;
    let argmax = |score: &dyn Fn(usize) -> f64| {
        let mut best = 0;
        for i in 1..points.len() {
            if score(i) > score(best) {
                best = i;
            }
        }
        best
    };
    let first = argmax(&|i| (points[i] - centroid).norm_squared());
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while chosen.len() < k.min(points.len()) {
        let next = argmax(&|i| nearest[i]);
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min((p - points[next]).norm_squared());
        }
    }
    chosen
}

/// Fits the prior model from a registration scan: keeps samples scoring at
/// least `t2`, spreads [`REGISTRATION_POINTS`] of them over the scanned area
/// and fits the quadratic. The model region is the convex hull of every
/// in-focus sample.
pub fn register_prior(scan: &[ScanSample], t2: f64) -> Result<PriorModel> {
    let in_focus: Vec<&ScanSample> = scan.iter().filter(|s| s.score >= t2).collect();
    if in_focus.len() < REGISTRATION_POINTS {
        return Err(Error::RegistrationIncomplete {
            found: in_focus.len(),
            required: REGISTRATION_POINTS,
        });
    }
    let xy: Vec<Vector2<f64>> = in_focus.iter().map(|s| s.xy).collect();
    let picked = farthest_point_sample(&xy, REGISTRATION_POINTS);
    let points: Vec<(Vector2<f64>, f64)> = picked.iter().map(|&i| (in_focus[i].xy, in_focus[i].z)).collect();
    let region = Polygon::convex_hull(&xy)?;
    PriorModel::fit(&points, region)
}
