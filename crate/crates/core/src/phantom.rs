//! Eyeball phantom: a spherical cap (or a flat plate) seen through the
//! opening, with a seeded field of small bumps standing in for the uneven
//! retina layer, and an optional vertical patient-motion disturbance.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polygon;

/// Finite-difference step for surface normals.
pub const NORMAL_STEP: f64 = 10e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Plane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub shape: Shape,
    pub sphere_outer_diameter_m: f64,
    pub wall_thickness_m: f64,
    pub opening_diameter_m: f64,
    pub bump_count: usize,
    pub bump_amplitude_m: f64,
    pub bump_width_min_m: f64,
    pub bump_width_max_m: f64,
    /// The bump field is rescaled if its peak would exceed this.
    pub bump_cap_m: f64,
    pub seed: u64,
    pub patient_motion: bool,
    pub patient_amplitude_m: f64,
    pub patient_frequency_hz: f64,
    /// Share of the amplitude given to the slow random wander.
    pub patient_wander_fraction: f64,
    /// Lateral region where the prior model may be registered; defaults to
    /// the scan triangle enlarged by 20 %.
    pub registration_region_m: Option<Vec<[f64; 2]>>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: Shape::Sphere,
            sphere_outer_diameter_m: 30e-3,
            wall_thickness_m: 1e-3,
            opening_diameter_m: 10e-3,
            bump_count: 20,
            bump_amplitude_m: 50e-6,
            bump_width_min_m: 0.5e-3,
            bump_width_max_m: 2e-3,
            bump_cap_m: 90e-6,
            seed: 7,
            patient_motion: false,
            patient_amplitude_m: 100e-6,
            patient_frequency_hz: 0.2,
            patient_wander_fraction: 0.3,
            registration_region_m: None,
        }
    }
}

/// Side of the default scan triangle.
pub const DEFAULT_TRIANGLE_SIDE: f64 = 3e-3;

pub fn default_registration_region() -> Polygon {
    Polygon::equilateral(Vector2::zeros(), DEFAULT_TRIANGLE_SIDE)
        .expect("fixed triangle is valid")
        .scaled(1.2)
}

/// One Gaussian bump `a·exp(−|p − c|² / 2w²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub centre: Vector2<f64>,
    pub amplitude: f64,
    pub width: f64,
}

impl Bump {
    pub fn height(&self, p: &Vector2<f64>) -> f64 {
        self.amplitude * (-(p - self.centre).norm_squared() / (2.0 * self.width * self.width)).exp()
    }
}

/// Vertical offset `A·[(1−w)·sin(2πft) + w·Σ aₖ sin(2πfₖt + φₖ)]` with
/// `Σ aₖ = 1`, so it never exceeds `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientMotion {
    amplitude: f64,
    frequency: f64,
    wander_fraction: f64,
    wander: Vec<(f64, f64, f64)>,
}

impl PatientMotion {
    pub fn new(amplitude: f64, frequency: f64, wander_fraction: f64, seed: u64) -> Result<Self> {
        if !(amplitude >= 0.0 && frequency >= 0.0 && (0.0..=1.0).contains(&wander_fraction)) {
            return Err(Error::InvalidConfig {
                key: "phantom.patient".into(),
                reason: "amplitude and frequency must be >= 0, wander fraction in [0, 1]".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x09a7_1e17);
        let mut wander: Vec<(f64, f64, f64)> = (0..5)
            .map(|_| {
                (
                    rng.random_range(0.2..1.0),
                    rng.random_range(0.02..0.1),
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        let total: f64 = wander.iter().map(|w| w.0).sum();
        wander.iter_mut().for_each(|w| w.0 /= total);
        Ok(Self {
            amplitude,
            frequency,
            wander_fraction,
            wander,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn offset(&self, t: f64) -> f64 {
        let w = self.wander_fraction;
        let wander: f64 = self
            .wander
            .iter()
            .map(|&(a, f, phase)| a * (TAU * f * t + phase).sin())
            .sum();
        self.amplitude * ((1.0 - w) * (TAU * self.frequency * t).sin() + w * wander)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueModel {
    shape: Shape,
    /// Inner radius of the sphere; unused for the plate.
    radius: f64,
    sphere_outer_diameter: f64,
    opening_diameter: f64,
    bumps: Vec<Bump>,
    patient: Option<PatientMotion>,
    registration_region: Polygon,
}

impl TissueModel {
    pub fn from_config(cfg: &PhantomConfig) -> Result<Self> {
        let bad = |key: &str, reason: &str| Error::InvalidConfig {
            key: format!("phantom.{key}"),
            reason: reason.into(),
        };
        let radius = 0.5 * cfg.sphere_outer_diameter_m - cfg.wall_thickness_m;
        if !(radius > 0.0 && cfg.wall_thickness_m >= 0.0) {
            return Err(bad("wall_thickness_m", "wall must be thinner than the sphere radius"));
        }
        let disc = 0.5 * cfg.opening_diameter_m;
        if !(disc > 0.0 && disc < radius) {
            return Err(bad("opening_diameter_m", "opening must be positive and smaller than the sphere"));
        }
        if !(cfg.bump_width_min_m > 0.0 && cfg.bump_width_min_m <= cfg.bump_width_max_m) {
            return Err(bad("bump_width_min_m", "need 0 < min width <= max width"));
        }
        if !(cfg.bump_amplitude_m >= 0.0 && cfg.bump_cap_m > 0.0) {
            return Err(bad("bump_amplitude_m", "amplitude and cap must be non-negative"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut bumps: Vec<Bump> = (0..cfg.bump_count)
            .map(|_| {
                let r = disc * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..TAU);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Bump {
                    centre: Vector2::new(r * a.cos(), r * a.sin()),
                    amplitude: sign * cfg.bump_amplitude_m,
                    width: rng.random_range(cfg.bump_width_min_m..=cfg.bump_width_max_m),
                }
            })
            .collect();
        // Overlapping bumps can add up; keep the field under the cap.
        let peak = grid_peak(&bumps, disc);
        if peak > cfg.bump_cap_m {
            let s = cfg.bump_cap_m / peak;
            bumps.iter_mut().for_each(|b| b.amplitude *= s);
        }

        let patient = if cfg.patient_motion {
            Some(PatientMotion::new(
                cfg.patient_amplitude_m,
                cfg.patient_frequency_hz,
                cfg.patient_wander_fraction,
                cfg.seed,
            )?)
        } else {
            None
        };

        let registration_region = match &cfg.registration_region_m {
            Some(v) => Polygon::new(v.iter().map(|p| Vector2::new(p[0], p[1])).collect())?,
            None => default_registration_region(),
        };
        if registration_region.max_radius() > disc {
            return Err(bad("registration_region_m", "region must lie inside the opening"));
        }

        Ok(Self {
            shape: cfg.shape,
            radius,
            sphere_outer_diameter: cfg.sphere_outer_diameter_m,
            opening_diameter: cfg.opening_diameter_m,
            bumps,
            patient,
            registration_region,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn inner_radius(&self) -> f64 {
        self.radius
    }

    pub fn sphere_outer_diameter(&self) -> f64 {
        self.sphere_outer_diameter
    }

    pub fn opening_diameter(&self) -> f64 {
        self.opening_diameter
    }

    /// Radius of the scannable disc.
    pub fn disc_radius(&self) -> f64 {
        0.5 * self.opening_diameter
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn patient_motion(&self) -> Option<&PatientMotion> {
        self.patient.as_ref()
    }

    pub fn registration_region(&self) -> &Polygon {
        &self.registration_region
    }

    pub fn patient_offset(&self, t: f64) -> f64 {
        self.patient.as_ref().map_or(0.0, |p| p.offset(t))
    }

    fn check(&self, xy: &Vector2<f64>) -> Result<()> {
        if xy.iter().all(|v| v.is_finite()) && xy.norm() <= self.disc_radius() {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                x: xy.x,
                y: xy.y,
                what: "scannable disc",
            })
        }
    }

    /// Base surface without bumps or patient motion; the sphere's lowest
    /// point is at z = 0.
    pub fn base_height(&self, xy: &Vector2<f64>) -> f64 {
        match self.shape {
            Shape::Plane => 0.0,
            Shape::Sphere => {
                let r2 = xy.norm_squared().min(self.radius * self.radius);
                self.radius - (self.radius * self.radius - r2).sqrt()
            }
        }
    }

    pub fn bump_height(&self, xy: &Vector2<f64>) -> f64 {
        self.bumps.iter().map(|b| b.height(xy)).sum()
    }

    fn height_unchecked(&self, xy: &Vector2<f64>, t: f64) -> f64 {
        self.base_height(xy) + self.bump_height(xy) + self.patient_offset(t)
    }

    fn normal_unchecked(&self, xy: &Vector2<f64>, t: f64) -> Vector3<f64> {
        let h = NORMAL_STEP;
        let dx = Vector2::new(h, 0.0);
        let dy = Vector2::new(0.0, h);
        let gx = (self.height_unchecked(&(xy + dx), t) - self.height_unchecked(&(xy - dx), t)) / (2.0 * h);
        let gy = (self.height_unchecked(&(xy + dy), t) - self.height_unchecked(&(xy - dy), t)) / (2.0 * h);
        Vector3::new(-gx, -gy, 1.0).normalize()
    }

    pub fn surface_height(&self, xy: &Vector2<f64>, t: f64) -> Result<f64> {
        self.check(xy)?;
        Ok(self.height_unchecked(xy, t))
    }

    /// Upward unit normal.
    pub fn surface_normal(&self, xy: &Vector2<f64>, t: f64) -> Result<Vector3<f64>> {
        self.check(xy)?;
        Ok(self.normal_unchecked(xy, t))
    }

    /// Signed distance from `tip` to the surface along the normal at the foot
    /// point; negative once the tip is below the surface.
    pub fn probe_distance(&self, tip: &Vector3<f64>, t: f64) -> Result<f64> {
        Ok(self.probe_foot(tip, t)?.1)
    }

    /// Foot point on the surface and signed distance.
    pub fn probe_foot(&self, tip: &Vector3<f64>, t: f64) -> Result<(Vector3<f64>, f64)> {
        let xy = tip.xy();
        self.check(&xy)?;
        if !tip.z.is_finite() {
            return Err(Error::InvalidArgument("probe tip is not finite".into()));
        }
        let mut foot_xy = xy;
        for _ in 0..50 {
            let n = self.normal_unchecked(&foot_xy, t);
            let foot = Vector3::new(foot_xy.x, foot_xy.y, self.height_unchecked(&foot_xy, t));
            let d = (tip - foot).dot(&n);
            let next = (tip - d * n).xy();
            let moved = (next - foot_xy).norm();
            foot_xy = next;
            if moved < 1e-13 {
                break;
            }
        }
        let n = self.normal_unchecked(&foot_xy, t);
        let foot = Vector3::new(foot_xy.x, foot_xy.y, self.height_unchecked(&foot_xy, t));
        Ok((foot, (tip - foot).dot(&n)))
    }
}

fn grid_peak(bumps: &[Bump], disc: f64) -> f64 {
    const N: usize = 81;
    let mut peak: f64 = 0.0;
    for i in 0..N {
        for j in 0..N {
            let p = Vector2::new(
                -disc + 2.0 * disc * i as f64 / (N - 1) as f64,
                -disc + 2.0 * disc * j as f64 / (N - 1) as f64,
            );
            if p.norm() <= disc {
                peak = peak.max(bumps.iter().map(|b| b.height(&p)).sum::<f64>().abs());
            }
        }
    }
    peak
}
