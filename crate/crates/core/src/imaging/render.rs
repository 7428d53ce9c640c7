use std::sync::Arc;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frame::{PcleFrame, MIN_FRAME_EDGE};
use super::metric::CrMetric;
use super::texture::TissueTexture;
use crate::error::{Error, Result};

/// How sharpness depends on the probe-to-tissue distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusProfile {
    #[serde(rename = "optimal_distance_m")]
    pub optimal_distance: f64,
    /// Full width of the in-focus region.
    #[serde(rename = "focus_band_m")]
    pub focus_band: f64,
    #[serde(rename = "out_of_range_distance_m")]
    pub out_of_range_distance: f64,
    pub peak_cr: f64,
    pub floor_cr: f64,
}

impl Default for FocusProfile {
    fn default() -> Self {
        Self {
            optimal_distance: 690e-6,
            focus_band: 200e-6,
            out_of_range_distance: 1.8e-3,
            peak_cr: 0.61,
            floor_cr: 0.05,
        }
    }
}

impl FocusProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidConfig {
                key: "focus".into(),
                reason: reason.into(),
            })
        };
        if !(self.optimal_distance > 0.0) {
            return bad("optimal distance must be positive");
        }
        if !(self.focus_band > 0.0 && self.focus_band < self.out_of_range_distance) {
            return bad("need 0 < focus band < out-of-range distance");
        }
        if !(self.floor_cr >= 0.0 && self.floor_cr < self.peak_cr && self.peak_cr <= 1.0) {
            return bad("need 0 <= floor_cr < peak_cr <= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    /// Frame edge in pixels (frames are square).
    pub frame_px: usize,
    /// Field of view edge (m).
    pub fov: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise_std: f64,
    /// Relative brightness change per millimetre of defocus; positive values
    /// darken back-focus.
    pub gain_per_mm: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    /// CR reached at `optimal_distance ± focus_band / 2`.
    pub band_edge_cr: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            frame_px: 128,
            fov: 500e-6,
            noise_std: 2e-5,
            gain_per_mm: 0.4,
            gain_min: 0.3,
            gain_max: 1.4,
            band_edge_cr: 0.47,
        }
    }
}

/// Blur law σ(d) = min(σ_min + k·|d − d_opt|, σ_max), in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusCalibration {
    pub sigma_min_px: f64,
    pub slope_px_per_m: f64,
    pub sigma_max_px: f64,
}

impl FocusCalibration {
    pub fn sigma(&self, defocus: f64) -> f64 {
        (self.sigma_min_px + self.slope_px_per_m * defocus.abs()).min(self.sigma_max_px)
    }
}

/// Largest blur the calibration will consider.
const SIGMA_SEARCH_MAX: f64 = 48.0;
const CALIBRATION_SEED: u64 = 0x5eed;

/// Synthetic probe camera over a fixed tissue texture.
#[derive(Debug, Clone)]
pub struct Renderer {
    texture: Arc<TissueTexture>,
    profile: FocusProfile,
    options: RenderOptions,
    metric: CrMetric,
    calibration: FocusCalibration,
}

impl Renderer {
    /// Builds a renderer and calibrates the blur law against the texture so
    /// that the profile's peak, band-edge and floor scores are met.
    pub fn new(texture: Arc<TissueTexture>, profile: FocusProfile, options: RenderOptions) -> Result<Self> {
        let placeholder = FocusCalibration {
            sigma_min_px: 0.0,
            slope_px_per_m: 0.0,
            sigma_max_px: 0.0,
        };
        let mut r = Self::with_calibration(texture, profile, options, placeholder)?;
        r.calibration = r.calibrate()?;
        log::debug!("focus calibration {:?}", r.calibration);
        Ok(r)
    }

    /// Builds a renderer from a previously computed calibration.
    pub fn with_calibration(
        texture: Arc<TissueTexture>,
        profile: FocusProfile,
        options: RenderOptions,
        calibration: FocusCalibration,
    ) -> Result<Self> {
        profile.validate()?;
        if options.frame_px < MIN_FRAME_EDGE || !(options.fov > 0.0) {
            return Err(Error::InvalidArgument("frame size or field of view too small".into()));
        }
        if !(options.band_edge_cr > profile.floor_cr && options.band_edge_cr < profile.peak_cr) {
            return Err(Error::InvalidArgument(
                "band-edge score must lie between the floor and the peak".into(),
            ));
        }
        Ok(Self {
            texture,
            profile,
            options,
            metric: CrMetric::default(),
            calibration,
        })
    }

    pub fn profile(&self) -> &FocusProfile {
        &self.profile
    }

    pub fn options(&self) -> &RenderOptions {
        &self.options
    }

    pub fn calibration(&self) -> &FocusCalibration {
        &self.calibration
    }

    pub fn metric(&self) -> &CrMetric {
        &self.metric
    }

    pub fn texture(&self) -> &TissueTexture {
        &self.texture
    }

    /// Brightness multiplier at distance `d`: > 1 in front of focus, < 1 behind.
    pub fn gain(&self, distance: f64) -> f64 {
        let o = &self.options;
        let defocus_mm = (distance - self.profile.optimal_distance) * 1e3;
        (1.0 - o.gain_per_mm * defocus_mm).clamp(o.gain_min, o.gain_max)
    }

    /// One frame centred at `lateral` (m) seen from `distance` (m).
    pub fn render(&self, lateral: Vector2<f64>, distance: f64, noise_seed: u64) -> Result<PcleFrame> {
        if !(distance >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative render distance {distance}")));
        }
        let sigma = self.calibration.sigma(distance - self.profile.optimal_distance);
        let mut f = self.render_sigma(lateral, sigma, self.gain(distance), noise_seed)?;
        f.truth_distance = Some(distance);
        Ok(f)
    }

    /// CR score of a frame rendered at `distance` over the texture centre.
    pub fn score_at(&self, distance: f64) -> Result<f64> {
        self.metric.score(&self.render(Vector2::zeros(), distance, CALIBRATION_SEED)?)
    }

    /// Score and mean intensity of the same frame as [`Renderer::score_at`].
    pub fn sample_at(&self, distance: f64) -> Result<(f64, f64)> {
        let f = self.render(Vector2::zeros(), distance, CALIBRATION_SEED)?;
        Ok((self.metric.score(&f)?, super::metric::intensity(&f)))
    }

    fn render_sigma(&self, lateral: Vector2<f64>, sigma: f64, gain: f64, noise_seed: u64) -> Result<PcleFrame> {
        let n = self.options.frame_px;
        let step = self.options.fov / n as f64;
        let half_fov = 0.5 * self.options.fov;
        let tex = &*self.texture;
        if !tex.contains(lateral.x.abs() + half_fov, lateral.y.abs() + half_fov) || !lateral.iter().all(|v| v.is_finite()) {
            return Err(Error::OutsideDomain {
                x: lateral.x,
                y: lateral.y,
                what: "texture",
            });
        }

        let kernel = gaussian_kernel(sigma);
        let r = kernel.len() / 2;
        let w = n + 2 * r;
        let scale = step / tex.pitch();
        let u0 = lateral.x / tex.pitch() - (w as f64 - 1.0) * 0.5 * scale;
        let v0 = lateral.y / tex.pitch() - (w as f64 - 1.0) * 0.5 * scale;

        // rows follow y, columns follow x
        let mut window = vec![0.0; w * w];
        if scale == 1.0 {
            tex.sample_grid(u0, v0, w, w, &mut window);
        } else {
            for i in 0..w {
                let v = v0 + i as f64 * scale;
                for j in 0..w {
                    window[i * w + j] = tex.sample_px(u0 + j as f64 * scale, v);
                }
            }
        }

        // horizontal pass: w rows × n cols
        let mut tmp = vec![0.0; w * n];
        for i in 0..w {
            let src = &window[i * w..(i + 1) * w];
            for j in 0..n {
                tmp[i * n + j] = dot(&src[j..j + kernel.len()], &kernel);
            }
        }
        // vertical pass: n × n
        let mut out = vec![0.0; n * n];
        let mut column = vec![0.0; w];
        for j in 0..n {
            for i in 0..w {
                column[i] = tmp[i * n + j];
            }
            for i in 0..n {
                out[i * n + j] = dot(&column[i..i + kernel.len()], &kernel);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = Normal::new(0.0, self.options.noise_std.max(0.0))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for p in out.iter_mut() {
            // noise scales with the signal, so brightness alone never changes the score
            *p = ((*p + noise.sample(&mut rng)) * gain).clamp(0.0, 1.0);
        }
        PcleFrame::new(n, n, out)
    }

    fn score_sigma(&self, sigma: f64, gain: f64) -> Result<f64> {
        self.metric
            .score(&self.render_sigma(Vector2::zeros(), sigma, gain, CALIBRATION_SEED)?)
    }

    /// Smallest σ at which the score drops to `target`. The score is not
    /// monotone for very large blur, where noise dominates, so the first
    /// crossing is bracketed on a geometric grid before bisecting.
    fn sigma_for(&self, target: f64, gain: f64) -> Result<f64> {
        if self.score_sigma(0.0, gain)? < target {
            return Err(Error::InvalidArgument(format!(
                "texture too blurry to reach a score of {target}"
            )));
        }
        let (mut lo, mut hi) = (0.0, 0.25);
        while self.score_sigma(hi, gain)? >= target {
            lo = hi;
            hi *= 1.25;
            if hi > SIGMA_SEARCH_MAX {
                return Err(Error::InvalidArgument(format!(
                    "texture too sharp to fall to a score of {target}"
                )));
            }
        }
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if self.score_sigma(mid, gain)? >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn calibrate(&self) -> Result<FocusCalibration> {
        let p = &self.profile;
        let half_band = 0.5 * p.focus_band;
        let sigma_min = self.sigma_for(p.peak_cr, 1.0)?;
        let sigma_edge = self.sigma_for(self.options.band_edge_cr, self.gain(p.optimal_distance + half_band))?;
        let sigma_max = self.sigma_for(p.floor_cr, self.gain(2.0 * p.out_of_range_distance))?;
        if !(sigma_edge > sigma_min && sigma_max > sigma_edge) {
            return Err(Error::InvalidArgument(
                "focus curve of this texture is not monotone enough to calibrate".into(),
            ));
        }
        Ok(FocusCalibration {
            sigma_min_px: sigma_min,
            slope_px_per_m: (sigma_edge - sigma_min) / half_band,
            sigma_max_px: sigma_max,
        })
    }
}

/// Renders and scores each distance over the texture centre with a fixed
/// noise seed. Distances must be non-empty and ascending.
pub fn focus_sweep(renderer: &Renderer, distances: &[f64]) -> Result<Vec<(f64, f64)>> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("empty focus sweep".into()));
    }
    if distances.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidArgument("sweep distances must be ascending".into()));
    }
    distances
        .iter()
        .map(|&d| Ok((d, renderer.score_at(d)?)))
        .collect()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 1e-3) {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
