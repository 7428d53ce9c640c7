use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Parameters of the procedural tissue texture.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureOptions {
    /// Tile edge in pixels; must be a multiple of the coarsest octave.
    pub tile_px: usize,
    /// Texture pixel pitch (m).
    pub pitch: f64,
    /// Octave cell sizes (px) and their weights.
    pub octaves: Vec<(usize, f64)>,
    /// The texture is defined for |x|, |y| ≤ half_extent (m).
    pub half_extent: f64,
    pub seed: u64,
}

impl Default for TextureOptions {
    fn default() -> Self {
        Self {
            tile_px: 512,
            pitch: 500e-6 / 128.0,
            octaves: vec![
                (128, 0.9),
                (64, 0.8),
                (32, 0.6),
                (16, 0.6),
                (8, 0.5),
                (4, 0.5),
                (2, 0.4),
                (1, 0.25),
            ],
            half_extent: 15e-3,
            seed: 1,
        }
    }
}

/// Tileable multi-octave value-noise texture standing in for stained retina.
///
/// Intensities lie in `[0.1, 0.7]`, leaving headroom for the renderer's
/// front-focus brightening.
#[derive(Debug, Clone)]
pub struct TissueTexture {
    size: usize,
    pitch: f64,
    half_extent: f64,
    data: Vec<f32>,
}

impl TissueTexture {
    pub fn generate(opts: &TextureOptions) -> Result<Self> {
        let n = opts.tile_px;
        if n < 16 || opts.octaves.iter().any(|&(c, _)| c == 0 || !n.is_multiple_of(c)) {
            return Err(Error::InvalidArgument(format!(
                "tile of {n} px is not divisible by every octave cell"
            )));
        }
        if !(opts.pitch > 0.0 && opts.half_extent > 0.0) {
            return Err(Error::InvalidArgument("texture pitch and extent must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut acc = vec![0.0f64; n * n];
        for &(cell, weight) in &opts.octaves {
            let lattice_n = n / cell;
            let lattice: Vec<f64> = (0..lattice_n * lattice_n).map(|_| rng.random::<f64>()).collect();
            for i in 0..n {
                let (li, fi) = (i / cell, fade((i % cell) as f64 / cell as f64));
                let li1 = (li + 1) % lattice_n;
                for j in 0..n {
                    let (lj, fj) = (j / cell, fade((j % cell) as f64 / cell as f64));
                    let lj1 = (lj + 1) % lattice_n;
                    let v00 = lattice[li * lattice_n + lj];
                    let v01 = lattice[li * lattice_n + lj1];
                    let v10 = lattice[li1 * lattice_n + lj];
                    let v11 = lattice[li1 * lattice_n + lj1];
                    let top = v00 + (v01 - v00) * fj;
                    let bottom = v10 + (v11 - v10) * fj;
                    acc[i * n + j] += weight * (top + (bottom - top) * fi);
                }
            }
        }
        let (lo, hi) = acc
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = (hi - lo).max(1e-12);
        let data = acc
            .iter()
            .map(|&v| (0.1 + 0.6 * (v - lo) / span) as f32)
            .collect();
        Ok(Self {
            size: n,
            pitch: opts.pitch,
            half_extent: opts.half_extent,
            data,
        })
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_extent && y.abs() <= self.half_extent
    }

    /// Bilinear sample at texture-pixel coordinates (column `u`, row `v`),
    /// wrapping around the tile.
    #[inline]
    /// Fills `out` (row-major, `rows × cols`) with samples on the unit pixel
    /// grid whose first sample is at `(u0, v0)`. Equal to calling
    /// [`TissueTexture::sample_px`] per pixel.
    pub fn sample_grid(&self, u0: f64, v0: f64, rows: usize, cols: usize, out: &mut [f64]) {
        let n = self.size;
        let (fu, fv) = (u0.floor(), v0.floor());
        let (tu, tv) = (u0 - fu, v0 - fv);
        let j0 = (fu as isize).rem_euclid(n as isize) as usize;
        let i0 = (fv as isize).rem_euclid(n as isize) as usize;
        let cols_idx: Vec<(usize, usize)> = (0..cols).map(|j| ((j0 + j) % n, (j0 + j + 1) % n)).collect();
        for i in 0..rows {
            let ra = &self.data[((i0 + i) % n) * n..][..n];
            let rb = &self.data[((i0 + i + 1) % n) * n..][..n];
            for (o, &(ja, jb)) in out[i * cols..(i + 1) * cols].iter_mut().zip(&cols_idx) {
                let (a, b) = (ra[ja] as f64, ra[jb] as f64);
                let (c, e) = (rb[ja] as f64, rb[jb] as f64);
                let top = a + (b - a) * tu;
                let bottom = c + (e - c) * tu;
                *o = top + (bottom - top) * tv;
            }
        }
    }

    pub fn sample_px(&self, u: f64, v: f64) -> f64 {
        let n = self.size as isize;
        let (fu, fv) = (u.floor(), v.floor());
        let (tu, tv) = (u - fu, v - fv);
        let j0 = (fu as isize).rem_euclid(n) as usize;
        let i0 = (fv as isize).rem_euclid(n) as usize;
        let j1 = (j0 + 1) % self.size;
        let i1 = (i0 + 1) % self.size;
        let d = &self.data;
        let a = d[i0 * self.size + j0] as f64;
        let b = d[i0 * self.size + j1] as f64;
        let c = d[i1 * self.size + j0] as f64;
        let e = d[i1 * self.size + j1] as f64;
        let top = a + (b - a) * tu;
        let bottom = c + (e - c) * tu;
        top + (bottom - top) * tv
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}
