//! Crété-Roffet no-reference blur score and mean intensity.
//!
//! The score compares neighbour differences of the image with those of a
//! re-blurred copy: a sharp image loses much of its local variation when
//! blurred again, an already blurred one hardly changes.
//!
//! Axis convention: "x" differences run along the row index `i`
//! (`I[i][j] - I[i-1][j]`) and "y" differences along the column index `j`.
//! The re-blur for each axis is a centred box filter along that same axis with
//! replicated borders.

use super::frame::PcleFrame;
use crate::error::{Error, Result};

pub const DEFAULT_FILTER_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrMetric {
    filter_len: usize,
}

impl Default for CrMetric {
    fn default() -> Self {
        Self {
            filter_len: DEFAULT_FILTER_LEN,
        }
    }
}

impl CrMetric {
    /// `filter_len` must be odd and at least 3.
    pub fn new(filter_len: usize) -> Result<Self> {
        if filter_len < 3 || filter_len.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "filter length must be odd and >= 3, got {filter_len}"
            )));
        }
        Ok(Self { filter_len })
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    /// Sharpness in `[0, 1]`; 0 for a constant image.
    pub fn score(&self, frame: &PcleFrame) -> Result<f64> {
        let (rows, cols) = (frame.rows(), frame.cols());
        if rows < self.filter_len || cols < self.filter_len {
            return Err(Error::FrameTooSmall {
                rows,
                cols,
                min: self.filter_len,
            });
        }
        let px = frame.pixels();

        let bx = box_along_rows(px, rows, cols, self.filter_len);
        let (mut d_x, mut d_bx) = (0.0, 0.0);
        for i in 1..rows {
            let (cur, prev) = (&px[i * cols..(i + 1) * cols], &px[(i - 1) * cols..i * cols]);
            let (bcur, bprev) = (&bx[i * cols..(i + 1) * cols], &bx[(i - 1) * cols..i * cols]);
            for j in 0..cols {
                let di = (cur[j] - prev[j]).abs();
                let db = (bcur[j] - bprev[j]).abs();
                d_x += di;
                d_bx += (di - db).max(0.0);
            }
        }

        let by = box_along_cols(px, rows, cols, self.filter_len);
        let (mut d_y, mut d_by) = (0.0, 0.0);
        for i in 0..rows {
            let row = &px[i * cols..(i + 1) * cols];
            let brow = &by[i * cols..(i + 1) * cols];
            for j in 1..cols {
                let di = (row[j] - row[j - 1]).abs();
                let db = (brow[j] - brow[j - 1]).abs();
                d_y += di;
                d_by += (di - db).max(0.0);
            }
        }

        if d_x == 0.0 && d_y == 0.0 {
            return Ok(0.0);
        }
        // An axis without any variation carries no blur evidence.
        let blur = |d: f64, d_b: f64| if d == 0.0 { 0.0 } else { (d - d_b) / d };
        let q = 1.0 - blur(d_x, d_bx).max(blur(d_y, d_by));
        Ok(q.clamp(0.0, 1.0))
    }

    /// The metric's own low-pass filter applied along both axes.
    pub fn lowpass(&self, frame: &PcleFrame) -> PcleFrame {
        let (rows, cols) = (frame.rows(), frame.cols());
        let a = box_along_rows(frame.pixels(), rows, cols, self.filter_len);
        let b = box_along_cols(&a, rows, cols, self.filter_len);
        let mut out = PcleFrame::new(rows, cols, b).expect("box filter preserves range");
        out.timestamp = frame.timestamp;
        out.truth_distance = frame.truth_distance;
        out
    }
}

/// CR score with the default length-9 filter.
pub fn cr_score(frame: &PcleFrame) -> Result<f64> {
    CrMetric::default().score(frame)
}

pub fn lowpass(frame: &PcleFrame) -> PcleFrame {
    CrMetric::default().lowpass(frame)
}

pub fn intensity(frame: &PcleFrame) -> f64 {
    frame.pixels().iter().sum::<f64>() / frame.pixels().len() as f64
}

fn box_along_rows(px: &[f64], rows: usize, cols: usize, len: usize) -> Vec<f64> {
    let half = (len / 2) as isize;
    let last = rows as isize - 1;
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows as isize {
        let dst = &mut out[i as usize * cols..(i as usize + 1) * cols];
        for k in -half..=half {
            let src_i = (i + k).clamp(0, last) as usize;
            let src = &px[src_i * cols..(src_i + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for d in dst.iter_mut() {
            *d /= len as f64;
        }
    }
    out
}

fn box_along_cols(px: &[f64], rows: usize, cols: usize, len: usize) -> Vec<f64> {
    let half = len / 2;
    let mut out = vec![0.0; rows * cols];
    // each row is padded with replicated borders so the inner loop needs no
    // clamping; the summation order is unchanged
    let mut padded = vec![0.0; cols + 2 * half];
    for i in 0..rows {
        let row = &px[i * cols..(i + 1) * cols];
        padded[..half].fill(row[0]);
        padded[half..half + cols].copy_from_slice(row);
        padded[half + cols..].fill(row[cols - 1]);
        let dst = &mut out[i * cols..(i + 1) * cols];
        for (j, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for v in &padded[j..j + len] {
                acc += v;
            }
            *d = acc / len as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_scores_zero() {
        let f = PcleFrame::filled(32, 32, 0.5).unwrap();
        assert_eq!(cr_score(&f).unwrap(), 0.0);
    }

    #[test]
    fn filter_longer_than_frame_is_rejected() {
        let f = PcleFrame::filled(16, 16, 0.5).unwrap();
        let m = CrMetric::new(17).unwrap();
        assert!(matches!(m.score(&f), Err(Error::FrameTooSmall { min: 17, .. })));
        assert!(CrMetric::new(8).is_err());
    }

    #[test]
    fn intensity_is_the_mean() {
        assert_eq!(intensity(&PcleFrame::filled(16, 16, 0.0).unwrap()), 0.0);
        assert_eq!(intensity(&PcleFrame::filled(16, 16, 1.0).unwrap()), 1.0);
        let half = PcleFrame::from_fn(16, 16, |i, _| if i < 8 { 0.0 } else { 1.0 }).unwrap();
        assert_eq!(intensity(&half), 0.5);
    }

    #[test]
    fn stripes_along_one_axis_use_the_other_axis() {
        // constant along i, alternating along j
        let f = PcleFrame::from_fn(64, 64, |_, j| (j % 2) as f64).unwrap();
        let q = cr_score(&f).unwrap();
        assert!(q > 0.8 && q <= 1.0, "q = {q}");
    }
}
