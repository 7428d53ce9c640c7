use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Smallest accepted frame edge, in pixels.
pub const MIN_FRAME_EDGE: usize = 16;

/// One grayscale endomicroscopy image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcleFrame {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
    pub timestamp: f64,
    /// Simulation ground truth; `None` for external images.
    pub truth_distance: Option<f64>,
}

impl PcleFrame {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows < MIN_FRAME_EDGE || cols < MIN_FRAME_EDGE {
            return Err(Error::FrameTooSmall {
                rows,
                cols,
                min: MIN_FRAME_EDGE,
            });
        }
        if pixels.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} pixels supplied for a {rows}x{cols} frame",
                pixels.len()
            )));
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::PixelOutOfRange { index, value });
        }
        Ok(Self {
            rows,
            cols,
            pixels,
            timestamp: 0.0,
            truth_distance: None,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                pixels.push(f(i, j));
            }
        }
        Self::new(rows, cols, pixels)
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = t;
        self
    }

    pub fn with_truth_distance(mut self, d: f64) -> Self {
        self.truth_distance = Some(d);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i * self.cols + j]
    }

    /// Box downscale by `factor` to 8-bit; used for telemetry thumbnails.
    pub fn downscale_u8(&self, factor: usize) -> (usize, usize, Vec<u8>) {
        let factor = factor.max(1);
        let (r, c) = (self.rows / factor, self.cols / factor);
        let norm = (factor * factor) as f64;
        let mut out = Vec::with_capacity(r * c);
        for bi in 0..r {
            for bj in 0..c {
                let mut acc = 0.0;
                for di in 0..factor {
                    for dj in 0..factor {
                        acc += self.get(bi * factor + di, bj * factor + dj);
                    }
                }
                out.push(to_u8(acc / norm));
            }
        }
        (r, c, out)
    }

    /// Binary PGM (P5), 8 bits per pixel.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.cols, self.rows)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| to_u8(v)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
                if data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Io("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::Io(format!("unsupported PGM magic `{}`", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Io(format!("bad PGM header field `{s}`")))
        };
        let (cols, rows, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Io(format!("unsupported PGM maxval {maxval}")));
        }
        let body = data
            .get(pos..pos + rows * cols)
            .ok_or_else(|| Error::Io("truncated PGM body".into()))?;
        let pixels = body.iter().map(|&b| b as f64 / maxval as f64).collect();
        Self::new(rows, cols, pixels)
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
