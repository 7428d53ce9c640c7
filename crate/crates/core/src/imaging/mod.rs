//! Endomicroscopy imaging: frames, the blur metric that drives auto-focus, and
//! a synthetic probe renderer whose sharpness follows the probe-to-tissue
//! distance.

mod frame;
mod metric;
mod render;
mod texture;

pub use frame::PcleFrame;
pub use metric::{cr_score, intensity, lowpass, CrMetric, DEFAULT_FILTER_LEN};
pub use render::{focus_sweep, FocusCalibration, FocusProfile, RenderOptions, Renderer};
pub use texture::{TissueTexture, TextureOptions};
