use thiserror::Error;

/// Errors raised by the simulator's numerical and modelling layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not a proper rotation (orthonormality error {0:.3e})")]
    NotOrthonormal(f64),
    #[error("frame is {rows}x{cols}; at least {min}x{min} is required")]
    FrameTooSmall { rows: usize, cols: usize, min: usize },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("lateral position ({x:.6}, {y:.6}) m is outside the {what}")]
    OutsideDomain { x: f64, y: f64, what: &'static str },
    #[error("joint {joint} value {value} is outside [{lower}, {upper}]")]
    JointOutOfLimits { joint: usize, value: f64, lower: f64, upper: f64 },
    #[error("velocity box for joint {joint} is empty: [{lower}, {upper}]")]
    InfeasibleBox { joint: usize, lower: f64, upper: f64 },
    #[error("registration incomplete: {found} in-focus samples, {required} required")]
    RegistrationIncomplete { found: usize, required: usize },
    #[error("operator script is in {actual} mode, {expected} mode required")]
    WrongOperatorMode { expected: &'static str, actual: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
