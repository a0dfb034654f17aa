use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "requested readout {requested_s:.6e} s is shorter than the hardware-limited minimum {min_total_s:.6e} s"
    )]
    InfeasibleDuration { requested_s: f64, min_total_s: f64 },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("sample {index} has normalized coordinate ({kx}, {ky}) outside [-0.5, 0.5]")]
    CoordOutOfRange { index: usize, kx: f64, ky: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("numerical breakdown at iteration {iteration}: {detail}")]
    NumericalBreakdown { iteration: usize, detail: String },

    #[error("weight {index} is not strictly positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("step {step} out of range for a schedule of {steps} steps")]
    OutOfRange { step: usize, steps: usize },

    #[error("reference image has no dynamic range")]
    DegenerateReference,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
