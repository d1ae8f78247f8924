use thiserror::Error;

/// Errors produced anywhere in the simulation / calibration pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("sine fit did not converge after {iterations} iterations (last relative step {last_step:.3e})")]
    Convergence {
        iterations: usize,
        last_step: f64,
        last: Box<crate::estimator::SineFit>,
    },

    #[error("phase ambiguity on channel {channel}: best skew candidate {candidate:.4} Ts")]
    Ambiguity { channel: usize, candidate: f64 },

    #[error("division error: {0}")]
    Division(String),

    #[error("coefficient overflow: tap {value} does not fit Q2.{frac_bits}")]
    Overflow { value: f64, frac_bits: u32 },

    #[error("frequency {freq_rel} is not coherent with a {n_fft}-point record")]
    Coherence { freq_rel: f64, n_fft: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
