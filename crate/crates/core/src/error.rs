use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent shapes, grids or model metadata.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A problem size above the cap of an exact algorithm.
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("integration blow-up at step {step} (particle {particle}, t = {time})")]
    Blowup {
        step: usize,
        particle: usize,
        time: f64,
    },

    #[error(
        "Picard iteration did not converge after {iterations} iterations (last gap {last_gap:e})"
    )]
    NonConvergence {
        iterations: usize,
        last_gap: f64,
        gaps: Vec<f64>,
    },

    /// Requested derivative information the functional does not carry.
    #[error("unsupported functional: {0}")]
    Unsupported(String),

    /// A declared property (non-anticipativity, growth, Lipschitz) failed a spot check.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
