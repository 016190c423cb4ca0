use thiserror::Error;

/// Every failure the lab can report. Variants are grouped by the stage that
/// raises them so the CLI can map them onto exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    /// The small-jump integral of rho^2 against the Levy measure does not converge.
    #[error("jump integrability condition fails (integral of rho(z)^2 over |z|<1 diverges): {0}")]
    Integrability(String),

    #[error("reflection geometry error: {0}")]
    Geometry(String),

    #[error("simulation produced a non-finite state at step {step}: {detail}")]
    Simulation { step: usize, detail: String },

    #[error("reflection failed at {point:?}: {detail}")]
    Reflection { point: Vec<f64>, detail: String },

    #[error("grid resolution error: {0}")]
    Resolution(String),

    #[error("assembly error at node {node}: {detail}")]
    Assembly { node: usize, detail: String },

    #[error("solver did not converge after {iterations} sweeps (residual {residual:.3e})")]
    Solver {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("point {point:?} lies outside the grid hull")]
    Extrapolation { point: Vec<f64> },

    #[error("degenerate restart weight: E[H] = {0:.3e}")]
    DegenerateWeight(f64),

    #[error("node {0} carries no boundary piece")]
    Classification(usize),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Config(e.to_string())
    }
}
