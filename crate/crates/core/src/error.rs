use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("kernel cutoff {cutoff:.4} µm⁻¹ exceeds grid Nyquist {nyquist:.4} µm⁻¹")]
    Aliasing { cutoff: f64, nyquist: f64 },

    #[error("ill-posed: {0}")]
    IllPosed(String),

    #[error("stack is empty")]
    EmptyStack,

    #[error("stack count mismatch: {0} measurements vs {1} patterns")]
    CountMismatch(usize, usize),

    #[error("need at least {needed} images, got {got}")]
    TooFewImages { needed: usize, got: usize },

    #[error("negative input: {0}")]
    NegativeInput(String),

    #[error("could not place {requested} beads after {attempts} attempts")]
    Placement { requested: usize, attempts: usize },

    #[error("scan step {step_px:.3} px is below one pixel")]
    StepTooSmall { step_px: f64 },

    #[error("multi-spot period of {period_px} px does not fit in a field of {extent} px")]
    Tiling { period_px: usize, extent: usize },

    #[error(
        "pattern {index} diverged (residual {residual:.3e} vs minimum {minimum:.3e}); reduce the step size"
    )]
    Divergence {
        index: usize,
        residual: f64,
        minimum: f64,
    },

    #[error("threshold {threshold} not crossed within the measured sweep")]
    OutOfRange { threshold: f64 },

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("profile: {0}")]
    Profile(String),

    #[error("file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
