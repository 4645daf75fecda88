use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "coefficient matrix at {point:?} is not decomposable over the stencil \
         (residual {residual:.3e}); widen the stencil to N >= {suggested_width}"
    )]
    Undecomposable {
        point: Vec<f64>,
        residual: f64,
        suggested_width: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mesh has {points} points, exhaustive pair scan is capped at {cap}; use a subsampled mode")]
    MeshTooLarge { points: usize, cap: usize },

    #[error("singular frozen-control system at interior point {0}")]
    Singular(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
