use thiserror::Error;

/// Errors produced anywhere in the depth-recovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({x}, {y}) lies outside the {width}x{height} depth field")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate configuration: lifted points span rank {rank}, need 4")]
    DegenerateConfiguration { rank: usize },

    #[error("no consensus: best hypothesis has {best} inliers, need at least {required}")]
    NoConsensus { best: usize, required: usize },

    #[error("ill-conditioned camera jacobian: {0}")]
    IllConditionedJacobian(String),

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error(
        "division hazard: masked ground-truth depth {value:e} at pixel {index} is within 1e-6 of zero; \
         offset the ground truth away from zero before computing relative metrics"
    )]
    DivisionHazard { index: usize, value: f64 },

    #[error("insufficient support: {requested} points requested but only {available} visible")]
    InsufficientSupport { requested: usize, available: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (solver, jacobian, alignment) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateConfiguration { .. }
                | Error::NoConsensus { .. }
                | Error::IllConditionedJacobian(_)
                | Error::DegenerateAlignment(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
