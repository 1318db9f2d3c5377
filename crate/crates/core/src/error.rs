use thiserror::Error;

/// Which leaf solver produced a failure inside a tracking iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Stable,
    Unstable,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Stable => f.write_str("stable"),
            Side::Unstable => f.write_str("unstable"),
        }
    }
}

#[derive(Debug, Error)]
pub enum FoliateError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "spectral gap condition violated: need {factor}*delta < beta - alpha \
         (alpha = {alpha}, beta = {beta}, delta = {delta})"
    )]
    SpectralGap {
        alpha: f64,
        beta: f64,
        delta: f64,
        factor: f64,
    },

    #[error("cannot choose the tail from the bound when sigma = {sigma} >= 0; pass an explicit number of grid points")]
    InfeasibleTail { sigma: f64 },

    #[error("divergence at iteration {iteration}, node {node}: {what}")]
    Divergence {
        iteration: usize,
        node: usize,
        what: String,
    },

    #[error("{side} leaf solver failed: {source}")]
    Leaf {
        side: Side,
        #[source]
        source: Box<FoliateError>,
    },

    #[error("no convergence after {iterations} iterations (last residual {last_residual:e})")]
    IterationLimit {
        iterations: usize,
        last_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("degenerate sequence: {0}")]
    DegenerateSequence(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, FoliateError>;

impl FoliateError {
    pub(crate) fn on_side(self, side: Side) -> Self {
        FoliateError::Leaf {
            side,
            source: Box::new(self),
        }
    }
}
