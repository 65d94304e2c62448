use thiserror::Error;

use crate::solver::PicardDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("physical grid of {grid} points per axis aliases a degree-{radius} field (need at least {min})")]
    GridTooSmall { grid: usize, radius: i64, min: usize },

    #[error("fields live on different lattices: {0}")]
    SpecMismatch(String),

    #[error("time {t} lies outside the grid [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("operation needs a uniform time grid")]
    NonUniformGrid,

    #[error("enumeration budget exceeded: estimated cost {estimated} exceeds budget {budget}")]
    BudgetExceeded { estimated: u128, budget: u128 },

    #[error("power iteration did not converge in {0} steps")]
    NoConvergence(usize),

    #[error("step instability at t = {t}: L2 norm grew from {before:e} to {after:e} in one step")]
    Instability { t: f64, before: f64, after: f64 },

    #[error("no contraction after {halvings} horizon halvings (last ratio {last_ratio:.3})")]
    NoContraction {
        halvings: usize,
        last_ratio: f64,
        diagnostics: Box<PicardDiagnostics>,
    },

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
