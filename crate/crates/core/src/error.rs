use thiserror::Error;
use xwan_autodiff::AdError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("trajectory diverged at integration step {step}")]
    Divergence { step: usize },
    #[error("training diverged after {retries} retries (last: {reason})")]
    Aborted { retries: usize, reason: String },
    #[error("manufactured residual {residual:e} exceeds tolerance at t = {t}, x = {x:?}")]
    Manufacture { residual: f64, t: f64, x: Vec<f64> },
    #[error(transparent)]
    Ad(#[from] AdError),
}

pub type Result<T> = std::result::Result<T, Error>;
