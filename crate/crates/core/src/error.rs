use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("control {b} outside admissible range [{lo}, {hi}] at SoC {i}")]
    InfeasibleControl { b: f64, lo: f64, hi: f64, i: f64 },

    #[error("state {value} outside domain [{lo}, {hi}] at step {step}")]
    StateDomain { value: f64, lo: f64, hi: f64, step: usize },

    #[error("residual bank for bin {0} is empty")]
    EmptyResidualBank(usize),

    #[error("coefficient is inestimable: {0}")]
    Inestimable(&'static str),

    #[error("covariance matrix is not positive definite after jitter {jitter:e} (n = {n}); inputs are too close or kernel is ill-conditioned")]
    Factorization { n: usize, jitter: f64 },

    #[error("Riccati coefficient P{index} blew up to {value:e} at t = {t}")]
    RiccatiBlowUp { index: usize, value: f64, t: f64 },

    #[error("emulator sanity check failed at step {step} ({which}): training RMSE {rmse:e} vs target std {std:e}")]
    EmulatorSanity {
        step: usize,
        which: &'static str,
        rmse: f64,
        std: f64,
    },

    #[error("deviation reduction is undefined: baseline deviation is zero")]
    ZeroBaseline,

    #[error("profile data: {0}")]
    Profile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}
