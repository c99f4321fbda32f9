use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NonSymmetric(f64),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("time {time} outside model window [{t_min}, {t_max}]")]
    WindowExceeded { time: f64, t_min: f64, t_max: f64 },
    #[error("integrator diverged: {0}")]
    IntegratorDiverged(String),
    #[error("quadrature stalled: {0}")]
    QuadratureStalled(String),
    #[error("decay fit failed: {0}")]
    FitFailed(String),
    #[error("model has no decay certificate with positive rate and no tail bound was supplied")]
    NoDecay,
    #[error("bad certificate: {0}")]
    BadCertificate(String),
    #[error("non-positive mean m_t(|phi|^p) = {0:.3e}")]
    NonPositiveMean(f64),
    #[error("step too large: |I + hA| = {norm:.3} at t = {time}")]
    StepTooLarge { norm: f64, time: f64 },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
