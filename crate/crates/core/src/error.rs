use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix dimension {dim} exceeds the supported maximum {max}")]
    CapacityOverflow { dim: usize, max: usize },
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("eigensolver did not converge after {iterations} sweeps")]
    NoConvergence { iterations: usize },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("{name} = {value} is outside the allowed range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: String,
    },
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("{0} is not unitary (deviation {1:e})")]
    NotUnitary(&'static str, f64),
    #[error("decoherence produced a non-physical state (eigenvalue {eigenvalue:e}); check the envelope")]
    OutputNotPsd { eigenvalue: f64 },
    #[error("target unreachable: best residual {residual:e} exceeds {limit:e}")]
    Infeasible { residual: f64, limit: f64 },
    #[error("no pairs survive filtering (success probability {probability:e})")]
    ZeroSurvival { probability: f64 },
    #[error("insufficient tomography settings: {0}")]
    InsufficientSettings(String),
    #[error("sampling kernel too wide: acceptance {accepted}/{attempts} below 0.1%")]
    KernelTooWide { accepted: usize, attempts: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn out_of_range(name: &'static str, value: f64, range: impl Into<String>) -> Self {
        Error::OutOfRange {
            name,
            value,
            range: range.into(),
        }
    }
}
