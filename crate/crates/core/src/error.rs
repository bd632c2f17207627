use thiserror::Error;

use crate::lp::DualSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state or observable lies outside the region where the model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a precondition (control outside the box, off-level state, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("integration failed at t = {t_last}: {reason}")]
    Integration { t_last: f64, reason: String },

    #[error("no periodic orbit: no return to the section within tau = {tau_max}")]
    NoPeriodicOrbit { tau_max: f64 },

    #[error("degenerate orbit: {0}")]
    DegenerateOrbit(String),

    #[error("lp solver: {0}")]
    Lp(String),

    /// The exchange loop hit its iteration cap. The best certificate found so far is attached.
    #[error("exchange did not converge after {iterations} iterations (max violation {max_violation:e})")]
    ExchangeNotConverged {
        iterations: usize,
        max_violation: f64,
        best: Box<DualSolution>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("missing certificate: {0}")]
    MissingCertificate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract-violation",
            Error::EmptySamples => "empty-samples",
            Error::Integration { .. } => "integration",
            Error::NoPeriodicOrbit { .. } => "no-periodic-orbit",
            Error::DegenerateOrbit(_) => "degenerate-orbit",
            Error::Lp(_) => "lp-solver",
            Error::ExchangeNotConverged { .. } => "exchange-not-converged",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::MissingCertificate(_) => "missing-certificate",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
