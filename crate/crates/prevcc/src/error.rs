use thiserror::Error;

/// Errors produced by validation, fitting, and simulation.
///
/// Every variant carries a stable machine-readable code (see [`Error::code`])
/// so callers can branch on failures without parsing messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at data row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("invalid cohort ({code}) at subject {index}: {msg}")]
    Invalid {
        code: &'static str,
        index: usize,
        msg: String,
    },

    #[error("no_events: no uncensored case in the cohort")]
    NoEvents,

    #[error("empty_risk_set: empty risk set at event time {time}")]
    EmptyRiskSet { time: f64 },

    #[error("likelihood_monotone: partial likelihood diverges (|gamma| exceeded {bound})")]
    LikelihoodMonotone { bound: f64 },

    #[error("singular_hessian: {context}")]
    SingularHessian { context: &'static str },

    #[error("not_converged: {what} did not converge in {iterations} iterations")]
    NotConverged {
        what: &'static str,
        iterations: usize,
    },

    #[error("degenerate_estep: all survival mass vanished for case {index}")]
    DegenerateEStep { index: usize },

    #[error("em_ascent_violation: observed log-likelihood decreased by {drop:e} at iteration {iteration}")]
    AscentViolation { iteration: usize, drop: f64 },

    #[error("separation: logistic parameters diverge (|beta| exceeded {bound})")]
    Separation { bound: f64 },

    #[error("kappa_at_bound: Weibull parameter hit the optimization bound")]
    KappaAtBound,

    #[error("degenerate_truncation: acceptance rate below {rate:e} while generating prevalent cases")]
    DegenerateTruncation { rate: f64 },

    #[error("bootstrap_unstable: {failures} of {total} resample fits failed")]
    BootstrapUnstable { failures: usize, total: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Parse { .. } => "parse",
            Error::Invalid { code, .. } => code,
            Error::NoEvents => "no_events",
            Error::EmptyRiskSet { .. } => "empty_risk_set",
            Error::LikelihoodMonotone { .. } => "likelihood_monotone",
            Error::SingularHessian { .. } => "singular_hessian",
            Error::NotConverged { .. } => "not_converged",
            Error::DegenerateEStep { .. } => "degenerate_estep",
            Error::AscentViolation { .. } => "em_ascent_violation",
            Error::Separation { .. } => "separation",
            Error::KappaAtBound => "kappa_at_bound",
            Error::DegenerateTruncation { .. } => "degenerate_truncation",
            Error::BootstrapUnstable { .. } => "bootstrap_unstable",
            Error::InvalidInput(_) => "invalid_input",
        }
    }

    /// True for failures of numerical procedures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoEvents
                | Error::EmptyRiskSet { .. }
                | Error::LikelihoodMonotone { .. }
                | Error::SingularHessian { .. }
                | Error::NotConverged { .. }
                | Error::DegenerateEStep { .. }
                | Error::AscentViolation { .. }
                | Error::Separation { .. }
                | Error::KappaAtBound
                | Error::DegenerateTruncation { .. }
                | Error::BootstrapUnstable { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
