use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One offending configuration key together with what is wrong with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {state:?} lies outside the admissible set")]
    Domain { state: Vec<f64> },

    #[error("eigenvalue gap {gap:.3e} below the separation bound {separation:.3e}")]
    HyperbolicityLoss { gap: f64, separation: f64 },

    #[error("solution left the admissible set at node {node} (x = {x})")]
    GridEscape { node: usize, x: f64 },

    #[error("solution left the admissible set at cell {cell} (t = {time})")]
    LatticeEscape { cell: i64, time: f64 },

    #[error("variation reached the outflow edge of the computational window (tail variation {tail:.3e})")]
    WindowExceeded { tail: f64 },

    #[error("total variation {tv:.3e} exceeds the smallness budget {budget:.3e}")]
    TvBudget { tv: f64, budget: f64 },

    #[error("step {step}: {inner}")]
    AtStep { step: usize, inner: Box<Error> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("truncation not achievable: {0}")]
    Truncation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("invalid configuration: {}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            inner: Box::new(self),
        }
    }

    /// Strips step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { inner, .. } => inner.root(),
            other => other,
        }
    }
}
