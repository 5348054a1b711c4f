use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{label}` out of range: {reason}")]
    OutOfRange { label: String, reason: String },

    #[error("invalid parameter partition: {0}")]
    Partition(String),

    #[error("non-finite value in {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },

    #[error("non-positive diffusion sigma^2 = {value} at t = {t}")]
    NonPositiveDiffusion { t: f64, value: f64 },

    #[error(
        "quadrature did not converge: estimated error {achieved:.3e}, requested {requested:.3e}"
    )]
    Quadrature { achieved: f64, requested: f64 },

    #[error("time ordering violated: expected {0}")]
    Ordering(String),

    #[error("invalid domain [{lo}, {hi}]: need 0 < lo < hi")]
    Domain { lo: f64, hi: f64 },

    #[error("infeasible design: {0}")]
    Design(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("design size {n} exceeds dense cap {cap}; use the asymptotic information instead")]
    TooLarge { n: usize, cap: usize },

    #[error("singular nuisance block (min eigenvalue {min_eigenvalue:.3e})")]
    SingularNuisance { min_eigenvalue: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("criterion degenerate: {0}")]
    CriterionDegenerate(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("invalid settings: {0}")]
    Settings(String),

    #[error("{0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn out_of_range(label: &str, reason: impl Into<String>) -> Self {
        Error::OutOfRange {
            label: label.to_string(),
            reason: reason.into(),
        }
    }
}
