use std::fmt;

/// Errors surfaced by mesh construction, bundle validation and the flow engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Mesh construction rejected its parameters or failed a build-time check.
    InvalidMesh(String),
    /// Bundle data violates its contract (rank, Chern vector, SPD fiber metric, lambda).
    InvalidBundle(String),
    /// A field contains NaN or infinity; carries the flow time where it was seen.
    NonFinite { what: &'static str, t: f64 },
    /// An operation was applied outside its domain (wrong surface, wrong case, ...).
    Domain(String),
    /// A requested combination is deliberately not supported.
    Unsupported(String),
    /// A numerical solve failed mid-run; carries the last valid time.
    Numerical { t: f64, reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidMesh(m) => write!(f, "invalid mesh: {m}"),
            Error::InvalidBundle(m) => write!(f, "invalid bundle: {m}"),
            Error::NonFinite { what, t } => write!(f, "non-finite {what} at t={t}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Unsupported(m) => write!(f, "unsupported: {m}"),
            Error::Numerical { t, reason } => write!(f, "numerical failure at t={t}: {reason}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
