use thiserror::Error;

/// Errors produced by the distribution, order-statistic, mechanism and
/// worst-case routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid agent: {0}")]
    InvalidAgent(String),

    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("invalid revenue curve: {0}")]
    InvalidCurve(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("revenue curve is not concave (slope rises by {excess:.3e} at knot {knot})")]
    NotConcave { knot: usize, excess: f64 },

    #[error("segment {segment} has nonpositive revenue increment {increment:.3e}")]
    NonPositiveIncrement { segment: usize, increment: f64 },

    #[error("virtual value undefined at v = {value}: no mass at or below it")]
    UndefinedVirtualValue { value: f64 },

    #[error("invalid probability {value} ({context})")]
    InvalidProbability { value: f64, context: &'static str },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what}: argument {value} outside domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("{what} did not converge (achieved error {achieved:.3e})")]
    NoConvergence { what: &'static str, achieved: f64 },

    #[error("anonymous pricing revenue is zero; ratio undefined")]
    ZeroAnonymousRevenue,
}

impl Error {
    /// True for failures of an iterative numerical method, as opposed to bad
    /// input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NoConvergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
