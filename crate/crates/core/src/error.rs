use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// Every kernel value vanished at the evaluation point; the bandwidth is too
    /// small for the grid spacing.
    #[error("all smoothing weights are zero at t = {t} (bandwidth too small for the grid)")]
    AllWeightsZero { t: f64 },

    #[error("bandwidth condition 2h > T/(d-1) violated: h = {bandwidth}, spacing = {spacing}")]
    AssumptionA3Violated { bandwidth: f64, spacing: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("support of size {size} exceeds enumeration cap {cap}")]
    TooLargeToEnumerate { size: f64, cap: f64 },

    #[error("no responders in group {group} at instant {instant}")]
    ZeroResponders { group: usize, instant: usize },

    #[error("response probability is zero for unit {unit} at instant {instant}")]
    ZeroTheta { unit: usize, instant: usize },

    #[error("Hajek denominator is zero at t = {t}")]
    ZeroDenominator { t: f64 },

    #[error("estimated population size is zero at instant {instant}")]
    ZeroDenominatorInstant { instant: usize },

    #[error("operation requires a stratified SRSWOR design")]
    NotStratified,

    #[error("joint inclusion probability is zero for sampled units {k} and {l}")]
    ZeroJointInclusion { k: usize, l: usize },

    #[error("stratum {stratum} has {count} sampled units; leave-one-out needs at least 2")]
    TooFewUnits { stratum: usize, count: usize },

    #[error("every candidate bandwidth failed")]
    AllCandidatesFailed,

    #[error("estimator undefined on an outcome of probability {probability}")]
    UndefinedOutcome { probability: f64 },

    #[error("stratum {stratum}: {source}")]
    InStratum {
        stratum: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stratum(self, stratum: usize) -> Self {
        Error::InStratum {
            stratum,
            source: Box::new(self),
        }
    }

    /// Strips stratum annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::InStratum { source, .. } => source.root(),
            other => other,
        }
    }
}
