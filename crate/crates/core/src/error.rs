//! Error type shared across the crate.

/// Everything that can go wrong when building domain objects or running
/// checks. Statistical gate failures are not errors; they are `Fail`
/// verdicts in a [`crate::stats::TestReport`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid intensity measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),

    #[error("region extends outside the window")]
    RegionOutsideWindow,

    #[error("degenerate measure: total mass is zero")]
    DegenerateMeasure,

    #[error("range class {found} not accepted here (need {need})")]
    RangeClass { need: &'static str, found: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("empty sample list")]
    EmptySamples,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("n_max {n_max} too small for tail bound 1e-12; use at least {suggested}")]
    CountTail { n_max: usize, suggested: usize },

    #[error("point membership violated: {0}")]
    Membership(String),

    #[error("hat profiles are not supported here (no exact cell decomposition)")]
    HatUnsupported,

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("observed counts outside the reference support after pooling")]
    SupportMismatch,

    #[error("time {t} outside the log horizon [0, {horizon}]")]
    TimeOutsideHorizon { t: f64, horizon: f64 },

    #[error("perturbation moves a point outside the window")]
    PerturbationLeavesWindow,
}
