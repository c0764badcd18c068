use thiserror::Error;

/// Crate-wide error type. `exit_code` groups variants the way the CLI reports
/// them: 2 for configuration/usage problems, 3 for failed condition checks,
/// 4 for numeric trouble at run time.
#[derive(Debug, Error)]
pub enum Error {
    #[error("drift balance violated: L^(2+r)*L_w + (2+r)*alpha/lambda = {lhs} >= 1")]
    BalanceViolation { lhs: f64 },

    #[error("switching row {row} sums to {sum}, expected 1")]
    InvalidRowSum { row: usize, sum: f64 },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("noise radius {eps} exceeds the state-space diameter {bound}")]
    NoiseSupportTooLarge { eps: f64, bound: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown gallery name: {0}")]
    UnknownGalleryName(String),

    #[error("unknown observable: {0}")]
    UnknownObservable(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("support of size {0} exceeds the exact-solver cap {1}; subsample first")]
    SupportTooLarge(usize, usize),

    #[error("time {t} is beyond the simulated horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },

    #[error("post-jump state left the declared state space: {0}")]
    StateEscapedY(String),

    #[error("rejection sampler stalled after {0} proposals (acceptance below threshold)")]
    RejectionStall(u64),

    #[error("proposal density {found} exceeds the declared envelope cap {cap}")]
    DensityCapExceeded { found: f64, cap: f64 },

    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),

    #[error("transport solver failed: {0}")]
    LpFailure(String),

    #[error("autocovariance series shows no usable geometric decay: {0}")]
    SeriesNotDecaying(String),

    #[error("both variance components are zero; the combined scale is degenerate")]
    DegenerateSigma,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("config encode error: {0}")]
    TomlEncode(#[from] toml::ser::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            BalanceViolation { .. }
            | InvalidRowSum { .. }
            | InvalidConfig(_)
            | NoiseSupportTooLarge { .. }
            | DimensionMismatch(_)
            | UnknownGalleryName(_)
            | UnknownObservable(_)
            | InsufficientSamples(_)
            | SupportTooLarge(..)
            | BeyondHorizon { .. }
            | TomlParse(_)
            | TomlEncode(_) => 2,
            StateEscapedY(_)
            | RejectionStall(_)
            | DensityCapExceeded { .. }
            | QuadratureFailure(_)
            | LpFailure(_)
            | SeriesNotDecaying(_)
            | DegenerateSigma
            | NonFinite(_) => 4,
            Io(_) | Json(_) => 4,
        }
    }

    /// Stable machine-readable tag used in CLI error records.
    pub fn tag(&self) -> &'static str {
        use Error::*;
        match self {
            BalanceViolation { .. } => "BalanceViolation",
            InvalidRowSum { .. } => "InvalidRowSum",
            InvalidConfig(_) => "InvalidConfig",
            NoiseSupportTooLarge { .. } => "NoiseSupportTooLarge",
            DimensionMismatch(_) => "DimensionMismatch",
            UnknownGalleryName(_) => "UnknownGalleryName",
            UnknownObservable(_) => "UnknownObservable",
            InsufficientSamples(_) => "InsufficientSamples",
            SupportTooLarge(..) => "SupportTooLarge",
            BeyondHorizon { .. } => "BeyondHorizon",
            StateEscapedY(_) => "StateEscapedY",
            RejectionStall(_) => "RejectionStall",
            DensityCapExceeded { .. } => "DensityCapExceeded",
            QuadratureFailure(_) => "QuadratureFailure",
            LpFailure(_) => "LpFailure",
            SeriesNotDecaying(_) => "SeriesNotDecaying",
            DegenerateSigma => "DegenerateSigma",
            NonFinite(_) => "NonFinite",
            Io(_) => "Io",
            Json(_) => "Json",
            TomlParse(_) => "TomlParse",
            TomlEncode(_) => "TomlEncode",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
