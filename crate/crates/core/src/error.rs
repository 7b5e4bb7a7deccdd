use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operation unsupported in dimension {dim}: {what}")]
    UnsupportedDimension { dim: usize, what: &'static str },
    #[error("negative density {value} at cell {index}")]
    PositivityViolation { index: usize, value: f64 },
    #[error("reference density must be positive, got {value} at cell {index}")]
    ReferencePositivity { index: usize, value: f64 },
    #[error("nonzero momentum on vacuum cell {index}")]
    VacuumInconsistency { index: usize },
    #[error("computed coercivity constant {value} is not positive")]
    CoercivityViolation { value: f64 },
    #[error("density {value} below floor at t = {t}, cell {index}")]
    PositivityBreach { t: f64, index: usize, value: f64 },
    #[error("non-finite value at t = {t} (step {step})")]
    Divergence { t: f64, step: u64 },
    #[error("reference density {value} outside declared bounds at cell {index}")]
    ReferenceBound { index: usize, value: f64 },
    #[error("stable step {dt} is below the Wiener base step {wiener_dt}")]
    WienerResolution { dt: f64, wiener_dt: f64 },
    #[error("coupling error: {0}")]
    Coupling(String),
    #[error("snapshot format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Errors caused by the numerics rather than by the caller.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PositivityBreach { .. } | Error::Divergence { .. } | Error::WienerResolution { .. }
        )
    }
}
