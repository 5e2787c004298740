use thiserror::Error;

pub type Result<T, E = UrnError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UrnError {
    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("requested {requested} exceeds the configured cap of {cap}")]
    ResourceCap { requested: u64, cap: u64 },
    #[error("rate fit needs at least {needed} positive points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("state left [0, 1] at step {step}: x = {value}")]
    RangeViolation { step: u64, value: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl UrnError {
    pub(crate) fn domain_unit(what: &'static str, value: f64) -> Self {
        UrnError::Domain {
            what,
            value,
            domain: "[0, 1]",
        }
    }
}

/// Fails with [`UrnError::ResourceCap`] when `requested > cap`.
pub fn check_cap(requested: u64, cap: u64) -> Result<()> {
    if requested > cap {
        Err(UrnError::ResourceCap { requested, cap })
    } else {
        Ok(())
    }
}
