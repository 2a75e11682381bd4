use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// A configuration value is out of range or inconsistent. `field` names
    /// the offending key as it appears in config files and flags.
    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A numerical failure inside an episode, tagged with where it happened.
    #[error("setup {setup}, step {step}: {source}")]
    Episode {
        setup: usize,
        step: usize,
        #[source]
        source: Box<SimError>,
    },
}

impl SimError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        SimError::Numerical(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
