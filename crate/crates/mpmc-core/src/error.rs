//! Error type shared by the core operations.

use alloc::string::String;
use core::fmt;

/// Errors raised by core operations.
///
/// `Config` covers invalid specifications and hyperparameters caught
/// before any work starts; `Contract` covers shape and precondition
/// violations between cooperating components; `NonFinite` aborts
/// training when a loss component stops being a number.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    Config(String),
    Contract(String),
    NonFinite { component: &'static str },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Config(msg) => write!(f, "configuration error: {msg}"),
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::NonFinite { component } => {
                write!(f, "non-finite value in loss component `{component}`")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::CoreError::Config(alloc::format!($($arg)*))
    };
}

macro_rules! contract_err {
    ($($arg:tt)*) => {
        $crate::error::CoreError::Contract(alloc::format!($($arg)*))
    };
}

pub(crate) use {config_err, contract_err};
