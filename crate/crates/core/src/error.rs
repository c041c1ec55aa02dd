use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure of a fusion, merge or analysis operation.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes disagree, or a tensor is missing on one side.
    Shape(String),
    /// A configuration value violates its documented range.
    InvalidConfig(String),
    /// A numeric input is out of range or not finite.
    InvalidValue(String),
    /// A LoRA adapter lacks its A or B half. Carries the adapter name.
    Pairing(String),
    /// A tuning objective produced a non-finite value.
    Objective(String),
    /// An activation trace is empty or inconsistent.
    InvalidTrace(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InvalidValue(msg) => write!(f, "invalid value: {msg}"),
            Error::Pairing(adapter) => write!(f, "unpaired adapter `{adapter}`"),
            Error::Objective(msg) => write!(f, "objective error: {msg}"),
            Error::InvalidTrace(msg) => write!(f, "invalid trace: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
