//! Exit-code discipline. Every command failure is classified before it
//! reaches `main`: 1 for usage errors (bad flags, malformed configs,
//! missing files the user named), 2 for data errors (inputs that parsed as
//! files but not as chemistry, stale archives, thresholds not met) and 3
//! for numeric errors (non-finite values in training or decoding). Success
//! is 0. Scripts drive the pipeline by these codes, so the mapping is part
//! of the interface.

use anyhow::Error;

#[derive(Debug)]
pub enum Failure {
    Usage(Error),
    Data(Error),
    Numeric(Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Numeric(e) => e,
        }
    }
}

/// Tag a result with its exit class at the call site: `open(..).or_data()?`.
/// Numeric failures are built directly — they come from typed error
/// matches, not blanket conversions.
pub trait Classify<T> {
    fn or_usage(self) -> Result<T, Failure>;
    fn or_data(self) -> Result<T, Failure>;
}

impl<T, E: Into<Error>> Classify<T> for Result<T, E> {
    fn or_usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn or_data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}
