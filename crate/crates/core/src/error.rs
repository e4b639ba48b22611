use alloc::string::String;

/// Errors raised across the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (group orders, hyperparameters, env names).
    #[error("configuration error: {0}")]
    Config(String),
    /// A vector or trajectory had the wrong length.
    #[error("shape error: {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A scalar argument was outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),
    /// An operation was invoked in the wrong state (e.g. backward without forward).
    #[error("state error: {0}")]
    State(&'static str),
    /// An operation was applied to a feature type it does not support.
    #[error("type error: {0}")]
    Type(&'static str),
    /// ODE integration produced a non-finite state.
    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },
    /// Training produced a non-finite loss or gradient.
    #[error("non-finite loss at optimizer step {step}")]
    NonFinite { step: usize },
    /// Training was asked to run on an empty dataset.
    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
