use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} of document {index} is outside the domain of {metric}")]
    InvalidLabel { label: f64, index: usize, metric: String },

    #[error("non-finite value {value} at index {index} in {what}")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{metric} does not support {operation}")]
    Unsupported { metric: String, operation: &'static str },

    #[error("score {0} ties with an existing noisy score")]
    Tie(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("model format: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::LengthMismatch { what, got, expected })
    }
}
