//! Error type shared across the library.
//!
//! Errors are split into two broad classes so that callers (notably the
//! command-line front end) can distinguish *configuration* problems — bad
//! input that the user can fix — from *numerical* failures encountered while
//! evaluating a well-formed request.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent input: parameters out of range, malformed
    /// model files, unsupported option combinations.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A requested contour or transform argument lies outside the strip of
    /// analyticity where the integrand is defined.
    #[error("contour imaginary part {xi_i} outside admissible strip ({lo}, {hi}) for {what}")]
    StripViolation {
        /// Imaginary part that was requested.
        xi_i: f64,
        /// Lower edge of the open admissible strip.
        lo: f64,
        /// Upper edge of the open admissible strip.
        hi: f64,
        /// Short description of the object imposing the strip.
        what: String,
    },

    /// A transform was evaluated exactly at one of its poles.
    #[error("transform evaluated at a pole: {0}")]
    PoleEvaluation(String),

    /// A jet of derivative order `needed` was requested from data carrying
    /// only `available` orders.
    #[error("derivative-order budget exceeded: need order {needed}, have {available}")]
    OrderBudget {
        /// Order required by the operation.
        needed: usize,
        /// Order actually carried by the operand.
        available: usize,
    },

    /// The model lacks structure required by the requested operation
    /// (for example a proportional coefficient family).
    #[error("model form not supported by this operation: {0}")]
    UnsupportedForm(String),

    /// A numerical procedure failed to converge or produced an invalid
    /// intermediate value.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A root-finding target lies outside the attainable range.
    #[error("target out of range: {0}")]
    OutOfRange(String),

    /// Underlying I/O failure while reading configuration or model files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error reflects user input that should be corrected,
    /// as opposed to a numerical failure at evaluation time.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::StripViolation { .. }
                | Error::UnsupportedForm(_)
                | Error::Io(_)
        )
    }
}

/// Convenient result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configuration_classification() {
        assert!(Error::Config("bad".into()).is_configuration());
        assert!(Error::UnsupportedForm("x".into()).is_configuration());
        assert!(!Error::Numeric("overflow".into()).is_configuration());
        assert!(!Error::OutOfRange("price".into()).is_configuration());
        assert!(!Error::OrderBudget {
            needed: 3,
            available: 1
        }
        .is_configuration());
    }

    #[test]
    fn messages_mention_key_fields() {
        let e = Error::StripViolation {
            xi_i: 2.0,
            lo: -1.0,
            hi: 1.5,
            what: "put transform".into(),
        };
        let s = e.to_string();
        assert!(s.contains("2"));
        assert!(s.contains("put transform"));

        let e = Error::OrderBudget {
            needed: 5,
            available: 2,
        };
        assert!(e.to_string().contains("5"));
    }
}
