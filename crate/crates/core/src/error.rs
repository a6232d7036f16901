use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes, lengths or counts that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// An operation was evaluated outside its mathematical domain.
    #[error("domain error in `{op}` with operands {values:?}")]
    Domain { op: &'static str, values: Vec<f64> },

    /// A configuration or specification value violates its contract.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    /// The training objective became non-finite.
    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    /// A physics or model error raised while processing one sample.
    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<Error> },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, values: &[f64]) -> Self {
        Error::Domain {
            op,
            values: values.to_vec(),
        }
    }

    /// Attach the index of the offending sample.
    pub fn at_sample(self, index: usize) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample {
                index,
                source: Box::new(e),
            },
        }
    }
}
