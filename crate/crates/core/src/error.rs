use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes shared by every module of the core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A graph, layer, or loss was configured inconsistently. `context` names
    /// the offending layer, tap, or parameter.
    Config { context: String, message: String },
    /// A caller broke an operation's precondition.
    Precondition(String),
    /// Weight data did not match the graph it was loaded for.
    Load { layer: String, message: String },
    /// The optimization produced a non-finite loss.
    Divergence { epoch: usize, loss: f64 },
    /// The caller's run budget ran out before `epoch`.
    Interrupted { epoch: usize },
    /// Graph bookkeeping went wrong; points to a builder bug rather than bad input.
    Internal(String),
}

impl Error {
    pub(crate) fn config(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn load(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            layer: layer.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config { context, message } => {
                write!(f, "configuration error in `{context}`: {message}")
            }
            Error::Precondition(message) => write!(f, "precondition violated: {message}"),
            Error::Load { layer, message } => {
                write!(f, "weight load error for layer `{layer}`: {message}")
            }
            Error::Divergence { epoch, loss } => {
                write!(f, "optimization diverged at epoch {epoch} (loss = {loss})")
            }
            Error::Interrupted { epoch } => write!(f, "run budget exhausted before epoch {epoch}"),
            Error::Internal(message) => write!(f, "internal error: {message}"),
        }
    }
}

impl core::error::Error for Error {}
