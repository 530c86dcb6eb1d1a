use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Precondition or invariant violation on an operation's inputs.
    #[error("validation: {0}")]
    Validation(String),

    /// Shape/channel mismatch between tensors or against a declared contract.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Image/mask filename stems do not pair up.
    #[error("pairing: image `{image}` has no matching mask `{mask}`")]
    Pairing { image: String, mask: String },

    /// Checkpoint could not be loaded against the requesting configuration.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training aborted because the loss became non-finite.
    #[error("divergence at epoch {epoch}, step {step}: total loss is non-finite")]
    Divergence { epoch: usize, step: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
