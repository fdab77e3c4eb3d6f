//! Small dense networks with hand-written backpropagation.

mod adam;
mod checkpoint;
mod mlp;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use mlp::{soft_update, Activation, Gradients, Layer, Mlp, Tape};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
