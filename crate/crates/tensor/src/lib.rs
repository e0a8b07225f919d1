//! Minimal dense-tensor toolkit: row-major tensors, a reverse-mode tape over
//! a fixed primitive catalog, AdamW, a cosine schedule and a checkpoint
//! container.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use real::{DType, Real};
pub use rng::Stream;
pub use tape::{Gradients, Primitive, PrimitiveKind, Tape, Var};
pub use tensor::Tensor;
