//! Dense tensors, a reverse-mode tape, and the two optimizers used for
//! weights (momentum SGD) and architecture parameters (Adam).

mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, cosine_lr, global_norm, sgd_step, AdamState, SgdState};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
