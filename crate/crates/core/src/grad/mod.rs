//! Dense tensors, a reverse-mode tape, and the two optimizers used in training.

mod conv;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{cosine, sigmoid, Cosine, Graph, OpKind, TapeNode, Var, LOG_FLOOR, NORM_FLOOR};
pub use optim::{adam_step, poly_lr, sgd_step, AdamConfig, AdamState, SgdConfig, SgdState};
pub use tensor::Tensor;
