//! Minimal differentiable computation: dense tensors, a reverse-mode tape,
//! the layers the trajectory model needs, AdamW and a warmup-cosine schedule.

pub mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod schedule;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{Activation, Conv1dTemporal, FeedForward, GruCell, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use optim::AdamW;
pub use params::{Param, ParamId, ParamStore};
pub use schedule::LrSchedule;
pub use tensor::Tensor;
