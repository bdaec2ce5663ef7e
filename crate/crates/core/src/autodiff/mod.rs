//! Dense reverse-mode differentiation over 64-bit tensors.
//!
//! A [`Graph`] records every primitive application as a node in creation
//! order, which is already a topological order; [`Graph::backward`] walks it
//! once in reverse. Parameters live outside the graph in a [`ParamStore`]
//! and are attached as leaves for each forward pass.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use graph::{Graph, Var};
pub use optim::Adam;
pub use params::{BoundParams, ParamStore};
pub use tensor::Tensor;
