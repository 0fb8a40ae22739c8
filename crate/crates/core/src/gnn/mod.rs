//! Two-layer message-passing GCN with per-edge propagation weights and
//! per-node loss weights, its exact gradients, and the optimizer.

mod model;
mod optim;
mod params;

pub use model::{
    backward, cross_entropy, forward, forward_with, node_gradient, per_node_grad_norm, softmax,
    uniform_beta, weighted_loss, Dropout, ForwardCache, Propagation,
};
pub use optim::{optimizer_step, AdamConfig, AdamState};
pub(crate) use params::{decode_payload, encode_framed, split_framed};
pub use params::{ModelParams, TensorShape};
