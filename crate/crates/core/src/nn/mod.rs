//! Layers, networks and their forward/backward passes.

mod arch;
mod kernels;
mod layer;
mod network;

pub use arch::Architecture;
pub use layer::LayerSpec;
pub use network::{Gradients, Network, Role, Trace};
