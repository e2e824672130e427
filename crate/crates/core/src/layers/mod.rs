//! Standard CNN building blocks with explicit forward and backward passes.

mod activation;
mod conv;
mod dropout;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv_out_dim, Conv2d, ConvGrads};
pub use dropout::Dropout;
pub use linear::{Linear, LinearGrads};
pub use loss::{softmax, softmax_xent};
pub use pool::{pool_out_dim, Pool2d, PoolCache, PoolKind};
