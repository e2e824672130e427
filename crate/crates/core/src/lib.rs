//! Geometric neural phrase pooling (GNPP) and a small, dependency-light
//! CNN stack for training and analysing GNPP-equipped LeNets.
//!
//! All numeric code is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks). The aliases below name the common instantiations.

// `!(x > 0)` deliberately also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gnpp;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use arch::{parse_arch, shape_infer, with_blur, with_gnpp, ArchSpec, LayerDesc};
pub use error::{Error, Result};
pub use gnpp::{
    gaussian_blur_forward, gnpp_backward, gnpp_forward, GaussianBlur, GnppCache, GnppConfig, NeighborhoodType,
};
pub use network::{build_network, Network, Placement};
pub use optim::{schedule_lr, LrSchedule, SgdState};
pub use scalar::Scalar;
pub use tensor::{channel_mean_map, Shape4, Tensor4};

pub type Tensor4f = Tensor4<f32>;
pub type Tensor4d = Tensor4<f64>;
pub type Networkf = Network<f32>;
pub type Networkd = Network<f64>;
pub type GnppConfigf = GnppConfig<f32>;
pub type GnppConfigd = GnppConfig<f64>;
pub type Datasetf = data::Dataset<f32>;

/// The 2-conv MNIST LeNet.
pub const MNIST_LENET: &str = "{C5(S1P0)@20-MP2(S2)}{C5(S1P0)@50-MP2(S2)}{FC500}{FC10}";
/// The 3-conv LeNet used for SVHN and CIFAR.
pub const LENET3: &str = "{C5(S1P2)@32-MP3(S2)}{C5(S1P2)@32-AP3(S2)}{C5(S1P2)@64-AP3(S2)}{FC10}";
/// Caffe's AlexNet.
pub const ALEXNET: &str = "{C11(S4)@96-MP3(S2)}{C5(S1P2)@256-MP3(S2)}{C3(S1P1)@384}{C3(S1P1)@384}{C3(S1P1)@256-MP3(S2)}{FC4096-D0.5}{FC4096-D0.5}{FC1000}";
