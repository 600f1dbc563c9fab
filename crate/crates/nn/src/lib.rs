//! Small NCHW tensor library used by the detection/segmentation models.
//!
//! Layers keep whatever they need for the backward pass inside themselves:
//! `forward` runs in training mode and caches, `backward` consumes the cache
//! and accumulates parameter gradients, `infer` is a pure inference-mode
//! evaluation that takes `&self` and can be shared across threads.

pub mod checkpoint;
pub mod error;
pub mod gemm;
pub mod init;
pub mod layers;
pub mod module;
pub mod optim;
pub mod real;
pub mod tensor;

pub use checkpoint::{Checkpoint, TensorRecord};
pub use error::{NnError, Result};
pub use layers::{
    AdaptiveAvgPool2d, BatchNorm2d, BilinearResize, Conv2d, ConvBnRelu, ConvTranspose2x2, MaxPool2x2, Relu,
    Sigmoid,
};
pub use module::{Module, Param, TensorMut, TensorRef};
pub use optim::{ExponentialLr, Sgd, SgdConfig};
pub use real::Real;
pub use tensor::Tensor;
