mod activation;
mod block;
mod conv;
mod norm;
mod pool;
mod resize;
mod upconv;

pub use activation::{Relu, Sigmoid};
pub use block::ConvBnRelu;
pub use conv::Conv2d;
pub use norm::BatchNorm2d;
pub use pool::{AdaptiveAvgPool2d, MaxPool2x2};
pub use resize::BilinearResize;
pub use upconv::ConvTranspose2x2;

use crate::error::NnError;

pub(crate) fn missing_cache(layer: &str) -> NnError {
    NnError::Invalid(format!("{layer}: backward called without a cached forward pass"))
}
