//! Samples, annotations, and the dataset pipeline.

mod augment;
mod coco;
mod dataset;
mod labeling;
mod resize;
mod split;
mod synth;

pub use augment::{augment, flip_box_horizontal, AugmentConfig};
pub use coco::{read_results, write_results, CocoAnnotation, CocoCategory, CocoDataset, CocoImage, CocoResult, TARGET_CATEGORY};
pub use dataset::{load_dataset, load_image, load_mask, prepare_data, save_image, save_mask, write_dataset, Dataset, PrepareReport};
pub use labeling::{label_components, mask_to_boxes};
pub use resize::{resize_image_bilinear, resize_mask_nearest, resize_sample, scale_box};
pub use split::{read_split, split_dataset, write_split, Split, SplitSpec};
pub use synth::{synth_generate, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Planar (CHW) image with intensities normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dims must be nonzero, got {channels}×{height}×{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {channels}×{height}×{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("image contains non-finite values".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    /// Replicates a single-band image into `channels` bands (no-op when the
    /// channel count already matches).
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(Error::Shape(format!(
                "cannot convert a {}-channel image to {channels} channels",
                self.channels
            )));
        }
        let data = (0..channels).flat_map(|_| self.data.iter().copied()).collect();
        Self::new(channels, self.height, self.width, data)
    }

    /// Batch-of-one tensor `[1, C, H, W]`.
    pub fn to_tensor<T: mtnet_nn::Real>(&self) -> mtnet_nn::Tensor<T> {
        mtnet_nn::Tensor::from_vec(
            [1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("image buffer matches its dims")
    }
}

/// Binary target/background mask (1 = target).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    /// Builds a mask from raw values, which must all be 0 or 1.
    pub fn from_values(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer has {} values, expected {height}×{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!(
                "mask is not binary: value {} at pixel ({}, {})",
                data[pos],
                pos % width.max(1),
                pos / width.max(1)
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Tight box around one mask component, in inclusive pixel indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
    /// Mean pixel coordinate of the component.
    pub centroid: (f64, f64),
    /// Pixel count of the component.
    pub area: usize,
}

impl BoxAnnotation {
    /// Box centre `((x1+x2)/2, (y1+y2)/2)`.
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) as f64 / 2.0, (self.y1 + self.y2) as f64 / 2.0)
    }

    /// `(width, height)` in pixels, at least one each.
    pub fn size(&self) -> (f64, f64) {
        ((self.x2 - self.x1 + 1) as f64, (self.y2 - self.y1 + 1) as f64)
    }

    /// Continuous extent in the pixel-centre frame.
    pub fn extent(&self) -> BBox {
        BBox::new(
            self.x1 as f64 - 0.5,
            self.y1 as f64 - 0.5,
            self.x2 as f64 + 0.5,
            self.y2 as f64 + 0.5,
        )
    }

    /// COCO `[x, y, w, h]`.
    pub fn coco_bbox(&self) -> [f64; 4] {
        let (w, h) = self.size();
        [self.x1 as f64, self.y1 as f64, w, h]
    }
}

/// One image with its mask and the boxes derived from that mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub mask: Mask,
    pub boxes: Vec<BoxAnnotation>,
}

impl Sample {
    /// Builds a sample whose boxes are the components of `mask`.
    pub fn from_mask(id: impl Into<String>, image: ImageTensor, mask: Mask) -> Result<Self> {
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::Shape(format!(
                "image is {}×{} but mask is {}×{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        let boxes = mask_to_boxes(&mask);
        Ok(Self { id: id.into(), image, mask, boxes })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}
