use mtnet_nn::{BilinearResize, Tensor};

use super::{BoxAnnotation, ImageTensor, Mask, Sample};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Half-pixel-centred bilinear resize of every channel.
pub fn resize_image_bilinear(image: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension("resize target has a zero dimension".into()));
    }
    if (image.height(), image.width()) == (height, width) {
        return Ok(image.clone());
    }
    let t = Tensor::<f32>::from_vec([1, image.channels(), image.height(), image.width()], image.data().to_vec())?;
    let r = BilinearResize::apply(&t, height, width)?;
    ImageTensor::new(image.channels(), height, width, r.into_vec())
}

#[inline]
fn nearest_source(dst: usize, input: usize, output: usize) -> usize {
    ((((dst as f64) + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1)
}

/// Nearest-neighbour resize sampling at output pixel centres.
pub fn resize_mask_nearest(mask: &Mask, height: usize, width: usize) -> Result<Mask> {
    if height == 0 || width == 0 || mask.height() == 0 || mask.width() == 0 {
        return Err(Error::Dimension("mask resize with a zero dimension".into()));
    }
    let rows: Vec<usize> = (0..height).map(|y| nearest_source(y, mask.height(), height)).collect();
    let cols: Vec<usize> = (0..width).map(|x| nearest_source(x, mask.width(), width)).collect();
    let mut out = Mask::zeros(height, width);
    for (y, &sy) in rows.iter().enumerate() {
        for (x, &sx) in cols.iter().enumerate() {
            out.set(x, y, mask.get(sx, sy));
        }
    }
    Ok(out)
}

/// Extent of `b` after scaling the image by `(sx, sy)`.
pub fn scale_box(b: &BoxAnnotation, sx: f64, sy: f64) -> BBox {
    BBox::new(
        b.x1 as f64 * sx - 0.5,
        b.y1 as f64 * sy - 0.5,
        (b.x2 + 1) as f64 * sx - 0.5,
        (b.y2 + 1) as f64 * sy - 0.5,
    )
}

/// Resizes image (bilinear) and mask (nearest) and re-derives the boxes.
///
/// Components that vanish under nearest-neighbour sampling disappear from both
/// the mask and the box list.
pub fn resize_sample(sample: &Sample, height: usize, width: usize) -> Result<Sample> {
    if sample.height() == 0 || sample.width() == 0 {
        return Err(Error::Dimension("cannot resize an empty image".into()));
    }
    if (sample.height(), sample.width()) == (height, width) {
        return Ok(sample.clone());
    }
    let image = resize_image_bilinear(&sample.image, height, width)?;
    let mask = resize_mask_nearest(&sample.mask, height, width)?;
    Sample::from_mask(sample.id.clone(), image, mask)
}
