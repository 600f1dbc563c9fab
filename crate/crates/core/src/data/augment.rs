use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BoxAnnotation, ImageTensor, Mask, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Probability of a horizontal mirror.
    pub flip_prob: f64,
    /// Crop side range as a fraction of the image side, drawn per dimension.
    pub crop_scale: (f64, f64),
    /// Attempts to find a crop keeping at least one target before giving up.
    pub crop_retries: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, crop_scale: (0.6, 1.0), crop_retries: 10 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop_scale ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
        }
        Ok(())
    }
}

/// Mirrors an inclusive pixel box in an image `width` pixels wide.
pub fn flip_box_horizontal(b: &BoxAnnotation, width: usize) -> BoxAnnotation {
    BoxAnnotation {
        x1: width - 1 - b.x2,
        x2: width - 1 - b.x1,
        centroid: ((width - 1) as f64 - b.centroid.0, b.centroid.1),
        ..*b
    }
}

fn flip_sample(sample: &Sample) -> Result<Sample> {
    let (h, w) = (sample.height(), sample.width());
    let c = sample.image.channels();
    let src = sample.image.data();
    let mut data = vec![0.0; src.len()];
    for ci in 0..c {
        for y in 0..h {
            let row = (ci * h + y) * w;
            for x in 0..w {
                data[row + x] = src[row + w - 1 - x];
            }
        }
    }
    let mut mask = Mask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            mask.set(x, y, sample.mask.get(w - 1 - x, y));
        }
    }
    Sample::from_mask(sample.id.clone(), ImageTensor::new(c, h, w, data)?, mask)
}

fn crop_sample(sample: &Sample, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<Sample> {
    let (h, w) = (sample.height(), sample.width());
    let c = sample.image.channels();
    let src = sample.image.data();
    let mut data = Vec::with_capacity(c * ch * cw);
    for ci in 0..c {
        for y in y0..y0 + ch {
            let row = (ci * h + y) * w;
            data.extend_from_slice(&src[row + x0..row + x0 + cw]);
        }
    }
    let mut mask = Mask::zeros(ch, cw);
    for y in 0..ch {
        for x in 0..cw {
            mask.set(x, y, sample.mask.get(x0 + x, y0 + y));
        }
    }
    Sample::from_mask(sample.id.clone(), ImageTensor::new(c, ch, cw, data)?, mask)
}

fn crop_side<R: Rng + ?Sized>(side: usize, scale: (f64, f64), rng: &mut R) -> usize {
    let s = if scale.1 > scale.0 { rng.random_range(scale.0..=scale.1) } else { scale.0 };
    ((side as f64 * s).round() as usize).clamp(1, side)
}

/// Random horizontal flip followed by a random crop.
///
/// The mask is transformed pixel-exactly and the boxes are re-derived from it,
/// so partially cropped targets are clipped and fully cropped ones vanish. A
/// crop that would remove every target is redrawn; after `crop_retries`
/// failures the uncropped sample is returned.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, config: &AugmentConfig, rng: &mut R) -> Result<Sample> {
    config.validate()?;
    let mut out = if rng.random_bool(config.flip_prob) { flip_sample(sample)? } else { sample.clone() };
    let (h, w) = (out.height(), out.width());
    for _ in 0..config.crop_retries.max(1) {
        let cw = crop_side(w, config.crop_scale, rng);
        let ch = crop_side(h, config.crop_scale, rng);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        let cropped = crop_sample(&out, x0, y0, cw, ch)?;
        if out.boxes.is_empty() || !cropped.boxes.is_empty() {
            out = cropped;
            return Ok(out);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mask_to_boxes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        let (h, w) = (40, 50);
        let mut mask = Mask::zeros(h, w);
        for &(x1, y1, x2, y2) in &[(3, 4, 5, 6), (20, 20, 22, 21), (40, 30, 41, 33)] {
            for y in y1..=y2 {
                for x in x1..=x2 {
                    mask.set(x, y, true);
                }
            }
        }
        let img = ImageTensor::new(1, h, w, (0..h * w).map(|i| ((i * 31) % 255) as f32 / 255.0).collect()).unwrap();
        Sample::from_mask("a", img, mask).unwrap()
    }

    #[test]
    fn flip_mirrors_boxes() {
        let s = sample();
        let f = flip_sample(&s).unwrap();
        let mut expected: Vec<_> = s.boxes.iter().map(|b| flip_box_horizontal(b, s.width())).collect();
        expected.sort_by_key(|b| (b.y1, b.x1));
        let mut got = f.boxes.clone();
        got.sort_by_key(|b| (b.y1, b.x1));
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!((g.x1, g.y1, g.x2, g.y2, g.area), (e.x1, e.y1, e.x2, e.y2, e.area));
            assert!((g.centroid.0 - e.centroid.0).abs() < 1e-12);
        }
        // Continuous extents mirror as x -> W - x in the corner frame.
        let b = s.boxes[0];
        let m = flip_box_horizontal(&b, s.width());
        assert_eq!((m.x1, m.x2 + 1), (s.width() - (b.x2 + 1), s.width() - b.x1));
    }

    #[test]
    fn full_crop_keeps_components() {
        let s = sample();
        let c = crop_sample(&s, 0, 0, s.width(), s.height()).unwrap();
        assert_eq!(c, s);
        let c = crop_sample(&s, 2, 3, 45, 35).unwrap();
        assert_eq!(c.boxes.len(), 3);
        assert_eq!((c.boxes[0].x1, c.boxes[0].y1), (1, 1));
    }

    #[test]
    fn augmentation_is_deterministic_and_consistent() {
        let s = sample();
        let cfg = AugmentConfig::default();
        for seed in 0..50 {
            let a = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.boxes, mask_to_boxes(&a.mask));
            assert!(!a.boxes.is_empty());
            assert!(a.width() >= 30 && a.height() >= 24);
            for bx in &a.boxes {
                assert!(bx.x2 < a.width() && bx.y2 < a.height());
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = AugmentConfig { crop_scale: (0.0, 1.0), ..Default::default() };
        assert!(augment(&sample(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
