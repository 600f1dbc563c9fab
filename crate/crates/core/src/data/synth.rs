use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageTensor, Mask, Sample};
use crate::error::{Error, Result};

/// Parameters of the synthetic small-target generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range for the number of targets per image.
    pub targets: (usize, usize),
    /// Range for the per-axis Gaussian standard deviation of a target, in pixels.
    pub sigma: (f64, f64),
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Mean background level.
    pub background: f64,
    /// Amplitude of the smooth background variation.
    pub clutter: f64,
    /// Range for the target peak intensity above the local background.
    pub contrast: (f64, f64),
    /// Extra pixel gap kept between target half-peak boxes.
    pub min_gap: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 16,
            height: 64,
            width: 64,
            targets: (1, 3),
            sigma: (1.0, 2.0),
            noise: 0.02,
            background: 0.25,
            clutter: 0.1,
            contrast: (0.4, 0.6),
            min_gap: 2,
        }
    }
}

/// Half-peak level: the mask is `dx²/σx² + dy²/σy² <= HALF_PEAK`.
const HALF_PEAK: f64 = 2.0 * std::f64::consts::LN_2;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug)]
struct Blob {
    cx: f64,
    cy: f64,
    sx: f64,
    sy: f64,
    peak: f64,
}

impl Blob {
    /// Half-extent of the half-peak ellipse along each axis.
    fn reach(&self) -> (f64, f64) {
        (self.sx * HALF_PEAK.sqrt(), self.sy * HALF_PEAK.sqrt())
    }

    fn level(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx) / self.sx;
        let dy = (y - self.cy) / self.sy;
        dx * dx + dy * dy
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.count == 0 {
            problems.push("count must be positive".to_string());
        }
        if self.height == 0 || self.width == 0 {
            problems.push("image dims must be positive".to_string());
        }
        if self.targets.0 > self.targets.1 {
            problems.push(format!("targets range {:?} is empty", self.targets));
        }
        if !(self.sigma.0 > 0.0 && self.sigma.0 <= self.sigma.1) {
            problems.push(format!("sigma range {:?} must be positive and ordered", self.sigma));
        }
        if !(self.contrast.0 > 0.0 && self.contrast.0 <= self.contrast.1) {
            problems.push(format!("contrast range {:?} must be positive and ordered", self.contrast));
        }
        if self.noise < 0.0 || self.clutter < 0.0 {
            problems.push("noise and clutter must be nonnegative".to_string());
        }
        // Each target needs its whole ±3σ support inside the image.
        let span = 2.0 * (3.0 * self.sigma.1).ceil() + 1.0;
        if span > self.height.min(self.width) as f64 {
            problems.push(format!(
                "targets with sigma {} need {span} px but the image is {}×{}",
                self.sigma.1, self.height, self.width
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

fn draw_range<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..=range.1)
    } else {
        range.0
    }
}

fn place_blobs<R: Rng + ?Sized>(config: &SynthConfig, k: usize, rng: &mut R) -> Result<Vec<Blob>> {
    let mut blobs: Vec<Blob> = Vec::with_capacity(k);
    let gap = config.min_gap as f64 + 1.0;
    let mut attempts = 0;
    while blobs.len() < k {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::Config(format!(
                "could not place {k} separated targets in a {}×{} image",
                config.height, config.width
            )));
        }
        let sx = draw_range(config.sigma, rng);
        let sy = draw_range(config.sigma, rng);
        let mx = (3.0 * sx).ceil() as usize;
        let my = (3.0 * sy).ceil() as usize;
        // Integer centres guarantee the centre pixel is in the mask.
        let cx = rng.random_range(mx..config.width - mx) as f64;
        let cy = rng.random_range(my..config.height - my) as f64;
        let blob = Blob { cx, cy, sx, sy, peak: draw_range(config.contrast, rng) };
        let (rx, ry) = blob.reach();
        let clear = blobs.iter().all(|o| {
            let (ox, oy) = o.reach();
            (o.cx - cx).abs() > ox + rx + gap || (o.cy - cy).abs() > oy + ry + gap
        });
        if clear {
            blobs.push(blob);
        }
    }
    Ok(blobs)
}

fn render<R: Rng + ?Sized>(config: &SynthConfig, blobs: &[Blob], rng: &mut R) -> Result<(ImageTensor, Mask)> {
    let (h, w) = (config.height, config.width);
    // Low-frequency clutter: a few random plane waves with periods of at least half the image.
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let fx = rng.random_range(-1.0..1.0) / w as f64 * std::f64::consts::TAU;
            let fy = rng.random_range(-1.0..1.0) / h as f64 * std::f64::consts::TAU;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.0..1.0);
            (fx, fy, phase, amp)
        })
        .collect();
    let amp_total: f64 = waves.iter().map(|w| w.3).sum::<f64>().max(1e-9);
    let noise = Normal::new(0.0, config.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(h * w);
    let mut mask = Mask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let clutter: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * (fx * xf + fy * yf + ph).sin()).sum();
            let mut v = config.background + config.clutter * clutter / amp_total;
            for b in blobs {
                let level = b.level(xf, yf);
                v += b.peak * (-0.5 * level).exp();
                if level <= HALF_PEAK {
                    mask.set(x, y, true);
                }
            }
            if config.noise > 0.0 {
                v += noise.sample(rng);
            }
            // Quantized to 8 bits so the PNG on disk reproduces the sample exactly.
            data.push((v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0);
        }
    }
    Ok((ImageTensor::new(1, h, w, data)?, mask))
}

/// Generates `config.count` single-band images with elliptical Gaussian targets.
///
/// Ids are `synth_00000`, `synth_00001`, …; the output depends only on the
/// config and the generator state.
pub fn synth_generate<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let k = rng.random_range(config.targets.0..=config.targets.1);
        let blobs = place_blobs(config, k, rng)?;
        let (image, mask) = render(config, &blobs, rng)?;
        let sample = Sample::from_mask(format!("synth_{i:05}"), image, mask)?;
        debug_assert_eq!(sample.boxes.len(), k);
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_target_box_side() {
        let cfg = SynthConfig { count: 20, targets: (1, 1), sigma: (1.5, 1.5), ..Default::default() };
        let samples = synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for s in samples {
            assert_eq!(s.boxes.len(), 1);
            let (bw, bh) = s.boxes[0].size();
            assert!((3.0..=7.0).contains(&bw) && (3.0..=7.0).contains(&bh), "{bw}×{bh}");
        }
    }

    #[test]
    fn noiseless_mask_is_half_peak_ellipse() {
        let cfg = SynthConfig { count: 4, noise: 0.0, targets: (1, 3), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let k = rng.random_range(cfg.targets.0..=cfg.targets.1);
            let blobs = place_blobs(&cfg, k, &mut rng).unwrap();
            let (_, mask) = render(&cfg, &blobs, &mut rng).unwrap();
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let inside = blobs.iter().any(|b| {
                        let dx = x as f64 - b.cx;
                        let dy = y as f64 - b.cy;
                        dx * dx / (b.sx * b.sx) + dy * dy / (b.sy * b.sy) <= 2.0 * 2f64.ln()
                    });
                    assert_eq!(mask.get(x, y), inside);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a, c);
        for s in &a {
            assert!((1..=3).contains(&s.boxes.len()));
        }
    }

    #[test]
    fn oversized_targets_rejected() {
        let cfg = SynthConfig { height: 16, width: 16, sigma: (4.0, 4.0), ..Default::default() };
        assert!(matches!(synth_generate(&cfg, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Config(_))));
    }
}
