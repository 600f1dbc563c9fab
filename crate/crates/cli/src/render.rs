//! Overlay images and precision/recall plots.

use image::{Rgb, RgbImage};
use mtnet_core::data::{ImageTensor, Mask};
use mtnet_core::evaluation::PrPoint;
use mtnet_core::postprocess::DetectionResult;

pub const TARGET_BLUE: Rgb<u8> = Rgb([0, 0, 255]);

/// Box colour by confidence: green ≥ 0.75, yellow ≥ 0.5, red below.
pub fn confidence_color(score: f64) -> Rgb<u8> {
    if score >= 0.75 {
        Rgb([0, 255, 0])
    } else if score >= 0.5 {
        Rgb([255, 255, 0])
    } else {
        Rgb([255, 0, 0])
    }
}

fn gray(image: &ImageTensor) -> RgbImage {
    let plane = image.plane(0);
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let v = (plane[y as usize * image.width() + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

/// Input in grayscale, predicted target pixels in blue, box outlines coloured
/// by confidence. Boxes are drawn on the pixels they cover.
pub fn overlay(image: &ImageTensor, mask: Option<&Mask>, detections: Option<&DetectionResult>) -> RgbImage {
    let mut out = gray(image);
    let (w, h) = (image.width() as i64, image.height() as i64);
    if let Some(m) = mask {
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(x, y) {
                    out.put_pixel(x as u32, y as u32, TARGET_BLUE);
                }
            }
        }
    }
    if let Some(d) = detections {
        // Lowest score first so confident boxes end up on top.
        for det in d.boxes.iter().rev() {
            let c = confidence_color(det.score);
            let x1 = (det.bbox.x1.ceil() as i64).clamp(0, w - 1);
            let y1 = (det.bbox.y1.ceil() as i64).clamp(0, h - 1);
            let x2 = (det.bbox.x2.floor() as i64).clamp(0, w - 1);
            let y2 = (det.bbox.y2.floor() as i64).clamp(0, h - 1);
            for x in x1..=x2 {
                out.put_pixel(x as u32, y1 as u32, c);
                out.put_pixel(x as u32, y2 as u32, c);
            }
            for y in y1..=y2 {
                out.put_pixel(x1 as u32, y as u32, c);
                out.put_pixel(x2 as u32, y as u32, c);
            }
        }
    }
    out
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Precision (vertical) against recall (horizontal), both on `[0, 1]`.
pub fn pr_plot(points: &[PrPoint], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let margin = (size / 10) as i64;
    let span = size as i64 - 2 * margin;
    let to_px = |r: f64, p: f64| (margin + (r * span as f64).round() as i64, margin + span - (p * span as f64).round() as i64);
    let black = Rgb([0, 0, 0]);
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 0.0), black);
    line(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), black);
    let blue = Rgb([0, 0, 200]);
    let mut prev = points.first().map(|p| to_px(0.0, p.precision));
    for p in points {
        let cur = to_px(p.recall, p.precision);
        if let Some(a) = prev {
            line(&mut img, a, cur, blue);
        }
        prev = Some(cur);
    }
    img
}
