//! Continuous box geometry.
//!
//! All boxes live in the pixel-centre frame: pixel `(i, j)` is centred on
//! `(i, j)` and covers `[i-0.5, i+0.5] × [j-0.5, j+0.5]`. A mask component
//! spanning columns `x1..=x2` therefore has extent `[x1-0.5, x2+0.5]`,
//! width `x2-x1+1` and centre `(x1+x2)/2`. COCO files use the pixel-corner
//! frame, which is this one shifted by `+0.5`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Intersection with the axis-aligned rectangle `[lo_x, hi_x] × [lo_y, hi_y]`.
    pub fn clip(&self, lo_x: f64, lo_y: f64, hi_x: f64, hi_y: f64) -> Self {
        Self::new(
            self.x1.clamp(lo_x, hi_x),
            self.y1.clamp(lo_y, hi_y),
            self.x2.clamp(lo_x, hi_x),
            self.y2.clamp(lo_y, hi_y),
        )
    }

    /// `[x, y, w, h]` in the COCO pixel-corner frame.
    pub fn to_coco(&self) -> [f64; 4] {
        [self.x1 + 0.5, self.y1 + 0.5, self.width(), self.height()]
    }

    pub fn from_coco(b: [f64; 4]) -> Self {
        Self::new(b[0] - 0.5, b[1] - 0.5, b[0] - 0.5 + b[2], b[1] - 0.5 + b[3])
    }
}

/// Intersection over union; zero for disjoint or degenerate boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
