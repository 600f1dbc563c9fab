use super::{BoxAnnotation, Mask};

/// Labels 8-connected foreground components.
///
/// Returns one label per pixel (0 = background, components numbered from 1 in
/// raster order of their first pixel) and the component count.
pub fn label_components(mask: &Mask) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (px, py) = (p % w, p / w);
            for ny in py.saturating_sub(1)..=(py + 1).min(h - 1) {
                for nx in px.saturating_sub(1)..=(px + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if mask.data()[q] != 0 && labels[q] == 0 {
                        labels[q] = next;
                        stack.push(q);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// One tight box per 8-connected component, in raster order of first pixel.
pub fn mask_to_boxes(mask: &Mask) -> Vec<BoxAnnotation> {
    let (labels, count) = label_components(mask);
    let w = mask.width();
    let mut acc: Vec<(usize, usize, usize, usize, f64, f64, usize)> =
        vec![(usize::MAX, usize::MAX, 0, 0, 0.0, 0.0, 0); count];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let a = &mut acc[l as usize - 1];
        a.0 = a.0.min(x);
        a.1 = a.1.min(y);
        a.2 = a.2.max(x);
        a.3 = a.3.max(y);
        a.4 += x as f64;
        a.5 += y as f64;
        a.6 += 1;
    }
    acc.into_iter()
        .map(|(x1, y1, x2, y2, sx, sy, n)| BoxAnnotation {
            x1,
            y1,
            x2,
            y2,
            centroid: (sx / n as f64, sy / n as f64),
            area: n,
        })
        .collect()
}
