use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

pub const TARGET_CATEGORY: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x_min, y_min, width, height]` in the pixel-corner frame.
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

/// COCO 1.0 detection annotations (images, annotations, categories).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One entry of a COCO results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl CocoDataset {
    /// Image ids are assigned 1, 2, … in the order given.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut coco = CocoDataset {
            categories: vec![CocoCategory { id: TARGET_CATEGORY, name: "target".into() }],
            ..Default::default()
        };
        for (i, s) in samples.into_iter().enumerate() {
            let image_id = i as u64 + 1;
            coco.images.push(CocoImage {
                id: image_id,
                file_name: format!("{}.png", s.id),
                height: s.height(),
                width: s.width(),
            });
            for b in &s.boxes {
                coco.annotations.push(CocoAnnotation {
                    id: coco.annotations.len() as u64 + 1,
                    image_id,
                    category_id: TARGET_CATEGORY,
                    bbox: b.coco_bbox(),
                    area: b.area as f64,
                    iscrowd: 0,
                });
            }
        }
        coco
    }

    /// Image whose file stem is `id`.
    pub fn image_by_stem(&self, id: &str) -> Option<&CocoImage> {
        self.images.iter().find(|im| Path::new(&im.file_name).file_stem().and_then(|s| s.to_str()) == Some(id))
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &CocoAnnotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

pub fn write_results(results: &[CocoResult], path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(results)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<CocoResult>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageTensor, Mask};

    #[test]
    fn bbox_is_corner_frame() {
        let mut mask = Mask::zeros(10, 12);
        for y in 4..=5 {
            for x in 7..=9 {
                mask.set(x, y, true);
            }
        }
        let s = Sample::from_mask("a", ImageTensor::new(1, 10, 12, vec![0.0; 120]).unwrap(), mask).unwrap();
        let coco = CocoDataset::from_samples([&s]);
        assert_eq!(coco.annotations[0].bbox, [7.0, 4.0, 3.0, 2.0]);
        assert_eq!(coco.annotations[0].area, 6.0);
        assert_eq!(coco.image_by_stem("a").unwrap().id, 1);
        let json = serde_json::to_string(&coco).unwrap();
        let back: CocoDataset = serde_json::from_str(&json).unwrap();
        assert_eq!(back, coco);
    }
}
