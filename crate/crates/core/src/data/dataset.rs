use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use serde::Serialize;

use super::{read_split, split_dataset, write_split, CocoDataset, ImageTensor, Mask, Sample, Split, SplitSpec};
use crate::error::{Error, Result};

/// A dataset directory loaded into memory.
///
/// Layout: `images/<id>.png`, `masks/<id>.png` (0 background, 255 target),
/// `annotations.json` (COCO), `splits/{train,val}.txt`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub coco: CocoDataset,
    pub samples: Vec<Sample>,
    pub split: Split,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples with the given ids, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Sample>> {
        let index: BTreeMap<&str, &Sample> = self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dataset(format!("split lists unknown id {id:?}")))
            })
            .collect()
    }

    pub fn train(&self) -> Result<Vec<&Sample>> {
        self.select(&self.split.train)
    }

    pub fn val(&self) -> Result<Vec<&Sample>> {
        self.select(&self.split.val)
    }

    /// COCO image id of a sample.
    pub fn image_id(&self, id: &str) -> Option<u64> {
        self.coco.image_by_stem(id).map(|im| im.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrepareReport {
    pub images: usize,
    pub annotations: usize,
    pub train: usize,
    pub val: usize,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn save_gray(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels).expect("buffer matches dims");
    img.save(path).map_err(|source| Error::Image { path: path.into(), source })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image(path: &Path, image: &ImageTensor) -> Result<()> {
    // Multi-band tensors only arise from replicating a gray band, so band 0 is the image.
    save_gray(path, image.width(), image.height(), image.plane(0).iter().map(|&v| to_u8(v)).collect())
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    save_gray(path, mask.width(), mask.height(), mask.data().iter().map(|&v| v * 255).collect())
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.into(), source })
}

/// Loads any PNG as a single intensity band in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.into_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()
        }
        _ => img.into_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    };
    ImageTensor::new(1, h, w, data)
}

/// Loads a mask stored as 0/255 (or 0/1); other values are rejected.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    if let Some(bad) = raw.iter().find(|&&v| v != 0 && v != 1 && v != 255) {
        return Err(Error::Dataset(format!("{}: mask is not binary (value {bad})", path.display())));
    }
    Mask::from_values(h, w, raw.into_iter().map(|v| (v != 0) as u8).collect())
}

/// Thresholds a source mask at half intensity (0/1 masks pass through).
fn import_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let binary = raw.iter().all(|&v| v <= 1);
    Mask::from_values(h, w, raw.into_iter().map(|v| if binary { v } else { (v >= 128) as u8 }).collect())
}

/// Writes samples in the standard layout and splits them.
pub fn write_dataset(root: &Path, samples: &[Sample], spec: &SplitSpec) -> Result<Dataset> {
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let ids: Vec<String> = sorted.iter().map(|s| s.id.clone()).collect();
    let split = split_dataset(&ids, spec)?;
    create_dir(&root.join("images"))?;
    create_dir(&root.join("masks"))?;
    for s in &sorted {
        save_image(&root.join("images").join(format!("{}.png", s.id)), &s.image)?;
        save_mask(&root.join("masks").join(format!("{}.png", s.id)), &s.mask)?;
    }
    let coco = CocoDataset::from_samples(sorted.iter().copied());
    coco.write(&root.join("annotations.json"))?;
    write_split(&root.join("splits"), &split)?;
    Ok(Dataset {
        root: root.to_path_buf(),
        coco,
        samples: sorted.into_iter().cloned().collect(),
        split,
    })
}

/// Reads a dataset written by [`write_dataset`] or [`prepare_data`].
///
/// Boxes are re-derived from the masks and cross-checked against the COCO
/// annotations.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let coco = CocoDataset::read(&root.join("annotations.json"))?;
    let split = read_split(&root.join("splits"))?;
    let mut samples = Vec::with_capacity(coco.images.len());
    for im in &coco.images {
        let stem = Path::new(&im.file_name)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("bad file name {:?}", im.file_name)))?
            .to_string();
        let image = load_image(&root.join("images").join(&im.file_name))?;
        let mask = load_mask(&root.join("masks").join(&im.file_name))?;
        let sample = Sample::from_mask(stem, image, mask)?;
        let listed = coco.annotations_for(im.id).count();
        if listed != sample.boxes.len() {
            return Err(Error::Dataset(format!(
                "{}: annotations list {listed} boxes but the mask has {} components",
                im.file_name,
                sample.boxes.len()
            )));
        }
        samples.push(sample);
    }
    let known: BTreeSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let unknown: Vec<&String> = split.train.iter().chain(&split.val).filter(|id| !known.contains(id.as_str())).collect();
    if !unknown.is_empty() {
        return Err(Error::Dataset(format!("split manifest lists ids without images: {unknown:?}")));
    }
    Ok(Dataset { root: root.to_path_buf(), coco, samples, split })
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Converts a raw `images/` + `masks/` directory into the standard layout.
///
/// A mask for image `<id>.png` is `masks/<id>.png` or `masks/<id>_pixels0.png`.
/// Every image without a mask, every mask without an image, and every size
/// mismatch is reported in one error.
pub fn prepare_data(source: &Path, out: &Path, spec: &SplitSpec) -> Result<PrepareReport> {
    let images = png_stems(&source.join("images"))?;
    let masks = png_stems(&source.join("masks"))?;
    let mut problems = Vec::new();
    let mut used_masks = BTreeSet::new();
    let mut pairs = Vec::new();
    for (id, image_path) in &images {
        let candidates = [id.clone(), format!("{id}_pixels0")];
        match candidates.iter().find(|c| masks.contains_key(*c)) {
            Some(m) => {
                used_masks.insert(m.clone());
                pairs.push((id.clone(), image_path.clone(), masks[m].clone()));
            }
            None => problems.push(format!("image {id} has no mask")),
        }
    }
    for m in masks.keys().filter(|m| !used_masks.contains(*m)) {
        problems.push(format!("mask {m} has no image"));
    }
    let mut samples = Vec::with_capacity(pairs.len());
    for (id, image_path, mask_path) in pairs {
        let image = load_image(&image_path)?;
        let mask = import_mask(&mask_path)?;
        if (image.height(), image.width()) != (mask.height(), mask.width()) {
            problems.push(format!(
                "{id}: image is {}×{} but mask is {}×{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            ));
            continue;
        }
        samples.push(Sample::from_mask(id, image, mask)?);
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(format!("inconsistent image/mask pairs: {}", problems.join("; "))));
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!("no images found under {}", source.display())));
    }
    let ds = write_dataset(out, &samples, spec)?;
    Ok(PrepareReport {
        images: ds.samples.len(),
        annotations: ds.coco.annotations.len(),
        train: ds.split.train.len(),
        val: ds.split.val.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate(&SynthConfig { count: 5, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let written = write_dataset(dir.path(), &samples, &SplitSpec::default()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.samples, written.samples);
        assert_eq!(loaded.samples, samples);
        assert_eq!(loaded.split, written.split);
        assert_eq!(loaded.coco, written.coco);
        assert_eq!(loaded.train().unwrap().len(), 3);
    }

    #[test]
    fn prepare_reports_missing_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        fs::create_dir_all(src.join("images")).unwrap();
        fs::create_dir_all(src.join("masks")).unwrap();
        let img = ImageTensor::new(1, 8, 8, vec![0.5; 64]).unwrap();
        let mut mask = Mask::zeros(8, 8);
        mask.set(2, 2, true);
        save_image(&src.join("images/a.png"), &img).unwrap();
        save_image(&src.join("images/b.png"), &img).unwrap();
        save_mask(&src.join("masks/a_pixels0.png"), &mask).unwrap();
        let err = prepare_data(&src, &dir.path().join("out"), &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains("image b has no mask"), "{err}");

        save_mask(&src.join("masks/b.png"), &mask).unwrap();
        let out = dir.path().join("out");
        let report = prepare_data(&src, &out, &SplitSpec::default()).unwrap();
        assert_eq!((report.images, report.annotations, report.train, report.val), (2, 2, 1, 1));
        let first = fs::read(out.join("annotations.json")).unwrap();
        prepare_data(&src, &out, &SplitSpec::default()).unwrap();
        assert_eq!(fs::read(out.join("annotations.json")).unwrap(), first);
    }
}
