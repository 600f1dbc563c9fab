use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.7, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Sorts the ids, shuffles them with the seed, and puts the first
/// `floor(train_fraction · n)` into the training split.
pub fn split_dataset(ids: &[String], spec: &SplitSpec) -> Result<Split> {
    if ids.is_empty() {
        return Err(Error::Dataset("cannot split an empty id list".into()));
    }
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(Error::Config(format!(
            "train_fraction must be in [0, 1], got {}",
            spec.train_fraction
        )));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Dataset("sample ids are not unique".into()));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    // small epsilon so 0.7·10 lands on 7 despite binary rounding
    let n_train = ((spec.train_fraction * order.len() as f64) + 1e-9).floor() as usize;
    let val = order.split_off(n_train);
    Ok(Split { train: order, val })
}

pub fn write_split(dir: &Path, split: &Split) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, ids) in [("train.txt", &split.train), ("val.txt", &split.val)] {
        let path = dir.join(name);
        let mut text = ids.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_split(dir: &Path) -> Result<Split> {
    let read = |name: &str| -> Result<Vec<String>> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    };
    Ok(Split { train: read("train.txt")?, val: read("val.txt")? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img_{i:04}")).collect()
    }

    #[test]
    fn seventy_thirty_floor() {
        let s = split_dataset(&ids(10), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (7, 3));
        let s = split_dataset(&ids(427), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (298, 129));
    }

    #[test]
    fn deterministic_disjoint_and_complete() {
        let spec = SplitSpec { train_fraction: 0.7, seed: 42 };
        let a = split_dataset(&ids(50), &spec).unwrap();
        let b = split_dataset(&ids(50), &spec).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<String> = a.train.iter().chain(&a.val).cloned().collect();
        all.sort();
        assert_eq!(all, ids(50));
        let c = split_dataset(&ids(50), &SplitSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rev = ids(20);
        rev.reverse();
        assert_eq!(
            split_dataset(&rev, &SplitSpec::default()).unwrap(),
            split_dataset(&ids(20), &SplitSpec::default()).unwrap()
        );
    }

    #[test]
    fn errors() {
        assert!(split_dataset(&[], &SplitSpec::default()).is_err());
        assert!(split_dataset(&["a".into(), "a".into()], &SplitSpec::default()).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = split_dataset(&ids(9), &SplitSpec::default()).unwrap();
        write_split(dir.path(), &s).unwrap();
        assert_eq!(read_split(dir.path()).unwrap(), s);
    }
}
