//! Image/mask datasets, augmentation and the synthetic generator.
//!
//! On disk a dataset is two directories of grayscale PGM files with
//! matching names:
//!
//! ```text
//! <root>/images/<source>_<k>.pgm
//! <root>/masks/<source>_<k>.pgm
//! ```
//!
//! The source id (text before the first underscore) groups slices of one
//! subject; train/test splits never separate slices of the same source.

pub mod augment;
pub mod pgm;
pub mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AffineParams, AugmentSpec};
pub use synth::{make_synthetic, Difficulty, SynthSpec};

/// One image and its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    /// `(1, C, H, W)`, values in [0, 1].
    pub image: Tensor<f32>,
    /// `(1, 1, H, W)`, values exactly 0 or 1.
    pub mask: Tensor<f32>,
    pub source: String,
    /// File stem, e.g. `p003_2`.
    pub name: String,
}

impl SamplePair {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>, source: impl Into<String>, name: impl Into<String>) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        if is.batch != 1 || ms.batch != 1 || ms.channels != 1 {
            return Err(Error::dim(format!("sample needs (1,C,H,W) image and (1,1,H,W) mask, got {is} and {ms}")));
        }
        if (is.height, is.width) != (ms.height, ms.width) {
            return Err(Error::dim(format!("image {is} and mask {ms} differ in size")));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::contract("mask values must be 0 or 1"));
        }
        Ok(SamplePair {
            image,
            mask,
            source: source.into(),
            name: name.into(),
        })
    }

    /// Fraction of mask pixels that are foreground.
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.sum_f64() / self.mask.numel() as f64
    }
}

/// Source id of a file stem: everything before the first underscore.
pub fn source_id(stem: &str) -> &str {
    stem.split('_').next().unwrap_or(stem)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SamplePair>,
}

impl Dataset {
    pub fn new(samples: Vec<SamplePair>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct source ids in first-appearance order.
    pub fn sources(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.source.clone()))
            .map(|s| s.source.clone())
            .collect()
    }

    /// Samples whose source is listed, in dataset order.
    pub fn subset(&self, sources: &[String]) -> Dataset {
        Dataset::new(
            self.samples
                .iter()
                .filter(|s| sources.contains(&s.source))
                .cloned()
                .collect(),
        )
    }

    pub fn apply_split(&self, split: &Split) -> (Dataset, Dataset) {
        (self.subset(&split.train), self.subset(&split.test))
    }

    /// Writes the dataset in the on-disk layout (8-bit PGM).
    pub fn save(&self, root: &Path) -> Result<()> {
        let (images, masks) = (root.join("images"), root.join("masks"));
        fs::create_dir_all(&images)?;
        fs::create_dir_all(&masks)?;
        for s in &self.samples {
            let file = format!("{}.pgm", s.name);
            pgm::write(&images.join(&file), &pgm::GrayImage::from_unit_plane(&s.image, 0))?;
            pgm::write(&masks.join(&file), &pgm::GrayImage::from_unit_plane(&s.mask, 0))?;
        }
        Ok(())
    }
}

/// Loads `<root>/images/*.pgm` with their `<root>/masks` partners, sorted by name.
///
/// A missing `images/` directory yields an empty dataset.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let images = root.join("images");
    if !images.is_dir() {
        return Ok(Dataset::default());
    }
    let mut stems = Vec::new();
    for entry in fs::read_dir(&images)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    let mut samples = Vec::with_capacity(stems.len());
    for stem in stems {
        let ipath = images.join(format!("{stem}.pgm"));
        let mpath = root.join("masks").join(format!("{stem}.pgm"));
        if !mpath.is_file() {
            return Err(Error::Load(format!(
                "no mask for {} (expected {})",
                ipath.display(),
                mpath.display()
            )));
        }
        let img = pgm::read(&ipath)?;
        let msk = pgm::read(&mpath)?;
        if (img.width, img.height) != (msk.width, msk.height) {
            return Err(Error::Load(format!("{stem}: image and mask sizes differ")));
        }
        let image = img.to_unit_tensor()?;
        let mask = Tensor::from_vec(
            [1, 1, msk.height, msk.width],
            msk.pixels.iter().map(|&p| if p > 0 { 1.0 } else { 0.0 }).collect(),
        )?;
        samples.push(SamplePair::new(image, mask, source_id(&stem), stem.clone())?);
    }
    Ok(Dataset::new(samples))
}

/// Source-level train/test partition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Random partition holding out `test_sources` whole sources.
    pub fn random<R: Rng + ?Sized>(sources: &[String], test_sources: usize, rng: &mut R) -> Result<Self> {
        if test_sources > sources.len() {
            return Err(Error::Spec(format!(
                "cannot hold out {test_sources} of {} sources",
                sources.len()
            )));
        }
        let mut shuffled = sources.to_vec();
        shuffled.shuffle(rng);
        let mut test = shuffled.split_off(sources.len() - test_sources);
        let mut train = shuffled;
        train.sort();
        test.sort();
        Ok(Split { train, test })
    }

    /// Plain-text form: a `[train]` section and a `[test]` section, one
    /// source id per line.
    pub fn render(&self) -> String {
        let mut s = String::from("[train]\n");
        for id in &self.train {
            s.push_str(id);
            s.push('\n');
        }
        s.push_str("[test]\n");
        for id in &self.test {
            s.push_str(id);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut split = Split::default();
        let mut section: Option<&mut Vec<String>> = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[train]" => section = Some(&mut split.train),
                "[test]" => section = Some(&mut split.test),
                id => match section.as_deref_mut() {
                    Some(v) => v.push(id.to_string()),
                    None => {
                        return Err(Error::Format(format!(
                            "split file line {}: source id before any section",
                            no + 1
                        )))
                    }
                },
            }
        }
        if let Some(id) = split.train.iter().find(|id| split.test.contains(id)) {
            return Err(Error::Format(format!("source {id} is in both train and test")));
        }
        Ok(split)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_prefix() {
        assert_eq!(source_id("p007_12"), "p007");
        assert_eq!(source_id("plain"), "plain");
    }

    #[test]
    fn empty_root_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn split_text_round_trip() {
        let s = Split {
            train: vec!["a".into(), "b".into()],
            test: vec!["c".into()],
        };
        assert_eq!(Split::parse(&s.render()).unwrap(), s);
        assert!(Split::parse("[train]\nx\n[test]\nx\n").is_err());
        assert!(Split::parse("x\n").is_err());
    }
}
