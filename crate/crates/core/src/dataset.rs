//! Stage-directory image collections (`root/{0..4}/*.png|jpg|jpeg`), pair
//! subsets, shuffling, and batch assembly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{resize_bilinear, RasterImage};
use crate::tensor::Tensor;

pub const NUM_STAGES: usize = 5;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<Entry>,
    pub class_counts: Vec<usize>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Sorted image files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for item in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_path(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Indexes `root/0` .. `root/4`; entries are ordered by path.
pub fn scan_directory(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    let mut class_counts = vec![0; NUM_STAGES];
    for (label, count) in class_counts.iter_mut().enumerate() {
        let dir = root.join(label.to_string());
        if !dir.is_dir() {
            return Err(Error::MissingClassDir(label.to_string()));
        }
        for path in list_images(&dir)? {
            entries.push(Entry { path, label });
            *count += 1;
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        class_counts,
    })
}

/// Keeps classes `a` and `b`, relabelled 0 and 1.
pub fn select_pair(index: &DatasetIndex, a: usize, b: usize) -> Result<DatasetIndex> {
    let k = index.num_classes();
    if a == b || a >= k || b >= k {
        return Err(Error::InvalidPair { a, b });
    }
    let entries: Vec<Entry> = index
        .entries
        .iter()
        .filter_map(|e| match e.label {
            l if l == a => Some(Entry { path: e.path.clone(), label: 0 }),
            l if l == b => Some(Entry { path: e.path.clone(), label: 1 }),
            _ => None,
        })
        .collect();
    Ok(DatasetIndex {
        root: index.root.clone(),
        entries,
        class_counts: vec![index.class_counts[a], index.class_counts[b]],
    })
}

/// Pixel scaling applied when images become tensors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescale {
    /// Raw 0..=255 values.
    #[default]
    None,
    /// Divided by 255.
    Unit,
}

impl Rescale {
    fn factor(self) -> f32 {
        match self {
            Rescale::None => 1.0,
            Rescale::Unit => 1.0 / 255.0,
        }
    }
}

/// `[1, h, w, 3]` tensor of an image resized to `(h, w)`.
pub fn image_tensor(img: &RasterImage, target_hw: (usize, usize), rescale: Rescale) -> Tensor {
    let (h, w) = target_hw;
    let resized = resize_bilinear(img, w, h);
    let f = rescale.factor();
    let data = resized.pixels().iter().map(|&v| v as f32 * f).collect();
    Tensor::new(&[1, h, w, 3], data).expect("resized buffer matches extents")
}

pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut data = vec![0.0f32; labels.len() * k];
    for (row, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, k });
        }
        data[row * k + l] = 1.0;
    }
    Tensor::new(&[labels.len(), k], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub targets: Tensor,
}

/// Decodes and resizes `entries` in order; decoding runs in parallel.
pub fn load_batch(
    entries: &[Entry],
    target_hw: (usize, usize),
    k: usize,
    rescale: Rescale,
) -> Result<Batch> {
    if entries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let images: Vec<Tensor> = entries
        .par_iter()
        .map(|e| RasterImage::open(&e.path).map(|img| image_tensor(&img, target_hw, rescale)))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = entries.iter().map(|e| e.label).collect();
    Ok(Batch {
        images: Tensor::stack_batch(&images)?,
        targets: one_hot(&labels, k)?,
    })
}

/// Permutation of `0..n` for one training epoch, fixed by `(seed, epoch)`.
pub fn shuffled_epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Random access to labelled examples for training and evaluation.
pub trait BatchSource: Sync {
    fn len(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Images for the given example indices, in order, with their labels.
    fn fetch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Examples held as one `[n, h, w, c]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>, k: usize) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::LengthMismatch {
                left: images.batch(),
                right: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: l, k });
        }
        Ok(LabeledSet { images, labels, k })
    }
}

impl BatchSource for LabeledSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn num_classes(&self) -> usize {
        self.k
    }

    fn fetch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.gather_batch(indices)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Examples decoded from disk on demand.
#[derive(Clone, Debug)]
pub struct FolderSource {
    pub index: DatasetIndex,
    pub target_hw: (usize, usize),
    pub rescale: Rescale,
}

impl BatchSource for FolderSource {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn num_classes(&self) -> usize {
        self.index.num_classes()
    }

    fn fetch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let entries: Vec<Entry> = indices
            .iter()
            .map(|&i| self.index.entries[i].clone())
            .collect();
        let batch = load_batch(&entries, self.target_hw, self.num_classes(), self.rescale)?;
        Ok((batch.images, entries.iter().map(|e| e.label).collect()))
    }
}
