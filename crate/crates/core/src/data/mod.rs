//! Desk-scale datasets: synthetic generators, an on-disk format, CSV
//! interchange and light image augmentation.

mod augment;
mod format;
mod synthetic;

pub use augment::{augment, AugmentationSpec, ImageShape};
pub use format::{
    export_csv, import_csv, load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC,
};
pub use synthetic::{make_blobs, make_two_moons, BlobsConfig, MOONS_OFFSET, MOONS_SCALE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_u8(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Labelled samples with every feature in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    split: Split,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rank() != 2 {
            return Err(contract_err!("features must be a matrix, got {:?}", features.shape()));
        }
        if labels.is_empty() || labels.len() != features.rows() {
            return Err(contract_err!(
                "need M >= 1 samples with one label each (features {}, labels {})",
                features.rows(),
                labels.len()
            ));
        }
        if num_classes == 0 {
            return Err(contract_err!("num_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(contract_err!("label {bad} outside [0, {num_classes})"));
        }
        if let Some(&bad) = features.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("feature value {bad} outside [0, 1]")));
        }
        Ok(Self {
            name: name.into(),
            split,
            features,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Features and labels for the given rows.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(idx)?;
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let (x, y) = self.batch(idx)?;
        Self::new(self.name.clone(), self.split, x, y, self.num_classes)
    }

    /// Same samples with different (valid) features, e.g. adversarial versions.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.split,
            features,
            self.labels.clone(),
            self.num_classes,
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Stratified split: each class contributes `round(count * test_fraction)`
    /// samples to the test side.
    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("split leaves one side empty".into()));
        }
        Ok((
            self.subset(&train)?.with_split(Split::Train),
            self.subset(&test)?.with_split(Split::Test),
        ))
    }
}

/// Row index batches for one epoch, shuffled with `seed`. A trailing batch
/// smaller than `min_batch` is dropped.
pub fn shuffled_batches(len: usize, batch_size: usize, min_batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(batch_size.max(1))
        .filter(|c| c.len() >= min_batch)
        .map(<[usize]>::to_vec)
        .collect()
}
