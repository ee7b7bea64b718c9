//! Dataset ingestion and client partitioning.

pub mod idx;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tensor::Tensor;

pub use idx::{
    parse_idx_images, parse_idx_images_with, parse_idx_labels, write_idx_images,
    write_idx_labels, IdxHeader, LabelSet, RawImageSet, NUM_CLASSES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("not an IDX file of the expected kind (magic 0x{found:08x})")]
    WrongMagic { found: u32 },
    #[error("IDX payload length mismatch: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("expected 28x28 images, found {rows}x{cols}")]
    DimensionMismatch { rows: usize, cols: usize },
    #[error("label {value} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot split {samples} samples across {clients} clients")]
    TooManyClients { clients: usize, samples: usize },
    #[error("client count must be at least 1")]
    NoClients,
    #[error("dataset is empty")]
    Empty,
    #[error("validation fraction {fraction} leaves an empty side of the split")]
    DegenerateFraction { fraction: f64 },
    #[error("gzip: {0}")]
    Gzip(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion-mnist",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion-mnist" => Ok(DatasetName::FashionMnist),
            other => Err(format!("unknown dataset `{other}` (expected mnist | fashion-mnist)")),
        }
    }
}

/// Normalized images, shape `(N, rows, cols, 1)`, with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels per image.
    pub fn image_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Copies the listed samples, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Dataset {
            name: self.name,
            images: Tensor::from_vec(&shape, pixels).expect("shape matches gathered pixels"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Per-class sample counts over `indices`.
    pub fn class_counts(&self, indices: impl IntoIterator<Item = usize>) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for i in indices {
            counts[self.labels[i] as usize] += 1;
        }
        counts
    }

    fn by_class(&self) -> Vec<Vec<usize>> {
        let mut classes = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            classes[l as usize].push(i);
        }
        classes
    }
}

/// Scales pixels to `[0, 1]` by dividing by 255.
pub fn normalize(raw: &RawImageSet, labels: &LabelSet, name: DatasetName) -> Result<Dataset, DataError> {
    if raw.count != labels.count {
        return Err(DataError::CountMismatch {
            images: raw.count,
            labels: labels.count,
        });
    }
    let pixels = raw.pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    Ok(Dataset {
        name,
        images: Tensor::from_vec(&[raw.count, raw.rows, raw.cols, 1], pixels)
            .expect("pixel count validated by parser"),
        labels: labels.labels.clone(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads and normalizes a pair of (optionally gzipped) IDX files.
pub fn load_idx_pair(images: &Path, labels: &Path, name: DatasetName) -> Result<Dataset, DataError> {
    let raw = parse_idx_images(&read_file(images)?)?;
    let labels = parse_idx_labels(&read_file(labels)?)?;
    normalize(&raw, &labels, name)
}

/// One client's private partition of the training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    /// Sample count of this client.
    pub fn n_c(&self) -> usize {
        self.indices.len()
    }
}

/// Stratified IID partition: each class is shuffled and dealt round-robin,
/// with the dealing position carried across classes so shard sizes also
/// differ by at most one.
pub fn partition_iid(dataset: &Dataset, num_clients: usize, seed: u64) -> Result<Vec<ClientShard>, DataError> {
    if num_clients == 0 {
        return Err(DataError::NoClients);
    }
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if num_clients > dataset.len() {
        return Err(DataError::TooManyClients {
            clients: num_clients,
            samples: dataset.len(),
        });
    }
    let mut rng = seed::rng(seed, &[seed::PARTITION]);
    let mut shards: Vec<ClientShard> = (0..num_clients)
        .map(|client_id| ClientShard {
            client_id,
            indices: Vec::new(),
        })
        .collect();
    let mut next = 0;
    for mut class in dataset.by_class() {
        class.shuffle(&mut rng);
        for i in class {
            shards[next].indices.push(i);
            next = (next + 1) % num_clients;
        }
    }
    for shard in &mut shards {
        shard.indices.sort_unstable();
    }
    Ok(shards)
}

/// Per-class quotas summing to `take`, proportional to class sizes
/// (largest-remainder rounding, ties to the lower class).
fn stratified_quotas(class_sizes: &[usize], take: usize) -> Vec<usize> {
    let total: usize = class_sizes.iter().sum();
    let exact: Vec<f64> = class_sizes
        .iter()
        .map(|&n| n as f64 * take as f64 / total as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut missing = take - quotas.iter().sum::<usize>();
    for k in order {
        if missing == 0 {
            break;
        }
        if quotas[k] < class_sizes[k] {
            quotas[k] += 1;
            missing -= 1;
        }
    }
    quotas
}

/// Splits indices into a stratified selection of `take` samples and the rest.
/// Both sides come back in ascending index order.
fn stratified_select(dataset: &Dataset, take: usize, stream: u64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = dataset.by_class();
    let sizes: Vec<usize> = classes.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&sizes, take);
    let mut rng = seed::rng(seed, &[stream]);
    let (mut chosen, mut rest) = (Vec::new(), Vec::new());
    for (mut class, quota) in classes.into_iter().zip(quotas) {
        class.shuffle(&mut rng);
        chosen.extend_from_slice(&class[..quota]);
        rest.extend_from_slice(&class[quota..]);
    }
    chosen.sort_unstable();
    rest.sort_unstable();
    (chosen, rest)
}

/// Stratified train/validation split; `fraction` is the validation share.
pub fn split_validation(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::DegenerateFraction { fraction });
    }
    let take = (fraction * dataset.len() as f64).round() as usize;
    if take == 0 || take >= dataset.len() {
        return Err(DataError::DegenerateFraction { fraction });
    }
    let (validation, train) = stratified_select(dataset, take, seed::VALIDATION, seed);
    Ok((dataset.subset(&train), dataset.subset(&validation)))
}

/// Stratified subset of at most `cap` samples; the whole set if it is smaller.
pub fn stratified_subset(dataset: &Dataset, cap: usize, seed: u64) -> Dataset {
    if cap >= dataset.len() {
        return dataset.clone();
    }
    let (chosen, _) = stratified_select(dataset, cap, seed::SUBSET, seed);
    dataset.subset(&chosen)
}

#[cfg(test)]
pub(crate) fn synthetic(labels: Vec<u8>) -> Dataset {
    let n = labels.len();
    let pixels = (0..n * 784).map(|i| ((i * 31) % 256) as f32 / 255.0).collect();
    Dataset {
        name: DatasetName::Mnist,
        images: Tensor::from_vec(&[n, 28, 28, 1], pixels).unwrap(),
        labels,
    }
}
