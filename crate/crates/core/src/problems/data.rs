//! Synthetic labelled data and device partitioning.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AquilaError, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, num_features: usize, num_classes: usize) -> Result<Self> {
        if num_features == 0 || num_classes == 0 {
            return Err(AquilaError::Config("dataset needs features and classes".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(AquilaError::dim(labels.len() * num_features, features.len()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(AquilaError::Config(format!("label {y} >= class count {num_classes}")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(AquilaError::Numeric("non-finite feature".into()));
        }
        Ok(Dataset {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    /// Gaussian class clusters: class means drawn as `separation * N(0, I)`,
    /// samples as `mean + N(0, I)`. Labels cycle `0, 1, .., C-1` so counts
    /// are balanced.
    pub fn gaussian_clusters(
        samples: usize,
        num_features: usize,
        num_classes: usize,
        separation: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| {
                (0..num_features)
                    .map(|_| separation * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        let mut features = Vec::with_capacity(samples * num_features);
        let mut labels = Vec::with_capacity(samples);
        for i in 0..samples {
            let y = i % num_classes;
            for &mean in &means[y] {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(mean + noise);
            }
            labels.push(y);
        }
        Dataset::new(features, labels, num_features, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Writes `f0,..,f{p-1},label,device_id` rows for inspection.
    pub fn write_csv(&self, shards: &[Vec<usize>], path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..self.num_features)
            .map(|j| format!("f{j}"))
            .chain(["label".to_string(), "device_id".to_string()])
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (device, shard) in shards.iter().enumerate() {
            for &i in shard {
                let row: Vec<String> = self.features(i).iter().map(|x| format!("{x:.17e}")).collect();
                writeln!(out, "{},{},{}", row.join(","), self.labels[i], device)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMode {
    Iid,
    /// Label-skewed split: each device holds at most this many classes.
    NonIid { classes_per_device: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub num_devices: usize,
    pub seed: u64,
}

/// Splits sample indices across devices.
///
/// IID shuffles and deals contiguous near-equal pieces. Non-IID sorts by
/// label, cuts each class into `M * k / C` near-equal shards and deals shard
/// `j` to device `j mod M`, so device `m` sees at most `k` labels.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let m = spec.num_devices;
    if m == 0 {
        return Err(AquilaError::Config("partition needs at least one device".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.mode {
        PartitionMode::Iid => {
            if dataset.len() < m {
                return Err(AquilaError::Config(format!(
                    "{} samples cannot cover {m} devices",
                    dataset.len()
                )));
            }
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            Ok(split_even(&idx, m))
        }
        PartitionMode::NonIid { classes_per_device: k } => {
            let c = dataset.num_classes();
            if k == 0 || k > c {
                return Err(AquilaError::Config(format!(
                    "classes per device must be in [1, {c}], got {k}"
                )));
            }
            let total_shards = m * k;
            if !total_shards.is_multiple_of(c) {
                return Err(AquilaError::Config(format!(
                    "{m} devices x {k} classes is not a multiple of {c} classes"
                )));
            }
            let per_class = total_shards / c;
            let mut shards = Vec::with_capacity(total_shards);
            for label in 0..c {
                let mut members: Vec<usize> =
                    (0..dataset.len()).filter(|&i| dataset.label(i) == label).collect();
                if members.len() < per_class {
                    return Err(AquilaError::Config(format!(
                        "class {label} has {} samples, needs at least {per_class}",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                shards.extend(split_even(&members, per_class));
            }
            let mut devices = vec![Vec::new(); m];
            for (j, shard) in shards.into_iter().enumerate() {
                devices[j % m].extend(shard);
            }
            Ok(devices)
        }
    }
}

fn split_even(idx: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = idx.len() / parts;
    let extra = idx.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}
