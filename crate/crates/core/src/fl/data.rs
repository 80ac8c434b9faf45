//! Client data shards: a synthetic non-IID generator and CSV ingestion.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FlError;
use crate::ids::DeviceId;
use crate::seed::{self, Stream};

/// Row-major feature matrix plus one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DataShard {
    pub features: Vec<f64>,
    pub input_dim: usize,
    pub labels: Vec<usize>,
    pub owner: DeviceId,
}

impl DataShard {
    pub fn new(features: Vec<f64>, input_dim: usize, labels: Vec<usize>, owner: DeviceId) -> Result<Self, FlError> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(FlError::ShapeMismatch { expected: labels.len() * input_dim, got: features.len() });
        }
        if labels.is_empty() {
            return Err(FlError::EmptyShard);
        }
        Ok(Self { features, input_dim, labels, owner })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.features[n * self.input_dim..(n + 1) * self.input_dim]
    }

    /// Sample count per class, for `n_classes` classes.
    pub fn label_histogram(&self, n_classes: usize) -> Vec<usize> {
        let mut h = vec![0; n_classes];
        for &y in &self.labels {
            if y < n_classes {
                h[y] += 1;
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_clients: usize,
    /// Dirichlet concentration for per-client label mixes; small = skewed.
    pub non_iid_alpha: f64,
    pub n_classes: usize,
    pub input_dim: usize,
    /// Training samples summed over all clients.
    pub total_samples: usize,
    pub validation_samples: usize,
    /// Distance of each class centre from the origin.
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_clients: 20,
            non_iid_alpha: 0.5,
            n_classes: 4,
            input_dim: 8,
            total_samples: 2000,
            validation_samples: 400,
            separation: 4.0,
            noise_std: 1.0,
        }
    }
}

/// Gaussian class clusters partitioned across clients with Dirichlet label
/// skew. Every client receives `total/n_clients` samples (the first
/// `total % n_clients` clients one more). The validation shard is drawn IID
/// from the uniform class mixture.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<(Vec<DataShard>, DataShard), FlError> {
    if spec.n_clients == 0 || spec.n_classes == 0 || spec.input_dim == 0 {
        return Err(FlError::InvalidConfig("n_clients, n_classes and input_dim must be >= 1"));
    }
    if spec.total_samples < spec.n_clients || spec.validation_samples == 0 {
        return Err(FlError::InvalidConfig("every client and the validation set need at least one sample"));
    }
    if !(spec.non_iid_alpha > 0.0 && spec.non_iid_alpha.is_finite()) {
        return Err(FlError::InvalidConfig("non_iid_alpha must be positive"));
    }
    let mut rng = seed::rng(spec.seed, Stream::Dataset, 0);

    let centres: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm * spec.separation).collect()
        })
        .collect();

    let sample = |label: usize, rng: &mut rand_chacha::ChaCha8Rng, out: &mut Vec<f64>| {
        for &c in &centres[label] {
            let z: f64 = StandardNormal.sample(rng);
            out.push(c + spec.noise_std * z);
        }
    };

    let gamma = Gamma::new(spec.non_iid_alpha, 1.0).map_err(|_| FlError::InvalidConfig("non_iid_alpha"))?;
    let base = spec.total_samples / spec.n_clients;
    let extra = spec.total_samples % spec.n_clients;
    let mut shards = Vec::with_capacity(spec.n_clients);
    for c in 0..spec.n_clients {
        let n = base + usize::from(c < extra);
        let mut props: Vec<f64> = (0..spec.n_classes).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 && total.is_finite() {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            // Every draw underflowed; fall back to a single random class.
            props = vec![0.0; spec.n_classes];
            props[rng.random_range(0..spec.n_classes)] = 1.0;
        }
        let counts = apportion(&props, n);
        let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &m)| std::iter::repeat_n(k, m)).collect();
        labels.shuffle(&mut rng);
        let mut features = Vec::with_capacity(n * spec.input_dim);
        for &y in &labels {
            sample(y, &mut rng, &mut features);
        }
        shards.push(DataShard::new(features, spec.input_dim, labels, DeviceId(c as u32))?);
    }

    let mut vlabels = Vec::with_capacity(spec.validation_samples);
    let mut vfeatures = Vec::with_capacity(spec.validation_samples * spec.input_dim);
    for _ in 0..spec.validation_samples {
        let y = rng.random_range(0..spec.n_classes);
        vlabels.push(y);
        sample(y, &mut rng, &mut vfeatures);
    }
    let validation = DataShard::new(vfeatures, spec.input_dim, vlabels, DeviceId::VERIFIER)?;
    Ok((shards, validation))
}

/// Largest-remainder rounding of `props * n` to integers summing to `n`.
fn apportion(props: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Reads a shard from CSV: a header row, float feature columns and an
/// integer `label` column (anywhere in the row).
pub fn load_csv_shard<R: Read>(reader: R, owner: DeviceId) -> Result<DataShard, FlError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| FlError::Csv(e.to_string()))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| FlError::Csv("missing `label` column".into()))?;
    let input_dim = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FlError::Csv(e.to_string()))?;
        for (col, field) in rec.iter().enumerate() {
            let field = field.trim();
            if col == label_col {
                let y = field.parse::<usize>().map_err(|_| FlError::Csv(format!("row {}: bad label {field:?}", row + 1)))?;
                labels.push(y);
            } else {
                let x = field.parse::<f64>().map_err(|_| FlError::Csv(format!("row {}: bad feature {field:?}", row + 1)))?;
                features.push(x);
            }
        }
    }
    DataShard::new(features, input_dim, labels, owner)
}
