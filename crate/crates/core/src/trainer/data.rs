//! Synthetic Gaussian-mixture classification data.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::TrainConfig;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
    /// Sampled unaugmented training subset.
    Sut,
}

/// Row-major inputs with one label distribution per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_features: usize,
    n_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    /// Mixture component that generated each sample.
    components: Vec<usize>,
    split: Split,
}

impl Dataset {
    /// Build from explicit rows. Every label row must sum to 1 within 1e-12.
    pub fn new(
        n_features: usize,
        n_classes: usize,
        inputs: Vec<f64>,
        labels: Vec<f64>,
        split: Split,
    ) -> Result<Self> {
        if n_features == 0 || n_classes == 0 || inputs.is_empty() {
            return Err(Error::DimensionMismatch("dataset must be non-empty".into()));
        }
        if !inputs.len().is_multiple_of(n_features) {
            return Err(Error::DimensionMismatch(format!(
                "{} input values is not a multiple of {n_features} features",
                inputs.len()
            )));
        }
        let n = inputs.len() / n_features;
        if labels.len() != n * n_classes {
            return Err(Error::DimensionMismatch(format!(
                "{} label values for {n} samples of {n_classes} classes",
                labels.len()
            )));
        }
        for (i, row) in labels.chunks_exact(n_classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::NonDistribution(format!("label row {i} sums to {sum}")));
            }
        }
        let components = labels.chunks_exact(n_classes).map(argmax).collect();
        Ok(Self {
            n_features,
            n_classes,
            inputs,
            labels,
            components,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> &[f64] {
        &self.labels[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn component(&self, i: usize) -> usize {
        self.components[i]
    }

    /// Hard class of each label row (argmax, first on ties).
    pub fn label_class(&self, i: usize) -> usize {
        argmax(self.label(i))
    }

    /// Rows at `indices`, in that order, retagged.
    pub fn select(&self, indices: &[usize], split: Split) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len() * self.n_classes);
        let mut components = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.extend_from_slice(self.label(i));
            components.push(self.components[i]);
        }
        Dataset {
            n_features: self.n_features,
            n_classes: self.n_classes,
            inputs,
            labels,
            components,
            split,
        }
    }

    /// Same inputs with labels replaced by `f(input)`.
    pub fn relabel(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Dataset {
        let labels = (0..self.len()).flat_map(|i| f(self.input(i))).collect();
        Dataset {
            labels,
            ..self.clone()
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Equal-weight isotropic Gaussian mixture, one component per class.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    centers: Vec<Vec<f64>>,
    std: f64,
}

impl GaussianMixture {
    /// Component centers are drawn once from the config's seed; every dataset
    /// of a run (and every oracle replica) shares them.
    pub fn from_config(config: &TrainConfig) -> Self {
        let mut rng = stream_rng(config.seed, Stream::Task);
        let centers = (0..config.n_classes)
            .map(|_| {
                (0..config.n_features)
                    .map(|_| config.center_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self {
            centers,
            std: config.cluster_std,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn n_features(&self) -> usize {
        self.centers[0].len()
    }

    /// Draw `n` samples with balanced classes in random order. Each label is
    /// flipped to a uniformly chosen other class with probability `flip_p`.
    pub fn sample(&self, n: usize, flip_p: f64, split: Split, rng: &mut ChaCha8Rng) -> Dataset {
        let c = self.n_classes();
        let d = self.n_features();
        let mut components: Vec<usize> = (0..n).map(|i| i % c).collect();
        components.shuffle(rng);

        let mut inputs = Vec::with_capacity(n * d);
        let mut labels = vec![0.0; n * c];
        for (i, &k) in components.iter().enumerate() {
            for &mu in &self.centers[k] {
                inputs.push(mu + self.std * rng.sample::<f64, _>(StandardNormal));
            }
            let mut label = k;
            if flip_p > 0.0 && rng.random::<f64>() < flip_p {
                label = (k + rng.random_range(1..c)) % c;
            }
            labels[i * c + label] = 1.0;
        }
        Dataset {
            n_features: d,
            n_classes: c,
            inputs,
            labels,
            components,
            split,
        }
    }

    /// Bayes posterior p(class | x).
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let scale = 0.5 / (self.std * self.std);
        let logits: Vec<f64> = self
            .centers
            .iter()
            .map(|mu| -scale * mu.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

/// Train and validation splits for a run: same mixture, independent draws.
/// Label noise only touches the training split.
pub fn make_synthetic_dataset(config: &TrainConfig, seed: u64) -> (Dataset, Dataset) {
    let task = GaussianMixture::from_config(config);
    let train = task.sample(
        config.n_train,
        config.label_noise_p,
        Split::Train,
        &mut stream_rng(seed, Stream::TrainData),
    );
    let valid = task.sample(
        config.n_valid,
        0.0,
        Split::Valid,
        &mut stream_rng(seed, Stream::ValidData),
    );
    (train, valid)
}

/// Held-out evaluation set with clean one-hot labels.
pub fn make_test_set(config: &TrainConfig) -> Dataset {
    GaussianMixture::from_config(config).sample(
        config.n_test,
        0.0,
        Split::Test,
        &mut stream_rng(config.seed, Stream::TestData),
    )
}

/// Uniform sample without replacement, drawn once and reused for every epoch.
pub fn sample_unaugmented_subset(train: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    if size > train.len() {
        return Err(Error::SizeTooLarge {
            requested: size,
            available: train.len(),
        });
    }
    let mut rng = stream_rng(seed, Stream::SutSample);
    let picked = index::sample(&mut rng, train.len(), size).into_vec();
    Ok(train.select(&picked, Split::Sut))
}
