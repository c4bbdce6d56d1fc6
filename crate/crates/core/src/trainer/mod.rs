//! Deterministic toy trainer that runs the whole recipe: train an epoch,
//! checkpoint it, score it on the fixed training subset and the validation
//! set, and stop once the tradeoff score has stopped falling.

mod config;
mod data;
mod mlp;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub use config::TrainConfig;
pub use data::{
    make_synthetic_dataset, make_test_set, sample_unaugmented_subset, Dataset, GaussianMixture,
    Split,
};
pub use mlp::{log_softmax, Augment, Dense, Mlp};

use crate::ledger::{EpochRecord, Ledger};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::stopping::{Decision, StoppingMonitor};
use crate::tensor_store::{self, epoch_file_name};
use crate::{Error, Result};

pub const LEDGER_FILE: &str = "ledger.csv";
pub const CONFIG_FILE: &str = "config.resolved";
pub const MANIFEST_FILE: &str = "manifest.fnv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy `-sum(y log p)` in nats.
    pub loss: f64,
    /// Fraction of samples whose argmax prediction matches the argmax label.
    pub accuracy: f64,
}

/// Clean evaluation: no dropout, no input noise.
pub fn evaluate(model: &Mlp, ds: &Dataset) -> Result<Evaluation> {
    if model.n_inputs() != ds.n_features() || model.n_outputs() != ds.n_classes() {
        return Err(Error::DimensionMismatch(format!(
            "model maps {} -> {}, dataset has {} features and {} classes",
            model.n_inputs(),
            model.n_outputs(),
            ds.n_features(),
            ds.n_classes()
        )));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let log_p = model.log_probs(ds.input(i));
        let y = ds.label(i);
        loss -= y
            .iter()
            .zip(&log_p)
            .filter(|(t, _)| **t != 0.0)
            .map(|(t, l)| t * l)
            .sum::<f64>();
        if data::argmax(&log_p) == ds.label_class(i) {
            correct += 1;
        }
    }
    let n = ds.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Epoch-at-a-time SGD over a fixed training set.
pub struct Trainer {
    config: TrainConfig,
    model: Mlp,
    train: Dataset,
    rng: ChaCha8Rng,
    epoch: u64,
}

impl Trainer {
    /// `seed` keys the initial weights and the batch/augmentation stream.
    pub fn new(config: &TrainConfig, train: Dataset, seed: u64) -> Self {
        let model = Mlp::init(
            config.n_features,
            &config.hidden_sizes,
            config.n_classes,
            &mut stream_rng(seed, Stream::Init),
        );
        Self {
            config: config.clone(),
            model,
            train,
            rng: stream_rng(seed, Stream::Batches),
            epoch: 0,
        }
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// One pass of shuffled mini-batch SGD with dropout and input noise.
    /// Returns the sample-weighted mean of the augmented batch losses.
    pub fn train_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let samples = batch
                .iter()
                .map(|&i| (self.train.input(i), self.train.label(i)));
            let (loss, grad) = self.model.loss_and_gradient(
                samples,
                Some(Augment {
                    dropout_p: self.config.dropout_p,
                    input_noise_sigma: self.config.input_noise_sigma,
                    rng: &mut self.rng,
                }),
            );
            if !loss.is_finite() {
                return Err(Error::DivergedTraining(self.epoch));
            }
            loss_sum += loss * batch.len() as f64;
            self.model.sgd_step(&grad, self.config.lr);
            self.model.round_to_f32();
        }
        if self.model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergedTraining(self.epoch));
        }
        Ok(loss_sum / self.train.len() as f64)
    }
}

/// Train under the tradeoff-score stopping rule (or until `max_epochs`),
/// writing `config.resolved`, `epoch_<n>.ckpt` and `ledger.csv` into `out_dir`.
pub fn train_run(config: &TrainConfig, out_dir: impl AsRef<Path>) -> Result<Ledger> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_resolved_string()).map_err(|e| Error::io(&config_path, e))?;

    let (train, valid) = make_synthetic_dataset(config, config.seed);
    let sut = sample_unaugmented_subset(&train, config.sut_size(), config.seed)?;
    let mut trainer = Trainer::new(config, train, derive_seed(config.seed, Stream::Init));
    let mut monitor = StoppingMonitor::new(config.patience)?;

    let run_id = out_dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("")
        .to_owned();
    let mut ledger = Ledger::new(run_id);
    let ledger_path = out_dir.join(LEDGER_FILE);
    while trainer.epoch() < config.max_epochs {
        let train_loss = trainer.train_epoch()?;
        let epoch = trainer.epoch();
        tensor_store::write_checkpoint(
            &trainer.model().to_tensor_map(),
            out_dir.join(epoch_file_name(epoch)),
        )?;
        let sutl = evaluate(trainer.model(), &sut)?.loss;
        let val_loss = evaluate(trainer.model(), &valid)?.loss;
        if !(sutl.is_finite() && val_loss.is_finite()) {
            return Err(Error::DivergedTraining(epoch));
        }
        let record = EpochRecord::new(epoch, train_loss, sutl, val_loss);
        ledger.append(record)?;
        ledger.save_csv(&ledger_path)?;
        if let Decision::Stop(_) = monitor.observe(record.approbivt())? {
            break;
        }
    }
    crate::layout::write_manifest(out_dir)?;
    Ok(ledger)
}

/// Load the model stored for `epoch` in a run directory.
pub fn load_epoch_model(run_dir: &Path, epoch: u64) -> Result<Mlp> {
    Mlp::from_tensor_map(&tensor_store::read_checkpoint(
        run_dir.join(epoch_file_name(epoch)),
    )?)
}
