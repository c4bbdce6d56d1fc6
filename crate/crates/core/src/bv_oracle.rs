//! Monte Carlo bias-variance decomposition of cross-entropy.
//!
//! For replicas `p_r` trained on independent training sets, the average
//! predictor is the normalized geometric mean
//! `ybar_c = exp(mean_r log p_rc) / Z`. The expected error then splits exactly
//! into intrinsic noise `H(y)`, bias `KL(y || ybar)` and variance
//! `mean_r KL(ybar || p_r)`, and the variance equals `-ln Z`.

use std::fs;
use std::path::Path;

use crate::ledger::format_loss;
use crate::rng::{derive_seed, Stream};
use crate::trainer::{make_synthetic_dataset, make_test_set, Dataset, GaussianMixture, Mlp, TrainConfig, Trainer};
use crate::{Error, Result};

/// Probabilities are floored here (then renormalized) before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
const SUM_TOLERANCE: f64 = 1e-9;

pub const CURVES_FILE: &str = "bv_curves.csv";
pub const REPLICA_LOSSES_FILE: &str = "replica_losses.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BVDecomposition {
    pub noise: f64,
    pub bias: f64,
    pub variance: f64,
    pub error: f64,
    /// Normalizer of the geometric-mean predictor.
    pub z: f64,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::NonDistribution(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::NonDistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Log of `p` after flooring at [`PROB_FLOOR`] and renormalizing.
fn floored_log(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|v| v.max(PROB_FLOOR)).collect();
    let ln_sum = floored.iter().sum::<f64>().ln();
    floored.iter().map(|v| v.ln() - ln_sum).collect()
}

fn validated_logs(preds: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let first = preds.first().ok_or(Error::EmptyEnsemble)?;
    preds
        .iter()
        .enumerate()
        .map(|(r, p)| {
            if p.len() != first.len() || p.is_empty() {
                return Err(Error::NonDistribution(format!(
                    "replica {r} has {} classes, expected {}",
                    p.len(),
                    first.len()
                )));
            }
            check_distribution(p, &format!("replica {r}"))?;
            Ok(floored_log(p))
        })
        .collect()
}

/// Returns `(log ybar, Z)`.
fn geometric_mean(logs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let r = logs.len() as f64;
    let classes = logs[0].len();
    let mean_log: Vec<f64> = (0..classes)
        .map(|c| logs.iter().map(|l| l[c]).sum::<f64>() / r)
        .collect();
    let z: f64 = mean_log.iter().map(|m| m.exp()).sum();
    let ln_z = z.ln();
    (mean_log.into_iter().map(|m| m - ln_z).collect(), z)
}

/// Normalized geometric mean of the replica predictions and its normalizer `Z`.
pub fn average_predictor(preds: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let logs = validated_logs(preds)?;
    let (log_ybar, z) = geometric_mean(&logs);
    Ok((log_ybar.into_iter().map(f64::exp).collect(), z))
}

/// Per-sample decomposition against the target distribution `y`.
pub fn decompose(y: &[f64], preds: &[Vec<f64>]) -> Result<BVDecomposition> {
    let logs = validated_logs(preds)?;
    if y.len() != logs[0].len() {
        return Err(Error::NonDistribution(format!(
            "target has {} classes, predictions have {}",
            y.len(),
            logs[0].len()
        )));
    }
    check_distribution(y, "target")?;
    let (log_ybar, z) = geometric_mean(&logs);
    let r = logs.len() as f64;

    let mut noise = 0.0;
    let mut bias = 0.0;
    for (&t, &lb) in y.iter().zip(&log_ybar) {
        if t > 0.0 {
            noise -= t * t.ln();
            bias += t * (t.ln() - lb);
        }
    }
    let variance = logs
        .iter()
        .map(|l| {
            log_ybar
                .iter()
                .zip(l)
                .map(|(&lb, &lp)| lb.exp() * (lb - lp))
                .sum::<f64>()
        })
        .sum::<f64>()
        / r;
    let error = logs
        .iter()
        .map(|l| -y.iter().zip(l).map(|(t, lp)| t * lp).sum::<f64>())
        .sum::<f64>()
        / r;
    Ok(BVDecomposition {
        noise,
        bias,
        variance,
        error,
        z,
    })
}

/// Replica models frozen at a common epoch.
#[derive(Clone, Debug)]
pub struct ReplicaEnsemble {
    epoch: u64,
    replicas: Vec<Mlp>,
}

impl ReplicaEnsemble {
    pub fn new(epoch: u64, replicas: Vec<Mlp>) -> Result<Self> {
        if replicas.len() < 2 {
            return Err(Error::TooFewReplicas(replicas.len()));
        }
        let shapes = |m: &Mlp| m.layers().iter().map(|l| l.shape()).collect::<Vec<_>>();
        let reference = shapes(&replicas[0]);
        if let Some(i) = replicas.iter().position(|m| shapes(m) != reference) {
            return Err(Error::DimensionMismatch(format!(
                "replica {i} differs structurally from replica 0"
            )));
        }
        Ok(Self { epoch, replicas })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn replicas(&self) -> &[Mlp] {
        &self.replicas
    }
}

/// One row of `bv_curves.csv`: sample means at one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BvRow {
    pub epoch: u64,
    pub noise: f64,
    pub bias: f64,
    pub variance: f64,
    pub error: f64,
}

/// Average the per-sample decomposition over `eval` for each epoch's ensemble.
/// Epochs must be strictly increasing.
pub fn decompose_set(eval: &Dataset, ensembles: &[ReplicaEnsemble]) -> Result<Vec<BvRow>> {
    if let Some(w) = ensembles.windows(2).find(|w| w[1].epoch <= w[0].epoch) {
        return Err(Error::MismatchedEpochs(format!(
            "epoch {} follows epoch {}",
            w[1].epoch, w[0].epoch
        )));
    }
    ensembles
        .iter()
        .map(|ens| {
            let m = &ens.replicas[0];
            if m.n_inputs() != eval.n_features() || m.n_outputs() != eval.n_classes() {
                return Err(Error::DimensionMismatch(format!(
                    "ensemble at epoch {} does not match the evaluation set",
                    ens.epoch
                )));
            }
            let n = eval.len() as f64;
            let mut row = BvRow {
                epoch: ens.epoch,
                noise: 0.0,
                bias: 0.0,
                variance: 0.0,
                error: 0.0,
            };
            for i in 0..eval.len() {
                let x = eval.input(i);
                let preds: Vec<Vec<f64>> = ens.replicas.iter().map(|m| m.predict_proba(x)).collect();
                let d = decompose(eval.label(i), &preds)?;
                row.noise += d.noise;
                row.bias += d.bias;
                row.variance += d.variance;
                row.error += d.error;
            }
            row.noise /= n;
            row.bias /= n;
            row.variance /= n;
            row.error /= n;
            Ok(row)
        })
        .collect()
}

pub fn curves_to_csv(rows: &[BvRow]) -> String {
    let mut out = String::from("epoch,noise,bias,variance,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            format_loss(r.noise),
            format_loss(r.bias),
            format_loss(r.variance),
            format_loss(r.error)
        ));
    }
    out
}

/// Replica-mean losses at one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplicaLosses {
    pub epoch: u64,
    /// Mean augmented training loss logged during the epoch.
    pub train_loss: f64,
    /// Mean clean loss on each replica's own validation split.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRun {
    pub curves: Vec<BvRow>,
    pub losses: Vec<ReplicaLosses>,
}

impl OracleRun {
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<()> {
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(CURVES_FILE);
        fs::write(&path, curves_to_csv(&self.curves)).map_err(|e| Error::io(&path, e))?;
        let mut text = String::from("epoch,train_loss,val_loss\n");
        for l in &self.losses {
            text.push_str(&format!(
                "{},{},{}\n",
                l.epoch,
                format_loss(l.train_loss),
                format_loss(l.val_loss)
            ));
        }
        let path = out_dir.join(REPLICA_LOSSES_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Train `replicas` models for `config.max_epochs` epochs (no early stopping),
/// each on a fresh draw from the same mixture, and decompose their error on a
/// held-out set labelled with the true class posterior.
pub fn run_oracle(config: &TrainConfig, replicas: usize) -> Result<OracleRun> {
    config.validate()?;
    if replicas < 2 {
        return Err(Error::TooFewReplicas(replicas));
    }
    let task = GaussianMixture::from_config(config);
    let eval = make_test_set(config).relabel(|x| task.posterior(x));

    let mut trainers = Vec::with_capacity(replicas);
    let mut valids = Vec::with_capacity(replicas);
    for r in 0..replicas {
        let seed = derive_seed(config.seed, Stream::Replica(r as u32));
        let (train, valid) = make_synthetic_dataset(config, seed);
        trainers.push(Trainer::new(config, train, seed));
        valids.push(valid);
    }

    let mut curves = Vec::with_capacity(config.max_epochs as usize);
    let mut losses = Vec::with_capacity(config.max_epochs as usize);
    for epoch in 1..=config.max_epochs {
        let mut train_loss = 0.0;
        let mut val_loss = 0.0;
        for (t, valid) in trainers.iter_mut().zip(&valids) {
            train_loss += t.train_epoch()?;
            val_loss += crate::trainer::evaluate(t.model(), valid)?.loss;
        }
        losses.push(ReplicaLosses {
            epoch,
            train_loss: train_loss / replicas as f64,
            val_loss: val_loss / replicas as f64,
        });
        let ensemble =
            ReplicaEnsemble::new(epoch, trainers.iter().map(|t| t.model().clone()).collect())?;
        curves.extend(decompose_set(&eval, &[ensemble])?);
    }
    Ok(OracleRun { curves, losses })
}
