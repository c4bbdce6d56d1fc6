#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ckpt_curator::ledger::Ledger;
use ckpt_curator::tensor_store::{Tensor, TensorMap};
use ckpt_curator::trainer::{train_run, Mlp, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LK20_GOLDEN_DIGEST: u64 = 0x96449a7b8b134cc1;
pub const KBABVT10_GOLDEN_DIGEST: u64 = 0x5ebf282db4dc0fbe;
pub const LEDGER_GOLDEN_DIGEST: u64 = 0xef8f03df0afad465;
pub const PINNED_VAL_STOP: u64 = 83;
pub const PINNED_APPROBIVT_STOP: u64 = 406;

pub fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn reference_config() -> TrainConfig {
    TrainConfig::load(config_path("reference.conf")).unwrap()
}

pub fn oracle_config() -> TrainConfig {
    TrainConfig::load(config_path("oracle.conf")).unwrap()
}

pub struct PinnedRun {
    _dir: tempfile::TempDir,
    pub path: PathBuf,
    pub config: TrainConfig,
    pub ledger: Ledger,
}

/// The reference run, trained once per test binary.
pub fn pinned_run() -> &'static PinnedRun {
    static RUN: OnceLock<PinnedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reference");
        let config = reference_config();
        let ledger = train_run(&config, &path).unwrap();
        PinnedRun {
            _dir: dir,
            path,
            config,
            ledger,
        }
    })
}

/// Random names and shapes: 1-4 tensors of rank 0-3 with dims 1-5.
pub fn random_structure(rng: &mut impl Rng) -> Vec<(String, Vec<usize>)> {
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|i| {
            let rank = rng.random_range(0..=3);
            let shape = (0..rank).map(|_| rng.random_range(1..=5)).collect();
            (format!("t{i}.{}", rng.random_range(0..100)), shape)
        })
        .collect()
}

pub fn random_map(rng: &mut impl Rng, structure: &[(String, Vec<usize>)]) -> TensorMap {
    let mut tm = TensorMap::new();
    for (name, shape) in structure {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-100.0f32..100.0)).collect();
        tm.insert(name.clone(), Tensor::new(shape.clone(), data).unwrap())
            .unwrap();
    }
    tm
}

pub fn random_distribution(rng: &mut impl Rng, classes: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..classes)
        .map(|_| {
            // occasional near-zero and exact-zero entries exercise the floor
            match rng.random_range(0..10) {
                0 => 0.0,
                1 => rng.random_range(0.0..1e-14),
                _ => rng.random_range(1e-3..1.0),
            }
        })
        .collect();
    if p.iter().all(|v| *v == 0.0) {
        p[0] = 1.0;
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Integer-valued loss sequence (plenty of ties and plateaus) with a patience
/// in 1..=10. Integer values keep shifted and scaled copies exactly ordered.
pub fn random_loss_sequence(rng: &mut impl Rng) -> (Vec<f64>, usize) {
    let len = rng.random_range(0..=200);
    let patience = rng.random_range(1..=10);
    let mut level: i64 = rng.random_range(0..1000);
    let down_bias = rng.random_range(0.3..0.9);
    let losses = (0..len)
        .map(|_| {
            let step = rng.random_range(0..4);
            if rng.random_bool(down_bias) {
                level -= step;
            } else {
                level += step;
            }
            level as f64
        })
        .collect();
    (losses, patience)
}

/// Element-wise f64 sum in the given order, divided once, rounded once.
pub fn naive_mean(tms: &[TensorMap]) -> TensorMap {
    let mut out = TensorMap::new();
    for (name, t) in tms[0].iter() {
        let mut data = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let mut s = 0.0f64;
            for tm in tms {
                s += tm.get(name).unwrap().data()[i] as f64;
            }
            data.push((s / tms.len() as f64) as f32);
        }
        out.insert(name, Tensor::new(t.shape().to_vec(), data).unwrap())
            .unwrap();
    }
    out
}

/// Relative error between analytic and central-difference gradients, as
/// `|a - n| / (|a| + |n|)` over whole parameter vectors.
pub fn gradient_check(rng: &mut ChaCha8Rng) -> f64 {
    let n_in = rng.random_range(1..5);
    let n_out = rng.random_range(2..5);
    let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..6)).collect();
    let mut model = Mlp::init(n_in, &hidden, n_out, rng);
    // move away from the initializer's f32 grid and small-weight regime
    let params: Vec<f64> = model.params().iter().map(|p| p + rng.random_range(-0.5..0.5)).collect();
    model.set_params(&params);

    let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..rng.random_range(1..6))
        .map(|_| {
            let x = (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = random_distribution(rng, n_out);
            (x, y)
        })
        .collect();
    let loss_at = |m: &Mlp| {
        m.loss_and_gradient(batch.iter().map(|(x, y)| (x.as_slice(), y.as_slice())), None).0
    };
    let (_, grad) = model.loss_and_gradient(batch.iter().map(|(x, y)| (x.as_slice(), y.as_slice())), None);
    let analytic = grad.params();

    let h = 1e-5;
    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = model.clone();
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_params(&p);
        let up = loss_at(&probe);
        p[i] = params[i] - h;
        probe.set_params(&p);
        let down = loss_at(&probe);
        numeric.push((up - down) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (norm(&analytic) + norm(&numeric)).max(1e-300)
}
