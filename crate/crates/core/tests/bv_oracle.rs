mod common;

use ckpt_curator::bv_oracle::{
    average_predictor, curves_to_csv, decompose, decompose_set, ReplicaEnsemble, PROB_FLOOR,
};
use ckpt_curator::rng::{stream_rng, Stream};
use ckpt_curator::trainer::{Dataset, Mlp, Split, TrainConfig};
use ckpt_curator::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each term recomputed from its definition with separately floored inputs.
fn oracle_terms(y: &[f64], preds: &[Vec<f64>]) -> (f64, f64, f64, f64, f64) {
    let clean: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| {
            let f: Vec<f64> = p.iter().map(|v| if *v < PROB_FLOOR { PROB_FLOOR } else { *v }).collect();
            let s: f64 = f.iter().sum();
            f.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let r = clean.len() as f64;
    let c = y.len();
    let geo: Vec<f64> = (0..c)
        .map(|k| (clean.iter().map(|p| p[k].ln()).sum::<f64>() / r).exp())
        .collect();
    let z: f64 = geo.iter().sum();
    let ybar: Vec<f64> = geo.iter().map(|g| g / z).collect();
    let kl = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, w)| x * (x / w).ln())
            .sum::<f64>()
    };
    let noise = -y.iter().filter(|t| **t > 0.0).map(|t| t * t.ln()).sum::<f64>();
    let bias = kl(y, &ybar);
    let variance = clean.iter().map(|p| kl(&ybar, p)).sum::<f64>() / r;
    let error = clean
        .iter()
        .map(|p| -y.iter().zip(p).map(|(t, q)| t * q.ln()).sum::<f64>())
        .sum::<f64>()
        / r;
    (noise, bias, variance, error, z)
}

#[test]
fn randomized_identity_and_oracle_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..2000 {
        let classes = rng.random_range(2..=10);
        let r = rng.random_range(1..=10);
        let y = common::random_distribution(&mut rng, classes);
        let preds: Vec<Vec<f64>> = (0..r).map(|_| common::random_distribution(&mut rng, classes)).collect();
        let d = decompose(&y, &preds).unwrap();
        assert!((d.error - d.noise - d.bias - d.variance).abs() < 1e-9);
        assert!((d.variance + d.z.ln()).abs() < 1e-9);
        assert!(d.z <= 1.0 + 1e-15 && d.z > 0.0);
        assert!(d.noise >= -1e-12 && d.bias >= -1e-12 && d.variance >= -1e-12);

        let (noise, bias, variance, error, z) = oracle_terms(&y, &preds);
        for (got, want) in [(d.noise, noise), (d.bias, bias), (d.variance, variance), (d.error, error), (d.z, z)] {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }

        let mut shuffled = preds.clone();
        shuffled.shuffle(&mut rng);
        let e = decompose(&y, &shuffled).unwrap();
        assert!((e.variance - d.variance).abs() < 1e-12 && (e.bias - d.bias).abs() < 1e-12);
    }
}

#[test]
fn examples() {
    let (ybar, z) = average_predictor(&[vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap();
    assert!((z - 0.8944271909999159).abs() < 1e-12);
    assert!((ybar[0] - 0.75).abs() < 1e-12 && (ybar[1] - 0.25).abs() < 1e-12);

    let p = vec![0.2, 0.3, 0.5];
    let (ybar, z) = average_predictor(&vec![p.clone(); 4]).unwrap();
    assert!((z - 1.0).abs() < 1e-12);
    assert!(ybar.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-12));

    let one_hot = vec![0.0, 1.0, 0.0];
    let d = decompose(&one_hot, &vec![one_hot.clone(); 3]).unwrap();
    for v in [d.noise, d.bias, d.variance, d.error] {
        assert!(v.abs() < 1e-10, "{d:?}");
    }

    let y = vec![0.3, 0.7];
    let d = decompose(&y, &[vec![0.6, 0.4]]).unwrap();
    assert_eq!(d.variance, 0.0);
    assert_eq!(d.z, 1.0);
    assert!((d.error - d.noise - d.bias).abs() < 1e-12);
}

#[test]
fn input_errors() {
    assert!(matches!(average_predictor(&[]), Err(Error::EmptyEnsemble)));
    assert!(matches!(
        decompose(&[0.5, 0.5], &[vec![0.7, 0.7]]),
        Err(Error::NonDistribution(_))
    ));
    assert!(matches!(
        decompose(&[0.5, 0.5], &[vec![1.0, 0.0], vec![1.0]]),
        Err(Error::NonDistribution(_))
    ));
    assert!(matches!(
        decompose(&[1.0, 0.0, 0.0], &[vec![1.0, 0.0]]),
        Err(Error::NonDistribution(_))
    ));
    assert!(matches!(
        decompose(&[0.5, 0.5], &[vec![1.5, -0.5]]),
        Err(Error::NonDistribution(_))
    ));
    let m = Mlp::zeros(2, &[], 2);
    assert!(matches!(ReplicaEnsemble::new(1, vec![m.clone()]), Err(Error::TooFewReplicas(1))));
    assert!(matches!(
        ReplicaEnsemble::new(1, vec![m, Mlp::zeros(2, &[3], 2)]),
        Err(Error::DimensionMismatch(_))
    ));
}

fn random_ensembles(rng: &mut ChaCha8Rng, epochs: &[u64]) -> Vec<ReplicaEnsemble> {
    epochs
        .iter()
        .map(|&e| {
            let reps = (0..3).map(|_| Mlp::init(3, &[4], 3, rng)).collect();
            ReplicaEnsemble::new(e, reps).unwrap()
        })
        .collect()
}

fn soft_eval(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let inputs = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).flat_map(|_| common::random_distribution(rng, 3)).collect();
    Dataset::new(3, 3, inputs, labels, Split::Test).unwrap()
}

#[test]
fn decompose_set_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let eval = soft_eval(&mut rng, 40);
    let ens = random_ensembles(&mut rng, &[1, 2, 5]);
    let rows = decompose_set(&eval, &ens).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 5]);
    for r in &rows {
        assert_eq!(r.noise, rows[0].noise);
        assert!((r.error - r.noise - r.bias - r.variance).abs() < 1e-9);
    }

    let single = eval.select(&[7], Split::Test);
    let row = decompose_set(&single, &ens[..1]).unwrap()[0];
    let preds: Vec<Vec<f64>> = ens[0].replicas().iter().map(|m| m.predict_proba(single.input(0))).collect();
    let d = decompose(single.label(0), &preds).unwrap();
    assert_eq!((row.noise, row.bias, row.variance, row.error), (d.noise, d.bias, d.variance, d.error));

    let backwards = random_ensembles(&mut rng, &[3, 3]);
    assert!(matches!(decompose_set(&eval, &backwards), Err(Error::MismatchedEpochs(_))));

    let csv = curves_to_csv(&rows);
    assert!(csv.starts_with("epoch,noise,bias,variance,error\n1,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn replica_seeds_differ() {
    let cfg = TrainConfig::default();
    let a: u64 = stream_rng(cfg.seed, Stream::Replica(0)).random();
    let b: u64 = stream_rng(cfg.seed, Stream::Replica(1)).random();
    assert_ne!(a, b);
}

#[test]
fn small_oracle_run() {
    let config = TrainConfig {
        n_train: 40,
        n_valid: 20,
        n_test: 60,
        hidden_sizes: vec![6],
        max_epochs: 4,
        ..common::oracle_config()
    };
    let run = ckpt_curator::bv_oracle::run_oracle(&config, 3).unwrap();
    assert_eq!(run.curves.len(), 4);
    assert_eq!(run.losses.len(), 4);
    assert!(run.curves.iter().all(|r| r.noise == run.curves[0].noise));
    assert!(matches!(
        ckpt_curator::bv_oracle::run_oracle(&config, 1),
        Err(Error::TooFewReplicas(1))
    ));

    let dir = tempfile::tempdir().unwrap();
    run.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("bv_curves.csv")).unwrap();
    assert_eq!(text, curves_to_csv(&run.curves));
    assert!(dir.path().join("replica_losses.csv").is_file());
}
