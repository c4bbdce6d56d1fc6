use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::stopping::DEFAULT_PATIENCE;
use crate::{Error, Result};

/// Everything that determines a toy training run. Parsed from flat
/// `key = value` text; `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_valid: usize,
    /// Held-out set for ablation and the bias-variance oracle.
    pub n_test: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub hidden_sizes: Vec<usize>,
    pub dropout_p: f64,
    /// Std-dev of Gaussian noise added to training inputs (augmentation).
    pub input_noise_sigma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: u64,
    /// Probability of flipping a training label to another class.
    pub label_noise_p: f64,
    pub patience: usize,
    /// Std-dev of the mixture component centers around the origin.
    pub center_spread: f64,
    /// Within-class std-dev of each mixture component.
    pub cluster_std: f64,
    /// Size of the sampled unaugmented training subset; defaults to `n_valid`.
    pub sut_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 100,
            n_valid: 100,
            n_test: 2000,
            n_features: 8,
            n_classes: 3,
            hidden_sizes: vec![64, 64],
            dropout_p: 0.3,
            input_noise_sigma: 0.5,
            lr: 0.05,
            batch_size: 16,
            max_epochs: 600,
            label_noise_p: 0.1,
            patience: DEFAULT_PATIENCE,
            center_spread: 1.0,
            cluster_std: 2.0,
            sut_size: None,
        }
    }
}

const KEYS: [&str; 17] = [
    "seed",
    "n_train",
    "n_valid",
    "n_test",
    "n_features",
    "n_classes",
    "hidden_sizes",
    "dropout_p",
    "input_noise_sigma",
    "lr",
    "batch_size",
    "max_epochs",
    "label_noise_p",
    "patience",
    "center_spread",
    "cluster_std",
    "sut_size",
];

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| Error::InvalidConfig(format!("{key}: cannot parse `{raw}`: {e}")))
}

impl TrainConfig {
    pub fn sut_size(&self) -> usize {
        self.sut_size.unwrap_or(self.n_valid)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, raw)?,
            "n_train" => self.n_train = parse_value(key, raw)?,
            "n_valid" => self.n_valid = parse_value(key, raw)?,
            "n_test" => self.n_test = parse_value(key, raw)?,
            "n_features" => self.n_features = parse_value(key, raw)?,
            "n_classes" => self.n_classes = parse_value(key, raw)?,
            "hidden_sizes" => {
                self.hidden_sizes = raw
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect::<Result<_>>()?
            }
            "dropout_p" => self.dropout_p = parse_value(key, raw)?,
            "input_noise_sigma" => self.input_noise_sigma = parse_value(key, raw)?,
            "lr" => self.lr = parse_value(key, raw)?,
            "batch_size" => self.batch_size = parse_value(key, raw)?,
            "max_epochs" => self.max_epochs = parse_value(key, raw)?,
            "label_noise_p" => self.label_noise_p = parse_value(key, raw)?,
            "patience" => self.patience = parse_value(key, raw)?,
            "center_spread" => self.center_spread = parse_value(key, raw)?,
            "cluster_std" => self.cluster_std = parse_value(key, raw)?,
            "sut_size" => {
                self.sut_size = match raw {
                    "" | "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. Keys may not repeat.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1))
            })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key `{key}`",
                    i + 1
                )));
            }
            seen.push(key);
            config.set(key, value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return fail("n_train, n_valid and n_test must be positive".into());
        }
        if self.n_valid > self.n_train {
            return fail(format!(
                "n_valid ({}) exceeds n_train ({})",
                self.n_valid, self.n_train
            ));
        }
        if self.sut_size() == 0 || self.sut_size() > self.n_train {
            return fail(format!("sut_size must be in 1..={}", self.n_train));
        }
        if self.n_features == 0 || self.n_classes < 2 {
            return fail("need n_features >= 1 and n_classes >= 2".into());
        }
        if self.hidden_sizes.contains(&0) {
            return fail("hidden layer sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} not in [0, 1)", self.dropout_p));
        }
        if !(0.0..1.0).contains(&self.label_noise_p) {
            return fail(format!("label_noise_p {} not in [0, 1)", self.label_noise_p));
        }
        if !(self.input_noise_sigma >= 0.0 && self.input_noise_sigma.is_finite()) {
            return fail("input_noise_sigma must be finite and >= 0".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be finite and positive".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return fail("batch_size, max_epochs and patience must be positive".into());
        }
        if !(self.cluster_std > 0.0 && self.center_spread >= 0.0) {
            return fail("cluster_std must be positive and center_spread non-negative".into());
        }
        Ok(())
    }

    /// Every key with its effective value, one per line, in a fixed order.
    pub fn to_resolved_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match key {
                "seed" => self.seed.to_string(),
                "n_train" => self.n_train.to_string(),
                "n_valid" => self.n_valid.to_string(),
                "n_test" => self.n_test.to_string(),
                "n_features" => self.n_features.to_string(),
                "n_classes" => self.n_classes.to_string(),
                "hidden_sizes" => self
                    .hidden_sizes
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
                "dropout_p" => format!("{:?}", self.dropout_p),
                "input_noise_sigma" => format!("{:?}", self.input_noise_sigma),
                "lr" => format!("{:?}", self.lr),
                "batch_size" => self.batch_size.to_string(),
                "max_epochs" => self.max_epochs.to_string(),
                "label_noise_p" => format!("{:?}", self.label_noise_p),
                "patience" => self.patience.to_string(),
                "center_spread" => format!("{:?}", self.center_spread),
                "cluster_std" => format!("{:?}", self.cluster_std),
                "sut_size" => self.sut_size().to_string(),
                _ => unreachable!(),
            };
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }
}
