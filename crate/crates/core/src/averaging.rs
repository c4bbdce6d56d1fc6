//! Checkpoint selection schemes and parameter-space averaging.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::ledger::{Ledger, Metric};
use crate::tensor_store::{
    self, compare_structure, epoch_file_name, CheckpointMeta, Tensor, TensorMap,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Last k checkpoints up to the endpoint.
    LastK,
    /// k lowest validation losses.
    KBestValLoss,
    /// k lowest tradeoff scores (SUTL + validation loss).
    KBestApproBiVT,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::LastK, Scheme::KBestValLoss, Scheme::KBestApproBiVT];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::LastK => "lk",
            Scheme::KBestValLoss => "kbvl",
            Scheme::KBestApproBiVT => "kbabvt",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lk" => Ok(Scheme::LastK),
            "kbvl" => Ok(Scheme::KBestValLoss),
            "kbabvt" => Ok(Scheme::KBestApproBiVT),
            _ => Err(Error::UnknownScheme(s.to_owned())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AveragingPlan {
    pub scheme: Scheme,
    pub k: usize,
    pub endpoint: Option<u64>,
    /// Selected epochs, ascending.
    pub resolved_epochs: Vec<u64>,
}

impl AveragingPlan {
    pub fn output_file_name(&self) -> String {
        format!("avg_{}_k{}.ckpt", self.scheme, self.k)
    }
}

/// Pick the epochs to average. With an endpoint, only epochs up to and
/// including it are eligible, for every scheme.
pub fn resolve_plan(
    ledger: &Ledger,
    scheme: Scheme,
    k: usize,
    endpoint: Option<u64>,
) -> Result<AveragingPlan> {
    let eligible = match endpoint {
        Some(e) => {
            if ledger.get(e).is_none() {
                return Err(Error::UnknownEndpoint(e));
            }
            ledger.truncated(e)
        }
        None => ledger.clone(),
    };
    let resolved_epochs = match scheme {
        Scheme::LastK => {
            if k == 0 {
                return Err(Error::ZeroK);
            }
            let n = eligible.len();
            if k > n {
                return Err(Error::KTooLarge { k, available: n });
            }
            eligible.records()[n - k..].iter().map(|r| r.epoch).collect()
        }
        Scheme::KBestValLoss => eligible.k_best(Metric::ValLoss, k)?,
        Scheme::KBestApproBiVT => eligible.k_best(Metric::ApproBiVT, k)?,
    };
    Ok(AveragingPlan {
        scheme,
        k,
        endpoint,
        resolved_epochs,
    })
}

/// Running f64 sum over structurally identical maps; holds one accumulator
/// per parameter and nothing else.
#[derive(Debug)]
pub struct Accumulator {
    reference: TensorMap,
    sums: Vec<Vec<f64>>,
    count: usize,
}

impl Accumulator {
    pub fn new(first: &TensorMap) -> Self {
        let sums = first
            .iter()
            .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect())
            .collect();
        Self {
            reference: first.clone(),
            sums,
            count: 1,
        }
    }

    pub fn add(&mut self, tm: &TensorMap) -> Result<()> {
        let report = compare_structure(&self.reference, tm);
        if !report.is_ok() {
            return Err(Error::IncompatibleCheckpoints(report));
        }
        for (sum, (_, t)) in self.sums.iter_mut().zip(tm.iter()) {
            for (s, &v) in sum.iter_mut().zip(t.data()) {
                *s += v as f64;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Divide once in f64 and round once to f32.
    pub fn finish(self) -> TensorMap {
        let n = self.count as f64;
        let mut out = TensorMap::new();
        for ((name, t), sum) in self.reference.iter().zip(self.sums) {
            let data = sum.into_iter().map(|s| (s / n) as f32).collect();
            let tensor = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
            out.insert(name, tensor).expect("names unique");
        }
        out
    }
}

/// Element-wise arithmetic mean, accumulated in slice order.
pub fn average(tms: &[TensorMap]) -> Result<TensorMap> {
    let (first, rest) = tms.split_first().ok_or(Error::EmptyList)?;
    let mut acc = Accumulator::new(first);
    for tm in rest {
        acc.add(tm)?;
    }
    Ok(acc.finish())
}

/// Mean of epoch-tagged checkpoints, accumulated in ascending epoch order so
/// the result does not depend on the order of `items`.
pub fn average_by_epoch(mut items: Vec<(u64, TensorMap)>) -> Result<TensorMap> {
    items.sort_by_key(|(e, _)| *e);
    let maps: Vec<TensorMap> = items.into_iter().map(|(_, tm)| tm).collect();
    average(&maps)
}

/// Stream the given epochs' checkpoints from `run_dir` into one average,
/// keeping a single checkpoint in memory at a time.
pub fn average_run_epochs(run_dir: &Path, epochs: &[u64]) -> Result<TensorMap> {
    let mut sorted = epochs.to_vec();
    sorted.sort_unstable();
    if sorted.is_empty() {
        return Err(Error::EmptyList);
    }
    if let Some(&missing) = sorted
        .iter()
        .find(|&&e| !run_dir.join(epoch_file_name(e)).is_file())
    {
        return Err(Error::MissingCheckpoint(missing));
    }
    let load = |e: u64| tensor_store::read_checkpoint(run_dir.join(epoch_file_name(e)));
    let mut acc = Accumulator::new(&load(sorted[0])?);
    for &e in &sorted[1..] {
        acc.add(&load(e)?)?;
    }
    Ok(acc.finish())
}

/// Average the plan's checkpoints and write `avg_<scheme>_k<k>.ckpt` into `run_dir`.
pub fn run_averaging(run_dir: impl AsRef<Path>, plan: &AveragingPlan) -> Result<CheckpointMeta> {
    let run_dir = run_dir.as_ref();
    let avg = average_run_epochs(run_dir, &plan.resolved_epochs)?;
    tensor_store::write_checkpoint(&avg, run_dir.join(plan.output_file_name()))
}
