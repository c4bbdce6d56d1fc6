//! Plateau-or-rise early stopping.
//!
//! Training stops at the first observation index `E` where the last `S`
//! epoch-to-epoch steps were all non-decreasing (`L[j] >= L[j-1]`). Plateaus
//! count as increases.

use crate::ledger::{Ledger, Metric};
use crate::{Error, Result};

pub const DEFAULT_PATIENCE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// 0-based index of the observation that completed the run.
    Stop(usize),
}

/// Streaming form: feed one loss per epoch.
#[derive(Clone, Debug)]
pub struct StoppingMonitor {
    patience: usize,
    history: Vec<f64>,
    run_length: usize,
    stopped_at: Option<usize>,
}

impl StoppingMonitor {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::ZeroPatience);
        }
        Ok(Self {
            patience,
            history: Vec::new(),
            run_length: 0,
            stopped_at: None,
        })
    }

    pub fn patience(&self) -> usize {
        self.patience
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Consecutive non-decreasing steps ending at the latest observation.
    pub fn run_length(&self) -> usize {
        self.run_length
    }

    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }

    pub fn observe(&mut self, loss: f64) -> Result<Decision> {
        if let Some(e) = self.stopped_at {
            return Err(Error::ObserveAfterStop(e));
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteObservation(loss));
        }
        match self.history.last() {
            Some(&prev) if loss >= prev => self.run_length += 1,
            _ => self.run_length = 0,
        }
        self.history.push(loss);
        if self.run_length == self.patience {
            let e = self.history.len() - 1;
            self.stopped_at = Some(e);
            Ok(Decision::Stop(e))
        } else {
            Ok(Decision::Continue)
        }
    }
}

/// Batch form: smallest `i >= patience` such that every step `j` in
/// `i-patience+1 ..= i` satisfies `losses[j] >= losses[j-1]`.
pub fn find_stop_point(losses: &[f64], patience: usize) -> Option<usize> {
    if patience == 0 {
        return None;
    }
    (patience..losses.len())
        .find(|&i| ((i + 1 - patience)..=i).all(|j| losses[j] >= losses[j - 1]))
}

/// Trailing run of non-decreasing steps at the end of `losses`.
pub fn trailing_run_length(losses: &[f64]) -> usize {
    losses
        .windows(2)
        .rev()
        .take_while(|w| w[1] >= w[0])
        .count()
}

/// Stop epoch (1-based ledger id) for a ledger column, if the rule fires.
pub fn ledger_stop_epoch(ledger: &Ledger, metric: Metric, patience: usize) -> Option<u64> {
    find_stop_point(&ledger.series(metric), patience).map(|i| ledger.records()[i].epoch)
}
