//! Plot-ready CSV: loss-curve overlays and endpoint/k/scheme ablation grids.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::averaging::{average_run_epochs, resolve_plan, Scheme};
use crate::ledger::{format_loss, Ledger, Metric};
use crate::stopping::ledger_stop_epoch;
use crate::trainer::{evaluate, make_test_set, Dataset, Mlp, TrainConfig, CONFIG_FILE, LEDGER_FILE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: u64,
    pub train_loss: f64,
    pub sutl: f64,
    pub val_loss: f64,
    pub approbivt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurveSummary {
    pub val_loss_argmin: u64,
    pub approbivt_argmin: u64,
    pub val_loss_stop: Option<u64>,
    pub approbivt_stop: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub rows: Vec<CurveRow>,
    pub summary: CurveSummary,
}

pub fn curves(ledger: &Ledger, patience: usize) -> Result<Curves> {
    if ledger.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let rows = ledger
        .records()
        .iter()
        .map(|r| CurveRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            sutl: r.sutl,
            val_loss: r.val_loss,
            approbivt: r.approbivt(),
        })
        .collect();
    let summary = CurveSummary {
        val_loss_argmin: ledger.argmin(Metric::ValLoss).expect("non-empty"),
        approbivt_argmin: ledger.argmin(Metric::ApproBiVT).expect("non-empty"),
        val_loss_stop: ledger_stop_epoch(ledger, Metric::ValLoss, patience),
        approbivt_stop: ledger_stop_epoch(ledger, Metric::ApproBiVT, patience),
    };
    Ok(Curves { rows, summary })
}

fn opt_epoch(e: Option<u64>) -> String {
    e.map_or_else(|| "none".to_owned(), |e| e.to_string())
}

impl Curves {
    /// Data rows, then `#`-prefixed summary lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,sutl,val_loss,approbivt\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                format_loss(r.train_loss),
                format_loss(r.sutl),
                format_loss(r.val_loss),
                format_loss(r.approbivt)
            )
            .unwrap();
        }
        let s = &self.summary;
        writeln!(out, "# val_loss_argmin_epoch={}", s.val_loss_argmin).unwrap();
        writeln!(out, "# approbivt_argmin_epoch={}", s.approbivt_argmin).unwrap();
        writeln!(
            out,
            "# val_argmin_before_approbivt_argmin={}",
            s.val_loss_argmin < s.approbivt_argmin
        )
        .unwrap();
        writeln!(out, "# val_loss_stop_epoch={}", opt_epoch(s.val_loss_stop)).unwrap();
        writeln!(out, "# approbivt_stop_epoch={}", opt_epoch(s.approbivt_stop)).unwrap();
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub endpoint: u64,
    pub scheme: Scheme,
    pub k: usize,
    pub epochs: Vec<u64>,
    pub loss: f64,
    pub accuracy: f64,
}

/// Ordered by endpoint, scheme name, k; each combination appears once.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn get(&self, endpoint: u64, scheme: Scheme, k: usize) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.endpoint == endpoint && r.scheme == scheme && r.k == k)
    }

    /// Row with the lowest held-out loss for a scheme at an endpoint.
    pub fn best(&self, endpoint: u64, scheme: Scheme) -> Option<&AblationRow> {
        self.rows
            .iter()
            .filter(|r| r.endpoint == endpoint && r.scheme == scheme)
            .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.k.cmp(&b.k)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("endpoint,scheme,k,loss,accuracy\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.endpoint,
                r.scheme,
                r.k,
                format_loss(r.loss),
                format_loss(r.accuracy)
            )
            .unwrap();
        }
        out
    }
}

/// For each requested (endpoint, k, scheme): resolve a plan over epochs up to
/// the endpoint, average those checkpoints, and evaluate on `eval_set`.
pub fn ablation(
    run_dir: impl AsRef<Path>,
    endpoints: &[u64],
    ks: &[usize],
    schemes: &[Scheme],
    eval_set: &Dataset,
) -> Result<AblationGrid> {
    let run_dir = run_dir.as_ref();
    let ledger = Ledger::load_csv(run_dir.join(LEDGER_FILE))?;
    let combos: BTreeSet<(u64, &'static str, usize)> = endpoints
        .iter()
        .flat_map(|&e| {
            schemes
                .iter()
                .flat_map(move |&s| ks.iter().map(move |&k| (e, s.as_str(), k)))
        })
        .collect();

    let mut rows = Vec::with_capacity(combos.len());
    for (endpoint, scheme, k) in combos {
        let scheme: Scheme = scheme.parse()?;
        let plan = resolve_plan(&ledger, scheme, k, Some(endpoint))?;
        let avg = Mlp::from_tensor_map(&average_run_epochs(run_dir, &plan.resolved_epochs)?)?;
        let eval = evaluate(&avg, eval_set)?;
        rows.push(AblationRow {
            endpoint,
            scheme,
            k,
            epochs: plan.resolved_epochs,
            loss: eval.loss,
            accuracy: eval.accuracy,
        });
    }
    Ok(AblationGrid { rows })
}

/// [`ablation`] on the held-out test split regenerated from the run's
/// `config.resolved`.
pub fn ablation_for_run(
    run_dir: impl AsRef<Path>,
    endpoints: &[u64],
    ks: &[usize],
    schemes: &[Scheme],
) -> Result<AblationGrid> {
    let run_dir = run_dir.as_ref();
    let config = TrainConfig::load(run_dir.join(CONFIG_FILE))?;
    ablation(run_dir, endpoints, ks, schemes, &make_test_set(&config))
}

/// Pearson correlation coefficient; `None` when either series is constant or
/// lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Trailing moving average; the first `window - 1` entries average what is available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::EpochRecord;

    #[test]
    fn single_row_curves() {
        let l = Ledger::from_records("r", [EpochRecord::new(1, 0.9, 0.4, 0.6)]).unwrap();
        let c = curves(&l, 5).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].approbivt, 0.4 + 0.6);
        let text = c.to_csv();
        assert!(text.starts_with("epoch,train_loss,sutl,val_loss,approbivt\n1,"));
        assert!(text.contains("# approbivt_stop_epoch=none\n"));
        assert!(matches!(curves(&Ledger::new("e"), 5), Err(Error::EmptyLedger)));
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0; 4]), None);
        assert_eq!(pearson(&a, &[1.0; 3]), None);
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(moving_average(&[1.0, 2.0], 1), vec![1.0, 2.0]);
    }
}
