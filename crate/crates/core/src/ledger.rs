//! Per-epoch loss ledger and the tradeoff score.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const CSV_HEADER: [&str; 4] = ["epoch", "train_loss", "sutl", "val_loss"];

/// Losses recorded for one epoch's checkpoint, all mean cross-entropy in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch id.
    pub epoch: u64,
    /// Running mean of the augmented mini-batch losses during the epoch.
    pub train_loss: f64,
    /// Sampled unaugmented training loss: clean evaluation on the fixed training subset.
    pub sutl: f64,
    pub val_loss: f64,
}

impl EpochRecord {
    pub fn new(epoch: u64, train_loss: f64, sutl: f64, val_loss: f64) -> Self {
        Self {
            epoch,
            train_loss,
            sutl,
            val_loss,
        }
    }

    pub fn approbivt(&self) -> f64 {
        approbivt_score(self)
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::ValLoss => self.val_loss,
            Metric::ApproBiVT => self.approbivt(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("train_loss", self.train_loss),
            ("sutl", self.sutl),
            ("val_loss", self.val_loss),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    field,
                });
            }
            if v < 0.0 {
                return Err(Error::NegativeLoss {
                    epoch: self.epoch,
                    field,
                });
            }
        }
        Ok(())
    }
}

/// Approximated bias-variance tradeoff: SUTL (bias proxy) plus validation loss
/// (variance proxy).
pub fn approbivt_score(r: &EpochRecord) -> f64 {
    r.sutl + r.val_loss
}

/// Which column drives a selection or a stopping decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    ValLoss,
    ApproBiVT,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" | "val_loss" => Ok(Metric::ValLoss),
            "approbivt" => Ok(Metric::ApproBiVT),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ledger {
    run_id: String,
    records: Vec<EpochRecord>,
}

impl Ledger {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            records: Vec::new(),
        }
    }

    pub fn from_records(
        run_id: impl Into<String>,
        records: impl IntoIterator<Item = EpochRecord>,
    ) -> Result<Self> {
        let mut ledger = Self::new(run_id);
        for r in records {
            ledger.append(r)?;
        }
        Ok(ledger)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_epoch(&self) -> Option<u64> {
        self.records.last().map(|r| r.epoch)
    }

    pub fn epochs(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.epoch)
    }

    pub fn get(&self, epoch: u64) -> Option<&EpochRecord> {
        self.records
            .binary_search_by_key(&epoch, |r| r.epoch)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Metric column in epoch order.
    pub fn series(&self, metric: Metric) -> Vec<f64> {
        self.records.iter().map(|r| r.metric(metric)).collect()
    }

    pub fn append(&mut self, r: EpochRecord) -> Result<()> {
        let last = self.last_epoch().unwrap_or(0);
        if r.epoch <= last {
            return Err(Error::OutOfOrderEpoch {
                epoch: r.epoch,
                last,
            });
        }
        r.validate()?;
        self.records.push(r);
        Ok(())
    }

    /// Ledger restricted to epochs `<= endpoint`.
    pub fn truncated(&self, endpoint: u64) -> Ledger {
        Ledger {
            run_id: self.run_id.clone(),
            records: self
                .records
                .iter()
                .take_while(|r| r.epoch <= endpoint)
                .copied()
                .collect(),
        }
    }

    /// The `k` epochs with the smallest `metric`, returned in ascending epoch order.
    /// Equal metric values prefer the earlier epoch.
    pub fn k_best(&self, metric: Metric, k: usize) -> Result<Vec<u64>> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        if k > self.records.len() {
            return Err(Error::KTooLarge {
                k,
                available: self.records.len(),
            });
        }
        let mut ranked: Vec<(f64, u64)> = self
            .records
            .iter()
            .map(|r| (r.metric(metric), r.epoch))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut picked: Vec<u64> = ranked[..k].iter().map(|&(_, e)| e).collect();
        picked.sort_unstable();
        Ok(picked)
    }

    /// Epoch with the smallest `metric`, earliest on ties.
    pub fn argmin(&self, metric: Metric) -> Option<u64> {
        self.records
            .iter()
            .min_by(|a, b| {
                a.metric(metric)
                    .total_cmp(&b.metric(metric))
                    .then(a.epoch.cmp(&b.epoch))
            })
            .map(|r| r.epoch)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                format_loss(r.train_loss),
                format_loss(r.sutl),
                format_loss(r.val_loss),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn from_csv_str(run_id: impl Into<String>, text: &str) -> Result<Ledger> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = rdr.records();
        let header = rows
            .next()
            .ok_or_else(|| malformed(1, "missing header"))?
            .map_err(|e| malformed(1, e))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(malformed(1, format!("unexpected header {header:?}")));
        }

        let mut ledger = Ledger::new(run_id);
        for (i, row) in rows.enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| malformed(line, e))?;
            if row.len() != CSV_HEADER.len() {
                return Err(malformed(
                    line,
                    format!("expected {} columns, got {}", CSV_HEADER.len(), row.len()),
                ));
            }
            let epoch: u64 = row[0]
                .parse()
                .map_err(|e| malformed(line, format!("epoch `{}`: {e}", &row[0])))?;
            let num = |j: usize| -> Result<f64> {
                row[j]
                    .parse()
                    .map_err(|e| malformed(line, format!("{} `{}`: {e}", CSV_HEADER[j], &row[j])))
            };
            ledger.append(EpochRecord::new(epoch, num(1)?, num(2)?, num(3)?))?;
        }
        Ok(ledger)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Load a ledger; the run id is the name of the directory holding the file.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Ledger> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let run_id = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .unwrap_or("")
            .to_owned();
        Self::from_csv_str(run_id, &text)
    }
}

fn malformed(line: usize, detail: impl ToString) -> Error {
    Error::MalformedRow {
        line,
        detail: detail.to_string(),
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_loss(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn val_ledger(vals: &[f64]) -> Ledger {
        Ledger::from_records(
            "t",
            vals.iter()
                .enumerate()
                .map(|(i, &v)| EpochRecord::new(i as u64 + 1, 1.0, 0.5, v)),
        )
        .unwrap()
    }

    #[test]
    fn score_is_sum() {
        assert_eq!(approbivt_score(&EpochRecord::new(1, 9.0, 1.2, 2.3)), 1.2 + 2.3);
        assert!((approbivt_score(&EpochRecord::new(1, 9.0, 1.2, 2.3)) - 3.5).abs() < 1e-15);
        assert_eq!(approbivt_score(&EpochRecord::new(1, 0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn append_rules() {
        let mut l = Ledger::new("t");
        l.append(EpochRecord::new(1, 1.0, 1.0, 1.0)).unwrap();
        l.append(EpochRecord::new(2, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(l.len(), 2);
        assert!(matches!(
            l.append(EpochRecord::new(2, 1.0, 1.0, 1.0)),
            Err(Error::OutOfOrderEpoch { epoch: 2, last: 2 })
        ));
        assert!(matches!(
            l.append(EpochRecord::new(3, 1.0, 1.0, f64::INFINITY)),
            Err(Error::NonFiniteLoss { field: "val_loss", .. })
        ));
        assert!(matches!(
            l.append(EpochRecord::new(3, 1.0, -0.1, 1.0)),
            Err(Error::NegativeLoss { field: "sutl", .. })
        ));
        assert!(matches!(
            Ledger::new("t").append(EpochRecord::new(0, 1.0, 1.0, 1.0)),
            Err(Error::OutOfOrderEpoch { .. })
        ));
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn k_best_by_val_loss() {
        let l = val_ledger(&[0.9, 0.5, 0.7]);
        assert_eq!(l.k_best(Metric::ValLoss, 2).unwrap(), vec![2, 3]);
        assert_eq!(l.k_best(Metric::ValLoss, 3).unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            l.k_best(Metric::ValLoss, 4),
            Err(Error::KTooLarge { k: 4, available: 3 })
        ));
        assert!(matches!(l.k_best(Metric::ValLoss, 0), Err(Error::ZeroK)));
    }

    #[test]
    fn k_best_ties_prefer_earlier_epochs() {
        let l = val_ledger(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(l.k_best(Metric::ValLoss, 2).unwrap(), vec![1, 2]);
        assert_eq!(l.argmin(Metric::ApproBiVT), Some(1));
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let l = Ledger::from_records(
            "run",
            [
                EpochRecord::new(1, 0.1 + 0.2, 1.0 / 3.0, 2.0f64.sqrt()),
                EpochRecord::new(4, 1e-300, 0.0, 123456.789),
            ],
        )
        .unwrap();
        let text = l.to_csv_string();
        assert!(text.starts_with("epoch,train_loss,sutl,val_loss\n"));
        assert!(!text.contains('\r'));
        assert_eq!(Ledger::from_csv_str("run", &text).unwrap(), l);

        let empty = Ledger::new("e").to_csv_string();
        assert_eq!(empty, "epoch,train_loss,sutl,val_loss\n");
        assert!(Ledger::from_csv_str("e", &empty).unwrap().is_empty());

        let bad = "epoch,train_loss,sutl,val_loss\n1,0.5,0.5\n";
        assert!(matches!(
            Ledger::from_csv_str("x", bad),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        let bad = "epoch,train_loss,sutl,val_loss\n1,0.5,abc,0.5\n";
        assert!(matches!(
            Ledger::from_csv_str("x", bad),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            Ledger::from_csv_str("x", "a,b\n"),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn truncation() {
        let l = val_ledger(&[3.0, 2.0, 1.0, 0.5]);
        assert_eq!(l.truncated(2).epochs().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(l.get(3).unwrap().val_loss, 1.0);
        assert!(l.get(9).is_none());
    }
}
