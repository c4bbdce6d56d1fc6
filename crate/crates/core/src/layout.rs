//! Run directory consistency: ledger rows, checkpoint files and recorded digests.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::ledger::Ledger;
use crate::tensor_store::{self, fnv1a64, parse_epoch_file_name};
use crate::trainer::{LEDGER_FILE, MANIFEST_FILE};
use crate::{Error, Result};

fn digest_file(path: &Path) -> Result<u64> {
    fs::read(path)
        .map(|b| fnv1a64(&b))
        .map_err(|e| Error::io(path, e))
}

fn checkpoint_epochs(run_dir: &Path) -> Result<BTreeSet<u64>> {
    let mut epochs = BTreeSet::new();
    for entry in fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))? {
        let entry = entry.map_err(|e| Error::io(run_dir, e))?;
        if let Some(e) = entry.file_name().to_str().and_then(parse_epoch_file_name) {
            epochs.insert(e);
        }
    }
    Ok(epochs)
}

/// Record the FNV-1a digest of the ledger and every epoch checkpoint.
pub fn write_manifest(run_dir: impl AsRef<Path>) -> Result<()> {
    let run_dir = run_dir.as_ref();
    let mut out = String::new();
    let mut names = vec![LEDGER_FILE.to_owned()];
    names.extend(
        checkpoint_epochs(run_dir)?
            .into_iter()
            .map(tensor_store::epoch_file_name),
    );
    for name in names {
        let digest = digest_file(&run_dir.join(&name))?;
        writeln!(out, "{digest:016x}  {name}").unwrap();
    }
    let path = run_dir.join(MANIFEST_FILE);
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

/// Everything wrong with a run directory; empty when consistent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Check that ledger epochs and checkpoint files match one-to-one, that every
/// checkpoint decodes, and that files still hash to their manifest digests.
pub fn verify_run(run_dir: impl AsRef<Path>) -> Result<VerifyReport> {
    let run_dir = run_dir.as_ref();
    let mut problems = Vec::new();

    let ledger = match Ledger::load_csv(run_dir.join(LEDGER_FILE)) {
        Ok(l) => Some(l),
        Err(e) => {
            problems.push(format!("{LEDGER_FILE}: {e}"));
            None
        }
    };
    let on_disk = checkpoint_epochs(run_dir)?;
    if let Some(ledger) = &ledger {
        let in_ledger: BTreeSet<u64> = ledger.epochs().collect();
        for e in in_ledger.difference(&on_disk) {
            problems.push(format!("epoch {e} is in the ledger but its checkpoint is missing"));
        }
        for e in on_disk.difference(&in_ledger) {
            problems.push(format!("checkpoint for epoch {e} has no ledger row"));
        }
    }
    for &e in &on_disk {
        let path = run_dir.join(tensor_store::epoch_file_name(e));
        if let Err(err) = tensor_store::read_checkpoint(&path) {
            problems.push(format!("epoch {e}: {err}"));
        }
    }

    let manifest_path = run_dir.join(MANIFEST_FILE);
    match fs::read_to_string(&manifest_path) {
        Err(e) => problems.push(format!("{MANIFEST_FILE}: {e}")),
        Ok(text) => {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let Some((hex, name)) = line.split_once("  ") else {
                    problems.push(format!("{MANIFEST_FILE}: malformed line `{line}`"));
                    continue;
                };
                let path = run_dir.join(name);
                if !path.is_file() {
                    // missing checkpoints are reported above
                    if name == LEDGER_FILE {
                        problems.push(format!("{name} is missing"));
                    }
                    continue;
                }
                let actual = format!("{:016x}", digest_file(&path)?);
                if actual != hex {
                    problems.push(format!("{name} was modified (digest {actual}, recorded {hex})"));
                }
            }
        }
    }
    Ok(VerifyReport { problems })
}
