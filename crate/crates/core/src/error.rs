use std::path::PathBuf;

use crate::tensor_store::CompatibilityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // tensor store
    #[error("tensor `{name}` contains a non-finite value at element {index}")]
    RejectedValue { name: String, index: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("file does not start with the CKPT1 magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("file truncated: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: usize, found: usize },
    #[error("index disagrees with payload: {0}")]
    IndexMismatch(String),
    #[error("checkpoints are not compatible: {0}")]
    IncompatibleCheckpoints(CompatibilityReport),
    #[error("nothing to average")]
    EmptyList,
    #[error("checkpoint for epoch {0} is missing")]
    MissingCheckpoint(u64),

    // ledger
    #[error("epoch {epoch} does not follow epoch {last}")]
    OutOfOrderEpoch { epoch: u64, last: u64 },
    #[error("epoch {epoch}: {field} is not finite")]
    NonFiniteLoss { epoch: u64, field: &'static str },
    #[error("epoch {epoch}: {field} is negative")]
    NegativeLoss { epoch: u64, field: &'static str },
    #[error("k = {k} exceeds the {available} eligible epochs")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("line {line}: {detail}")]
    MalformedRow { line: usize, detail: String },
    #[error("ledger is empty")]
    EmptyLedger,

    // stopping
    #[error("patience must be positive")]
    ZeroPatience,
    #[error("observed loss {0} is not finite")]
    NonFiniteObservation(f64),
    #[error("monitor already stopped at index {0}")]
    ObserveAfterStop(usize),

    // averaging
    #[error("endpoint epoch {0} is not in the ledger")]
    UnknownEndpoint(u64),
    #[error("run directory is inconsistent: {0}")]
    InconsistentRun(String),
    #[error("unknown averaging scheme `{0}`")]
    UnknownScheme(String),

    // trainer
    #[error("requested {requested} samples but only {available} exist")]
    SizeTooLarge { requested: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training diverged at epoch {0}")]
    DivergedTraining(u64),
    #[error("{0}")]
    InvalidConfig(String),

    // bias-variance oracle
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("ensemble needs at least 2 replicas, got {0}")]
    TooFewReplicas(usize),
    #[error("not a distribution: {0}")]
    NonDistribution(String),
    #[error("epochs are mismatched: {0}")]
    MismatchedEpochs(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable snake_case name of the variant, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::RejectedValue { .. } => "rejected_value",
            Error::InvalidTensor(_) => "invalid_tensor",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::TruncatedFile { .. } => "truncated_file",
            Error::IndexMismatch(_) => "index_mismatch",
            Error::IncompatibleCheckpoints(_) => "incompatible_checkpoints",
            Error::EmptyList => "empty_list",
            Error::MissingCheckpoint(_) => "missing_checkpoint",
            Error::OutOfOrderEpoch { .. } => "out_of_order_epoch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NegativeLoss { .. } => "negative_loss",
            Error::KTooLarge { .. } => "k_too_large",
            Error::ZeroK => "zero_k",
            Error::MalformedRow { .. } => "malformed_row",
            Error::EmptyLedger => "empty_ledger",
            Error::ZeroPatience => "zero_patience",
            Error::NonFiniteObservation(_) => "non_finite_loss",
            Error::ObserveAfterStop(_) => "observe_after_stop",
            Error::UnknownEndpoint(_) => "unknown_endpoint",
            Error::InconsistentRun(_) => "inconsistent_run",
            Error::UnknownScheme(_) => "unknown_scheme",
            Error::SizeTooLarge { .. } => "size_too_large",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::DivergedTraining(_) => "diverged_training",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptyEnsemble => "empty_ensemble",
            Error::TooFewReplicas(_) => "too_few_replicas",
            Error::NonDistribution(_) => "non_distribution",
            Error::MismatchedEpochs(_) => "mismatched_epochs",
        }
    }
}
