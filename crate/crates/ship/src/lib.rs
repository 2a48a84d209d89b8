//! Sequential, hierarchical, pretrained (SHiP) recurrent models over
//! clinical-style patient records, together with bag-of-words baselines,
//! audited evaluation metrics, and integrated-gradients attribution.
//!
//! The crate is organized around the pipeline:
//!
//! 1. [`records`] — record schema, JSONL ingestion, standardization,
//!    patient-level splits, task examples, and a synthetic cohort generator
//!    with planted context-dependent signals.
//! 2. [`bagging`] — fixed-duration timestep bags with history collapse, and
//!    the bag-of-words note featurization.
//! 3. [`notes_encoder`] — token truncation, the word-level LSTM, and
//!    dot-product attention producing one vector per note.
//! 4. [`record_model`] — the record-level LSTM, task heads, and every model
//!    variant (no-notes, BOW, hierarchical, notes-only, all-features).
//! 5. [`pretrain`] — next-word (and previous-word) language-model
//!    pretraining of the notes encoder.
//! 6. [`train`] — Adam, gradient clipping, the four dropout flavors, and the
//!    supervised loop with early stopping.
//! 7. [`evaluate`] — AUROC, average precision, prevalence-weighted AUROC,
//!    top-k recall, and Welch's t-test.
//! 8. [`attribution`] — path-integrated gradients over note tokens with
//!    completeness accounting and heatmap rendering.
//!
//! Everything differentiable runs on the [`compute`] tape, whose gradients
//! are verified against finite differences.

pub mod attribution;
pub mod bagging;
pub mod lstm;
pub mod pretrain;
pub mod record_model;
pub mod notes_encoder;
pub mod compute;
pub mod evaluate;
pub mod hash;
pub mod records;
pub mod train;

use thiserror::Error;

/// Crate-wide error for the model-level pipeline. The leaf modules keep
/// their own error types; this one carries them across module seams.
#[derive(Debug, Error)]
pub enum ShipError {
    #[error("config error: {0}")]
    Config(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Compute(#[from] compute::ComputeError),
    #[error(transparent)]
    Record(#[from] records::RecordError),
    #[error(transparent)]
    Evaluate(#[from] evaluate::EvaluateError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
