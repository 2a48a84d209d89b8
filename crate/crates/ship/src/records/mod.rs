//! Record schema, ingestion, standardization, splits, task construction,
//! and the synthetic cohort generator.

pub mod parse;
pub mod schema;
pub mod split;
pub mod standardize;
pub mod synth;
pub mod tasks;
pub mod tokenize;

pub use parse::{parse_records, write_records, write_records_file};
pub use schema::{Admission, AdmissionLabels, Event, EventPayload, PatientRecord};
pub use split::{split_cohort, CohortSplit, Split};
pub use standardize::{StandardizationStats, Z_CAP};
pub use synth::{
    class_term, generate_context_probes, generate_synthetic_cohort, GeneratorConfig,
    DECOY_PHRASE, TRIGGER_PHRASE,
};
pub use tasks::{
    build_task_examples, BuildOptions, BuildStats, LabelSpace, Task, TaskExample, TaskLabel,
    MORTALITY_HORIZON_HOURS,
};
pub use tokenize::{tokenize, BigramVocabulary, Vocabulary, OOV_ID};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error for patient {patient_id}: {message}")]
    Validation {
        patient_id: String,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
