//! Supervised optimization: Adam, gradient clipping, the dropout stack, and
//! the training loop.

pub mod adam;
pub mod dropout;
pub mod loop_;

pub use adam::{adam_update, clip_global_norm, AdamConfig, AdamState};
pub use dropout::{
    apply_dropout, standard_dropout, variational_sequence_dropout,
    variational_vocabulary_dropout, zoneout_sequence, DropoutKind, LstmDropoutRates,
    LstmRegularizer, RegularizationConfig,
};
pub use loop_::{
    expand_sweep, predict_split, selection_metric, selection_metric_name, train_loop,
    write_trace_csv, EvalSettings, SweepSpec, TraceRow, TrainConfig, TrainOutcome,
};
