//! Path-integrated gradients over note-token embeddings.
//!
//! Attribution for token `k` integrates the gradient of the target logit
//! along the straight path from a zero-vector baseline to the token's actual
//! embedding, using the midpoint rule with `m` steps:
//! `IG_k = (x_k - x0_k) . mean_j grad_k((j - 1/2) / m)`, summed over
//! embedding coordinates into one signed scalar per token. The target is the
//! pre-activation logit of the predicted (or chosen) output, so saturated
//! sigmoids cannot flatten the gradients. Completeness — the attributions
//! summing to `F(x) - F(baseline)` — is measured and reported, never
//! assumed.

pub mod render;

pub use render::render_heatmap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compute::{Graph, NodeId, NumArray, ParamStore, Real};
use crate::record_model::{
    build_forward, predict_topk, Mode, ModelSpec, NotesInput, NotesMode,
};
use crate::records::schema::{EventPayload, PatientRecord};
use crate::records::tasks::TaskExample;
use crate::ShipError;

pub const DEFAULT_PATH_STEPS: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenAttribution {
    pub token: String,
    /// Chronological note index within the example.
    pub note_id: usize,
    /// Position in the truncated token stream.
    pub position: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttributionTarget {
    pub task: String,
    /// Index of the logit the attribution explains.
    pub output_index: usize,
    /// Raw label id (class) behind the index, when meaningful.
    pub label: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttributionReport {
    pub example_id: String,
    pub target: AttributionTarget,
    /// Path steps `m`.
    pub steps: usize,
    pub tokens: Vec<TokenAttribution>,
    /// `F(x) - F(baseline)` at the target logit.
    pub delta: f64,
    /// `|sum of attributions - delta|`.
    pub completeness_residual: f64,
}

impl AttributionReport {
    pub fn sum_scores(&self) -> f64 {
        self.tokens.iter().map(|t| t.score).sum()
    }

    /// Relative residual, guarded for tiny deltas.
    pub fn relative_residual(&self) -> f64 {
        self.completeness_residual / self.delta.abs().max(1e-12)
    }
}

/// Embedding table the token stream reads from, per variant.
fn token_table_name(spec: &ModelSpec) -> Result<&'static str, ShipError> {
    match spec.variant.notes_mode {
        NotesMode::Hierarchical => Ok("notes.embed"),
        NotesMode::BowUnigram | NotesMode::BowBigram => Ok("bow.embed"),
        NotesMode::None => Err(ShipError::Config(
            "attribution needs a variant with a notes path".to_string(),
        )),
    }
}

fn token_embed_dim(spec: &ModelSpec) -> usize {
    match spec.variant.notes_mode {
        NotesMode::Hierarchical => spec.config.notes.embed_dim,
        _ => spec.config.bow_embed_dim,
    }
}

/// Evaluate the target logit with the given per-token embedding values,
/// returning the logit value and (optionally) per-token gradients.
fn target_logit_pass<R: Real>(
    store: &ParamStore<R>,
    spec: &ModelSpec,
    example: &TaskExample,
    vectors: &[Vec<f64>],
    target_index: usize,
    want_grads: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>), ShipError> {
    let mut g = Graph::<R>::new();
    let dim = token_embed_dim(spec);
    let given: Vec<NodeId> = vectors
        .iter()
        .map(|v| {
            debug_assert_eq!(v.len(), dim);
            g.input(NumArray::from_raw(
                dim,
                1,
                v.iter().map(|&x| R::from_f64(x)).collect(),
            ))
        })
        .collect();
    let given_ids = given.clone();
    let out = build_forward(
        &mut g,
        store,
        spec,
        example,
        &Mode::Eval,
        NotesInput::Given(given),
        None,
    )?;
    let n_outputs = g.value(out.logits).rows();
    if target_index >= n_outputs {
        return Err(ShipError::Config(format!(
            "target output {target_index} out of range for {n_outputs} outputs"
        )));
    }
    let picked = g.lookup(out.logits, &[target_index])?;
    let value = g.value(picked).scalar().as_f64();
    if !want_grads {
        return Ok((value, None));
    }
    g.backward(picked)?;
    let grads = given_ids
        .iter()
        .map(|&id| match g.grad(id) {
            Some(arr) => arr.data().iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; dim],
        })
        .collect();
    Ok((value, Some(grads)))
}

/// Pick the attribution target: the caller's choice, or the predicted
/// (highest-probability) output.
fn resolve_target<R: Real>(
    store: &ParamStore<R>,
    spec: &ModelSpec,
    example: &TaskExample,
    chosen: Option<usize>,
) -> Result<AttributionTarget, ShipError> {
    let output_index = match chosen {
        Some(i) => i,
        None => {
            let probs = crate::record_model::predict(store, spec, example)?;
            predict_topk(&probs, 1)[0]
        }
    };
    let label = match spec.task {
        crate::records::tasks::Task::Ccs => Some(spec.labels.ccs_class(output_index)),
        _ => None,
    };
    Ok(AttributionTarget {
        task: spec.task.name().to_string(),
        output_index,
        label,
    })
}

/// Integrated gradients for every note token of the example.
///
/// `baseline` defaults to zero embeddings; a custom baseline must supply one
/// vector per token of the truncated stream.
pub fn integrated_gradients<R: Real>(
    store: &ParamStore<R>,
    spec: &ModelSpec,
    example: &TaskExample,
    target_index: Option<usize>,
    m: usize,
    baseline: Option<&[Vec<f64>]>,
) -> Result<AttributionReport, ShipError> {
    if m < 1 {
        return Err(ShipError::Config(format!(
            "integrated gradients needs at least one path step, got {m}"
        )));
    }
    let table_name = token_table_name(spec)?;
    let (_, _, seq) = spec.token_view(example)?;
    let dim = token_embed_dim(spec);
    let target = resolve_target(store, spec, example, target_index)?;

    if seq.is_empty() {
        return Ok(AttributionReport {
            example_id: example.example_id.clone(),
            target,
            steps: m,
            tokens: Vec::new(),
            delta: 0.0,
            completeness_residual: 0.0,
        });
    }

    let table = store.get(table_name)?;
    let inputs: Vec<Vec<f64>> = seq
        .token_ids
        .iter()
        .map(|&id| table.row(id).iter().map(|v| v.as_f64()).collect())
        .collect();
    let baseline: Vec<Vec<f64>> = match baseline {
        Some(b) => {
            if b.len() != seq.len() {
                return Err(ShipError::Config(format!(
                    "baseline has {} vectors for {} tokens",
                    b.len(),
                    seq.len()
                )));
            }
            b.to_vec()
        }
        None => vec![vec![0.0; dim]; seq.len()],
    };

    // Midpoint rule along the straight path; the m passes are independent.
    let per_step: Result<Vec<Vec<Vec<f64>>>, ShipError> = (1..=m)
        .into_par_iter()
        .map(|j| {
            let alpha = (j as f64 - 0.5) / m as f64;
            let vectors: Vec<Vec<f64>> = inputs
                .iter()
                .zip(&baseline)
                .map(|(x, x0)| {
                    x.iter()
                        .zip(x0)
                        .map(|(&xv, &bv)| bv + alpha * (xv - bv))
                        .collect()
                })
                .collect();
            let (_, grads) =
                target_logit_pass(store, spec, example, &vectors, target.output_index, true)?;
            Ok(grads.unwrap())
        })
        .collect();
    let per_step = per_step?;

    let mut mean_grads = vec![vec![0.0f64; dim]; seq.len()];
    for grads in &per_step {
        for (acc, g) in mean_grads.iter_mut().zip(grads) {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    let inv = 1.0 / m as f64;
    for g in &mut mean_grads {
        for v in g.iter_mut() {
            *v *= inv;
        }
    }

    let (f_input, _) =
        target_logit_pass(store, spec, example, &inputs, target.output_index, false)?;
    let (f_baseline, _) =
        target_logit_pass(store, spec, example, &baseline, target.output_index, false)?;
    let delta = f_input - f_baseline;

    let tokens: Vec<TokenAttribution> = (0..seq.len())
        .map(|k| {
            let score: f64 = inputs[k]
                .iter()
                .zip(&baseline[k])
                .zip(&mean_grads[k])
                .map(|((&x, &x0), &g)| (x - x0) * g)
                .sum();
            TokenAttribution {
                token: spec.vocab.token(seq.token_ids[k]).to_string(),
                note_id: seq.note_ids[k],
                position: k,
                score,
            }
        })
        .collect();
    let sum: f64 = tokens.iter().map(|t| t.score).sum();
    Ok(AttributionReport {
        example_id: example.example_id.clone(),
        target,
        steps: m,
        tokens,
        delta,
        completeness_residual: (sum - delta).abs(),
    })
}

/// Reduce the example to a single selected note (by chronological note
/// index) before attributing: the clean notes-only reading of one document.
pub fn notes_only_attribution<R: Real>(
    store: &ParamStore<R>,
    spec: &ModelSpec,
    example: &TaskExample,
    note_id: usize,
    target_index: Option<usize>,
    m: usize,
) -> Result<AttributionReport, ShipError> {
    let note_event_indices: Vec<usize> = example
        .record
        .notes()
        .map(|(event_index, _, _, _)| event_index)
        .collect();
    let Some(&selected_event) = note_event_indices.get(note_id) else {
        return Err(ShipError::Lookup(format!(
            "note {note_id} not found; the example has {} notes",
            note_event_indices.len()
        )));
    };
    let reduced_events: Vec<_> = example
        .record
        .events
        .iter()
        .enumerate()
        .filter(|(i, e)| *i == selected_event || !matches!(e.payload, EventPayload::Note(_)))
        .filter(|(_, e)| matches!(e.payload, EventPayload::Note(_)))
        .map(|(_, e)| e.clone())
        .collect();
    let reduced = TaskExample {
        example_id: format!("{}#note{note_id}", example.example_id),
        record: PatientRecord {
            patient_id: example.record.patient_id.clone(),
            admissions: example.record.admissions.clone(),
            events: reduced_events,
        },
        task: example.task,
        prediction_time: example.prediction_time,
        label: example.label.clone(),
    };
    let mut report = integrated_gradients(store, spec, &reduced, target_index, m, None)?;
    // Provenance: the single surviving note keeps its original id.
    for t in &mut report.tokens {
        t.note_id = note_id;
    }
    Ok(report)
}
