//! Minibatch training with Adam, periodic validation, and early stopping on
//! the task's model-selection metric (AUROC for mortality, top-5 recall for
//! CCS, prevalence-weighted AUROC for ICD-9). The best-validation parameters
//! are retained; divergence aborts the run and returns the last good
//! checkpoint.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compute::{Graph, ParamStore, Real};
use crate::evaluate::{auroc, topk_recall, weighted_auroc};
use crate::hash::stable_hash64_parts;
use crate::record_model::{
    build_forward, loss_from_logits, predict_topk, Mode, ModelSpec, NotesInput,
    sample_vocab_masks,
};
use crate::records::tasks::{Task, TaskExample, TaskLabel};
use crate::ShipError;

use super::adam::{adam_update, clip_global_norm, AdamConfig, AdamState, GradMap};
use super::dropout::RegularizationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Validate every this many optimizer steps.
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            eval_every: 50,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gradient_clip_norm: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub regularization: RegularizationConfig,
    pub adam: AdamConfig,
    pub eval: EvalSettings,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ShipError> {
        if self.learning_rate <= 0.0 {
            return Err(ShipError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ShipError::Config("batch_size must be >= 1".into()));
        }
        if self.gradient_clip_norm <= 0.0 {
            return Err(ShipError::Config(format!(
                "gradient_clip_norm must be positive, got {}",
                self.gradient_clip_norm
            )));
        }
        self.regularization.validate()?;
        self.adam.validate()
    }
}

/// One metric observation: `step, split, metric, value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "step,split,metric,value")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.step, r.split, r.metric, r.value)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome<R: Real> {
    /// Best-validation parameters (or the last good state if validation
    /// never ran).
    pub params: ParamStore<R>,
    pub trace: Vec<TraceRow>,
    pub best_validation: f64,
    pub steps_run: u64,
    pub diverged: bool,
}

/// The model-selection metric for a task.
pub fn selection_metric_name(task: Task) -> &'static str {
    match task {
        Task::Mortality => "auroc",
        Task::Ccs => "top5_recall",
        Task::Icd9 => "weighted_auroc",
    }
}

/// Probabilities for every example, in order. Forward passes run in
/// parallel over read-only parameters; the collected order is fixed.
pub fn predict_split<R: Real>(
    store: &ParamStore<R>,
    spec: &ModelSpec,
    examples: &[TaskExample],
) -> Result<Vec<Vec<f64>>, ShipError> {
    examples
        .par_iter()
        .map(|ex| crate::record_model::predict(store, spec, ex))
        .collect()
}

/// The selection metric for a split, from per-example probabilities.
pub fn selection_metric(
    spec: &ModelSpec,
    examples: &[TaskExample],
    probabilities: &[Vec<f64>],
) -> Result<f64, ShipError> {
    match spec.task {
        Task::Mortality => {
            let scores: Vec<f64> = probabilities.iter().map(|p| p[0]).collect();
            let labels: Vec<bool> = examples
                .iter()
                .map(|e| match e.label {
                    TaskLabel::Mortality(y) => y,
                    _ => unreachable!("task/label mismatch"),
                })
                .collect();
            Ok(auroc(&scores, &labels)?)
        }
        Task::Ccs => {
            let k = 5.min(spec.labels.n_ccs_classes());
            let ranked: Vec<Vec<usize>> = probabilities
                .iter()
                .map(|p| predict_topk(p, spec.labels.n_ccs_classes()))
                .collect();
            let truth: Vec<usize> = examples
                .iter()
                .map(|e| match e.label {
                    TaskLabel::Ccs(c) => c,
                    _ => unreachable!("task/label mismatch"),
                })
                .collect();
            Ok(topk_recall(&ranked, &truth, k))
        }
        Task::Icd9 => {
            let n_labels = spec.labels.n_icd9_labels();
            let mut per_label = Vec::with_capacity(n_labels);
            for k in 0..n_labels {
                let scores: Vec<f64> = probabilities.iter().map(|p| p[k]).collect();
                let labels: Vec<bool> = examples
                    .iter()
                    .map(|e| match &e.label {
                        TaskLabel::Icd9(set) => set.contains(&k),
                        _ => unreachable!("task/label mismatch"),
                    })
                    .collect();
                per_label.push((scores, labels));
            }
            Ok(weighted_auroc(&per_label)?)
        }
    }
}

fn mean_grads<R: Real>(per_example: Vec<GradMap<R>>) -> GradMap<R> {
    let n = per_example.len();
    let inv = R::from_f64(1.0 / n as f64);
    let mut acc: GradMap<R> = BTreeMap::new();
    for grads in per_example {
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(a) => a.add_scaled(&g, R::one()),
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    for g in acc.values_mut() {
        for x in g.data_mut() {
            *x = *x * inv;
        }
    }
    acc
}

/// Loss and parameter gradients for one example under training-mode masks.
fn example_grads<R: Real>(
    store: &ParamStore<R>,
    spec: &ModelSpec,
    example: &TaskExample,
    mask_seed: u64,
    regs: &RegularizationConfig,
    vocab_masks: Option<&BTreeMap<String, crate::compute::NumArray<R>>>,
) -> Result<(f64, GradMap<R>), ShipError> {
    let mut g = Graph::<R>::new();
    let out = build_forward(
        &mut g,
        store,
        spec,
        example,
        &Mode::Train {
            seed: mask_seed,
            regs,
        },
        NotesInput::Lookup,
        vocab_masks,
    )?;
    let loss = loss_from_logits(&mut g, out.logits, &example.label)?;
    let loss_value = g.value(loss).scalar().as_f64();
    g.backward(loss)?;
    Ok((loss_value, g.param_grads()))
}

/// Supervised training. `label_fraction < 1` keeps only that share of the
/// training examples (the data-efficiency setting); validation is untouched.
pub fn train_loop<R: Real>(
    spec: &ModelSpec,
    initial: ParamStore<R>,
    train: &[TaskExample],
    validation: &[TaskExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<R>, ShipError> {
    cfg.validate()?;
    spec.check_store(&initial)?;
    if train.is_empty() {
        return Err(ShipError::Config("no training examples".into()));
    }
    let mut params = initial;
    let mut adam_state = AdamState::new();
    let mut trace = Vec::new();
    let mut best: Option<(f64, ParamStore<R>)> = None;
    let mut bad_evals = 0usize;
    let mut diverged = false;
    let metric_name = selection_metric_name(spec.task);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(stable_hash64_parts(&[
        &cfg.seed.to_le_bytes(),
        b"epochs",
    ]));
    order.shuffle(&mut epoch_rng);
    let mut cursor = 0usize;

    let mut step: u64 = 0;
    'training: while (step as usize) < cfg.max_steps {
        step += 1;
        // Assemble the batch, reshuffling at epoch boundaries.
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut epoch_rng);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }

        let vocab_masks = if cfg.regularization.any_vocabulary_dropout() {
            Some(sample_vocab_masks(
                &params,
                &cfg.regularization,
                stable_hash64_parts(&[&cfg.seed.to_le_bytes(), b"vocab", &step.to_le_bytes()]),
            ))
        } else {
            None
        };

        let results: Result<Vec<(f64, GradMap<R>)>, ShipError> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, ex)| {
                let mask_seed = stable_hash64_parts(&[
                    &cfg.seed.to_le_bytes(),
                    b"masks",
                    &step.to_le_bytes(),
                    &(slot as u64).to_le_bytes(),
                ]);
                example_grads(
                    &params,
                    spec,
                    ex,
                    mask_seed,
                    &cfg.regularization,
                    vocab_masks.as_ref(),
                )
            })
            .collect();
        let results = results?;
        let mean_loss =
            results.iter().map(|(l, _)| *l).sum::<f64>() / results.len() as f64;
        trace.push(TraceRow {
            step,
            split: "train".into(),
            metric: "loss".into(),
            value: mean_loss,
        });
        if !mean_loss.is_finite() {
            log::warn!("training diverged at step {step} (loss {mean_loss}); aborting");
            diverged = true;
            break 'training;
        }

        let mut grads = mean_grads(results.into_iter().map(|(_, g)| g).collect());
        clip_global_norm(&mut grads, cfg.gradient_clip_norm)?;
        match adam_update(
            &mut params,
            &grads,
            &mut adam_state,
            cfg.learning_rate,
            &cfg.adam,
        ) {
            Ok(()) => {}
            Err(ShipError::Numeric(msg)) => {
                log::warn!("training diverged at step {step}: {msg}");
                diverged = true;
                break 'training;
            }
            Err(other) => return Err(other),
        }

        // Periodic validation with early stopping.
        if !validation.is_empty() && step as usize % cfg.eval.eval_every == 0 {
            let probs = predict_split(&params, spec, validation)?;
            let value = selection_metric(spec, validation, &probs)?;
            trace.push(TraceRow {
                step,
                split: "validation".into(),
                metric: metric_name.into(),
                value,
            });
            let improved = best.as_ref().map(|(b, _)| value > *b).unwrap_or(true);
            if improved {
                best = Some((value, params.clone()));
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= cfg.eval.patience {
                    break 'training;
                }
            }
        }
    }

    let (best_validation, best_params) = match best {
        Some((v, p)) => (v, p),
        None => (f64::NAN, params),
    };
    Ok(TrainOutcome {
        params: best_params,
        trace,
        best_validation,
        steps_run: step,
        diverged,
    })
}

// ---------------------------------------------------------------------------
// Grid / random sweeps
// ---------------------------------------------------------------------------

/// Hyperparameter sweep over a small set of named axes. With `sample`, a
/// random subset of the full grid is drawn (random search); otherwise the
/// whole grid runs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SweepSpec {
    pub grid: BTreeMap<String, Vec<f64>>,
    pub sample: Option<usize>,
}

fn apply_axis(cfg: &mut TrainConfig, key: &str, value: f64) -> Result<(), ShipError> {
    match key {
        "learning_rate" => cfg.learning_rate = value,
        "batch_size" => cfg.batch_size = value as usize,
        "gradient_clip_norm" => cfg.gradient_clip_norm = value,
        "max_steps" => cfg.max_steps = value as usize,
        "variational_vocabulary_dropout" => {
            cfg.regularization.variational_vocabulary = value
        }
        "record_zoneout" => cfg.regularization.record.zoneout = value,
        "notes_zoneout" => cfg.regularization.notes.zoneout = value,
        "record_input_dropout" => cfg.regularization.record.input = value,
        "notes_input_dropout" => cfg.regularization.notes.input = value,
        other => {
            return Err(ShipError::Config(format!(
                "unknown sweep axis {other:?}"
            )))
        }
    }
    Ok(())
}

/// Expand a sweep into concrete configs.
pub fn expand_sweep(
    base: &TrainConfig,
    sweep: &SweepSpec,
    seed: u64,
) -> Result<Vec<TrainConfig>, ShipError> {
    let mut configs = vec![base.clone()];
    for (key, values) in &sweep.grid {
        if values.is_empty() {
            return Err(ShipError::Config(format!("sweep axis {key:?} is empty")));
        }
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for cfg in &configs {
            for &v in values {
                let mut c = cfg.clone();
                apply_axis(&mut c, key, v)?;
                next.push(c);
            }
        }
        configs = next;
    }
    if let Some(n) = sweep.sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::with_capacity(n.min(configs.len()));
        for _ in 0..n.min(configs.len()) {
            let i = rng.gen_range(0..configs.len());
            picked.push(configs.swap_remove(i));
        }
        configs = picked;
    }
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}
