//! Language-model pretraining of the notes encoder.
//!
//! Before the prediction loss is ever optimized, the notes LSTM and word
//! embeddings train on an auxiliary objective: at each position the forward
//! direction predicts the next word and, when bidirectional, the backward
//! direction predicts the previous word. The two direction losses are
//! averaged. The LM heads are discarded after pretraining; attention
//! parameters are not part of the objective and stay untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagging::BaggedNote;
use crate::compute::{xavier_uniform, Graph, NodeId, NumArray, ParamStore, Real};
use crate::hash::stable_hash64_parts;
use crate::lstm::{lstm_graph_params, LstmNodes};
use crate::notes_encoder::{
    encode_tokens, truncate_tokens, NoMasks, NotesEncoderConfig, StepMaskSource, TokenInputs,
    TokenSequence,
};

/// Token-embedding source for the LM objective.
pub enum LmTokenInputs {
    /// Embed through the stored (possibly dropout-masked) table.
    Lookup,
    /// Externally supplied per-token vectors.
    Given(Vec<NodeId>),
}
use crate::records::schema::PatientRecord;
use crate::records::tokenize::{tokenize, Vocabulary};
use crate::train::adam::{adam_update, clip_global_norm, AdamConfig, AdamState, GradMap};
use crate::train::dropout::{sample_vocab_row_mask, LstmDropoutRates, LstmRegularizer};
use crate::ShipError;

/// How much of each admission's text pretraining may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextHorizon {
    /// Notes up to 24 hours after their admission's start.
    To24Hours,
    /// All notes up to discharge.
    ToDischarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// 0 skips pretraining entirely (the "without pretraining" rows).
    pub steps: usize,
    pub horizon: TextHorizon,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gradient_clip_norm: f64,
    pub seed: u64,
    pub notes_dropout: LstmDropoutRates,
    pub variational_vocabulary: f64,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 0,
            horizon: TextHorizon::ToDischarge,
            learning_rate: 1e-3,
            batch_size: 16,
            gradient_clip_norm: 5.0,
            seed: 0,
            notes_dropout: LstmDropoutRates::zero(),
            variational_vocabulary: 0.0,
            adam: AdamConfig::default(),
        }
    }
}

/// Token streams for pretraining, one per record, horizon-filtered and
/// truncated like the classifier's notes path.
#[derive(Debug, Clone)]
pub struct PretrainCorpus {
    pub streams: Vec<TokenSequence>,
    /// Streams dropped for having fewer than two tokens.
    pub skipped_short: usize,
}

/// A note's admission is the first admission whose discharge is not before
/// the note. Notes past the horizon are excluded.
fn within_horizon(record: &PatientRecord, t: f64, horizon: TextHorizon) -> bool {
    match horizon {
        TextHorizon::ToDischarge => true,
        TextHorizon::To24Hours => record
            .admissions
            .iter()
            .find(|a| t <= a.discharge)
            .map(|a| t <= a.admit + 24.0)
            .unwrap_or(false),
    }
}

/// Build the pretraining corpus from training-split records only.
pub fn build_corpus(
    records: &[PatientRecord],
    vocab: &Vocabulary,
    horizon: TextHorizon,
    truncation: usize,
) -> PretrainCorpus {
    let mut streams = Vec::new();
    let mut skipped_short = 0;
    for record in records {
        let mut notes: Vec<BaggedNote> = Vec::new();
        for (note_index, (_, feature, t, text)) in record.notes().enumerate() {
            if !within_horizon(record, t, horizon) {
                continue;
            }
            notes.push(BaggedNote {
                note_index,
                feature: feature.to_string(),
                timestamp: t,
                bag: 0,
                token_ids: vocab.encode(&tokenize(text)),
            });
        }
        let seq = truncate_tokens(&notes, truncation.max(1));
        if seq.len() < 2 {
            skipped_short += 1;
            continue;
        }
        streams.push(seq);
    }
    PretrainCorpus {
        streams,
        skipped_short,
    }
}

struct LmNodes {
    fwd_w: NodeId,
    fwd_b: NodeId,
    bwd: Option<(NodeId, NodeId)>,
}

/// Register LM head parameters (fresh, per pretraining run).
pub fn init_lm_heads<R: Real>(
    store: &mut ParamStore<R>,
    cfg: &NotesEncoderConfig,
    vocab_size: usize,
    rng: &mut impl Rng,
) {
    store.insert("lm.fwd.w", xavier_uniform(vocab_size, cfg.hidden, rng));
    store.insert("lm.fwd.b", NumArray::zeros(vocab_size, 1));
    if cfg.bidirectional {
        store.insert("lm.bwd.w", xavier_uniform(vocab_size, cfg.hidden, rng));
        store.insert("lm.bwd.b", NumArray::zeros(vocab_size, 1));
    }
}

fn lm_graph_nodes<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    bidirectional: bool,
) -> Result<LmNodes, ShipError> {
    let fwd_w = g.param("lm.fwd.w", store.get("lm.fwd.w")?.clone())?;
    let fwd_b = g.param("lm.fwd.b", store.get("lm.fwd.b")?.clone())?;
    let bwd = if bidirectional {
        Some((
            g.param("lm.bwd.w", store.get("lm.bwd.w")?.clone())?,
            g.param("lm.bwd.b", store.get("lm.bwd.b")?.clone())?,
        ))
    } else {
        None
    };
    Ok(LmNodes { fwd_w, fwd_b, bwd })
}

fn cross_entropy_from_logits<R: Real>(
    g: &mut Graph<R>,
    logits: NodeId,
    target: usize,
) -> Result<NodeId, ShipError> {
    let lse = g.log_sum_exp(logits);
    let picked = g.lookup(logits, &[target])?;
    let neg = g.scale(picked, -1.0);
    Ok(g.add(lse, neg)?)
}

struct EncoderGraph {
    embed: NodeId,
    fwd: LstmNodes,
    bwd: Option<LstmNodes>,
}

/// Register only the parameters the LM objective exercises: embeddings and
/// the LSTM direction(s). Attention stays out of the graph entirely.
fn lm_encoder_params<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    bidirectional: bool,
) -> Result<EncoderGraph, ShipError> {
    let embed = g.param("notes.embed", store.get("notes.embed")?.clone())?;
    let fwd = lstm_graph_params(g, store, "notes.lstm.fwd")?;
    let bwd = if bidirectional {
        Some(lstm_graph_params(g, store, "notes.lstm.bwd")?)
    } else {
        None
    };
    Ok(EncoderGraph { embed, fwd, bwd })
}

/// Build the LM loss for one stream: mean next-word cross-entropy, plus the
/// mean previous-word term when bidirectional, directions averaged.
/// The forward head at position `i` sees only tokens `<= i`; the backward
/// head only tokens `>= i`.
pub fn lm_loss_graph<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    cfg: &NotesEncoderConfig,
    seq: &TokenSequence,
    inputs: &LmTokenInputs,
    masks: &mut dyn StepMaskSource<R>,
    vocab_mask: Option<&NumArray<R>>,
) -> Result<NodeId, ShipError> {
    if seq.len() < 2 {
        return Err(ShipError::Internal(
            "language-model loss needs at least two tokens".to_string(),
        ));
    }
    let enc_params = lm_encoder_params(g, store, cfg.bidirectional)?;
    let lm = lm_graph_nodes(g, store, cfg.bidirectional)?;
    let embed = match vocab_mask {
        Some(mask) => {
            let m = g.input(mask.clone());
            g.mul(enc_params.embed, m)?
        }
        None => enc_params.embed,
    };
    let effective_inputs = match inputs {
        LmTokenInputs::Lookup => TokenInputs::Table(embed),
        LmTokenInputs::Given(nodes) => TokenInputs::Given(nodes.clone()),
    };
    let encoded = encode_tokens(
        g,
        &enc_params.fwd,
        enc_params.bwd.as_ref(),
        cfg,
        seq,
        &effective_inputs,
        masks,
    )?;
    let len = seq.len();

    let mut fwd_terms = Vec::with_capacity(len - 1);
    for i in 0..len - 1 {
        let wh = g.matmul(lm.fwd_w, encoded.forward[i])?;
        let logits = g.add(wh, lm.fwd_b)?;
        fwd_terms.push(cross_entropy_from_logits(g, logits, seq.token_ids[i + 1])?);
    }
    let fwd_sum = g.concat_rows(&fwd_terms)?;
    let fwd_total = g.sum_all(fwd_sum);
    let fwd_mean = g.scale(fwd_total, 1.0 / fwd_terms.len() as f64);

    match (&encoded.backward, lm.bwd) {
        (Some(bwd_states), Some((bwd_w, bwd_b))) => {
            let mut bwd_terms = Vec::with_capacity(len - 1);
            for i in 1..len {
                let wh = g.matmul(bwd_w, bwd_states[i])?;
                let logits = g.add(wh, bwd_b)?;
                bwd_terms.push(cross_entropy_from_logits(g, logits, seq.token_ids[i - 1])?);
            }
            let bwd_sum = g.concat_rows(&bwd_terms)?;
            let bwd_total = g.sum_all(bwd_sum);
            let bwd_mean = g.scale(bwd_total, 1.0 / bwd_terms.len() as f64);
            let both = g.add(fwd_mean, bwd_mean)?;
            Ok(g.scale(both, 0.5))
        }
        _ => Ok(fwd_mean),
    }
}

/// Convenience: LM loss value in eval mode (no dropout).
pub fn lm_loss_value<R: Real>(
    store: &ParamStore<R>,
    cfg: &NotesEncoderConfig,
    seq: &TokenSequence,
) -> Result<f64, ShipError> {
    let mut g = Graph::<R>::new();
    let loss = lm_loss_graph(
        &mut g,
        store,
        cfg,
        seq,
        &LmTokenInputs::Lookup,
        &mut NoMasks,
        None,
    )?;
    Ok(g.value(loss).scalar().as_f64())
}

#[derive(Debug)]
pub struct PretrainOutcome<R: Real> {
    /// Notes-encoder parameters after pretraining, LM heads removed.
    pub params: ParamStore<R>,
    /// Mean batch loss per step.
    pub loss_curve: Vec<f64>,
    pub skipped_short: usize,
}

/// Run the pretraining objective for `cfg.steps` optimizer steps over the
/// corpus. `store` must carry the notes-encoder parameters; they come back
/// updated (bitwise unchanged when `steps == 0`). Dropout is applied during
/// pretraining exactly as during training.
pub fn pretrain<R: Real>(
    corpus: &PretrainCorpus,
    notes_cfg: &NotesEncoderConfig,
    vocab_size: usize,
    cfg: &PretrainConfig,
    store: ParamStore<R>,
) -> Result<PretrainOutcome<R>, ShipError> {
    if cfg.steps == 0 {
        return Ok(PretrainOutcome {
            params: store,
            loss_curve: Vec::new(),
            skipped_short: corpus.skipped_short,
        });
    }
    if corpus.streams.is_empty() {
        return Err(ShipError::Config(
            "pretraining corpus is empty".to_string(),
        ));
    }
    cfg.notes_dropout.validate()?;
    let mut params = store;
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64_parts(&[
        &cfg.seed.to_le_bytes(),
        b"pretrain",
    ]));
    init_lm_heads(&mut params, notes_cfg, vocab_size, &mut rng);
    let mut adam_state = AdamState::new();
    let mut loss_curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<&TokenSequence> = (0..cfg.batch_size)
            .map(|_| &corpus.streams[rng.gen_range(0..corpus.streams.len())])
            .collect();
        let vocab_mask = if cfg.variational_vocabulary > 0.0 {
            let mut vrng = ChaCha8Rng::seed_from_u64(stable_hash64_parts(&[
                &cfg.seed.to_le_bytes(),
                b"vocab",
                &(step as u64).to_le_bytes(),
            ]));
            Some(sample_vocab_row_mask::<R>(
                vocab_size,
                notes_cfg.embed_dim,
                cfg.variational_vocabulary,
                &mut vrng,
            ))
        } else {
            None
        };

        let results: Result<Vec<(f64, GradMap<R>)>, ShipError> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, seq)| {
                let mut g = Graph::<R>::new();
                let mask_seed = stable_hash64_parts(&[
                    &cfg.seed.to_le_bytes(),
                    b"masks",
                    &(step as u64).to_le_bytes(),
                    &(slot as u64).to_le_bytes(),
                ]);
                let mut masks: Box<dyn StepMaskSource<R>> = if cfg.notes_dropout.is_zero() {
                    Box::new(NoMasks)
                } else {
                    Box::new(LstmRegularizer::new(
                        &mut g,
                        cfg.notes_dropout,
                        notes_cfg.embed_dim,
                        notes_cfg.hidden,
                        mask_seed,
                    ))
                };
                let loss = lm_loss_graph(
                    &mut g,
                    &params,
                    notes_cfg,
                    seq,
                    &LmTokenInputs::Lookup,
                    masks.as_mut(),
                    vocab_mask.as_ref(),
                )?;
                let value = g.value(loss).scalar().as_f64();
                g.backward(loss)?;
                Ok((value, g.param_grads()))
            })
            .collect();
        let results = results?;
        let mean_loss = results.iter().map(|(l, _)| *l).sum::<f64>() / results.len() as f64;
        loss_curve.push(mean_loss);
        if !mean_loss.is_finite() {
            return Err(ShipError::Numeric(format!(
                "pretraining diverged at step {step}"
            )));
        }
        let mut grads: GradMap<R> = std::collections::BTreeMap::new();
        let inv = R::from_f64(1.0 / results.len() as f64);
        for (_, g) in results {
            for (name, arr) in g {
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_scaled(&arr, R::one()),
                    None => {
                        grads.insert(name, arr);
                    }
                }
            }
        }
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x = *x * inv;
            }
        }
        clip_global_norm(&mut grads, cfg.gradient_clip_norm)?;
        adam_update(
            &mut params,
            &grads,
            &mut adam_state,
            cfg.learning_rate,
            &cfg.adam,
        )?;
    }

    // The heads exist only for the auxiliary objective.
    let mut cleaned = ParamStore::new();
    for (name, value) in params.iter() {
        if !name.starts_with("lm.") {
            cleaned.insert(name, value.clone());
        }
    }
    Ok(PretrainOutcome {
        params: cleaned,
        loss_curve,
        skipped_short: corpus.skipped_short,
    })
}

/// Copy the pretrained notes LSTM and word embeddings into a freshly
/// initialized classifier store. Attention, the record LSTM, and the task
/// heads keep their fresh initialization; everything stays trainable.
pub fn transfer<R: Real>(
    pretrained: &ParamStore<R>,
    classifier: &mut ParamStore<R>,
) -> Result<usize, ShipError> {
    let mut copied = 0;
    for (name, value) in pretrained.iter() {
        let transferable = name == "notes.embed" || name.starts_with("notes.lstm.");
        if !transferable {
            continue;
        }
        let target = classifier.get(name).map_err(|_| {
            ShipError::Config(format!(
                "transfer target missing parameter {name:?} (variant mismatch?)"
            ))
        })?;
        if target.shape() != value.shape() {
            return Err(ShipError::Config(format!(
                "transfer shape mismatch for {name:?}: {:?} vs {:?}",
                value.shape(),
                target.shape()
            )));
        }
        classifier.insert(name, value.clone());
        copied += 1;
    }
    if copied == 0 {
        return Err(ShipError::Config(
            "nothing to transfer: pretrained store has no notes encoder".to_string(),
        ));
    }
    Ok(copied)
}
