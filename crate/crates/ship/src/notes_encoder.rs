//! The hierarchical notes path.
//!
//! A record's notes form one chronological token stream. The stream is
//! truncated to the most recent `N` tokens, run through a word-level LSTM
//! (optionally bidirectional), and dot-product attention turns each note's
//! hidden states into a single vector.
//!
//! Two behaviors are configurable because the reference description leaves
//! them open: whether the LSTM state carries across note boundaries (default
//! yes — truncation is defined per record, across notes), and whether
//! attention scores use the tanh-projected form `u . tanh(W h + b)` (default)
//! or a plain dot product `u . h`.

use serde::{Deserialize, Serialize};

use crate::bagging::BaggedNote;
use crate::compute::{xavier_uniform, Graph, NodeId, NumArray, ParamStore, Real};
use crate::lstm::{
    lstm_graph_params, lstm_step, register_lstm_params, zero_state, LstmDims, LstmNodes,
    LstmStepMasks,
};
use crate::ShipError;

/// Default truncation caps: 1000 tokens for mortality models, 2500 for the
/// diagnosis tasks and for pretraining.
pub const TRUNCATION_MORTALITY: usize = 1000;
pub const TRUNCATION_DIAGNOSIS: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionForm {
    /// `s_i = u . tanh(W h_i + b)`.
    Projected,
    /// `s_i = u . h_i`.
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotesEncoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub bidirectional: bool,
    pub attention: AttentionForm,
    /// Keep LSTM state across note boundaries within a record.
    pub carry_across_notes: bool,
    /// Truncation cap `N`.
    pub truncation: usize,
}

impl Default for NotesEncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            bidirectional: false,
            attention: AttentionForm::Projected,
            carry_across_notes: true,
            truncation: TRUNCATION_DIAGNOSIS,
        }
    }
}

impl NotesEncoderConfig {
    /// Per-token state dimension: doubled when bidirectional.
    pub fn output_dim(&self) -> usize {
        self.hidden * if self.bidirectional { 2 } else { 1 }
    }
}

/// An ordered, truncated stream of note tokens with per-token provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    /// Chronological note index each token came from.
    pub note_ids: Vec<usize>,
    /// The note's timestamp, repeated per token.
    pub timestamps: Vec<f64>,
    /// Truncation cap this sequence was built with.
    pub cap: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Contiguous position ranges per note, in stream order.
    pub fn note_spans(&self) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut spans: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
        for (pos, &note) in self.note_ids.iter().enumerate() {
            match spans.last_mut() {
                Some((n, range)) if *n == note => range.end = pos + 1,
                _ => spans.push((note, pos..pos + 1)),
            }
        }
        spans
    }
}

/// Keep the most recent `n` tokens across all notes, discarding leading
/// (oldest) tokens. Ordering within and across notes is preserved.
pub fn truncate_tokens(notes: &[BaggedNote], n: usize) -> TokenSequence {
    assert!(n >= 1, "truncation cap must be at least 1");
    let mut token_ids = Vec::new();
    let mut note_ids = Vec::new();
    let mut timestamps = Vec::new();
    for note in notes {
        for &id in &note.token_ids {
            token_ids.push(id);
            note_ids.push(note.note_index);
            timestamps.push(note.timestamp);
        }
    }
    let start = token_ids.len().saturating_sub(n);
    TokenSequence {
        token_ids: token_ids.split_off(start),
        note_ids: note_ids.split_off(start),
        timestamps: timestamps.split_off(start),
        cap: n,
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Register word embeddings, LSTM direction(s), and attention parameters
/// under the `notes.` prefix.
pub fn register_notes_params<R: Real>(
    store: &mut ParamStore<R>,
    cfg: &NotesEncoderConfig,
    vocab_size: usize,
    rng: &mut impl rand::Rng,
) {
    store.insert(
        "notes.embed",
        xavier_uniform(vocab_size, cfg.embed_dim, rng),
    );
    let dims = LstmDims {
        input: cfg.embed_dim,
        hidden: cfg.hidden,
    };
    register_lstm_params(store, "notes.lstm.fwd", dims, rng);
    if cfg.bidirectional {
        register_lstm_params(store, "notes.lstm.bwd", dims, rng);
    }
    let d = cfg.output_dim();
    match cfg.attention {
        AttentionForm::Projected => {
            store.insert("notes.attn.w", xavier_uniform(d, d, rng));
            store.insert("notes.attn.b", NumArray::zeros(d, 1));
            store.insert("notes.attn.u", xavier_uniform(1, d, rng));
        }
        AttentionForm::Dot => {
            store.insert("notes.attn.u", xavier_uniform(1, d, rng));
        }
    }
}

/// Graph-side handles to the attention parameters.
pub struct AttentionNodes {
    pub w: Option<NodeId>,
    pub b: Option<NodeId>,
    pub u: NodeId,
}

/// Graph-side handles to the notes-encoder parameters.
pub struct NotesEncoderNodes {
    pub embed: NodeId,
    pub fwd: LstmNodes,
    pub bwd: Option<LstmNodes>,
    pub attn: AttentionNodes,
}

pub fn notes_graph_params<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    cfg: &NotesEncoderConfig,
) -> Result<NotesEncoderNodes, ShipError> {
    let embed = g.param("notes.embed", store.get("notes.embed")?.clone())?;
    let fwd = lstm_graph_params(g, store, "notes.lstm.fwd")?;
    let bwd = if cfg.bidirectional {
        Some(lstm_graph_params(g, store, "notes.lstm.bwd")?)
    } else {
        None
    };
    let (attn_w, attn_b) = match cfg.attention {
        AttentionForm::Projected => (
            Some(g.param("notes.attn.w", store.get("notes.attn.w")?.clone())?),
            Some(g.param("notes.attn.b", store.get("notes.attn.b")?.clone())?),
        ),
        AttentionForm::Dot => (None, None),
    };
    let attn_u = g.param("notes.attn.u", store.get("notes.attn.u")?.clone())?;
    Ok(NotesEncoderNodes {
        embed,
        fwd,
        bwd,
        attn: AttentionNodes {
            w: attn_w,
            b: attn_b,
            u: attn_u,
        },
    })
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Where token embeddings come from.
pub enum TokenInputs {
    /// Look rows up in the (possibly dropout-masked) embedding table node.
    Table(NodeId),
    /// Externally supplied `[embed_dim, 1]` nodes, one per token of the
    /// sequence (attribution paths).
    Given(Vec<NodeId>),
}

/// Sampler for per-step LSTM masks; `None` entries mean no regularization.
pub trait StepMaskSource<R: Real> {
    fn step_masks(&mut self, g: &mut Graph<R>) -> LstmStepMasks;
}

/// The identity source: no masks (inference mode).
pub struct NoMasks;

impl<R: Real> StepMaskSource<R> for NoMasks {
    fn step_masks(&mut self, _g: &mut Graph<R>) -> LstmStepMasks {
        LstmStepMasks::default()
    }
}

/// Per-token states of the encoded stream.
pub struct EncodedTokens {
    /// Concatenated forward/backward state per token, `[output_dim, 1]`.
    pub per_token: Vec<NodeId>,
    /// Forward-direction states (for the next-word head).
    pub forward: Vec<NodeId>,
    /// Backward-direction states (for the previous-word head).
    pub backward: Option<Vec<NodeId>>,
}

/// Run the word LSTM over the token stream. State resets at record
/// boundaries only, unless `carry_across_notes` is off, in which case it
/// also resets at note boundaries.
pub fn encode_tokens<R: Real>(
    g: &mut Graph<R>,
    fwd_lstm: &LstmNodes,
    bwd_lstm: Option<&LstmNodes>,
    cfg: &NotesEncoderConfig,
    seq: &TokenSequence,
    inputs: &TokenInputs,
    masks: &mut dyn StepMaskSource<R>,
) -> Result<EncodedTokens, ShipError> {
    let len = seq.len();
    let mut embedded: Vec<NodeId> = Vec::with_capacity(len);
    match inputs {
        TokenInputs::Table(table) => {
            for &id in &seq.token_ids {
                let row = g.lookup(*table, &[id])?;
                embedded.push(g.reshape(row, cfg.embed_dim, 1)?);
            }
        }
        TokenInputs::Given(nodes) => {
            if nodes.len() != len {
                return Err(ShipError::Internal(format!(
                    "given {} token vectors for a sequence of {len}",
                    nodes.len()
                )));
            }
            embedded.extend_from_slice(nodes);
        }
    }

    let reset_before = |pos: usize| -> bool {
        pos == 0 || (!cfg.carry_across_notes && seq.note_ids[pos] != seq.note_ids[pos - 1])
    };

    let mut forward = Vec::with_capacity(len);
    let mut state = zero_state(g, cfg.hidden);
    for pos in 0..len {
        if pos > 0 && reset_before(pos) {
            state = zero_state(g, cfg.hidden);
        }
        let m = masks.step_masks(g);
        state = lstm_step(g, fwd_lstm, embedded[pos], state, &m)?;
        forward.push(state.0);
    }

    let backward = if let Some(bwd) = bwd_lstm {
        let reset_after = |pos: usize| -> bool {
            pos + 1 == len
                || (!cfg.carry_across_notes && seq.note_ids[pos] != seq.note_ids[pos + 1])
        };
        let mut states = vec![0; len];
        let mut state = zero_state(g, cfg.hidden);
        for pos in (0..len).rev() {
            if pos + 1 < len && reset_after(pos) {
                state = zero_state(g, cfg.hidden);
            }
            let m = masks.step_masks(g);
            state = lstm_step(g, bwd, embedded[pos], state, &m)?;
            states[pos] = state.0;
        }
        Some(states)
    } else {
        None
    };

    let per_token = match &backward {
        Some(bwd_states) => {
            let mut out = Vec::with_capacity(len);
            for pos in 0..len {
                out.push(g.concat_rows(&[forward[pos], bwd_states[pos]])?);
            }
            out
        }
        None => forward.clone(),
    };

    Ok(EncodedTokens {
        per_token,
        forward,
        backward,
    })
}

/// Attention over one note's hidden states: `alpha = softmax(s)`,
/// `v = sum_i alpha_i h_i`. Returns the note vector and the weight node.
pub fn attend<R: Real>(
    g: &mut Graph<R>,
    attn: &AttentionNodes,
    hidden_states: &[NodeId],
) -> Result<(NodeId, NodeId), ShipError> {
    if hidden_states.is_empty() {
        return Err(ShipError::Internal(
            "attention over an empty note".to_string(),
        ));
    }
    let mut scores = Vec::with_capacity(hidden_states.len());
    for &h in hidden_states {
        let keyed = match (attn.w, attn.b) {
            (Some(w), Some(b)) => {
                let wh = g.matmul(w, h)?;
                let whb = g.add(wh, b)?;
                g.tanh(whb)
            }
            _ => h,
        };
        scores.push(g.matmul(attn.u, keyed)?);
    }
    let stacked = g.concat_rows(&scores)?;
    let alpha = g.softmax(stacked)?;
    let mut v: Option<NodeId> = None;
    for (i, &h) in hidden_states.iter().enumerate() {
        let a_i = g.lookup(alpha, &[i])?;
        let weighted = g.scalar_mul(h, a_i)?;
        v = Some(match v {
            Some(acc) => g.add(acc, weighted)?,
            None => weighted,
        });
    }
    Ok((v.unwrap(), alpha))
}

/// One attention vector per note, attached to the bag holding the note's
/// timestamp; multiple notes in a bag are averaged, bags without notes stay
/// masked (`None`). Also returns `(note index, attention weights)` pairs for
/// inspection and export.
pub fn notes_for_timesteps<R: Real>(
    g: &mut Graph<R>,
    attn: &AttentionNodes,
    encoded: &EncodedTokens,
    seq: &TokenSequence,
    notes: &[BaggedNote],
    n_bags: usize,
) -> Result<(Vec<Option<NodeId>>, Vec<(usize, NodeId)>), ShipError> {
    let mut per_bag: Vec<Vec<NodeId>> = vec![Vec::new(); n_bags];
    let mut attention = Vec::new();
    for (note_index, span) in seq.note_spans() {
        let states = &encoded.per_token[span.clone()];
        let (v, alpha) = attend(g, attn, states)?;
        attention.push((note_index, alpha));
        let bag = notes
            .iter()
            .find(|n| n.note_index == note_index)
            .map(|n| n.bag)
            .ok_or_else(|| {
                ShipError::Internal(format!("note {note_index} missing from bag assignment"))
            })?;
        per_bag[bag].push(v);
    }
    let mut out = Vec::with_capacity(n_bags);
    for vs in per_bag {
        out.push(match vs.len() {
            0 => None,
            1 => Some(vs[0]),
            k => {
                let mut acc = vs[0];
                for &v in &vs[1..] {
                    acc = g.add(acc, v)?;
                }
                Some(g.scale(acc, 1.0 / k as f64))
            }
        });
    }
    Ok((out, attention))
}
