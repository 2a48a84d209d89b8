//! Record-level model: timestep vectors in, task predictions out.
//!
//! A top-level LSTM consumes the bagged timestep sequence in chronological
//! order and the task head reads its final hidden state: one sigmoid for
//! mortality, a softmax over CCS classes, independent sigmoids per ICD-9
//! label. The notes enter each timestep either as averaged embeddings
//! (bag-of-words), as attention vectors from the notes encoder
//! (hierarchical), or not at all, and the structured features can be
//! included or left out — which spans all the model variants, from
//! no-notes baseline to the pretrained hierarchical model.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bagging::{
    assemble_timestep_vector, bag_timeline, bow_note_features, BaggedNote, BaggingConfig,
    FeatureCatalog, FeatureLayout, FeatureTables, Featurizer, LayoutKind, TimestepBag,
};
use crate::compute::{
    sigmoid_scalar, xavier_uniform, Graph, NodeId, NumArray, ParamStore, Real,
};
use crate::lstm::{lstm_graph_params, lstm_step, register_lstm_params, zero_state, LstmDims};
use crate::notes_encoder::{
    encode_tokens, notes_for_timesteps, notes_graph_params, register_notes_params,
    truncate_tokens, NoMasks, NotesEncoderConfig, StepMaskSource, TokenInputs, TokenSequence,
};
use crate::records::standardize::StandardizationStats;
use crate::records::tasks::{LabelSpace, Task, TaskExample, TaskLabel};
use crate::records::tokenize::{BigramVocabulary, Vocabulary};
use crate::records::PatientRecord;
use crate::train::dropout::{sample_vocab_row_mask, LstmRegularizer, RegularizationConfig};
use crate::ShipError;

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotesMode {
    None,
    BowUnigram,
    BowBigram,
    Hierarchical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesMode {
    NotesOnly,
    AllFeatures,
}

/// One row of the model-variant table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub notes_mode: NotesMode,
    pub features_mode: FeaturesMode,
    pub pretrained: bool,
}

impl ModelVariant {
    /// The eight supported rows: no-notes; BOW unigram (notes only / all);
    /// BOW unigram+bigram (all); hierarchical without pretraining (notes
    /// only / all); pretrained hierarchical (notes only / all).
    pub fn validate(&self) -> Result<(), ShipError> {
        let fail = |m: &str| Err(ShipError::Config(m.to_string()));
        match self.notes_mode {
            NotesMode::None => {
                if self.features_mode == FeaturesMode::NotesOnly {
                    return fail("a notes-only model needs a notes mode");
                }
                if self.pretrained {
                    return fail("pretraining applies to the notes encoder; no-notes models cannot use it");
                }
            }
            NotesMode::BowUnigram | NotesMode::BowBigram => {
                if self.pretrained {
                    return fail("bag-of-words variants do not use the pretrained notes encoder");
                }
                if self.notes_mode == NotesMode::BowBigram
                    && self.features_mode == FeaturesMode::NotesOnly
                {
                    return fail("the bigram variant is defined over all features");
                }
            }
            NotesMode::Hierarchical => {}
        }
        Ok(())
    }

    /// Parse a CLI variant name plus features flag.
    pub fn from_cli(name: &str, notes_only: bool) -> Result<Self, ShipError> {
        let features_mode = if notes_only {
            FeaturesMode::NotesOnly
        } else {
            FeaturesMode::AllFeatures
        };
        let v = match name {
            "no_notes" => ModelVariant {
                notes_mode: NotesMode::None,
                features_mode: FeaturesMode::AllFeatures,
                pretrained: false,
            },
            "bow_unigram" => ModelVariant {
                notes_mode: NotesMode::BowUnigram,
                features_mode,
                pretrained: false,
            },
            "bow_bigram" => ModelVariant {
                notes_mode: NotesMode::BowBigram,
                features_mode,
                pretrained: false,
            },
            "hierarchical" => ModelVariant {
                notes_mode: NotesMode::Hierarchical,
                features_mode,
                pretrained: false,
            },
            "ship" => ModelVariant {
                notes_mode: NotesMode::Hierarchical,
                features_mode,
                pretrained: true,
            },
            other => {
                return Err(ShipError::Config(format!(
                    "unknown variant {other:?}; expected no_notes | bow_unigram | bow_bigram | hierarchical | ship"
                )))
            }
        };
        v.validate()?;
        Ok(v)
    }

    pub fn uses_notes(&self) -> bool {
        self.notes_mode != NotesMode::None
    }

    pub fn is_bow(&self) -> bool {
        matches!(self.notes_mode, NotesMode::BowUnigram | NotesMode::BowBigram)
    }
}

// ---------------------------------------------------------------------------
// Configuration and fitted spec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub bagging: BaggingConfig,
    /// Embedding dimension for structured categorical features.
    pub struct_embed_dim: usize,
    pub record_hidden: usize,
    /// Embedding dimension for the bag-of-words note path.
    pub bow_embed_dim: usize,
    pub notes: NotesEncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bagging: BaggingConfig {
                bag_hours: 8.0,
                max_timesteps: 200,
            },
            struct_embed_dim: 8,
            record_hidden: 64,
            bow_embed_dim: 64,
            notes: NotesEncoderConfig::default(),
        }
    }
}

/// Everything fitted from the training split plus the architecture choices:
/// enough to rebuild the model for evaluation or attribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: Task,
    pub variant: ModelVariant,
    pub config: ModelConfig,
    pub catalog: FeatureCatalog,
    pub stats: StandardizationStats,
    pub vocab: Vocabulary,
    pub bigrams: Option<BigramVocabulary>,
    pub labels: LabelSpace,
    pub layout: FeatureLayout,
}

impl ModelSpec {
    /// Fit vocabularies, feature inventory, standardization statistics, and
    /// label spaces from the training split.
    pub fn fit(
        task: Task,
        variant: ModelVariant,
        config: ModelConfig,
        train: &[PatientRecord],
        min_token_count: usize,
    ) -> Result<Self, ShipError> {
        variant.validate()?;
        config.bagging.validate()?;
        let catalog = FeatureCatalog::fit(train.iter())?;
        let stats = StandardizationStats::fit(train.iter());
        let labels = LabelSpace::fit(train.iter());
        let notes_tokens: Vec<Vec<String>> = train
            .iter()
            .flat_map(|r| r.notes().map(|(_, _, _, text)| crate::records::tokenize(text)))
            .collect();
        let refs: Vec<&[String]> = notes_tokens.iter().map(|n| n.as_slice()).collect();
        let vocab = Vocabulary::fit(refs.iter().copied(), min_token_count);
        let bigrams = if variant.notes_mode == NotesMode::BowBigram {
            Some(BigramVocabulary::fit(refs.iter().copied(), min_token_count))
        } else {
            None
        };
        let layout = FeatureLayout::from_catalog(&catalog, config.struct_embed_dim);
        let spec = Self {
            task,
            variant,
            config,
            catalog,
            stats,
            vocab,
            bigrams,
            labels,
            layout,
        };
        if spec.record_input_dim() == 0 {
            return Err(ShipError::Config(
                "model input is empty: no structured features and no notes path".to_string(),
            ));
        }
        if spec.head_output_dim() == 0 {
            return Err(ShipError::Config(format!(
                "task {} has an empty label space in the training split",
                task.name()
            )));
        }
        Ok(spec)
    }

    /// Rebuild the skipped lookup indexes after deserialization.
    pub fn rebuild_indexes(&mut self) {
        self.vocab.rebuild_index();
        if let Some(b) = &mut self.bigrams {
            b.rebuild_index();
        }
        self.labels.rebuild_index();
    }

    pub fn notes_block_dim(&self) -> usize {
        match self.variant.notes_mode {
            NotesMode::None => 0,
            NotesMode::BowUnigram | NotesMode::BowBigram => self.config.bow_embed_dim,
            NotesMode::Hierarchical => self.config.notes.output_dim(),
        }
    }

    /// Input width of the record LSTM.
    pub fn record_input_dim(&self) -> usize {
        let structured = match self.variant.features_mode {
            FeaturesMode::AllFeatures => self.layout.dim(),
            FeaturesMode::NotesOnly => 0,
        };
        let notes = match self.variant.notes_mode {
            NotesMode::None => 0,
            _ => self.notes_block_dim() + 1,
        };
        structured + notes
    }

    pub fn head_output_dim(&self) -> usize {
        match self.task {
            Task::Mortality => 1,
            Task::Ccs => self.labels.n_ccs_classes(),
            Task::Icd9 => self.labels.n_icd9_labels(),
        }
    }

    fn head_prefix(&self) -> String {
        format!("head.{}", self.task.name())
    }

    fn uses_bigram_table(&self) -> bool {
        self.variant.notes_mode == NotesMode::BowBigram
            && self.bigrams.as_ref().map(|b| b.len()).unwrap_or(0) > 0
    }

    /// Fresh Xavier-initialized parameters for this spec.
    pub fn init_params<R: Real>(&self, seed: u64) -> ParamStore<R> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        if self.variant.features_mode == FeaturesMode::AllFeatures {
            for entry in &self.layout.entries {
                if let LayoutKind::Categorical { table_rows } = entry.kind {
                    store.insert(
                        &format!("feat.{}", entry.feature),
                        xavier_uniform(table_rows, self.config.struct_embed_dim, &mut rng),
                    );
                }
            }
        }
        match self.variant.notes_mode {
            NotesMode::None => {}
            NotesMode::BowUnigram | NotesMode::BowBigram => {
                store.insert(
                    "bow.embed",
                    xavier_uniform(self.vocab.len(), self.config.bow_embed_dim, &mut rng),
                );
                if self.uses_bigram_table() {
                    let rows = self.bigrams.as_ref().unwrap().len();
                    store.insert(
                        "bow.bigram",
                        xavier_uniform(rows, self.config.bow_embed_dim, &mut rng),
                    );
                }
            }
            NotesMode::Hierarchical => {
                register_notes_params(&mut store, &self.config.notes, self.vocab.len(), &mut rng);
            }
        }
        register_lstm_params(
            &mut store,
            "record.lstm",
            LstmDims {
                input: self.record_input_dim(),
                hidden: self.config.record_hidden,
            },
            &mut rng,
        );
        let head = self.head_prefix();
        store.insert(
            &format!("{head}.w"),
            xavier_uniform(self.head_output_dim(), self.config.record_hidden, &mut rng),
        );
        store.insert(
            &format!("{head}.b"),
            NumArray::zeros(self.head_output_dim(), 1),
        );
        store
    }

    /// Expected parameter shapes; used to reject mismatched checkpoints with
    /// a config error before any graph is built.
    pub fn check_store<R: Real>(&self, store: &ParamStore<R>) -> Result<(), ShipError> {
        let reference: ParamStore<R> = self.init_params(0);
        for (name, value) in reference.iter() {
            let got = store.get(name).map_err(|_| {
                ShipError::Config(format!("parameter {name:?} missing for this variant"))
            })?;
            if got.shape() != value.shape() {
                return Err(ShipError::Config(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    got.shape(),
                    value.shape()
                )));
            }
        }
        Ok(())
    }

    /// The truncated token stream and bagging for an example, exactly as the
    /// forward pass will see them. The bag-of-words path has no truncation
    /// cap.
    pub fn token_view(
        &self,
        example: &TaskExample,
    ) -> Result<(Vec<TimestepBag>, Vec<BaggedNote>, TokenSequence), ShipError> {
        let featurizer = Featurizer {
            catalog: &self.catalog,
            stats: &self.stats,
            vocab: &self.vocab,
            bigrams: self.bigrams.as_ref(),
        };
        let (bags, notes) = bag_timeline(example, &self.config.bagging, &featurizer)?;
        let cap = match self.variant.notes_mode {
            NotesMode::Hierarchical => self.config.notes.truncation,
            _ => usize::MAX,
        };
        let seq = truncate_tokens(&notes, cap);
        Ok((bags, notes, seq))
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Where note-token embeddings come from: the stored tables, or externally
/// supplied per-token leaves (attribution).
pub enum NotesInput {
    Lookup,
    Given(Vec<NodeId>),
}

/// Whether the graph is built with regularization.
pub enum Mode<'a> {
    Eval,
    Train {
        /// Seeds every mask draw in this graph.
        seed: u64,
        regs: &'a RegularizationConfig,
    },
}

pub struct ForwardOutput {
    /// Pre-activation head output, `[dim, 1]`.
    pub logits: NodeId,
    /// Probabilities derived from the logits: sigmoid (mortality), softmax
    /// over classes (ccs), independent sigmoids (icd9).
    pub probabilities: Vec<f64>,
    /// `(note index, attention weight node)` per note, hierarchical mode.
    pub attention: Vec<(usize, NodeId)>,
    /// The token stream the notes path consumed.
    pub token_sequence: TokenSequence,
}

/// Sample per-table vocabulary dropout masks for one optimizer step; shared
/// by every example in the batch.
pub fn sample_vocab_masks<R: Real>(
    store: &ParamStore<R>,
    regs: &RegularizationConfig,
    seed: u64,
) -> BTreeMap<String, NumArray<R>> {
    let mut masks = BTreeMap::new();
    if !regs.any_vocabulary_dropout() {
        return masks;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, value) in store.iter() {
        let is_table = name.starts_with("feat.")
            || name == "bow.embed"
            || name == "bow.bigram"
            || name == "notes.embed";
        if !is_table {
            continue;
        }
        let rate = regs.vocabulary_rate_for(name);
        if rate > 0.0 {
            masks.insert(
                name.clone(),
                sample_vocab_row_mask::<R>(value.rows(), value.cols(), rate, &mut rng),
            );
        }
    }
    masks
}

struct TableHandles {
    features: FeatureTables,
    bow_embed: Option<NodeId>,
    bow_bigram: Option<NodeId>,
}

fn register_table<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    name: &str,
    vocab_masks: Option<&BTreeMap<String, NumArray<R>>>,
) -> Result<NodeId, ShipError> {
    let node = g.param(name, store.get(name)?.clone())?;
    match vocab_masks.and_then(|m| m.get(name)) {
        Some(mask) => {
            let m = g.input(mask.clone());
            Ok(g.mul(node, m)?)
        }
        None => Ok(node),
    }
}

/// Build the full forward graph for one example. Returns the logits node;
/// call `loss_from_logits` on it for training or read `probabilities` for
/// prediction.
pub fn build_forward<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    spec: &ModelSpec,
    example: &TaskExample,
    mode: &Mode,
    notes_input: NotesInput,
    vocab_masks: Option<&BTreeMap<String, NumArray<R>>>,
) -> Result<ForwardOutput, ShipError> {
    spec.variant.validate()?;
    let (bags, notes, seq) = spec.token_view(example)?;
    let n_bags = bags.len();

    // Parameter leaves.
    let mut tables = TableHandles {
        features: FeatureTables::new(),
        bow_embed: None,
        bow_bigram: None,
    };
    if spec.variant.features_mode == FeaturesMode::AllFeatures {
        for entry in &spec.layout.entries {
            if matches!(entry.kind, LayoutKind::Categorical { .. }) {
                let name = format!("feat.{}", entry.feature);
                let node = register_table(g, store, &name, vocab_masks)?;
                tables.features.insert(entry.feature.clone(), node);
            }
        }
    }
    if spec.variant.is_bow() {
        tables.bow_embed = Some(register_table(g, store, "bow.embed", vocab_masks)?);
        if spec.uses_bigram_table() {
            tables.bow_bigram = Some(register_table(g, store, "bow.bigram", vocab_masks)?);
        }
    }

    // Per-bag note blocks.
    let mut attention = Vec::new();
    let notes_blocks: Vec<Option<NodeId>> = match spec.variant.notes_mode {
        NotesMode::None => vec![None; n_bags],
        NotesMode::BowUnigram | NotesMode::BowBigram => {
            let order = if spec.variant.notes_mode == NotesMode::BowBigram {
                2
            } else {
                1
            };
            match &notes_input {
                NotesInput::Lookup => {
                    let uni = tables.bow_embed.unwrap();
                    let mut blocks = Vec::with_capacity(n_bags);
                    for bag in &bags {
                        blocks.push(bow_note_features(
                            g,
                            bag,
                            order,
                            uni,
                            tables.bow_bigram,
                            spec.config.bow_embed_dim,
                        )?);
                    }
                    blocks
                }
                NotesInput::Given(tokens) => bow_blocks_from_given(
                    g,
                    spec,
                    &seq,
                    &notes,
                    &bags,
                    tokens,
                    tables.bow_bigram,
                )?,
            }
        }
        NotesMode::Hierarchical => {
            let params = notes_graph_params(g, store, &spec.config.notes)?;
            let embed = match vocab_masks.and_then(|m| m.get("notes.embed")) {
                Some(mask) => {
                    let m = g.input(mask.clone());
                    g.mul(params.embed, m)?
                }
                None => params.embed,
            };
            if seq.is_empty() {
                vec![None; n_bags]
            } else {
                let inputs = match notes_input {
                    NotesInput::Lookup => TokenInputs::Table(embed),
                    NotesInput::Given(tokens) => TokenInputs::Given(tokens),
                };
                let mut masks: Box<dyn StepMaskSource<R>> = match mode {
                    Mode::Eval => Box::new(NoMasks),
                    Mode::Train { seed, regs } => Box::new(LstmRegularizer::new(
                        g,
                        regs.notes,
                        spec.config.notes.embed_dim,
                        spec.config.notes.hidden,
                        seed ^ 0x6e6f746573, // notes-path mask stream
                    )),
                };
                let encoded = encode_tokens(
                    g,
                    &params.fwd,
                    params.bwd.as_ref(),
                    &spec.config.notes,
                    &seq,
                    &inputs,
                    masks.as_mut(),
                )?;
                let (blocks, att) =
                    notes_for_timesteps(g, &params.attn, &encoded, &seq, &notes, n_bags)?;
                attention = att;
                blocks
            }
        }
    };

    // Timestep vectors and the record LSTM.
    let layout_empty = FeatureLayout::default();
    let layout = match spec.variant.features_mode {
        FeaturesMode::AllFeatures => &spec.layout,
        FeaturesMode::NotesOnly => &layout_empty,
    };
    let notes_dim = spec.notes_block_dim();
    let record_params = lstm_graph_params(g, store, "record.lstm")?;
    let mut record_masks: Box<dyn StepMaskSource<R>> = match mode {
        Mode::Eval => Box::new(NoMasks),
        Mode::Train { seed, regs } => Box::new(LstmRegularizer::new(
            g,
            regs.record,
            spec.record_input_dim(),
            spec.config.record_hidden,
            seed ^ 0x7265636f7264, // record-path mask stream
        )),
    };
    let mut state = zero_state(g, spec.config.record_hidden);
    for (i, bag) in bags.iter().enumerate() {
        let extra: Vec<(Option<NodeId>, usize)> = if spec.variant.uses_notes() {
            vec![(notes_blocks[i], notes_dim)]
        } else {
            Vec::new()
        };
        let x = assemble_timestep_vector(g, bag, layout, &tables.features, &extra)?;
        let m = record_masks.step_masks(g);
        state = lstm_step(g, &record_params, x, state, &m)?;
    }

    // Task head on the final hidden state.
    let head = spec.head_prefix();
    let w = g.param(&format!("{head}.w"), store.get(&format!("{head}.w"))?.clone())?;
    let b = g.param(&format!("{head}.b"), store.get(&format!("{head}.b"))?.clone())?;
    let wh = g.matmul(w, state.0)?;
    let logits = g.add(wh, b)?;

    let probabilities = probabilities_from_logits(spec.task, g.value(logits));
    Ok(ForwardOutput {
        logits,
        probabilities,
        attention,
        token_sequence: seq,
    })
}

/// BOW blocks when token embeddings are supplied externally: group the
/// sequence's tokens by bag and average; bigram contributions still come
/// from the stored table (they are functions of token pairs, not of the
/// supplied word vectors).
fn bow_blocks_from_given<R: Real>(
    g: &mut Graph<R>,
    spec: &ModelSpec,
    seq: &TokenSequence,
    notes: &[BaggedNote],
    bags: &[TimestepBag],
    tokens: &[NodeId],
    bigram_table: Option<NodeId>,
) -> Result<Vec<Option<NodeId>>, ShipError> {
    if tokens.len() != seq.len() {
        return Err(ShipError::Internal(format!(
            "given {} token vectors for a sequence of {}",
            tokens.len(),
            seq.len()
        )));
    }
    let bag_of_note = |note_index: usize| -> Result<usize, ShipError> {
        notes
            .iter()
            .find(|n| n.note_index == note_index)
            .map(|n| n.bag)
            .ok_or_else(|| ShipError::Internal(format!("note {note_index} has no bag")))
    };
    let d = spec.config.bow_embed_dim;
    let mut rows_per_bag: Vec<Vec<NodeId>> = vec![Vec::new(); bags.len()];
    for (pos, &node) in tokens.iter().enumerate() {
        let bag = bag_of_note(seq.note_ids[pos])?;
        let row = g.reshape(node, 1, d)?;
        rows_per_bag[bag].push(row);
    }
    let mut blocks = Vec::with_capacity(bags.len());
    for (bag, mut rows) in rows_per_bag.into_iter().enumerate() {
        if let (Some(table), false) = (bigram_table, bags[bag].note_bigram_ids.is_empty()) {
            rows.push(g.lookup(table, &bags[bag].note_bigram_ids)?);
        }
        if rows.is_empty() {
            blocks.push(None);
            continue;
        }
        let stacked = g.concat_rows(&rows)?;
        let mean = g.mean_rows(stacked);
        blocks.push(Some(g.reshape(mean, d, 1)?));
    }
    Ok(blocks)
}

/// Probabilities from raw logit values, computed in f64.
pub fn probabilities_from_logits<R: Real>(task: Task, logits: &NumArray<R>) -> Vec<f64> {
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    match task {
        Task::Mortality | Task::Icd9 => z.into_iter().map(sigmoid_scalar).collect(),
        Task::Ccs => {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        }
    }
}

/// Log-space loss from logits: binary cross-entropy via softplus for
/// mortality, categorical cross-entropy via log-sum-exp for CCS, and the
/// label-summed binary cross-entropy for ICD-9.
pub fn loss_from_logits<R: Real>(
    g: &mut Graph<R>,
    logits: NodeId,
    label: &TaskLabel,
) -> Result<NodeId, ShipError> {
    let dim = g.value(logits).rows();
    match label {
        TaskLabel::Mortality(y) => {
            if dim != 1 {
                return Err(ShipError::Label(format!(
                    "mortality expects a single logit, got {dim}"
                )));
            }
            let sp = g.softplus(logits);
            if *y {
                let neg = g.scale(logits, -1.0);
                Ok(g.add(sp, neg)?)
            } else {
                Ok(sp)
            }
        }
        TaskLabel::Ccs(class) => {
            if *class >= dim {
                return Err(ShipError::Label(format!(
                    "class id {class} out of range for {dim} classes"
                )));
            }
            let lse = g.log_sum_exp(logits);
            let picked = g.lookup(logits, &[*class])?;
            let neg = g.scale(picked, -1.0);
            Ok(g.add(lse, neg)?)
        }
        TaskLabel::Icd9(set) => {
            if let Some(&bad) = set.iter().find(|&&i| i >= dim) {
                return Err(ShipError::Label(format!(
                    "label id {bad} out of range for {dim} labels"
                )));
            }
            let mut y = vec![R::zero(); dim];
            for &i in set {
                y[i] = R::one();
            }
            let yv = g.input(NumArray::from_raw(dim, 1, y));
            let sp = g.softplus(logits);
            let sum_sp = g.sum_all(sp);
            let zy = g.mul(logits, yv)?;
            let sum_zy = g.sum_all(zy);
            let neg = g.scale(sum_zy, -1.0);
            Ok(g.add(sum_sp, neg)?)
        }
    }
}

/// The k highest-probability class ids, ties broken by ascending class id.
pub fn predict_topk(probabilities: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probabilities.len()).collect();
    ids.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    ids.truncate(k.min(ids.len()));
    ids
}

/// Inference convenience: probabilities for one example.
pub fn predict<R: Real>(
    store: &ParamStore<R>,
    spec: &ModelSpec,
    example: &TaskExample,
) -> Result<Vec<f64>, ShipError> {
    let mut g = Graph::<R>::new();
    let out = build_forward(
        g_mut(&mut g),
        store,
        spec,
        example,
        &Mode::Eval,
        NotesInput::Lookup,
        None,
    )?;
    Ok(out.probabilities)
}

fn g_mut<R: Real>(g: &mut Graph<R>) -> &mut Graph<R> {
    g
}
