//! Fixed-duration timestep bags.
//!
//! A task example's event timeline becomes a short sequence of bags aligned
//! backward from the prediction time: the most recent bag ends exactly at
//! the prediction time, and when more than `max_timesteps` bags would be
//! needed, everything older collapses into the bag at sequence position 0.
//! Within a bag, observations of the same feature are averaged — values
//! directly, categorical observations as the mean of their embeddings at
//! assembly time.
//!
//! Within-bag contents are kept in a canonical order (sorted ids/values), so
//! aggregates do not depend on event order; this is what makes the
//! bag-of-words path bitwise permutation-invariant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compute::{Graph, NodeId, NumArray, Real};
use crate::records::schema::{EventPayload, PatientRecord};
use crate::records::standardize::StandardizationStats;
use crate::records::tasks::TaskExample;
use crate::records::tokenize::{tokenize, BigramVocabulary, Vocabulary};
use crate::ShipError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BaggingConfig {
    /// Bag duration in hours (1 or 8 in the reference configurations).
    pub bag_hours: f64,
    /// Maximum sequence length `t`; older bags collapse into position 0.
    pub max_timesteps: usize,
}

impl BaggingConfig {
    pub fn validate(&self) -> Result<(), ShipError> {
        if !(self.bag_hours > 0.0) {
            return Err(ShipError::Config(format!(
                "bag_hours must be positive, got {}",
                self.bag_hours
            )));
        }
        if self.max_timesteps == 0 {
            return Err(ShipError::Config("max_timesteps must be >= 1".into()));
        }
        Ok(())
    }
}

/// How a structured feature is handled.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum FeatureKind {
    Continuous,
    /// Tokens observed in training, id 0 reserved for unseen tokens.
    Categorical { tokens: Vec<String> },
}

/// Structured-feature inventory fitted on the training split: which features
/// exist, their kinds, and per-feature categorical vocabularies. Admission
/// metadata is exposed as the pseudo-features `adm:type`, `adm:status`,
/// `adm:source`.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct FeatureCatalog {
    features: BTreeMap<String, FeatureKind>,
}

impl FeatureCatalog {
    pub fn fit<'a>(
        train: impl IntoIterator<Item = &'a PatientRecord>,
    ) -> Result<Self, ShipError> {
        let mut features: BTreeMap<String, FeatureKind> = BTreeMap::new();
        let mut tokens: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut observe = |feature: &str, token: Option<&str>| -> Result<(), ShipError> {
            match token {
                None => match features.get(feature) {
                    None => {
                        features.insert(feature.to_string(), FeatureKind::Continuous);
                        Ok(())
                    }
                    Some(FeatureKind::Continuous) => Ok(()),
                    Some(FeatureKind::Categorical { .. }) => Err(ShipError::Config(format!(
                        "feature {feature:?} mixes continuous and categorical payloads"
                    ))),
                },
                Some(tok) => {
                    match features.get(feature) {
                        None => {
                            features.insert(
                                feature.to_string(),
                                FeatureKind::Categorical { tokens: vec![] },
                            );
                        }
                        Some(FeatureKind::Categorical { .. }) => {}
                        Some(FeatureKind::Continuous) => {
                            return Err(ShipError::Config(format!(
                                "feature {feature:?} mixes continuous and categorical payloads"
                            )))
                        }
                    }
                    tokens
                        .entry(feature.to_string())
                        .or_default()
                        .push(tok.to_string());
                    Ok(())
                }
            }
        };
        for record in train {
            for event in &record.events {
                match &event.payload {
                    EventPayload::Value(_) => observe(&event.feature, None)?,
                    EventPayload::Token(t) => observe(&event.feature, Some(t))?,
                    EventPayload::Note(_) => {}
                }
            }
            for a in &record.admissions {
                observe("adm:type", Some(&a.admission_type))?;
                if let Some(s) = &a.status {
                    observe("adm:status", Some(s))?;
                }
                if let Some(s) = &a.source {
                    observe("adm:source", Some(s))?;
                }
            }
        }
        for (feature, mut toks) in tokens {
            toks.sort_unstable();
            toks.dedup();
            features.insert(feature, FeatureKind::Categorical { tokens: toks });
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> impl Iterator<Item = (&String, &FeatureKind)> {
        self.features.iter()
    }

    pub fn kind(&self, feature: &str) -> Option<&FeatureKind> {
        self.features.get(feature)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Embedding row for a categorical token: 1-based id, 0 for unseen.
    pub fn token_id(&self, feature: &str, token: &str) -> usize {
        match self.features.get(feature) {
            Some(FeatureKind::Categorical { tokens }) => tokens
                .binary_search_by(|t| t.as_str().cmp(token))
                .map(|i| i + 1)
                .unwrap_or(0),
            _ => 0,
        }
    }

    /// Rows of the feature's embedding table (vocabulary + OOV row 0).
    pub fn table_rows(&self, feature: &str) -> usize {
        match self.features.get(feature) {
            Some(FeatureKind::Categorical { tokens }) => tokens.len() + 1,
            _ => 0,
        }
    }
}

/// One note's provenance and token ids, pinned to the bag that contains its
/// timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct BaggedNote {
    /// Index into the example's chronological note list.
    pub note_index: usize,
    pub feature: String,
    pub timestamp: f64,
    pub bag: usize,
    pub token_ids: Vec<usize>,
}

/// Per-feature aggregate for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub enum BagAggregate {
    /// Mean of standardized values.
    Mean(f64),
    /// Sorted token ids of every categorical observation in the bag;
    /// their embeddings are averaged at assembly time.
    Tokens(Vec<usize>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimestepBag {
    /// Sequence position, 0 oldest. Position 0 is the collapsed-history bag
    /// when overflow occurred.
    pub index: usize,
    pub aggregates: BTreeMap<String, BagAggregate>,
    /// Unigram ids of all note text in this bag (bag-of-words path), sorted.
    pub note_token_ids: Vec<usize>,
    /// In-vocabulary bigram ids, sorted.
    pub note_bigram_ids: Vec<usize>,
    /// Chronological note indices whose timestamps fall in this bag.
    pub notes: Vec<usize>,
}

impl TimestepBag {
    pub fn is_masked(&self) -> bool {
        self.aggregates.is_empty() && self.note_token_ids.is_empty() && self.notes.is_empty()
    }
}

/// Everything bag construction needs besides the example itself.
pub struct Featurizer<'a> {
    pub catalog: &'a FeatureCatalog,
    pub stats: &'a StandardizationStats,
    pub vocab: &'a Vocabulary,
    pub bigrams: Option<&'a BigramVocabulary>,
}

/// Bag index (sequence position) for an observation at time `t`, given the
/// final sequence length `len`: the most recent bag ends at the prediction
/// time, and anything older than the window collapses to position 0.
fn position_for(prediction_time: f64, t: f64, bag_hours: f64, len: usize) -> usize {
    let offset = (prediction_time - t).max(0.0);
    let raw = (offset / bag_hours).floor() as usize;
    (len - 1).saturating_sub(raw)
}

/// Number of raw bags between the oldest observation and the prediction
/// time.
fn raw_span(prediction_time: f64, oldest: f64, bag_hours: f64) -> usize {
    let offset = (prediction_time - oldest).max(0.0);
    (offset / bag_hours).floor() as usize + 1
}

/// Convert an example's timeline into its bagged sequence. Always returns at
/// least one bag; an empty timeline yields a single all-masked bag.
pub fn bag_timeline(
    example: &TaskExample,
    cfg: &BaggingConfig,
    featurizer: &Featurizer,
) -> Result<(Vec<TimestepBag>, Vec<BaggedNote>), ShipError> {
    cfg.validate()?;
    let record = &example.record;
    let pt = example.prediction_time;

    struct Obs {
        t: f64,
        feature: String,
        value: ObsValue,
    }
    enum ObsValue {
        Z(f64),
        Token(usize),
    }

    let mut observations: Vec<Obs> = Vec::new();
    let mut notes_raw: Vec<(usize, String, f64, &str)> = Vec::new();
    for (note_index, (_, feature, t, text)) in record.notes().enumerate() {
        notes_raw.push((note_index, feature.to_string(), t, text));
    }
    for event in &record.events {
        match &event.payload {
            EventPayload::Value(v) => observations.push(Obs {
                t: event.t,
                feature: event.feature.clone(),
                value: ObsValue::Z(featurizer.stats.apply(&event.feature, *v)),
            }),
            EventPayload::Token(tok) => observations.push(Obs {
                t: event.t,
                feature: event.feature.clone(),
                value: ObsValue::Token(featurizer.catalog.token_id(&event.feature, tok)),
            }),
            EventPayload::Note(_) => {}
        }
    }
    for a in &record.admissions {
        if a.admit > pt {
            continue;
        }
        let mut push_adm = |feature: &str, token: &str| {
            observations.push(Obs {
                t: a.admit,
                feature: feature.to_string(),
                value: ObsValue::Token(featurizer.catalog.token_id(feature, token)),
            });
        };
        push_adm("adm:type", &a.admission_type);
        if let Some(s) = &a.status {
            push_adm("adm:status", s);
        }
        if let Some(s) = &a.source {
            push_adm("adm:source", s);
        }
    }

    let oldest = observations
        .iter()
        .map(|o| o.t)
        .chain(notes_raw.iter().map(|n| n.2))
        .fold(f64::INFINITY, f64::min);
    let len = if oldest.is_finite() {
        raw_span(pt, oldest, cfg.bag_hours).min(cfg.max_timesteps)
    } else {
        1
    };

    let mut bags: Vec<TimestepBag> = (0..len)
        .map(|index| TimestepBag {
            index,
            ..TimestepBag::default()
        })
        .collect();

    // Raw per-feature accumulation, averaged/sorted afterwards.
    let mut values: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    let mut tokens: BTreeMap<(usize, String), Vec<usize>> = BTreeMap::new();
    for obs in observations {
        let pos = position_for(pt, obs.t, cfg.bag_hours, len);
        match obs.value {
            ObsValue::Z(z) => values.entry((pos, obs.feature)).or_default().push(z),
            ObsValue::Token(id) => tokens.entry((pos, obs.feature)).or_default().push(id),
        }
    }
    for ((pos, feature), mut vs) in values {
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = vs.iter().sum::<f64>() / vs.len() as f64;
        bags[pos].aggregates.insert(feature, BagAggregate::Mean(mean));
    }
    for ((pos, feature), mut ids) in tokens {
        ids.sort_unstable();
        bags[pos]
            .aggregates
            .insert(feature, BagAggregate::Tokens(ids));
    }

    let mut bagged_notes = Vec::with_capacity(notes_raw.len());
    for (note_index, feature, t, text) in notes_raw {
        let pos = position_for(pt, t, cfg.bag_hours, len);
        let toks = tokenize(text);
        let ids = featurizer.vocab.encode(&toks);
        bags[pos].note_token_ids.extend(ids.iter().copied());
        if let Some(bv) = featurizer.bigrams {
            bags[pos].note_bigram_ids.extend(bv.encode(&toks));
        }
        bags[pos].notes.push(note_index);
        bagged_notes.push(BaggedNote {
            note_index,
            feature,
            timestamp: t,
            bag: pos,
            token_ids: ids,
        });
    }
    for bag in &mut bags {
        bag.note_token_ids.sort_unstable();
        bag.note_bigram_ids.sort_unstable();
    }
    Ok((bags, bagged_notes))
}

// ---------------------------------------------------------------------------
// Timestep vector assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum LayoutKind {
    /// Block `[mean z, presence]`.
    Continuous,
    /// Block `[mean embedding (dim - 1), presence]`.
    Categorical { table_rows: usize },
}

/// One feature's block in the concatenated timestep vector. `dim` includes
/// the trailing presence-mask channel.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayoutEntry {
    pub feature: String,
    pub kind: LayoutKind,
    pub dim: usize,
}

/// Ordered feature blocks; the order is fixed before any bagging so every
/// timestep concatenates identically.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct FeatureLayout {
    pub entries: Vec<LayoutEntry>,
}

impl FeatureLayout {
    /// Build from a catalog: continuous features get `[z, mask]`, categorical
    /// features `[embedding, mask]` with the given embedding dimension.
    pub fn from_catalog(catalog: &FeatureCatalog, struct_embed_dim: usize) -> Self {
        let entries = catalog
            .features()
            .map(|(feature, kind)| match kind {
                FeatureKind::Continuous => LayoutEntry {
                    feature: feature.clone(),
                    kind: LayoutKind::Continuous,
                    dim: 2,
                },
                FeatureKind::Categorical { tokens } => LayoutEntry {
                    feature: feature.clone(),
                    kind: LayoutKind::Categorical {
                        table_rows: tokens.len() + 1,
                    },
                    dim: struct_embed_dim + 1,
                },
            })
            .collect();
        Self { entries }
    }

    /// Total structured dimension (sum of block dims).
    pub fn dim(&self) -> usize {
        self.entries.iter().map(|e| e.dim).sum()
    }
}

/// Embedding-table nodes for categorical features, keyed by feature id.
pub type FeatureTables = BTreeMap<String, NodeId>;

/// Concatenate the bag's feature blocks in layout order. Masked features
/// contribute zero blocks; `extra_blocks` (note vectors) are appended after
/// the structured blocks, each with its own mask channel.
pub fn assemble_timestep_vector<R: Real>(
    g: &mut Graph<R>,
    bag: &TimestepBag,
    layout: &FeatureLayout,
    tables: &FeatureTables,
    extra_blocks: &[(Option<NodeId>, usize)],
) -> Result<NodeId, ShipError> {
    let mut parts: Vec<NodeId> = Vec::with_capacity(layout.entries.len() * 2 + 2);
    for entry in &layout.entries {
        match (&entry.kind, bag.aggregates.get(&entry.feature)) {
            (LayoutKind::Continuous, Some(BagAggregate::Mean(z))) => {
                let block = g.input(NumArray::column_from_f64(&[*z, 1.0])?);
                parts.push(block);
            }
            (LayoutKind::Continuous, None) => {
                let block = g.input(NumArray::zeros(2, 1));
                parts.push(block);
            }
            (LayoutKind::Categorical { .. }, Some(BagAggregate::Tokens(ids))) => {
                let table = *tables.get(&entry.feature).ok_or_else(|| {
                    ShipError::Internal(format!(
                        "no embedding table for feature {:?}",
                        entry.feature
                    ))
                })?;
                let rows = g.lookup(table, ids)?;
                let mean = g.mean_rows(rows);
                let col = g.reshape(mean, entry.dim - 1, 1)?;
                parts.push(col);
                let mask = g.input(NumArray::column_from_f64(&[1.0])?);
                parts.push(mask);
            }
            (LayoutKind::Categorical { .. }, None) => {
                let block = g.input(NumArray::zeros(entry.dim, 1));
                parts.push(block);
            }
            (kind, Some(agg)) => {
                return Err(ShipError::Internal(format!(
                    "feature {:?}: layout kind {kind:?} does not match aggregate {agg:?}",
                    entry.feature
                )))
            }
        }
    }
    for (block, dim) in extra_blocks {
        match block {
            Some(node) => {
                parts.push(*node);
                let mask = g.input(NumArray::column_from_f64(&[1.0])?);
                parts.push(mask);
            }
            None => {
                let zeros = g.input(NumArray::zeros(dim + 1, 1));
                parts.push(zeros);
            }
        }
    }
    if parts.is_empty() {
        return Err(ShipError::Internal(
            "timestep vector with no blocks".to_string(),
        ));
    }
    Ok(g.concat_rows(&parts)?)
}

/// Mean embedding of the bag's note unigrams (and bigrams at order 2).
/// Returns `None` when the bag holds no note tokens.
pub fn bow_note_features<R: Real>(
    g: &mut Graph<R>,
    bag: &TimestepBag,
    ngram_order: u8,
    unigram_table: NodeId,
    bigram_table: Option<NodeId>,
    embed_dim: usize,
) -> Result<Option<NodeId>, ShipError> {
    debug_assert!(ngram_order == 1 || ngram_order == 2);
    if bag.note_token_ids.is_empty() {
        return Ok(None);
    }
    let mut row_parts = Vec::with_capacity(2);
    let uni = g.lookup(unigram_table, &bag.note_token_ids)?;
    row_parts.push(uni);
    if ngram_order == 2 {
        if let (Some(table), false) = (bigram_table, bag.note_bigram_ids.is_empty()) {
            let bi = g.lookup(table, &bag.note_bigram_ids)?;
            row_parts.push(bi);
        }
    }
    let all = if row_parts.len() == 1 {
        row_parts[0]
    } else {
        g.concat_rows(&row_parts)?
    };
    let mean = g.mean_rows(all);
    Ok(Some(g.reshape(mean, embed_dim, 1)?))
}
