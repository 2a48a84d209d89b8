//! Synthetic cohort generator with planted, context-dependent signals.
//!
//! Each patient's discharge note states the class term immediately after the
//! trigger phrase `discharge diagnoses :`. Every note also carries the decoy
//! phrase `no family history of`, followed — with probability `decoy_rate` —
//! by a *different* class's term, and otherwise by the neutral word
//! `illness`. A planted term therefore appears exactly once whether it sits
//! in trigger or decoy context, so unigram counts cannot separate the two
//! constructions: order-blind models face an irreducible ambiguity on
//! decoyed notes while order-aware models can read the context.
//!
//! Structured events carry deliberately weak class signal (shared code
//! groups, noisy labs); the mortality label is driven by a separate planted
//! vital-sign pattern in the first 24 hours.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::stable_hash64_parts;

use super::schema::{Admission, AdmissionLabels, Event, EventPayload, PatientRecord};
use super::RecordError;

pub const TRIGGER_PHRASE: &str = "discharge diagnoses :";
pub const DECOY_PHRASE: &str = "no family history of";
pub const NEUTRAL_DECOY_WORD: &str = "illness";

/// Token form of class `c`'s identifying term.
pub fn class_term(class: usize) -> String {
    format!("malady{class:02}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    pub patients: usize,
    /// Size of the noise-term pool substituted into template sentences.
    pub vocab_size: usize,
    /// Number of diagnosis classes (CCS classes in the synthetic cohort).
    pub classes: usize,
    /// Probability that a note's decoy phrase is followed by another class's
    /// term instead of the neutral word.
    pub decoy_rate: f64,
    pub note_tokens_min: usize,
    pub note_tokens_max: usize,
    /// Probability of a prior hospitalization in the patient's history.
    pub second_admission_rate: f64,
    pub mortality_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            patients: 2000,
            vocab_size: 60,
            classes: 10,
            decoy_rate: 0.6,
            note_tokens_min: 18,
            note_tokens_max: 36,
            second_admission_rate: 0.15,
            mortality_rate: 0.25,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), RecordError> {
        let fail = |m: String| Err(RecordError::Config(m));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.classes > self.vocab_size {
            return fail(format!(
                "classes ({}) exceed vocabulary size ({})",
                self.classes, self.vocab_size
            ));
        }
        for (name, rate) in [
            ("decoy_rate", self.decoy_rate),
            ("second_admission_rate", self.second_admission_rate),
            ("mortality_rate", self.mortality_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return fail(format!("{name} must be in [0, 1], got {rate}"));
            }
        }
        if self.note_tokens_min < 8 || self.note_tokens_max < self.note_tokens_min {
            return fail(format!(
                "note token range [{}, {}] is invalid",
                self.note_tokens_min, self.note_tokens_max
            ));
        }
        Ok(())
    }
}

/// Note bodies are built from these template sentences, occasionally with
/// one word swapped for a noise term, so the text has learnable sequential
/// structure the way real clinical boilerplate does.
const TEMPLATES: &[&str] = &[
    "patient was stable overnight",
    "continued monitoring on the floor",
    "labs within normal limits",
    "tolerating diet without difficulty",
    "ambulating without assistance",
    "medications reviewed with the team",
    "vitals remained afebrile",
    "respiratory status clear on exam",
    "remained alert and oriented",
    "seen by the team daily",
    "exam otherwise unremarkable",
    "plan to follow up with primary care",
    "will continue home regimen",
    "course was uncomplicated",
    "denies pain at rest",
    "encouraged oral intake",
    "monitored on telemetry overnight",
    "wound care performed at bedside",
];

/// Probability that a template sentence carries one noise-term substitution.
const SLOT_NOISE: f64 = 0.15;

fn noise_terms(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("term{i:03}")).collect()
}

fn normal(rng: &mut impl Rng, mean: f64, std: f64) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    mean + std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct NotePlan<'a> {
    noise: &'a [String],
    tokens_min: usize,
    tokens_max: usize,
}

impl<'a> NotePlan<'a> {
    /// Skewed draw over the noise pool so low-index terms dominate, giving
    /// the substitutions a roughly Zipfian profile.
    fn noise_word(&self, rng: &mut impl Rng) -> &'a str {
        let u: f64 = rng.gen::<f64>();
        let idx = ((u * u) * self.noise.len() as f64) as usize;
        &self.noise[idx.min(self.noise.len() - 1)]
    }

    fn sentence(&self, rng: &mut impl Rng) -> Vec<String> {
        let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let mut s: Vec<String> = template.split(' ').map(str::to_string).collect();
        if rng.gen::<f64>() < SLOT_NOISE {
            let slot = rng.gen_range(0..s.len());
            s[slot] = self.noise_word(rng).to_string();
        }
        s.push(".".to_string());
        s
    }

    fn filler_sentences(&self, rng: &mut impl Rng, target_tokens: usize) -> Vec<Vec<String>> {
        let mut sentences = Vec::new();
        let mut total = 0;
        while total < target_tokens {
            let s = self.sentence(rng);
            total += s.len();
            sentences.push(s);
        }
        sentences
    }

    /// Body-only note: filler sentences joined with spaces.
    fn plain_note(&self, rng: &mut impl Rng, target_tokens: usize) -> String {
        let sentences = self.filler_sentences(rng, target_tokens);
        join_sentences(&sentences)
    }

    /// Discharge note carrying the trigger sentence for `class` and a decoy
    /// sentence naming `decoy_class` (or the neutral word when `None`).
    fn discharge_note(
        &self,
        rng: &mut impl Rng,
        class: usize,
        decoy_class: Option<usize>,
    ) -> String {
        let target = rng.gen_range(self.tokens_min..=self.tokens_max);
        let mut sentences = self.filler_sentences(rng, target);
        let decoy_word = match decoy_class {
            Some(d) => class_term(d),
            None => NEUTRAL_DECOY_WORD.to_string(),
        };
        let decoy_sentence: Vec<String> = DECOY_PHRASE
            .split(' ')
            .map(str::to_string)
            .chain([decoy_word, ".".to_string()])
            .collect();
        let trigger_sentence: Vec<String> = TRIGGER_PHRASE
            .split(' ')
            .map(str::to_string)
            .chain([class_term(class), ".".to_string()])
            .collect();
        let decoy_pos = rng.gen_range(0..=sentences.len());
        sentences.insert(decoy_pos, decoy_sentence);
        // Trigger lands in the later half of the note, as in real discharge
        // summaries.
        let lo = sentences.len() / 2;
        let trigger_pos = rng.gen_range(lo..=sentences.len());
        sentences.insert(trigger_pos, trigger_sentence);
        join_sentences(&sentences)
    }
}

fn join_sentences(sentences: &[Vec<String>]) -> String {
    sentences
        .iter()
        .flat_map(|s| s.iter())
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

fn icd9_for_class(class: usize, classes: usize, rng: &mut impl Rng) -> Vec<i64> {
    let mut codes = vec![(2 * class) as i64, (2 * class + 1) as i64];
    if rng.gen::<f64>() < 0.4 {
        codes.push((2 * classes + rng.gen_range(0..4)) as i64);
    }
    codes
}

#[allow(clippy::too_many_arguments)]
fn admission_events(
    rng: &mut impl Rng,
    plan: &NotePlan,
    cfg: &GeneratorConfig,
    admit: f64,
    discharge: f64,
    class: usize,
    mortality: bool,
    with_discharge_note: bool,
) -> Vec<Event> {
    let mut events = Vec::new();
    // Planted vital-sign pattern in the first 24h drives the mortality
    // label: tachycardia for patients who die in hospital.
    let hr_mean = if mortality { 128.0 } else { 82.0 };
    for offset in [2.0, 8.0, 14.0, 20.0] {
        events.push(Event {
            t: admit + offset,
            feature: "obs:heart_rate".to_string(),
            payload: EventPayload::Value(normal(rng, hr_mean, 8.0)),
        });
    }
    // Weak class-correlated lab value.
    for _ in 0..2 {
        let t = admit + rng.gen_range(1.0..(discharge - admit));
        events.push(Event {
            t,
            feature: "obs:lab_panel".to_string(),
            payload: EventPayload::Value(normal(rng, 0.3 * class as f64, 1.0)),
        });
    }
    // Diagnosis codes share a group across classes: weak, ambiguous signal.
    let group = if rng.gen::<f64>() < 0.6 {
        class % 5
    } else {
        rng.gen_range(0..5)
    };
    events.push(Event {
        t: admit + rng.gen_range(1.0..12.0),
        feature: "code:dx".to_string(),
        payload: EventPayload::Token(format!("grp{group}")),
    });
    for _ in 0..2 {
        events.push(Event {
            t: admit + rng.gen_range(1.0..(discharge - admit)),
            feature: "med:order".to_string(),
            payload: EventPayload::Token(format!("med{}", rng.gen_range(0..8))),
        });
    }
    // Early nursing note within the mortality horizon.
    events.push(Event {
        t: admit + rng.gen_range(3.0..20.0),
        feature: "note:nursing".to_string(),
        payload: EventPayload::Note(plan.plain_note(rng, cfg.note_tokens_min / 2 + 4)),
    });
    if with_discharge_note {
        let decoy_class = if rng.gen::<f64>() < cfg.decoy_rate {
            // A different class's term.
            let mut d = rng.gen_range(0..cfg.classes - 1);
            if d >= class {
                d += 1;
            }
            Some(d)
        } else {
            None
        };
        events.push(Event {
            t: discharge - 1.0,
            feature: "note:discharge_summary".to_string(),
            payload: EventPayload::Note(plan.discharge_note(rng, class, decoy_class)),
        });
    }
    events
}

/// Deterministic synthetic cohort: each patient derives its own RNG from
/// `(seed, index)`, so generation order (or parallelism) cannot change the
/// output.
pub fn generate_synthetic_cohort(
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<Vec<PatientRecord>, RecordError> {
    cfg.validate()?;
    let noise = noise_terms(cfg.vocab_size);
    let plan = NotePlan {
        noise: &noise,
        tokens_min: cfg.note_tokens_min,
        tokens_max: cfg.note_tokens_max,
    };
    let mut records = Vec::with_capacity(cfg.patients);
    for i in 0..cfg.patients {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64_parts(&[
            &seed.to_le_bytes(),
            &(i as u64).to_le_bytes(),
            b"patient",
        ]));
        let class = rng.gen_range(0..cfg.classes);
        let mortality = rng.gen::<f64>() < cfg.mortality_rate;
        let admit = rng.gen_range(10_000.0..100_000.0f64).round();
        let discharge = admit + rng.gen_range(48.0..240.0f64).round();

        let mut admissions = Vec::new();
        let mut events = Vec::new();

        if rng.gen::<f64>() < cfg.second_admission_rate {
            let past_class = rng.gen_range(0..cfg.classes);
            let past_admit = admit - rng.gen_range(600.0..2000.0f64).round();
            let past_discharge = past_admit + rng.gen_range(48.0..120.0f64).round();
            admissions.push(Admission {
                admit: past_admit,
                discharge: past_discharge,
                admission_type: ["emergency", "elective", "urgent"][rng.gen_range(0..3)].into(),
                status: Some(["inpatient", "observation"][rng.gen_range(0..2)].into()),
                source: Some(["ed", "referral", "transfer"][rng.gen_range(0..3)].into()),
                labels: AdmissionLabels {
                    mortality: Some(false),
                    ccs: Some(past_class as i64),
                    ccs_billable: true,
                    icd9: Some(icd9_for_class(past_class, cfg.classes, &mut rng)),
                },
            });
            events.extend(admission_events(
                &mut rng,
                &plan,
                cfg,
                past_admit,
                past_discharge,
                past_class,
                false,
                true,
            ));
        }

        admissions.push(Admission {
            admit,
            discharge,
            admission_type: ["emergency", "elective", "urgent"][rng.gen_range(0..3)].into(),
            status: Some(["inpatient", "observation"][rng.gen_range(0..2)].into()),
            source: Some(["ed", "referral", "transfer"][rng.gen_range(0..3)].into()),
            labels: AdmissionLabels {
                mortality: Some(mortality),
                ccs: Some(class as i64),
                ccs_billable: true,
                icd9: Some(icd9_for_class(class, cfg.classes, &mut rng)),
            },
        });
        events.extend(admission_events(
            &mut rng, &plan, cfg, admit, discharge, class, mortality, true,
        ));

        records.push(PatientRecord::new(
            format!("synth-{i:05}"),
            admissions,
            events,
        )?);
    }
    Ok(records)
}

/// Probe records for attribution checks: the discharge note contains the
/// *same* class term once after the trigger phrase and once after the decoy
/// phrase, so per-occurrence attributions can be compared directly.
pub fn generate_context_probes(
    cfg: &GeneratorConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<PatientRecord>, RecordError> {
    cfg.validate()?;
    let noise = noise_terms(cfg.vocab_size);
    let plan = NotePlan {
        noise: &noise,
        tokens_min: cfg.note_tokens_min,
        tokens_max: cfg.note_tokens_max,
    };
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64_parts(&[
            &seed.to_le_bytes(),
            &(i as u64).to_le_bytes(),
            b"probe",
        ]));
        let class = i % cfg.classes;
        let admit = rng.gen_range(10_000.0..100_000.0f64).round();
        let discharge = admit + rng.gen_range(48.0..240.0f64).round();

        let term = class_term(class);
        let target = rng.gen_range(cfg.note_tokens_min..=cfg.note_tokens_max);
        let mut sentences = plan.filler_sentences(&mut rng, target);
        let decoy_sentence: Vec<String> = DECOY_PHRASE
            .split(' ')
            .map(str::to_string)
            .chain([term.clone(), ".".to_string()])
            .collect();
        let trigger_sentence: Vec<String> = TRIGGER_PHRASE
            .split(' ')
            .map(str::to_string)
            .chain([term, ".".to_string()])
            .collect();
        // Decoy placed anywhere, trigger placed after it half the time and
        // before it otherwise, so position alone cannot identify the
        // trigger occurrence.
        let decoy_pos = rng.gen_range(0..=sentences.len());
        sentences.insert(decoy_pos, decoy_sentence);
        let trigger_pos = if rng.gen::<bool>() {
            rng.gen_range(0..=decoy_pos)
        } else {
            rng.gen_range(decoy_pos + 1..=sentences.len())
        };
        sentences.insert(trigger_pos, trigger_sentence);
        let note = join_sentences(&sentences);

        let events = vec![Event {
            t: discharge - 1.0,
            feature: "note:discharge_summary".to_string(),
            payload: EventPayload::Note(note),
        }];
        records.push(PatientRecord::new(
            format!("probe-{i:05}"),
            vec![Admission {
                admit,
                discharge,
                admission_type: "emergency".into(),
                status: Some("inpatient".into()),
                source: Some("ed".into()),
                labels: AdmissionLabels {
                    mortality: Some(false),
                    ccs: Some(class as i64),
                    ccs_billable: true,
                    icd9: Some(vec![(2 * class) as i64]),
                },
            }],
            events,
        )?);
    }
    Ok(records)
}
