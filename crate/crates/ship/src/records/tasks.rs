//! Task definitions and leakage-free example construction.
//!
//! One example per qualifying admission. Mortality is predicted 24 hours
//! after admission; the diagnosis tasks at the moment of discharge. The
//! example input is the patient's full history up to the prediction time,
//! including all past hospitalizations; later events are cut away so a label
//! can never leak into its own input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schema::PatientRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mortality,
    Ccs,
    Icd9,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Mortality => "mortality",
            Task::Ccs => "ccs",
            Task::Icd9 => "icd9",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mortality" => Ok(Task::Mortality),
            "ccs" => Ok(Task::Ccs),
            "icd9" => Ok(Task::Icd9),
            other => Err(format!(
                "unknown task {other:?}; expected mortality | ccs | icd9"
            )),
        }
    }
}

/// Hours after admission at which inpatient mortality is predicted.
pub const MORTALITY_HORIZON_HOURS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskLabel {
    Mortality(bool),
    /// Dense class index into the fitted CCS space.
    Ccs(usize),
    /// Dense label indices into the fitted ICD-9 space.
    Icd9(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct TaskExample {
    /// `{patient_id}/{admission index}`.
    pub example_id: String,
    /// The record truncated at the prediction time.
    pub record: PatientRecord,
    pub task: Task,
    /// Hours since epoch.
    pub prediction_time: f64,
    pub label: TaskLabel,
}

/// Dense class/label spaces, fitted on the training split so the task heads'
/// output dimensions never depend on validation or test contents.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct LabelSpace {
    ccs_classes: Vec<i64>,
    icd9_labels: Vec<i64>,
    #[serde(skip)]
    ccs_index: BTreeMap<i64, usize>,
    #[serde(skip)]
    icd9_index: BTreeMap<i64, usize>,
}

impl LabelSpace {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a PatientRecord>) -> Self {
        let mut ccs: Vec<i64> = Vec::new();
        let mut icd9: Vec<i64> = Vec::new();
        for r in train {
            for a in &r.admissions {
                if let Some(c) = a.labels.ccs {
                    ccs.push(c);
                }
                if let Some(codes) = &a.labels.icd9 {
                    icd9.extend(codes.iter().copied());
                }
            }
        }
        ccs.sort_unstable();
        ccs.dedup();
        icd9.sort_unstable();
        icd9.dedup();
        let mut space = Self {
            ccs_classes: ccs,
            icd9_labels: icd9,
            ccs_index: BTreeMap::new(),
            icd9_index: BTreeMap::new(),
        };
        space.rebuild_index();
        space
    }

    pub fn rebuild_index(&mut self) {
        self.ccs_index = self
            .ccs_classes
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        self.icd9_index = self
            .icd9_labels
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
    }

    pub fn n_ccs_classes(&self) -> usize {
        self.ccs_classes.len()
    }

    pub fn n_icd9_labels(&self) -> usize {
        self.icd9_labels.len()
    }

    pub fn ccs_index(&self, raw: i64) -> Option<usize> {
        self.ccs_index.get(&raw).copied()
    }

    pub fn ccs_class(&self, index: usize) -> i64 {
        self.ccs_classes[index]
    }

    pub fn icd9_index_of(&self, raw: i64) -> Option<usize> {
        self.icd9_index.get(&raw).copied()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    /// Admissions without the label the task needs.
    pub skipped_missing_label: usize,
    /// CCS admissions excluded by the non-billable filter.
    pub skipped_nonbillable: usize,
    /// Admissions whose raw class never occurred in training.
    pub skipped_unseen_class: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Exclude CCS examples whose primary code is marked non-billable.
    pub exclude_nonbillable_ccs: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            exclude_nonbillable_ccs: true,
        }
    }
}

/// Clone the record, keeping admissions that started at or before `cutoff`
/// and events with `t <= cutoff`.
fn truncate_record(record: &PatientRecord, cutoff: f64) -> PatientRecord {
    PatientRecord {
        patient_id: record.patient_id.clone(),
        admissions: record
            .admissions
            .iter()
            .filter(|a| a.admit <= cutoff)
            .cloned()
            .collect(),
        events: record
            .events
            .iter()
            .filter(|e| e.t <= cutoff)
            .cloned()
            .collect(),
    }
}

/// Build one example per qualifying admission. Inputs include all prior
/// admissions' events; admissions missing the required label are skipped
/// and counted.
pub fn build_task_examples(
    records: &[PatientRecord],
    task: Task,
    labels: &LabelSpace,
    options: BuildOptions,
) -> (Vec<TaskExample>, BuildStats) {
    let mut examples = Vec::new();
    let mut stats = BuildStats::default();
    for record in records {
        for (i, admission) in record.admissions.iter().enumerate() {
            let prediction_time = match task {
                Task::Mortality => admission.admit + MORTALITY_HORIZON_HOURS,
                Task::Ccs | Task::Icd9 => admission.discharge,
            };
            let label = match task {
                Task::Mortality => match admission.labels.mortality {
                    Some(m) => TaskLabel::Mortality(m),
                    None => {
                        stats.skipped_missing_label += 1;
                        continue;
                    }
                },
                Task::Ccs => match admission.labels.ccs {
                    Some(raw) => {
                        if options.exclude_nonbillable_ccs && !admission.labels.ccs_billable {
                            stats.skipped_nonbillable += 1;
                            continue;
                        }
                        match labels.ccs_index(raw) {
                            Some(idx) => TaskLabel::Ccs(idx),
                            None => {
                                stats.skipped_unseen_class += 1;
                                continue;
                            }
                        }
                    }
                    None => {
                        stats.skipped_missing_label += 1;
                        continue;
                    }
                },
                Task::Icd9 => match &admission.labels.icd9 {
                    Some(raw) => {
                        // Codes outside the training space are dropped from
                        // the set; the example itself is kept.
                        let mut idx: Vec<usize> = raw
                            .iter()
                            .filter_map(|&c| labels.icd9_index_of(c))
                            .collect();
                        idx.sort_unstable();
                        idx.dedup();
                        TaskLabel::Icd9(idx)
                    }
                    None => {
                        stats.skipped_missing_label += 1;
                        continue;
                    }
                },
            };
            examples.push(TaskExample {
                example_id: format!("{}/{}", record.patient_id, i),
                record: truncate_record(record, prediction_time),
                task,
                prediction_time,
                label,
            });
        }
    }
    (examples, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::schema::{Admission, AdmissionLabels, Event, EventPayload};

    fn event(t: f64, feature: &str) -> Event {
        Event {
            t,
            feature: feature.to_string(),
            payload: EventPayload::Value(1.0),
        }
    }

    fn admission(admit: f64, discharge: f64, labels: AdmissionLabels) -> Admission {
        Admission {
            admit,
            discharge,
            admission_type: "e".into(),
            status: None,
            source: None,
            labels,
        }
    }

    fn labels(mortality: bool, ccs: i64) -> AdmissionLabels {
        AdmissionLabels {
            mortality: Some(mortality),
            ccs: Some(ccs),
            ccs_billable: true,
            icd9: Some(vec![ccs * 2, ccs * 2 + 1]),
        }
    }

    fn two_admission_record() -> PatientRecord {
        PatientRecord::new(
            "p".into(),
            vec![
                admission(0.0, 30.0, labels(false, 1)),
                admission(100.0, 160.0, labels(true, 2)),
            ],
            vec![
                event(5.0, "obs:a"),
                event(26.0, "obs:b"),
                event(29.0, "obs:c"),
                event(110.0, "obs:d"),
                event(150.0, "obs:e"),
            ],
        )
        .unwrap()
    }

    fn space_for(records: &[PatientRecord]) -> LabelSpace {
        LabelSpace::fit(records.iter())
    }

    #[test]
    fn mortality_example_cuts_at_24h() {
        let r = two_admission_record();
        let space = space_for(std::slice::from_ref(&r));
        let (ex, _) =
            build_task_examples(&[r], Task::Mortality, &space, BuildOptions::default());
        assert_eq!(ex.len(), 2);
        let first = &ex[0];
        assert_eq!(first.prediction_time, 24.0);
        // Only the t=5 event is at or before admit+24h for admission 0.
        assert_eq!(first.record.events.len(), 1);
        assert!(first
            .record
            .events
            .iter()
            .all(|e| e.t <= first.prediction_time));
    }

    #[test]
    fn second_admission_example_keeps_first_admissions_events() {
        let r = two_admission_record();
        let space = space_for(std::slice::from_ref(&r));
        let (ex, _) = build_task_examples(&[r], Task::Ccs, &space, BuildOptions::default());
        assert_eq!(ex.len(), 2);
        let second = &ex[1];
        assert_eq!(second.prediction_time, 160.0);
        assert_eq!(second.record.admissions.len(), 2);
        assert_eq!(second.record.events.len(), 5);
    }

    #[test]
    fn patient_with_zero_admissions_yields_zero_examples() {
        // A record cannot be constructed with zero admissions and events,
        // but a well-formed empty-admission list is representable.
        let r = PatientRecord {
            patient_id: "empty".into(),
            admissions: vec![],
            events: vec![],
        };
        let space = LabelSpace::default();
        let (ex, _) = build_task_examples(&[r], Task::Mortality, &space, BuildOptions::default());
        assert!(ex.is_empty());
    }

    #[test]
    fn missing_label_is_skipped_and_counted() {
        let r = PatientRecord::new(
            "p".into(),
            vec![admission(0.0, 48.0, AdmissionLabels::default())],
            vec![],
        )
        .unwrap();
        let space = LabelSpace::default();
        let (ex, stats) =
            build_task_examples(&[r], Task::Mortality, &space, BuildOptions::default());
        assert!(ex.is_empty());
        assert_eq!(stats.skipped_missing_label, 1);
    }

    #[test]
    fn nonbillable_ccs_is_filtered_by_flag() {
        let mut l = labels(false, 3);
        l.ccs_billable = false;
        let r = PatientRecord::new("p".into(), vec![admission(0.0, 48.0, l)], vec![]).unwrap();
        let space = space_for(std::slice::from_ref(&r));
        let (ex, stats) =
            build_task_examples(&[r.clone()], Task::Ccs, &space, BuildOptions::default());
        assert!(ex.is_empty());
        assert_eq!(stats.skipped_nonbillable, 1);

        let (ex, _) = build_task_examples(
            &[r],
            Task::Ccs,
            &space,
            BuildOptions {
                exclude_nonbillable_ccs: false,
            },
        );
        assert_eq!(ex.len(), 1);
    }

    #[test]
    fn no_example_contains_events_after_prediction_time() {
        let r = two_admission_record();
        let space = space_for(std::slice::from_ref(&r));
        for task in [Task::Mortality, Task::Ccs, Task::Icd9] {
            let (ex, _) = build_task_examples(
                &[r.clone()],
                task,
                &space,
                BuildOptions::default(),
            );
            for e in &ex {
                assert!(
                    e.record.events.iter().all(|ev| ev.t <= e.prediction_time),
                    "leakage in {}",
                    e.example_id
                );
            }
        }
    }

    #[test]
    fn label_space_maps_raw_ids_densely() {
        let r = two_admission_record();
        let space = space_for(std::slice::from_ref(&r));
        assert_eq!(space.n_ccs_classes(), 2);
        assert_eq!(space.ccs_index(1), Some(0));
        assert_eq!(space.ccs_index(2), Some(1));
        assert_eq!(space.ccs_index(99), None);
        assert_eq!(space.n_icd9_labels(), 4);
    }
}
