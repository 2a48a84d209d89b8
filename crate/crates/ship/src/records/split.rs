//! Patient-level 80/10/10 splits.
//!
//! Patients are ordered by a stable seeded hash of their id and cut into
//! train/validation/test. Hash ordering makes the assignment a pure function
//! of (seed, patient ids): adding a patient never reshuffles the others'
//! relative order, and the same seed always reproduces the same split.

use serde::{Deserialize, Serialize};

use crate::hash::stable_hash64_parts;

use super::schema::PatientRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone)]
pub struct CohortSplit {
    pub train: Vec<PatientRecord>,
    pub validation: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

impl CohortSplit {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Number of patients assigned to (train, validation, test) for a cohort of
/// `n`: validation and test each get round(n/10), train the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = (n as f64 * 0.1).round() as usize;
    let validation = tenth.min(n);
    let test = tenth.min(n - validation);
    (n - validation - test, validation, test)
}

/// Partition records by patient id into 80/10/10 under a deterministic
/// seeded hash. Every patient lands in exactly one split.
pub fn split_cohort(records: Vec<PatientRecord>, seed: u64) -> CohortSplit {
    let mut keyed: Vec<(u64, PatientRecord)> = records
        .into_iter()
        .map(|r| {
            let h = stable_hash64_parts(&[&seed.to_le_bytes(), r.patient_id.as_bytes()]);
            (h, r)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.patient_id.cmp(&b.1.patient_id)));
    let n = keyed.len();
    let (n_train, n_validation, _n_test) = split_sizes(n);
    let mut train = Vec::with_capacity(n_train);
    let mut validation = Vec::with_capacity(n_validation);
    let mut test = Vec::new();
    for (i, (_, r)) in keyed.into_iter().enumerate() {
        if i < n_train {
            train.push(r);
        } else if i < n_train + n_validation {
            validation.push(r);
        } else {
            test.push(r);
        }
    }
    CohortSplit {
        train,
        validation,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::schema::{Admission, AdmissionLabels};

    fn patient(id: &str) -> PatientRecord {
        PatientRecord::new(
            id.to_string(),
            vec![Admission {
                admit: 0.0,
                discharge: 48.0,
                admission_type: "e".into(),
                status: None,
                source: None,
                labels: AdmissionLabels::default(),
            }],
            vec![],
        )
        .unwrap()
    }

    fn cohort(n: usize) -> Vec<PatientRecord> {
        (0..n).map(|i| patient(&format!("p{i:04}"))).collect()
    }

    #[test]
    fn ten_patients_split_eight_one_one() {
        let s = split_cohort(cohort(10), 0);
        assert_eq!(s.counts(), (8, 1, 1));
    }

    #[test]
    fn proportions_within_one_patient() {
        for n in [5usize, 23, 100, 137, 1000] {
            let (tr, va, te) = split_sizes(n);
            assert_eq!(tr + va + te, n);
            assert!((va as f64 - n as f64 * 0.1).abs() <= 1.0, "n={n} va={va}");
            assert!((te as f64 - n as f64 * 0.1).abs() <= 1.0, "n={n} te={te}");
            assert!((tr as f64 - n as f64 * 0.8).abs() <= 2.0, "n={n} tr={tr}");
        }
    }

    #[test]
    fn same_seed_gives_identical_assignment() {
        let ids = |s: &CohortSplit| {
            (
                s.train.iter().map(|r| r.patient_id.clone()).collect::<Vec<_>>(),
                s.validation.iter().map(|r| r.patient_id.clone()).collect::<Vec<_>>(),
                s.test.iter().map(|r| r.patient_id.clone()).collect::<Vec<_>>(),
            )
        };
        let a = split_cohort(cohort(57), 7);
        let b = split_cohort(cohort(57), 7);
        assert_eq!(ids(&a), ids(&b));
        let c = split_cohort(cohort(57), 8);
        assert_ne!(ids(&a), ids(&c), "different seeds should reshuffle");
    }

    #[test]
    fn every_patient_in_exactly_one_split() {
        let s = split_cohort(cohort(41), 3);
        let mut all: Vec<String> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .map(|r| r.patient_id.clone())
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 41);
    }
}
