//! Record schema and validation.
//!
//! The wire format is JSONL, one patient per line:
//!
//! ```json
//! {"patient_id": "p1",
//!  "admissions": [{"admit": 100.0, "discharge": 148.0, "type": "emergency",
//!                  "labels": {"mortality": false, "ccs": 3, "icd9": [6, 7]}}],
//!  "events": [{"t": 101.5, "f": "obs:heart_rate", "v": 82.0},
//!             {"t": 102.0, "f": "code:dx", "v": "grp3"},
//!             {"t": 147.0, "f": "note:discharge_summary", "note": "..."}]}
//! ```
//!
//! Times are hours since a shared epoch. An event carries exactly one
//! payload: a real value in `v`, a categorical token in `v`, or note text in
//! `note`.

use serde::{Deserialize, Serialize};

use super::RecordError;

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    /// Continuous observation (lab result, vital sign).
    Value(f64),
    /// Categorical token (diagnosis/procedure code, medication order).
    Token(String),
    /// Free-text clinical note.
    Note(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// Hours since epoch.
    pub t: f64,
    /// Namespaced feature id: `code:`, `med:`, `obs:`, `note:`, `adm:`.
    pub feature: String,
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdmissionLabels {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mortality: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccs: Option<i64>,
    /// Whether the primary diagnosis maps to a billable code. Defaults to
    /// true; examples with false are excluded from the CCS task when the
    /// label-side filter is on.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub ccs_billable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icd9: Option<Vec<i64>>,
}

fn default_true() -> bool {
    true
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    /// Hours since epoch.
    pub admit: f64,
    pub discharge: f64,
    pub admission_type: String,
    pub status: Option<String>,
    pub source: Option<String>,
    pub labels: AdmissionLabels,
}

impl Admission {
    pub fn length_hours(&self) -> f64 {
        self.discharge - self.admit
    }
}

/// A patient's full timeline. Construction through [`PatientRecord::new`]
/// sorts the events and enforces the cohort invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    /// Sorted by admit time, non-overlapping, each at least 24 hours long.
    pub admissions: Vec<Admission>,
    /// Sorted by timestamp; no event after the last discharge.
    pub events: Vec<Event>,
}

/// Minimum admission length, in hours, for cohort membership.
pub const MIN_ADMISSION_HOURS: f64 = 24.0;

impl PatientRecord {
    pub fn new(
        patient_id: String,
        mut admissions: Vec<Admission>,
        mut events: Vec<Event>,
    ) -> Result<Self, RecordError> {
        let fail = |msg: String| {
            Err(RecordError::Validation {
                patient_id: patient_id.clone(),
                message: msg,
            })
        };
        admissions.sort_by(|a, b| a.admit.partial_cmp(&b.admit).unwrap());
        for a in &admissions {
            if !a.admit.is_finite() || !a.discharge.is_finite() {
                return fail("non-finite admission time".to_string());
            }
            if a.length_hours() < MIN_ADMISSION_HOURS {
                return fail(format!(
                    "admission of {:.1}h is shorter than the {MIN_ADMISSION_HOURS}h cohort minimum",
                    a.length_hours()
                ));
            }
        }
        for pair in admissions.windows(2) {
            if pair[1].admit < pair[0].discharge {
                return fail(format!(
                    "admissions overlap: discharge {} after next admit {}",
                    pair[0].discharge, pair[1].admit
                ));
            }
        }
        events.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        let last_discharge = admissions.last().map(|a| a.discharge);
        for e in &events {
            if !e.t.is_finite() {
                return fail(format!("non-finite event time on feature {}", e.feature));
            }
            if let EventPayload::Value(v) = e.payload {
                if !v.is_finite() {
                    return fail(format!("non-finite value for feature {}", e.feature));
                }
            }
            match last_discharge {
                Some(d) if e.t <= d => {}
                Some(d) => {
                    return fail(format!(
                        "event at t={} on feature {} is after the final discharge at {}",
                        e.t, e.feature, d
                    ))
                }
                None => {
                    return fail(format!(
                        "event on feature {} but the record has no admissions",
                        e.feature
                    ))
                }
            }
        }
        Ok(Self {
            patient_id,
            admissions,
            events,
        })
    }

    /// Iterate note events as `(event index, feature, timestamp, text)`.
    pub fn notes(&self) -> impl Iterator<Item = (usize, &str, f64, &str)> {
        self.events.iter().enumerate().filter_map(|(i, e)| {
            if let EventPayload::Note(text) = &e.payload {
                Some((i, e.feature.as_str(), e.t, text.as_str()))
            } else {
                None
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Wire representation
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct RecordWire {
    pub patient_id: String,
    pub admissions: Vec<AdmissionWire>,
    pub events: Vec<EventWire>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct AdmissionWire {
    pub admit: f64,
    pub discharge: f64,
    #[serde(rename = "type")]
    pub admission_type: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub labels: AdmissionLabels,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct EventWire {
    pub t: f64,
    pub f: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RecordWire {
    pub fn into_record(self) -> Result<PatientRecord, RecordError> {
        let patient_id = self.patient_id;
        let admissions = self
            .admissions
            .into_iter()
            .map(|a| Admission {
                admit: a.admit,
                discharge: a.discharge,
                admission_type: a.admission_type,
                status: a.status,
                source: a.source,
                labels: a.labels,
            })
            .collect();
        let mut events = Vec::with_capacity(self.events.len());
        for e in self.events {
            let payload = match (e.v, e.note) {
                (None, Some(text)) => EventPayload::Note(text),
                (Some(serde_json::Value::String(tok)), None) => EventPayload::Token(tok),
                (Some(serde_json::Value::Number(n)), None) => {
                    EventPayload::Value(n.as_f64().unwrap_or(f64::NAN))
                }
                (Some(other), None) => {
                    return Err(RecordError::Validation {
                        patient_id,
                        message: format!(
                            "feature {}: payload must be a number or string, got {other}",
                            e.f
                        ),
                    })
                }
                (Some(_), Some(_)) => {
                    return Err(RecordError::Validation {
                        patient_id,
                        message: format!("feature {}: both value and note present", e.f),
                    })
                }
                (None, None) => {
                    return Err(RecordError::Validation {
                        patient_id,
                        message: format!("feature {}: event has no payload", e.f),
                    })
                }
            };
            events.push(Event {
                t: e.t,
                feature: e.f,
                payload,
            });
        }
        PatientRecord::new(patient_id, admissions, events)
    }

    pub fn from_record(r: &PatientRecord) -> Self {
        RecordWire {
            patient_id: r.patient_id.clone(),
            admissions: r
                .admissions
                .iter()
                .map(|a| AdmissionWire {
                    admit: a.admit,
                    discharge: a.discharge,
                    admission_type: a.admission_type.clone(),
                    status: a.status.clone(),
                    source: a.source.clone(),
                    labels: a.labels.clone(),
                })
                .collect(),
            events: r
                .events
                .iter()
                .map(|e| {
                    let (v, note) = match &e.payload {
                        EventPayload::Value(x) => {
                            (Some(serde_json::json!(x)), None)
                        }
                        EventPayload::Token(s) => {
                            (Some(serde_json::Value::String(s.clone())), None)
                        }
                        EventPayload::Note(text) => (None, Some(text.clone())),
                    };
                    EventWire {
                        t: e.t,
                        f: e.feature.clone(),
                        v,
                        note,
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn admission(admit: f64, discharge: f64) -> Admission {
        Admission {
            admit,
            discharge,
            admission_type: "emergency".to_string(),
            status: None,
            source: None,
            labels: AdmissionLabels::default(),
        }
    }

    #[test]
    fn events_are_sorted_on_construction() {
        let events = vec![
            Event {
                t: 30.0,
                feature: "obs:a".into(),
                payload: EventPayload::Value(2.0),
            },
            Event {
                t: 10.0,
                feature: "obs:a".into(),
                payload: EventPayload::Value(1.0),
            },
        ];
        let r = PatientRecord::new("p".into(), vec![admission(0.0, 48.0)], events).unwrap();
        assert_eq!(r.events[0].t, 10.0);
        assert_eq!(r.events[1].t, 30.0);
    }

    #[test]
    fn event_after_discharge_is_rejected() {
        let events = vec![Event {
            t: 50.0,
            feature: "obs:a".into(),
            payload: EventPayload::Value(1.0),
        }];
        let err = PatientRecord::new("p9".into(), vec![admission(0.0, 48.0)], events).unwrap_err();
        match err {
            RecordError::Validation { patient_id, .. } => assert_eq!(patient_id, "p9"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn short_admission_is_rejected() {
        let err = PatientRecord::new("p".into(), vec![admission(0.0, 10.0)], vec![]).unwrap_err();
        assert!(err.to_string().contains("24"));
    }

    #[test]
    fn overlapping_admissions_are_rejected() {
        let err = PatientRecord::new(
            "p".into(),
            vec![admission(0.0, 48.0), admission(40.0, 96.0)],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("overlap"));
    }

    #[test]
    fn payload_must_be_exactly_one_kind() {
        let line = r#"{"patient_id":"p","admissions":[{"admit":0,"discharge":48,"type":"e","labels":{}}],"events":[{"t":1,"f":"obs:a","v":1.0,"note":"x"}]}"#;
        let wire: RecordWire = serde_json::from_str(line).unwrap();
        assert!(wire.into_record().is_err());
    }
}
