//! Z-score standardization of continuous features.
//!
//! Statistics are fit on the training split only and are immutable
//! afterwards. Scores are capped to [-10, +10]. Degenerate features (zero
//! variance in training) standardize to a constant 0, and features never
//! seen in training standardize to 0 with a logged warning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schema::{EventPayload, PatientRecord};

pub const Z_CAP: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureStats {
    pub mean: f64,
    pub stddev: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct StandardizationStats {
    per_feature: BTreeMap<String, FeatureStats>,
}

impl StandardizationStats {
    /// Fit means and standard deviations (population denominator) of every
    /// continuous feature over the given records. Call this with the
    /// training split only.
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a PatientRecord>) -> Self {
        let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
        for record in train {
            for event in &record.events {
                if let EventPayload::Value(v) = event.payload {
                    let e = sums.entry(event.feature.clone()).or_insert((0.0, 0.0, 0));
                    e.0 += v;
                    e.1 += v * v;
                    e.2 += 1;
                }
            }
        }
        let per_feature = sums
            .into_iter()
            .map(|(feature, (s, s2, n))| {
                let mean = s / n as f64;
                let var = (s2 / n as f64 - mean * mean).max(0.0);
                (
                    feature,
                    FeatureStats {
                        mean,
                        stddev: var.sqrt(),
                        count: n,
                    },
                )
            })
            .collect();
        Self { per_feature }
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureStats> {
        self.per_feature.get(name)
    }

    pub fn features(&self) -> impl Iterator<Item = &String> {
        self.per_feature.keys()
    }

    pub fn len(&self) -> usize {
        self.per_feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_feature.is_empty()
    }

    /// `(value - mean) / stddev`, capped to ±10. Degenerate and unknown
    /// features map to 0; unknown features log a warning.
    pub fn apply(&self, feature: &str, value: f64) -> f64 {
        match self.per_feature.get(feature) {
            Some(s) if s.stddev > 0.0 => ((value - s.mean) / s.stddev).clamp(-Z_CAP, Z_CAP),
            Some(_) => 0.0,
            None => {
                log::warn!("standardization: unknown feature {feature:?}, emitting z = 0");
                0.0
            }
        }
    }
}
