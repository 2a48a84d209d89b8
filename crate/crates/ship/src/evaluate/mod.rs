//! Evaluation metrics and the significance test.
//!
//! Every metric here has a brute-force oracle in its tests: AUROC against
//! O(n^2) pair counting, average precision against an exhaustive threshold
//! sweep, the t survival function against quadrature. The definitions:
//!
//! - AUROC is the Mann-Whitney probability that a random positive outranks a
//!   random negative, ties counted 1/2.
//! - AUPRC is average precision with step interpolation: the mean over
//!   ranked positives of precision at that rank, ties broken by descending
//!   score then ascending example index.
//! - Weighted AUROC averages per-label AUROCs by label prevalence, skipping
//!   (with a warning) labels that have a single class in the evaluation set.

mod stats;

pub use stats::{incomplete_beta, ln_gamma, student_t_sf, welch_t_test, WelchResult};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Probability that a uniformly random positive is scored above a uniformly
/// random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvaluateError> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvaluateError::Undefined(format!(
            "auroc needs both classes, got {n_pos} positives / {n_neg} negatives"
        )));
    }
    // Rank formulation: sum of average ranks of positives.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Average precision. Ranking is by descending score with ties broken by
/// ascending example index (input order), which makes the value
/// deterministic.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, EvaluateError> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(EvaluateError::Undefined(
            "auprc needs at least one positive".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut seen_pos = 0usize;
    let mut sum_precision = 0.0f64;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx] {
            seen_pos += 1;
            sum_precision += seen_pos as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum_precision / n_pos as f64)
}

/// Per-label AUROC averaged by label prevalence. Labels with a single class
/// are excluded from both the numerator and the prevalence normalizer, with
/// a logged warning. Errors when every label is single-class.
pub fn weighted_auroc(per_label: &[(Vec<f64>, Vec<bool>)]) -> Result<f64, EvaluateError> {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut used = 0usize;
    for (k, (scores, labels)) in per_label.iter().enumerate() {
        let n_pos = labels.iter().filter(|&&l| l).count();
        if n_pos == 0 || n_pos == labels.len() {
            log::warn!("weighted_auroc: label {k} has a single class; excluded");
            continue;
        }
        let prevalence = n_pos as f64 / labels.len() as f64;
        num += prevalence * auroc(scores, labels)?;
        den += prevalence;
        used += 1;
    }
    if used == 0 {
        return Err(EvaluateError::Undefined(
            "weighted_auroc: every label is single-class".to_string(),
        ));
    }
    Ok(num / den)
}

/// Fraction of examples whose true class appears among the first `k` ranked
/// class ids.
pub fn topk_recall(ranked: &[Vec<usize>], true_class: &[usize], k: usize) -> f64 {
    assert_eq!(ranked.len(), true_class.len());
    assert!(k >= 1);
    if ranked.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .zip(true_class)
        .filter(|(r, t)| r.iter().take(k).any(|c| c == *t))
        .count();
    hits as f64 / ranked.len() as f64
}

/// Per-metric mean and standard deviation over independent runs, with the
/// raw values retained.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl MetricSummary {
    /// Sample standard deviation (n-1 denominator); 0 for a single run.
    pub fn from_runs(runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let std = if runs.len() < 2 {
            0.0
        } else {
            (runs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std, runs }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub task: String,
    pub n_examples: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricsReport {
    pub fn new(task: &str, n_examples: usize) -> Self {
        Self {
            task: task.to_string(),
            n_examples,
            metrics: BTreeMap::new(),
        }
    }

    /// Aggregate one metric's per-run values into the report.
    pub fn insert_runs(&mut self, metric: &str, runs: Vec<f64>) {
        self.metrics
            .insert(metric.to_string(), MetricSummary::from_runs(runs));
    }

    /// `mean (std)` formatting used in result tables.
    pub fn formatted(&self, metric: &str) -> Option<String> {
        self.metrics
            .get(metric)
            .map(|m| format!("{:.3} ({:.3})", m.mean, m.std))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// O(n^2) pairwise oracle for AUROC.
    fn auroc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Threshold-sweep oracle for average precision: walk the documented
    /// ranking and recompute precision from scratch at every positive.
    fn auprc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
        let n_pos = labels.iter().filter(|&&l| l).count();
        let mut total = 0.0;
        for cut in 1..=order.len() {
            let idx = order[cut - 1];
            if !labels[idx] {
                continue;
            }
            let tp = order[..cut].iter().filter(|&&i| labels[i]).count();
            total += tp as f64 / cut as f64;
        }
        total / n_pos as f64
    }

    #[test]
    fn auroc_perfect_separation() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auroc_near_half_for_random_scores() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 20_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        let v = auroc(&scores, &labels).unwrap();
        assert!((v - 0.5).abs() < 0.02, "auroc {v}");
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auroc(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn auroc_matches_pairwise_oracle_with_ties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let n = rng.gen_range(2..=50);
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            labels[0] = true;
            if n > 1 {
                labels[1] = false;
            }
            let ours = auroc(&scores, &labels).unwrap();
            let oracle = auroc_oracle(&scores, &labels);
            assert!((ours - oracle).abs() < 1e-12, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let n = rng.gen_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            labels[0] = true;
            labels[1] = false;
            let transformed: Vec<f64> = scores.iter().map(|&s| (2.0 * s).exp() + 1.0).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&transformed, &labels).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn auprc_all_positives_first() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auprc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auprc_single_positive_ranked_kth() {
        // Positive at rank 3 of 5: AP = 1/3.
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5];
        let labels = [false, false, true, false, false];
        let v = auprc(&scores, &labels).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auprc_zero_positives_is_undefined() {
        assert!(auprc(&[0.5, 0.4], &[false, false]).is_err());
    }

    #[test]
    fn auprc_matches_threshold_sweep_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let n = rng.gen_range(1..=50);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            labels[0] = true;
            let ours = auprc(&scores, &labels).unwrap();
            let oracle = auprc_oracle(&scores, &labels);
            assert!((ours - oracle).abs() < 1e-12, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn auprc_equals_prevalence_for_random_scores_on_average() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let n = 2000;
        let prevalence = 0.3;
        let labels: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < prevalence).collect();
        let mut mean_ap = 0.0;
        let trials = 40;
        for _ in 0..trials {
            let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            mean_ap += auprc(&scores, &labels).unwrap();
        }
        mean_ap /= trials as f64;
        let actual_prev = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        assert!(
            (mean_ap - actual_prev).abs() / actual_prev < 0.05,
            "mean AP {mean_ap} vs prevalence {actual_prev}"
        );
    }

    #[test]
    fn weighted_auroc_identities() {
        // K = 1 reduces to plain AUROC.
        let scores = vec![0.9, 0.1, 0.8, 0.3];
        let labels = vec![true, false, true, false];
        let single = vec![(scores.clone(), labels.clone())];
        assert_eq!(
            weighted_auroc(&single).unwrap(),
            auroc(&scores, &labels).unwrap()
        );

        // Equal prevalences: plain average of the per-label AUROCs.
        let a = (vec![0.9, 0.7, 0.6, 0.2], vec![true, false, true, false]); // 0.75
        let b = (vec![0.9, 0.8, 0.3, 0.1], vec![true, true, false, false]); // 1.0
        let w = weighted_auroc(&[a.clone(), b.clone()]).unwrap();
        assert!((w - 0.875).abs() < 1e-12);

        // Identical AUROC across labels is returned untouched regardless of
        // prevalence.
        let c = (vec![0.9, 0.8, 0.3, 0.1], vec![true, true, false, false]); // 1.0, prev 0.5
        let d = (vec![0.9, 0.2, 0.1, 0.05], vec![true, false, false, false]); // 1.0, prev 0.25
        let w = weighted_auroc(&[c, d]).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_auroc_prevalence_arithmetic() {
        // Prevalences 3:1 with AUROCs 1.0 and 0.5 -> 0.875.
        // Label A: 3 positives of 4 -> prevalence 0.75, perfectly ranked.
        let a = (
            vec![0.9, 0.8, 0.7, 0.1],
            vec![true, true, true, false],
        );
        // Label B: 1 positive of 4 -> prevalence 0.25, tied scores -> 0.5.
        let b = (vec![0.4, 0.4, 0.4, 0.4], vec![true, false, false, false]);
        let w = weighted_auroc(&[a, b]).unwrap();
        assert!((w - 0.875).abs() < 1e-12, "{w}");
    }

    #[test]
    fn weighted_auroc_excludes_single_class_labels() {
        let good = (vec![0.9, 0.1], vec![true, false]);
        let empty = (vec![0.9, 0.1], vec![false, false]);
        let w = weighted_auroc(&[good, empty]).unwrap();
        assert_eq!(w, 1.0);
        let only_bad = [(vec![0.9, 0.1], vec![true, true])];
        assert!(weighted_auroc(&only_bad).is_err());
    }

    #[test]
    fn topk_recall_cases() {
        let ranked = vec![vec![1, 0, 2], vec![0, 2, 1], vec![2, 1, 0]];
        let truth = vec![1, 2, 0];
        assert_eq!(topk_recall(&ranked, &truth, 1), 1.0 / 3.0);
        assert_eq!(topk_recall(&ranked, &truth, 2), 2.0 / 3.0);
        assert_eq!(topk_recall(&ranked, &truth, 3), 1.0);
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = MetricSummary::from_runs(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        let one = MetricSummary::from_runs(vec![0.7]);
        assert_eq!(one.std, 0.0);
    }

    #[test]
    fn report_formats_mean_std() {
        let mut r = MetricsReport::new("mortality", 100);
        r.insert_runs("auroc", vec![0.881, 0.883, 0.882, 0.884, 0.880]);
        assert_eq!(r.formatted("auroc").unwrap(), "0.882 (0.002)");
    }
}
