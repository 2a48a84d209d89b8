//! Adam with bias correction, and global-norm gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compute::{NumArray, ParamStore, Real};
use crate::ShipError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), ShipError> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(ShipError::Config(format!("{name} must be in (0, 1), got {b}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(ShipError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<R: Real> {
    m: BTreeMap<String, NumArray<R>>,
    v: BTreeMap<String, NumArray<R>>,
    pub step: u64,
}

impl<R: Real> Default for AdamState<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> AdamState<R> {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }
}

pub type GradMap<R> = BTreeMap<String, NumArray<R>>;

/// Global L2 norm over every gradient array.
pub fn global_norm<R: Real>(grads: &GradMap<R>) -> f64 {
    grads
        .values()
        .map(|g| g.sum_squares_f64())
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients by `c / norm` when the global norm exceeds `c`;
/// otherwise leave them bitwise untouched. Returns the pre-clip norm.
pub fn clip_global_norm<R: Real>(grads: &mut GradMap<R>, c: f64) -> Result<f64, ShipError> {
    if c <= 0.0 {
        return Err(ShipError::Config(format!(
            "clip norm must be positive, got {c}"
        )));
    }
    let norm = global_norm(grads);
    if norm > c {
        let scale = R::from_f64(c / norm);
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x = *x * scale;
            }
        }
    }
    Ok(norm)
}

/// One Adam step over every parameter that has a gradient. A non-finite
/// gradient aborts the step before any parameter moves, naming the
/// offending parameter.
pub fn adam_update<R: Real>(
    params: &mut ParamStore<R>,
    grads: &GradMap<R>,
    state: &mut AdamState<R>,
    learning_rate: f64,
    cfg: &AdamConfig,
) -> Result<(), ShipError> {
    cfg.validate()?;
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(ShipError::Numeric(format!(
                "non-finite gradient for parameter {name:?}; step aborted"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = R::from_f64(cfg.beta1);
    let b2 = R::from_f64(cfg.beta2);
    let one = R::one();
    let bias1 = R::from_f64(1.0 - cfg.beta1.powi(t));
    let bias2 = R::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = R::from_f64(learning_rate);
    let eps = R::from_f64(cfg.epsilon);

    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| NumArray::zeros(g.rows(), g.cols()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| NumArray::zeros(g.rows(), g.cols()));
        for ((pi, mi), (vi, &gi)) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut().iter_mut().zip(g.data()))
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, NumArray::column_from_f64(values).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = store_with("w", &[1.0, -2.0, 3.0]);
        let before = params.get("w").unwrap().clone();
        let mut state = AdamState::new();
        let mut grads = GradMap::new();
        grads.insert("w".into(), NumArray::zeros(3, 1));
        for _ in 0..10 {
            adam_update(&mut params, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(params.get("w").unwrap(), &before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With constant gradient g, the bias-corrected ratio is 1 at t = 1,
        // so |update| = lr up to epsilon.
        let mut params = store_with("w", &[0.0]);
        let mut state = AdamState::new();
        let mut grads = GradMap::new();
        grads.insert("w".into(), NumArray::column_from_f64(&[3.7]).unwrap());
        adam_update(&mut params, &grads, &mut state, 0.01, &AdamConfig::default()).unwrap();
        let moved = params.get("w").unwrap().data()[0].abs();
        assert!((moved - 0.01).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn quadratic_bowl_converges_to_origin() {
        // f(w) = ||w||^2, gradient 2w; 500 steps reach ||w|| < 1e-3.
        let mut params = store_with("w", &[1.0, -0.5, 0.25, 2.0]);
        let mut state = AdamState::new();
        for _ in 0..500 {
            let w = params.get("w").unwrap().clone();
            let mut grads = GradMap::new();
            grads.insert("w".into(), w.map(|x| 2.0 * x));
            adam_update(&mut params, &grads, &mut state, 0.05, &AdamConfig::default()).unwrap();
        }
        let norm = params.get("w").unwrap().sum_squares_f64().sqrt();
        assert!(norm < 1e-3, "||w|| = {norm}");
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut params = store_with("w", &[1.0]);
        let mut state = AdamState::new();
        let mut grads = GradMap::new();
        grads.insert(
            "w".into(),
            NumArray::from_raw(1, 1, vec![f64::NAN]),
        );
        let err = adam_update(&mut params, &grads, &mut state, 0.1, &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("w"));
        assert_eq!(state.step, 0, "aborted step must not advance the counter");
        assert_eq!(params.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn clip_scales_to_target_norm() {
        let mut grads = GradMap::new();
        grads.insert("a".into(), NumArray::<f64>::column_from_f64(&[3.0]).unwrap());
        grads.insert("b".into(), NumArray::<f64>::column_from_f64(&[4.0]).unwrap());
        // norm 5; clip at 2.5 scales by 0.5.
        let norm = clip_global_norm(&mut grads, 2.5).unwrap();
        assert_eq!(norm, 5.0);
        assert!((global_norm(&grads) - 2.5).abs() < 1e-12);
        assert_eq!(grads["a"].data(), &[1.5]);
    }

    #[test]
    fn clip_below_threshold_is_bitwise_identity() {
        let mut grads = GradMap::new();
        grads.insert(
            "a".into(),
            NumArray::<f64>::column_from_f64(&[0.1, -0.2]).unwrap(),
        );
        let before: Vec<u64> = grads["a"].data().iter().map(|v| v.to_bits()).collect();
        clip_global_norm(&mut grads, 10.0).unwrap();
        let after: Vec<u64> = grads["a"].data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn clip_preserves_direction() {
        let mut grads = GradMap::new();
        grads.insert(
            "a".into(),
            NumArray::<f64>::column_from_f64(&[1.0, 2.0, -2.0]).unwrap(),
        );
        let before = grads["a"].clone();
        clip_global_norm(&mut grads, 0.5).unwrap();
        let after = &grads["a"];
        let dot: f64 = before
            .data()
            .iter()
            .zip(after.data())
            .map(|(x, y)| x * y)
            .sum();
        let cos = dot / (before.sum_squares_f64().sqrt() * after.sum_squares_f64().sqrt());
        assert!((cos - 1.0).abs() < 1e-12);
    }
}
