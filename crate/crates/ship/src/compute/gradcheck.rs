//! Finite-difference verification of analytic gradients.
//!
//! Central differences at step `h` against the tape's backward pass,
//! parameter by parameter, element by element. Only meaningful at 64-bit
//! precision, which is enforced.

use super::graph::{Graph, NodeId};
use super::real::{Precision, Real};
use super::ComputeError;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub h: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Relative error with a floor so that near-zero gradient pairs compare
/// absolutely: |a - n| / max(|a| + |n|, 1e-3).
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-3)
}

/// Compare analytic gradients of `output` against central finite differences
/// for every registered parameter. A graph with no parameters yields an
/// empty report.
pub fn check_gradients<R: Real>(
    graph: &mut Graph<R>,
    output: NodeId,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, ComputeError> {
    if R::PRECISION != Precision::F64 {
        return Err(ComputeError::Usage(
            "gradient checks require 64-bit precision".to_string(),
        ));
    }
    graph.backward(output)?;
    let analytic = graph.param_grads();
    let params: Vec<(String, NodeId)> = graph
        .param_names()
        .map(|n| (n.to_string(), graph.param_node(n).unwrap()))
        .collect();

    let mut entries = Vec::with_capacity(params.len());
    for (name, id) in params {
        let base = graph.value(id).clone();
        let (rows, cols) = (base.rows(), base.cols());
        let mut max_rel = 0.0f64;
        let mut worst = 0usize;
        for idx in 0..base.len() {
            let orig = base.data()[idx];
            let mut plus = base.clone();
            plus.data_mut()[idx] = orig + R::from_f64(h);
            graph.set_leaf(id, plus)?;
            graph.recompute();
            let f_plus = graph.value(output).scalar().as_f64();

            let mut minus = base.clone();
            minus.data_mut()[idx] = orig - R::from_f64(h);
            graph.set_leaf(id, minus)?;
            graph.recompute();
            let f_minus = graph.value(output).scalar().as_f64();

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[&name].data()[idx].as_f64();
            let e = rel_err(a, numeric);
            if e > max_rel {
                max_rel = e;
                worst = idx;
            }
        }
        graph.set_leaf(id, base)?;
        let _ = (rows, cols);
        entries.push(GradCheckEntry {
            name,
            max_rel_err: max_rel,
            worst_index: worst,
        });
    }
    // Restore values and adjoints to the unperturbed state.
    graph.recompute();
    graph.backward(output)?;
    Ok(GradCheckReport { entries, h, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::array::NumArray;

    #[test]
    fn finite_differences_match_analytic_for_sigmoid_chain() {
        // loss = sum(sigmoid(W x)), checked at rel err < 1e-6
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::<f64>::new();
        let wdata: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = g.param("w", NumArray::new(3, 4, wdata).unwrap()).unwrap();
        let xdata: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = g.input(NumArray::column_from_f64(&xdata).unwrap());
        let wx = g.matmul(w, x).unwrap();
        let s = g.sigmoid(wx);
        let loss = g.sum_all(s);
        let report = check_gradients(&mut g, loss, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn zero_parameter_graph_gives_empty_report() {
        let mut g = Graph::<f64>::new();
        let x = g.input(NumArray::column_from_f64(&[1.0, 2.0]).unwrap());
        let loss = g.sum_all(x);
        let report = check_gradients(&mut g, loss, 1e-5, 1e-4).unwrap();
        assert!(report.entries.is_empty());
        assert!(report.passed());
    }

    #[test]
    fn f32_graphs_are_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(NumArray::column_from_f64(&[1.0]).unwrap());
        let loss = g.sum_all(x);
        let err = check_gradients(&mut g, loss, 1e-5, 1e-4).unwrap_err();
        assert!(matches!(err, ComputeError::Usage(_)));
    }
}
