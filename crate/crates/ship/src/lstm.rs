//! LSTM cell on the differentiation tape.
//!
//! Four gates with separate input and recurrent weight matrices (eight
//! weight blocks plus four biases). The forget-gate bias initializes to 1.0.
//! Per-step hooks apply the regularizers: variational (per-sequence) and
//! standard (per-step) dropout masks on the input and on the recurrent
//! hidden state, and zoneout on the state update, which copies previous
//! state components bitwise through a binary select.

use rand::Rng;

use crate::compute::{xavier_uniform, Graph, NodeId, NumArray, ParamStore, Real};
use crate::ShipError;

pub const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDims {
    pub input: usize,
    pub hidden: usize,
}

/// Register freshly initialized LSTM parameters under `prefix` (e.g.
/// `notes.lstm.fwd`). Weight blocks are Xavier-uniform, biases zero except
/// the forget gate's, which is 1.0.
pub fn register_lstm_params<R: Real>(
    store: &mut ParamStore<R>,
    prefix: &str,
    dims: LstmDims,
    rng: &mut impl Rng,
) {
    for gate in GATE_NAMES {
        store.insert(
            &format!("{prefix}.w_{gate}"),
            xavier_uniform(dims.hidden, dims.input, rng),
        );
        store.insert(
            &format!("{prefix}.u_{gate}"),
            xavier_uniform(dims.hidden, dims.hidden, rng),
        );
        let bias = if gate == "f" {
            NumArray::filled(dims.hidden, 1, R::one())
        } else {
            NumArray::zeros(dims.hidden, 1)
        };
        store.insert(&format!("{prefix}.b_{gate}"), bias);
    }
}

/// Graph-side handles to one LSTM's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w: [NodeId; 4],
    pub u: [NodeId; 4],
    pub b: [NodeId; 4],
}

/// Put the stored parameters on the graph as named leaves.
pub fn lstm_graph_params<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    prefix: &str,
) -> Result<LstmNodes, ShipError> {
    let mut w = [0; 4];
    let mut u = [0; 4];
    let mut b = [0; 4];
    for (k, gate) in GATE_NAMES.iter().enumerate() {
        w[k] = g.param(
            &format!("{prefix}.w_{gate}"),
            store.get(&format!("{prefix}.w_{gate}"))?.clone(),
        )?;
        u[k] = g.param(
            &format!("{prefix}.u_{gate}"),
            store.get(&format!("{prefix}.u_{gate}"))?.clone(),
        )?;
        b[k] = g.param(
            &format!("{prefix}.b_{gate}"),
            store.get(&format!("{prefix}.b_{gate}"))?.clone(),
        )?;
    }
    Ok(LstmNodes { w, u, b })
}

/// Per-step regularization masks (constant nodes). `None` means identity.
/// Dropout masks hold `0` or `1/(1-rate)`; zoneout masks are binary.
#[derive(Debug, Clone, Copy, Default)]
pub struct LstmStepMasks {
    pub input_variational: Option<NodeId>,
    pub input_standard: Option<NodeId>,
    pub hidden_variational: Option<NodeId>,
    pub hidden_standard: Option<NodeId>,
    pub zoneout_h: Option<NodeId>,
    pub zoneout_c: Option<NodeId>,
}

pub fn zero_state<R: Real>(g: &mut Graph<R>, hidden: usize) -> (NodeId, NodeId) {
    let h = g.input(NumArray::zeros(hidden, 1));
    let c = g.input(NumArray::zeros(hidden, 1));
    (h, c)
}

fn masked<R: Real>(
    g: &mut Graph<R>,
    x: NodeId,
    variational: Option<NodeId>,
    standard: Option<NodeId>,
) -> Result<NodeId, ShipError> {
    let mut out = x;
    if let Some(m) = variational {
        out = g.mul(out, m)?;
    }
    if let Some(m) = standard {
        out = g.mul(out, m)?;
    }
    Ok(out)
}

/// One LSTM step: gates from the (masked) input and (masked) previous
/// hidden state, then the state update, then zoneout.
pub fn lstm_step<R: Real>(
    g: &mut Graph<R>,
    p: &LstmNodes,
    x: NodeId,
    state: (NodeId, NodeId),
    masks: &LstmStepMasks,
) -> Result<(NodeId, NodeId), ShipError> {
    let (h_prev, c_prev) = state;
    let x_in = masked(g, x, masks.input_variational, masks.input_standard)?;
    let h_in = masked(g, h_prev, masks.hidden_variational, masks.hidden_standard)?;

    let mut preact = [0; 4];
    for k in 0..4 {
        let wx = g.matmul(p.w[k], x_in)?;
        let uh = g.matmul(p.u[k], h_in)?;
        let s = g.add(wx, uh)?;
        preact[k] = g.add(s, p.b[k])?;
    }
    let i = g.sigmoid(preact[0]);
    let f = g.sigmoid(preact[1]);
    let cand = g.tanh(preact[2]);
    let o = g.sigmoid(preact[3]);

    let fc = g.mul(f, c_prev)?;
    let ig = g.mul(i, cand)?;
    let c_new = g.add(fc, ig)?;
    let c_act = g.tanh(c_new);
    let h_new = g.mul(o, c_act)?;

    let c_out = match masks.zoneout_c {
        Some(m) => g.select(m, c_prev, c_new)?,
        None => c_new,
    };
    let h_out = match masks.zoneout_h {
        Some(m) => g.select(m, h_prev, h_new)?,
        None => h_new,
    };
    Ok((h_out, c_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dims: LstmDims, seed: u64) -> (ParamStore<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        register_lstm_params(&mut store, "cell", dims, &mut rng);
        (store, rng)
    }

    #[test]
    fn forget_bias_is_one_and_others_zero() {
        let (store, _) = setup(LstmDims { input: 3, hidden: 4 }, 0);
        assert!(store
            .get("cell.b_f")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(store
            .get("cell.b_i")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        // 8 weight blocks + 4 biases.
        assert_eq!(store.len(), 12);
    }

    #[test]
    fn single_step_gradients_check_against_finite_differences() {
        let dims = LstmDims { input: 3, hidden: 4 };
        let (store, mut rng) = setup(dims, 1);
        let mut g = Graph::<f64>::new();
        let p = lstm_graph_params(&mut g, &store, "cell").unwrap();
        let x = g.input(xavier_uniform(3, 1, &mut rng));
        let state = zero_state(&mut g, 4);
        let (h, c) = lstm_step(&mut g, &p, x, state, &LstmStepMasks::default()).unwrap();
        let hc = g.add(h, c).unwrap();
        let loss = g.sum_all(hc);
        let report = check_gradients(&mut g, loss, 1e-5, 1e-4).unwrap();
        assert_eq!(report.entries.len(), 12);
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn two_step_recurrence_gradients_check() {
        let dims = LstmDims { input: 2, hidden: 3 };
        let (store, mut rng) = setup(dims, 2);
        let mut g = Graph::<f64>::new();
        let p = lstm_graph_params(&mut g, &store, "cell").unwrap();
        let mut state = zero_state(&mut g, 3);
        for _ in 0..2 {
            let x = g.input(xavier_uniform(2, 1, &mut rng));
            state = lstm_step(&mut g, &p, x, state, &LstmStepMasks::default()).unwrap();
        }
        let loss = g.sum_all(state.0);
        let report = check_gradients(&mut g, loss, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn zoneout_mask_of_ones_freezes_state_bitwise() {
        let dims = LstmDims { input: 2, hidden: 3 };
        let (store, mut rng) = setup(dims, 3);
        let mut g = Graph::<f64>::new();
        let p = lstm_graph_params(&mut g, &store, "cell").unwrap();
        let ones = g.input(NumArray::filled(3, 1, 1.0));
        let masks = LstmStepMasks {
            zoneout_h: Some(ones),
            zoneout_c: Some(ones),
            ..LstmStepMasks::default()
        };
        let mut state = zero_state(&mut g, 3);
        let h0: Vec<u64> = g.value(state.0).data().iter().map(|v| v.to_bits()).collect();
        for _ in 0..5 {
            let x = g.input(xavier_uniform(2, 1, &mut rng));
            state = lstm_step(&mut g, &p, x, state, &masks).unwrap();
            let h: Vec<u64> = g.value(state.0).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(h, h0, "zoneout rate 1 must freeze the hidden state");
        }
    }

    #[test]
    fn partial_zoneout_copies_zoned_components_bitwise() {
        let dims = LstmDims { input: 2, hidden: 3 };
        let (store, mut rng) = setup(dims, 4);
        let mut g = Graph::<f64>::new();
        let p = lstm_graph_params(&mut g, &store, "cell").unwrap();
        let x0 = g.input(xavier_uniform(2, 1, &mut rng));
        let s0 = zero_state(&mut g, 3);
        let free = lstm_step(&mut g, &p, x0, s0, &LstmStepMasks::default()).unwrap();
        // Zone out component 1 only on the next step.
        let mask = g.input(NumArray::column_from_f64(&[0.0, 1.0, 0.0]).unwrap());
        let masks = LstmStepMasks {
            zoneout_h: Some(mask),
            zoneout_c: Some(mask),
            ..LstmStepMasks::default()
        };
        let x1 = g.input(xavier_uniform(2, 1, &mut rng));
        let prev_h = g.value(free.0).data().to_vec();
        let (h, _) = lstm_step(&mut g, &p, x1, free, &masks).unwrap();
        let h = g.value(h).data();
        assert_eq!(h[1].to_bits(), prev_h[1].to_bits());
        assert_ne!(h[0].to_bits(), prev_h[0].to_bits());
    }
}
