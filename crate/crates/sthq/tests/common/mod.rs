//! Shared test oracles: central finite differences against the analytic
//! backward pass. The oracle only evaluates forward passes, so it stays
//! independent of the gradient implementation it checks.

use sthq::graph::{Graph, NodeId};
use sthq::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// max over elements of |a - b| / max(|a|, |b|, 1)
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Evaluate a scalar graph function at the given leaf values.
pub fn eval_scalar<F>(build: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut g, &leaves);
    g.value(out).item()
}

/// Central finite-difference gradient of `build` w.r.t. every element of
/// every input.
pub fn fd_gradients<F>(build: &F, inputs: &[Tensor]) -> Vec<Vec<f64>>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let fp = eval_scalar(build, &plus);
            let fm = eval_scalar(build, &minus);
            gi.push((fp - fm) / (2.0 * FD_STEP));
        }
        grads.push(gi);
    }
    grads
}

/// Analytic gradients from one backward pass.
pub fn analytic_gradients<F>(build: &F, inputs: &[Tensor]) -> Vec<Vec<f64>>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut g, &leaves);
    g.backward(out).unwrap();
    leaves
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            g.grad(id).map(|gr| gr.data().to_vec()).unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect()
}

/// Compare analytic and finite-difference gradients; returns the worst
/// relative error across all inputs.
pub fn gradcheck<F>(build: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let analytic = analytic_gradients(build, inputs);
    let numeric = fd_gradients(build, inputs);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Random tensor with entries in (lo, hi), kept away from relu kinks when
/// `avoid_zero` is set.
pub fn random_tensor(
    shape: &[usize],
    lo: f64,
    hi: f64,
    avoid_zero: bool,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rand::Rng::random_range(rng, lo..hi);
        if !avoid_zero || v.abs() > 1e-4 {
            return v;
        }
    })
}
