//! End-to-end training and compression pipelines at desk scale.

pub mod autoencoder;
pub mod data;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod netcompress;
pub mod patches;

use crate::error::{Result, SthqError};
use crate::graph::{Graph, NodeId};

/// Loss selector for the task term of the rate-distortion objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Weights of the rate-distortion objective
/// `task + lambda * ||W||^2 + beta_total * soft entropy`.
///
/// `beta_total` absorbs the symbol count: it multiplies the per-symbol soft
/// entropy (bits), so it plays the role of `beta * m` in the objective.
#[derive(Debug, Clone, Copy)]
pub struct RdObjectiveConfig {
    pub beta_total: f64,
    pub lambda: f64,
    pub loss_kind: LossKind,
}

impl RdObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_total < 0.0 || self.lambda < 0.0 {
            return Err(SthqError::InvalidArgument(
                "beta_total and lambda must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Mean cross entropy (nats) of `[B, K]` logits against one-hot targets.
pub fn cross_entropy_graph(g: &mut Graph, logits: NodeId, onehot: NodeId) -> Result<NodeId> {
    let b = g.value(logits).shape()[0];
    let logp = g.log_softmax(logits)?;
    let picked = g.mul(logp, onehot)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0 / b as f64)
}

/// Per-element mean squared error node.
pub fn mse_graph(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let n = g.value(a).numel();
    let sq = g.sq_err_sum(a, b)?;
    g.scale(sq, 1.0 / n as f64)
}

/// Assemble `task + lambda * l2 + beta_total * entropy` on the graph.
/// `l2_params` are the raw (unquantized) trainable leaves; `entropy_term`
/// is the per-symbol soft entropy node in bits, if any.
pub fn rd_loss_graph(
    g: &mut Graph,
    task_loss: NodeId,
    l2_params: &[NodeId],
    entropy_term: Option<NodeId>,
    config: &RdObjectiveConfig,
) -> Result<NodeId> {
    config.validate()?;
    let mut total = task_loss;
    if config.lambda > 0.0 {
        for &p in l2_params {
            let flat_len = g.value(p).numel();
            let flat = g.reshape(p, vec![1, flat_len])?;
            let flat_t = g.transpose(flat)?;
            let sq = g.matmul(flat, flat_t)?;
            let reg = g.scale(sq, config.lambda)?;
            total = g.add(total, reg)?;
        }
    }
    if config.beta_total > 0.0 {
        if let Some(h) = entropy_term {
            let weighted = g.scale(h, config.beta_total)?;
            total = g.add(total, weighted)?;
        }
    }
    let v = g.value(total);
    if !v.all_finite() {
        return Err(SthqError::Diverged("rate-distortion loss is not finite".into()));
    }
    Ok(total)
}
