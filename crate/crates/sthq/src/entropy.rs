//! Hard and soft symbol histograms, sample entropy, and the soft
//! cross-entropy losses.
//!
//! Entropies are base 2 throughout; rates are bits.

use std::collections::VecDeque;

use crate::error::{Result, SthqError};
use crate::graph::{Graph, NodeId};
use crate::quantizer::{batch_soft_counts, CenterSet, ColumnMatrix, SymbolStream};
use crate::tensor::Tensor;

/// Floor applied to probabilities inside logarithms so unused centers keep a
/// finite, usable gradient signal.
pub const PROB_FLOOR: f64 = 1e-9;

/// A probability mass function over symbols, with the accumulators it was
/// normalized from when available.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPMF {
    probs: Vec<f64>,
    counts: Option<Vec<f64>>,
}

impl HistogramPMF {
    pub fn from_counts(counts: Vec<f64>) -> Result<HistogramPMF> {
        if counts.is_empty() {
            return Err(SthqError::InvalidArgument("empty histogram".into()));
        }
        if counts.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(SthqError::NonFinite("HistogramPMF counts"));
        }
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(SthqError::InvalidArgument("histogram with zero total count".into()));
        }
        let probs = counts.iter().map(|&c| c / total).collect();
        Ok(HistogramPMF { probs, counts: Some(counts) })
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<HistogramPMF> {
        if probs.is_empty() {
            return Err(SthqError::InvalidArgument("empty pmf".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(SthqError::InvalidArgument(format!(
                "probabilities must be nonnegative and sum to 1 (sum = {total})"
            )));
        }
        Ok(HistogramPMF { probs, counts: None })
    }

    pub fn uniform(l: usize) -> HistogramPMF {
        HistogramPMF { probs: vec![1.0 / l as f64; l], counts: None }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn counts(&self) -> Option<&[f64]> {
        self.counts.as_deref()
    }

    /// log2 of each probability after flooring, as a `[L, 1]` tensor column
    /// for graph-side losses.
    pub fn floored_log2_column(&self) -> Tensor {
        let data: Vec<f64> = self.probs.iter().map(|&p| p.max(PROB_FLOOR).log2()).collect();
        Tensor::from_raw(vec![self.probs.len(), 1], data)
    }
}

/// Empirical symbol distribution over one or more streams.
pub fn hard_histogram(streams: &[&SymbolStream], num_symbols: usize) -> Result<HistogramPMF> {
    let mut counts = vec![0.0f64; num_symbols];
    let mut total = 0usize;
    for s in streams {
        for &sym in &s.symbols {
            if sym as usize >= num_symbols {
                return Err(SthqError::InvalidArgument(format!(
                    "symbol {} out of range for L = {}",
                    sym, num_symbols
                )));
            }
            counts[sym as usize] += 1.0;
        }
        total += s.symbols.len();
    }
    if total == 0 {
        return Err(SthqError::InvalidArgument("hard_histogram of empty input".into()));
    }
    HistogramPMF::from_counts(counts)
}

/// Soft histogram: the mean soft assignment over all columns.
pub fn soft_histogram(
    columns: &ColumnMatrix,
    centers: &CenterSet,
    sigma: f64,
) -> Result<HistogramPMF> {
    if columns.num_columns() == 0 {
        return Err(SthqError::InvalidArgument("soft_histogram of empty input".into()));
    }
    let counts = batch_soft_counts(columns, centers, sigma)?;
    HistogramPMF::from_counts(counts)
}

/// Sample entropy `H(p) = -sum p_j log2 p_j` in bits; zero-probability terms
/// contribute nothing.
pub fn sample_entropy(p: &HistogramPMF) -> f64 {
    p.probs
        .iter()
        .map(|&pj| if pj > 0.0 { -pj * pj.log2() } else { 0.0 })
        .sum()
}

/// Cross entropy `H(p, q) = -sum p_j log2 q_j`; infinite (an error) when q
/// misses mass that p has.
pub fn cross_entropy_pq(p: &HistogramPMF, q: &HistogramPMF) -> Result<f64> {
    if p.len() != q.len() {
        return Err(SthqError::InvalidArgument("pmf length mismatch".into()));
    }
    let mut h = 0.0;
    for (j, (&pj, &qj)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pj > 0.0 {
            if qj <= 0.0 {
                return Err(SthqError::InfiniteCrossEntropy(j));
            }
            h -= pj * qj.log2();
        }
    }
    Ok(h)
}

/// `D_KL(p || q)` in bits.
pub fn kl_divergence(p: &HistogramPMF, q: &HistogramPMF) -> Result<f64> {
    Ok(cross_entropy_pq(p, q)? - sample_entropy(p))
}

/// The batch-decomposable soft entropy `H(q, p) = -sum_j q_j log2 p_j`, with
/// `p` treated as a constant and floored inside the log. Plain value; the
/// graph twin is [`soft_cross_entropy_qp_graph`].
pub fn soft_cross_entropy_qp(
    columns: &ColumnMatrix,
    centers: &CenterSet,
    sigma: f64,
    p: &HistogramPMF,
) -> Result<f64> {
    if p.len() != centers.len() {
        return Err(SthqError::InvalidArgument("pmf length must match center count".into()));
    }
    if columns.num_columns() == 0 {
        return Err(SthqError::InvalidArgument("soft_cross_entropy_qp of empty input".into()));
    }
    let counts = batch_soft_counts(columns, centers, sigma)?;
    let m = columns.num_columns() as f64;
    let mut h = 0.0;
    for (cj, &pj) in counts.iter().zip(p.probs()) {
        h -= (cj / m) * pj.max(PROB_FLOOR).log2();
    }
    Ok(h)
}

/// Graph node for `H(q, p)` over a `[m, L]` soft-assignment node: mean over
/// the batch columns of `-sum_j phi_j log2 p_j`. Gradients flow through
/// `phi` only; `p` is constant.
pub fn soft_cross_entropy_qp_graph(
    g: &mut Graph,
    phi: NodeId,
    p: &HistogramPMF,
) -> Result<NodeId> {
    let shape = g.value(phi).shape().to_vec();
    if shape.len() != 2 || shape[1] != p.len() {
        return Err(SthqError::ShapeMismatch {
            op: "soft_cross_entropy_qp",
            detail: format!("phi {:?} vs pmf of {}", shape, p.len()),
        });
    }
    let m = shape[0] as f64;
    let logp = g.constant(p.floored_log2_column())?;
    let per_col = g.matmul(phi, logp)?; // [m, 1]
    let total = g.sum(per_col)?;
    g.scale(total, -1.0 / m)
}

/// The i.i.d. joint-entropy estimate `m * H(p)` for a stream of `m` symbols.
pub fn joint_entropy_estimate(p: &HistogramPMF, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(SthqError::InvalidArgument("joint entropy needs m >= 1".into()));
    }
    Ok(m as f64 * sample_entropy(p))
}

/// Sliding histogram over the most recent source items, recomputed every
/// `interval` updates.
#[derive(Debug, Clone)]
pub struct RunningHistogram {
    num_symbols: usize,
    capacity: usize,
    interval: u64,
    ring: VecDeque<Vec<u64>>,
    iters: u64,
    pmf: HistogramPMF,
}

impl RunningHistogram {
    pub fn new(num_symbols: usize, capacity: usize, interval: u64) -> Result<RunningHistogram> {
        if capacity == 0 || interval == 0 || num_symbols == 0 {
            return Err(SthqError::InvalidArgument(
                "running histogram needs capacity, interval, and symbols > 0".into(),
            ));
        }
        Ok(RunningHistogram {
            num_symbols,
            capacity,
            interval,
            ring: VecDeque::new(),
            iters: 0,
            pmf: HistogramPMF::uniform(num_symbols),
        })
    }

    /// One training iteration's worth of fresh streams (one per source
    /// item). The PMF refreshes on the first update and then every
    /// `interval` updates.
    pub fn update(&mut self, streams: &[SymbolStream]) -> Result<()> {
        for s in streams {
            let mut counts = vec![0u64; self.num_symbols];
            for &sym in &s.symbols {
                if sym as usize >= self.num_symbols {
                    return Err(SthqError::InvalidArgument("symbol out of range".into()));
                }
                counts[sym as usize] += 1;
            }
            if self.ring.len() == self.capacity {
                self.ring.pop_front();
            }
            self.ring.push_back(counts);
        }
        if self.iters % self.interval == 0 {
            self.recompute()?;
        }
        self.iters += 1;
        Ok(())
    }

    /// Force a PMF refresh from the buffered items.
    pub fn recompute(&mut self) -> Result<()> {
        if self.ring.is_empty() {
            return Ok(());
        }
        let mut counts = vec![0.0f64; self.num_symbols];
        for item in &self.ring {
            for (c, &v) in counts.iter_mut().zip(item) {
                *c += v as f64;
            }
        }
        self.pmf = HistogramPMF::from_counts(counts)?;
        Ok(())
    }

    pub fn pmf(&self) -> &HistogramPMF {
        &self.pmf
    }

    pub fn buffered_items(&self) -> usize {
        self.ring.len()
    }
}
