//! Soft and hard vector quantization against a learnable center set.
//!
//! Columns of a reshaped feature/parameter vector are assigned to centers
//! either softly (a softmax over negative scaled squared distances, hardness
//! `sigma`) or hard (nearest neighbor). Soft assignment converges to the
//! hard one as `sigma` grows.

use rand::seq::index::sample;
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, SthqError};
use crate::exec;
use crate::graph::{Graph, NodeId};
use crate::optim::cosine_lr;
use crate::tensor::Tensor;

/// The `L` learnable quantization centers in `R^dim`, stored contiguously
/// per center.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    dim: usize,
    flat: Vec<f64>,
}

impl CenterSet {
    pub fn from_flat(dim: usize, flat: Vec<f64>) -> Result<CenterSet> {
        if dim == 0 || flat.is_empty() || flat.len() % dim != 0 {
            return Err(SthqError::InvalidArgument(format!(
                "center data of length {} does not split into dim {}",
                flat.len(),
                dim
            )));
        }
        if flat.len() / dim < 2 {
            return Err(SthqError::InvalidArgument("need at least 2 centers".into()));
        }
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(SthqError::NonFinite("CenterSet"));
        }
        Ok(CenterSet { dim, flat })
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.flat[j * self.dim..(j + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    /// `[L, dim]` tensor view for graph use.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(vec![self.len(), self.dim], self.flat.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<CenterSet> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(SthqError::InvalidArgument(format!("expected [L, dim], got {:?}", s)));
        }
        CenterSet::from_flat(s[1], t.data().to_vec())
    }

    /// Squared norms of every center; cached per step by batch paths.
    pub fn sq_norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|j| self.center(j).iter().map(|&v| v * v).sum())
            .collect()
    }

    /// Snap every coordinate to its nearest f32; storage writes f32, so
    /// final artifacts are produced against the rounded values.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.flat {
            *v = *v as f32 as f64;
        }
    }

    /// Serialized block: dim u16, L u16, then the centers as f32 LE,
    /// contiguous per center.
    pub fn write_block(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.dim as u16).to_le_bytes());
        out.extend_from_slice(&(self.len() as u16).to_le_bytes());
        for &v in &self.flat {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    pub fn read_block(bytes: &[u8]) -> Result<(CenterSet, usize)> {
        if bytes.len() < 4 {
            return Err(SthqError::Decode("center block truncated".into()));
        }
        let dim = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        let l = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
        let need = 4 + 4 * l * dim;
        if bytes.len() < need {
            return Err(SthqError::Decode("center block truncated".into()));
        }
        let mut flat = Vec::with_capacity(l * dim);
        for i in 0..l * dim {
            let o = 4 + 4 * i;
            flat.push(f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64);
        }
        Ok((CenterSet::from_flat(dim, flat)?, need))
    }
}

/// A flat vector reshaped into `m` points of `R^dim`, stored row-major
/// (point-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl ColumnMatrix {
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<ColumnMatrix> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(SthqError::InvalidArgument(format!(
                "data length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        Ok(ColumnMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_columns(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn column(&self, l: usize) -> &[f64] {
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    /// `[m, dim]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(vec![self.num_columns(), self.dim], self.data.clone())
    }

    /// Inverse of [`reshape_columns`]: the original flat vector.
    pub fn unreshape(&self) -> Vec<f64> {
        self.data.clone()
    }
}

/// Split a flat vector of length `d` into `d/dim` consecutive points.
pub fn reshape_columns(z: &[f64], dim: usize) -> Result<ColumnMatrix> {
    if dim == 0 || z.len() % dim != 0 {
        return Err(SthqError::InvalidArgument(format!(
            "dim {} does not divide vector length {}",
            dim,
            z.len()
        )));
    }
    ColumnMatrix::from_rows(dim, z.to_vec())
}

/// Probability row over the centers for one column.
#[derive(Debug, Clone)]
pub struct SoftAssignment {
    pub probs: Vec<f64>,
}

/// Symbols produced by hard assignment; 0-based indices into the center set.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<u32>,
    pub num_centers: usize,
}

impl SymbolStream {
    pub fn new(symbols: Vec<u32>, num_centers: usize) -> Result<SymbolStream> {
        if symbols.iter().any(|&s| s as usize >= num_centers) {
            return Err(SthqError::InvalidArgument("symbol out of range".into()));
        }
        Ok(SymbolStream { symbols, num_centers })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SthqError::NonFinite(op))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Soft assignment of one column: `phi_j ∝ exp(-sigma * ||z - c_j||^2)`,
/// max-subtracted so large `sigma` cannot overflow.
pub fn soft_assign(z: &[f64], centers: &CenterSet, sigma: f64) -> Result<SoftAssignment> {
    check_finite("soft_assign", z)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SthqError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if z.len() != centers.dim() {
        return Err(SthqError::InvalidArgument(format!(
            "column dim {} vs center dim {}",
            z.len(),
            centers.dim()
        )));
    }
    let logits: Vec<f64> = (0..centers.len())
        .map(|j| -sigma * sq_dist(z, centers.center(j)))
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= s;
    }
    Ok(SoftAssignment { probs })
}

/// Index of the nearest center; ties break toward the smaller index.
pub fn hard_assign(z: &[f64], centers: &CenterSet) -> Result<usize> {
    check_finite("hard_assign", z)?;
    if z.len() != centers.dim() {
        return Err(SthqError::InvalidArgument(format!(
            "column dim {} vs center dim {}",
            z.len(),
            centers.dim()
        )));
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for j in 0..centers.len() {
        let d = sq_dist(z, centers.center(j));
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    Ok(best)
}

/// Convex combination of centers weighted by the soft assignment.
pub fn soft_quantize(z: &[f64], centers: &CenterSet, sigma: f64) -> Result<Vec<f64>> {
    let phi = soft_assign(z, centers, sigma)?;
    let mut out = vec![0.0; centers.dim()];
    for (j, &p) in phi.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (o, &c) in out.iter_mut().zip(centers.center(j)) {
            *o += p * c;
        }
    }
    Ok(out)
}

/// Nearest-neighbor quantization of every column: the symbol stream and the
/// reconstruction built from the picked centers.
pub fn hard_quantize(z: &ColumnMatrix, centers: &CenterSet) -> Result<(SymbolStream, ColumnMatrix)> {
    if z.dim() != centers.dim() {
        return Err(SthqError::InvalidArgument(format!(
            "column dim {} vs center dim {}",
            z.dim(),
            centers.dim()
        )));
    }
    let symbols = batch_hard_assign(z, centers)?;
    let mut recon = Vec::with_capacity(z.flat().len());
    for &s in &symbols {
        recon.extend_from_slice(centers.center(s as usize));
    }
    Ok((
        SymbolStream::new(symbols, centers.len())?,
        ColumnMatrix::from_rows(z.dim(), recon)?,
    ))
}

/// Reconstruction from a symbol stream (the decoder `D`).
pub fn reconstruct(stream: &SymbolStream, centers: &CenterSet) -> Result<ColumnMatrix> {
    if stream.num_centers != centers.len() {
        return Err(SthqError::InvalidArgument("symbol stream / center set mismatch".into()));
    }
    let mut data = Vec::with_capacity(stream.len() * centers.dim());
    for &s in &stream.symbols {
        data.extend_from_slice(centers.center(s as usize));
    }
    ColumnMatrix::from_rows(centers.dim(), data)
}

// ---- batch paths ----
//
// The batch paths use the expanded distance form
// ||z||^2 - 2 z.c_j + ||c_j||^2 with the center norms computed once per
// call, and run data-parallel with a deterministic reduction order.

fn nearest_by_expanded(z: &[f64], centers: &CenterSet, cnorms: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    let znorm: f64 = z.iter().map(|&v| v * v).sum();
    for j in 0..centers.len() {
        let dot: f64 = z.iter().zip(centers.center(j)).map(|(&a, &b)| a * b).sum();
        let d = znorm - 2.0 * dot + cnorms[j];
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d.max(0.0))
}

/// Nearest-center index for every column.
pub fn batch_hard_assign(z: &ColumnMatrix, centers: &CenterSet) -> Result<Vec<u32>> {
    check_finite("batch_hard_assign", z.flat())?;
    let cnorms = centers.sq_norms();
    Ok(exec::par_map(z.num_columns(), |l| {
        nearest_by_expanded(z.column(l), centers, &cnorms).0 as u32
    }))
}

/// Sequential twin of [`batch_hard_assign`] (bench baseline).
pub fn batch_hard_assign_seq(z: &ColumnMatrix, centers: &CenterSet) -> Result<Vec<u32>> {
    check_finite("batch_hard_assign", z.flat())?;
    let cnorms = centers.sq_norms();
    Ok(exec::seq_map(z.num_columns(), |l| {
        nearest_by_expanded(z.column(l), centers, &cnorms).0 as u32
    }))
}

fn soft_counts_chunk(
    z: &ColumnMatrix,
    centers: &CenterSet,
    cnorms: &[f64],
    sigma: f64,
    range: std::ops::Range<usize>,
) -> Vec<f64> {
    let l_count = centers.len();
    let mut acc = vec![0.0f64; l_count];
    let mut logits = vec![0.0f64; l_count];
    for l in range {
        let col = z.column(l);
        let znorm: f64 = col.iter().map(|&v| v * v).sum();
        for j in 0..l_count {
            let dot: f64 = col.iter().zip(centers.center(j)).map(|(&a, &b)| a * b).sum();
            logits[j] = -sigma * (znorm - 2.0 * dot + cnorms[j]).max(0.0);
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for (a, &e) in acc.iter_mut().zip(logits.iter()) {
            *a += e / s;
        }
    }
    acc
}

/// Summed soft assignments per center over all columns (the unnormalized
/// soft histogram). Chunked reduction; deterministic for any thread count.
pub fn batch_soft_counts(z: &ColumnMatrix, centers: &CenterSet, sigma: f64) -> Result<Vec<f64>> {
    check_finite("batch_soft_counts", z.flat())?;
    let cnorms = centers.sq_norms();
    Ok(exec::par_reduce_chunks(
        z.num_columns(),
        |r| soft_counts_chunk(z, centers, &cnorms, sigma, r),
        vec![0.0; centers.len()],
        merge_add,
    ))
}

/// Sequential twin of [`batch_soft_counts`] (bench baseline).
pub fn batch_soft_counts_seq(z: &ColumnMatrix, centers: &CenterSet, sigma: f64) -> Result<Vec<f64>> {
    check_finite("batch_soft_counts", z.flat())?;
    let cnorms = centers.sq_norms();
    Ok(exec::seq_reduce_chunks(
        z.num_columns(),
        |r| soft_counts_chunk(z, centers, &cnorms, sigma, r),
        vec![0.0; centers.len()],
        merge_add,
    ))
}

fn merge_add(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Mean squared distance of every column to its nearest center.
pub fn mean_nearest_sq_dist(z: &ColumnMatrix, centers: &CenterSet) -> Result<f64> {
    if z.num_columns() == 0 {
        return Err(SthqError::InvalidArgument("empty column matrix".into()));
    }
    let cnorms = centers.sq_norms();
    let total = exec::par_reduce_chunks(
        z.num_columns(),
        |r| {
            let mut s = 0.0;
            for l in r {
                s += nearest_by_expanded(z.column(l), centers, &cnorms).1;
            }
            s
        },
        0.0,
        |a, b| a + b,
    );
    Ok(total / z.num_columns() as f64)
}

// ---- graph builders ----

/// Soft assignment for a whole column batch inside a graph.
///
/// `cols` is `[m, dim]`, `centers` is `[L, dim]`, `sigma` is `[1]`. Returns
/// the `[m, L]` softmax node. Distances use the expanded form with the
/// center-norm row computed from the same `centers` node, so gradients flow
/// to columns, centers, and sigma.
pub fn soft_assign_graph(
    g: &mut Graph,
    cols: NodeId,
    centers: NodeId,
    sigma: NodeId,
) -> Result<NodeId> {
    let dim = g.value(cols).shape()[1];
    let ones = g.constant(Tensor::from_raw(vec![dim, 1], vec![1.0; dim]))?;
    let zz = g.mul(cols, cols)?;
    let znorm = g.matmul(zz, ones)?; // [m, 1]
    let cc = g.mul(centers, centers)?;
    let cnorm = g.matmul(cc, ones)?; // [L, 1]
    let cnorm_row = g.transpose(cnorm)?; // [1, L]
    let ct = g.transpose(centers)?; // [dim, L]
    let cross = g.matmul(cols, ct)?; // [m, L]
    let cross2 = g.scale(cross, 2.0)?;
    let sums = g.add(znorm, cnorm_row)?; // broadcast to [m, L]
    let d2 = g.sub(sums, cross2)?;
    let scaled = g.mul(d2, sigma)?;
    let neg = g.scale(scaled, -1.0)?;
    g.softmax(neg)
}

/// Soft quantization of a column batch: `phi` `[m, L]` times `centers`
/// `[L, dim]`.
pub fn soft_quantize_graph(g: &mut Graph, phi: NodeId, centers: NodeId) -> Result<NodeId> {
    g.matmul(phi, centers)
}

// ---- center initialization ----

/// Options for [`init_centers`].
#[derive(Debug, Clone)]
pub struct InitOptions {
    pub iters: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions { iters: 1000, lr: 0.1, batch: 256 }
    }
}

/// Centers initialized by sampling `L` points from the data without
/// replacement, then refined by SGD on the soft cluster energy
/// `sum ||z - Q~(z)||^2` at a fixed hardness. Returns the centers and the
/// hardness `sigma0` used, `1 / (2 * mean nearest-center squared distance)`
/// clamped to `[1e-2, 10]`.
pub fn init_centers(
    samples: &ColumnMatrix,
    l: usize,
    opts: &InitOptions,
    rng: &mut ChaCha12Rng,
) -> Result<(CenterSet, f64)> {
    let n = samples.num_columns();
    if n < l {
        return Err(SthqError::InvalidArgument(format!(
            "need at least L = {} samples, got {}",
            l, n
        )));
    }
    let picks = sample(rng, n, l);
    let mut flat = Vec::with_capacity(l * samples.dim());
    for idx in picks.iter() {
        flat.extend_from_slice(samples.column(idx));
    }
    let mut centers = CenterSet::from_flat(samples.dim(), flat)?;

    let msd = mean_nearest_sq_dist(samples, &centers)?;
    let sigma0 = if msd > 0.0 { (1.0 / (2.0 * msd)).clamp(1e-2, 10.0) } else { 10.0 };

    let batch = opts.batch.min(n).max(1);
    for step in 0..opts.iters {
        let lr = cosine_lr(opts.lr, step, opts.iters, 0.01);
        let mut data = Vec::with_capacity(batch * samples.dim());
        for _ in 0..batch {
            let idx = rand::Rng::random_range(rng, 0..n);
            data.extend_from_slice(samples.column(idx));
        }
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_raw(vec![batch, samples.dim()], data))?;
        let c = g.leaf(centers.to_tensor())?;
        let sigma = g.constant(Tensor::scalar(sigma0))?;
        let phi = soft_assign_graph(&mut g, z, c, sigma)?;
        let zq = soft_quantize_graph(&mut g, phi, c)?;
        let energy = g.sq_err_sum(zq, z)?;
        let loss = g.scale(energy, 1.0 / batch as f64)?;
        g.backward(loss)?;
        let grad = g.grad(c).expect("centers participate in the energy");
        for (cv, &gv) in centers.flat_mut().iter_mut().zip(grad.data()) {
            *cv -= lr * gv;
        }
    }
    Ok((centers, sigma0))
}
