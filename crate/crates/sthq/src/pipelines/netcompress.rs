//! Classifier weight compression: every trainable parameter is flattened
//! into one vector, scalar-quantized (dim = 1) against learnable centers,
//! trained soft-to-hard with the exponential hardness schedule, then
//! fine-tuned with frozen assignments and entropy coded.

use std::path::Path;

use crate::annealing::{hard_switch_reached, AnnealState, SwitchPolicy, TelemetryWriter};
use crate::coder::{coded_size_report, Bitstream, CoderKind, FreqTable};
use crate::entropy::{hard_histogram, sample_entropy, soft_cross_entropy_qp_graph, RunningHistogram};
use crate::error::{Result, SthqError};
use crate::exec;
use crate::graph::{Graph, NodeId};
use crate::optim::{Adam, SgdMomentum};
use crate::pipelines::data::LabeledPoints;
use crate::pipelines::model::{
    forward_with, params_from_flat_node, Activation, LayerSpec, Model, ModelSpec,
};
use crate::pipelines::{cross_entropy_graph, rd_loss_graph, LossKind, RdObjectiveConfig};
use crate::quantizer::{
    batch_hard_assign, reconstruct, reshape_columns, soft_assign_graph, soft_quantize_graph,
    CenterSet, InitOptions, SymbolStream,
};
use crate::rng::SeedTree;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct NetCompressConfig {
    pub hidden: (usize, usize),
    pub l: usize,
    pub beta_total: f64,
    pub lambda: f64,
    /// Schedule start; `None` picks the responsive value
    /// `1 / (2 * mean nearest-center squared distance)` from the weight
    /// statistics. Weight magnitudes are far below image-feature scale, so
    /// a fixed constant would leave the initial assignments uniform.
    pub sigma0: Option<f64>,
    pub growth: f64,
    pub switch_factor: f64,
    pub baseline_iters: usize,
    pub baseline_lr: f64,
    pub max_soft_iters: usize,
    pub finetune_iters: usize,
    pub lr: f64,
    pub batch: usize,
    pub hist_interval: u64,
    /// Global L2 cap on the (weights, centers) gradient per step. Large
    /// sigma concentrates huge gradients on weights near cell boundaries;
    /// unclipped they can knock the network into a dead zone it cannot
    /// leave once assignments harden.
    pub grad_clip: Option<f64>,
    pub coder: CoderKind,
}

impl Default for NetCompressConfig {
    fn default() -> Self {
        NetCompressConfig {
            hidden: (128, 128),
            l: 16,
            beta_total: 5e-4,
            lambda: 1e-6,
            sigma0: None,
            growth: 1.001,
            switch_factor: 20.0,
            baseline_iters: 800,
            baseline_lr: 3e-3,
            max_soft_iters: 4000,
            finetune_iters: 300,
            lr: 0.01,
            batch: 64,
            hist_interval: 10,
            grad_clip: Some(1.0),
            coder: CoderKind::Arithmetic,
        }
    }
}

pub fn classifier_spec(hidden: (usize, usize)) -> ModelSpec {
    ModelSpec {
        layers: vec![
            LayerSpec::Dense { input: 2, output: hidden.0, act: Activation::Relu },
            LayerSpec::Dense { input: hidden.0, output: hidden.1, act: Activation::Relu },
            LayerSpec::Dense { input: hidden.1, output: 2, act: Activation::Linear },
        ],
    }
}

/// Fraction of points classified correctly; evaluation fans out over fixed
/// chunks with a deterministic tally.
pub fn accuracy(model: &Model, data: &LabeledPoints) -> Result<f64> {
    let n = data.len();
    let correct = exec::par_reduce_chunks(
        n,
        |range| {
            let mut rows = Vec::with_capacity(range.len() * 2);
            for i in range.clone() {
                rows.extend_from_slice(&data.xs[i]);
            }
            let input = Tensor::from_raw(vec![range.len(), 2], rows);
            let out = crate::pipelines::model::eval_forward(model, input)
                .expect("forward on finite inputs");
            let mut c = 0usize;
            for (r, i) in range.enumerate() {
                let row = &out.data()[r * 2..r * 2 + 2];
                let pred = if row[1] > row[0] { 1 } else { 0 };
                if pred == data.labels[i] {
                    c += 1;
                }
            }
            c
        },
        0usize,
        |a, b| a + b,
    );
    Ok(correct as f64 / n as f64)
}

/// Train the dense baseline classifier with Adam on cross entropy.
pub fn train_baseline(
    cfg: &NetCompressConfig,
    train: &LabeledPoints,
    seeds: &SeedTree,
) -> Result<Model> {
    let mut rng = seeds.stream("netcompress.baseline");
    let mut model = Model::init(classifier_spec(cfg.hidden), &mut rng);
    let mut opt = Adam::new(cfg.baseline_lr);
    for _ in 0..cfg.baseline_iters {
        let (x, y) = sample_batch(train, cfg.batch, &mut rng);
        let mut g = Graph::new();
        let xn = g.constant(x)?;
        let yn = g.constant(y)?;
        let weights: Vec<NodeId> =
            model.params.iter().map(|p| g.leaf(p.clone())).collect::<Result<_>>()?;
        let logits = forward_with(&mut g, &model.spec, xn, &weights, &mut |_, b| Ok(b))?;
        let loss = cross_entropy_graph(&mut g, logits, yn)?;
        if !g.value(loss).all_finite() {
            return Err(SthqError::Diverged("baseline loss is not finite".into()));
        }
        g.backward(loss)?;
        let grads: Vec<Tensor> =
            weights.iter().map(|&w| g.grad(w).expect("trainable leaf").clone()).collect();
        opt.step(&mut model.params, &grads);
    }
    Ok(model)
}

fn sample_batch(
    data: &LabeledPoints,
    batch: usize,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> (Tensor, Tensor) {
    let mut xs = Vec::with_capacity(batch * 2);
    let mut onehot = vec![0.0; batch * 2];
    for b in 0..batch {
        let i = rand::Rng::random_range(rng, 0..data.len());
        xs.extend_from_slice(&data.xs[i]);
        onehot[b * 2 + data.labels[i]] = 1.0;
    }
    (
        Tensor::from_raw(vec![batch, 2], xs),
        Tensor::from_raw(vec![batch, 2], onehot),
    )
}

/// Everything produced by the soft-to-hard run.
pub struct CompressedNet {
    /// The quantized model (weights are the picked centers, f32-exact).
    pub model: Model,
    pub centers: CenterSet,
    pub stream: SymbolStream,
    pub bitstream: Bitstream,
    pub h_p_bits: f64,
    pub bits_per_weight: f64,
    pub compression_factor: f64,
    pub quantized_accuracy: f64,
}

/// Soft-to-hard compression of a pretrained classifier.
pub fn compress(
    cfg: &NetCompressConfig,
    baseline: &Model,
    train: &LabeledPoints,
    test: &LabeledPoints,
    seeds: &SeedTree,
    telemetry_path: Option<&Path>,
) -> Result<CompressedNet> {
    let rd = RdObjectiveConfig {
        beta_total: cfg.beta_total,
        lambda: cfg.lambda,
        loss_kind: LossKind::CrossEntropy,
    };
    rd.validate()?;
    let spec = baseline.spec.clone();
    let d = baseline.param_count();
    let mut w_flat = baseline.flatten_params();

    // centers from the weight distribution itself
    let cols = reshape_columns(&w_flat, 1)?;
    let mut init_rng = seeds.stream("netcompress.centers");
    let init_opts = InitOptions { iters: 300, ..InitOptions::default() };
    let (mut centers, _cluster_sigma) = crate::quantizer::init_centers(&cols, cfg.l, &init_opts, &mut init_rng)?;

    let sigma0 = match cfg.sigma0 {
        Some(s) => s,
        None => {
            let msd = crate::quantizer::mean_nearest_sq_dist(&cols, &centers)?;
            if msd > 0.0 { 1.0 / (2.0 * msd) } else { 1.0 }
        }
    };
    let mut state = AnnealState::exponential(sigma0, cfg.growth)?;
    let mut rh = RunningHistogram::new(cfg.l, 1, cfg.hist_interval)?;
    let mut opt = SgdMomentum::new(cfg.lr, 0.9);
    let mut rng = seeds.stream("netcompress.soft");
    let mut telemetry = telemetry_path.map(TelemetryWriter::create).transpose()?;

    // soft phase
    for _ in 0..cfg.max_soft_iters {
        if hard_switch_reached(&state, SwitchPolicy::GrowthFactor(cfg.switch_factor)) {
            break;
        }
        let cols = reshape_columns(&w_flat, 1)?;
        let symbols = batch_hard_assign(&cols, &centers)?;
        rh.update(&[SymbolStream::new(symbols, cfg.l)?])?;
        let p = rh.pmf().clone();

        let (x, y) = sample_batch(train, cfg.batch, &mut rng);
        let mut g = Graph::new();
        let w_leaf = g.leaf(Tensor::from_raw(vec![d], w_flat.clone()))?;
        let c_leaf = g.leaf(centers.to_tensor())?;
        let sigma = g.constant(Tensor::scalar(state.sigma()))?;
        let cols_node = g.reshape(w_leaf, vec![d, 1])?;
        let phi = soft_assign_graph(&mut g, cols_node, c_leaf, sigma)?;
        let w_soft = soft_quantize_graph(&mut g, phi, c_leaf)?;
        let parts = params_from_flat_node(&mut g, w_soft, &spec)?;
        let xn = g.constant(x)?;
        let yn = g.constant(y)?;
        let logits = forward_with(&mut g, &spec, xn, &parts, &mut |_, b| Ok(b))?;
        let ce = cross_entropy_graph(&mut g, logits, yn)?;
        let entropy_term = soft_cross_entropy_qp_graph(&mut g, phi, &p)?;
        let loss = rd_loss_graph(&mut g, ce, &[w_leaf], Some(entropy_term), &rd)?;
        g.backward(loss)?;

        let mut gw = g.grad(w_leaf).expect("weights receive gradient").clone();
        let mut gc = g.grad(c_leaf).expect("centers receive gradient").clone();
        if let Some(cap) = cfg.grad_clip {
            clip_global_norm(&mut [&mut gw, &mut gc], cap);
        }
        let e_soft = g.value(ce).item();

        if let Some(t) = telemetry.as_mut() {
            let e_hard = hard_batch_ce(&spec, &w_flat, &centers, &g, xn, yn)?;
            t.record(
                state.iteration(),
                state.sigma(),
                e_soft,
                e_hard,
                e_hard - e_soft,
                None,
                sample_entropy(&p),
            )?;
        }

        let mut params = vec![Tensor::from_raw(vec![d], w_flat.clone()), centers.to_tensor()];
        opt.step(&mut params, &[gw, gc]);
        w_flat = params[0].data().to_vec();
        centers = CenterSet::from_tensor(&params[1])?;
        state.exponential_step()?;
    }

    // hard phase: assignments freeze, centers keep training at lr / 10
    let cols = reshape_columns(&w_flat, 1)?;
    let symbols = batch_hard_assign(&cols, &centers)?;
    let stream = SymbolStream::new(symbols.clone(), cfg.l)?;
    let onehot = selection_matrix(&symbols, d, cfg.l);
    let mut opt = SgdMomentum::new(cfg.lr / 10.0, 0.9);
    for _ in 0..cfg.finetune_iters {
        let (x, y) = sample_batch(train, cfg.batch, &mut rng);
        let mut g = Graph::new();
        let c_leaf = g.leaf(centers.to_tensor())?;
        let sel = g.constant(onehot.clone())?;
        let w_hard = g.matmul(sel, c_leaf)?;
        let parts = params_from_flat_node(&mut g, w_hard, &spec)?;
        let xn = g.constant(x)?;
        let yn = g.constant(y)?;
        let logits = forward_with(&mut g, &spec, xn, &parts, &mut |_, b| Ok(b))?;
        let ce = cross_entropy_graph(&mut g, logits, yn)?;
        if !g.value(ce).all_finite() {
            return Err(SthqError::Diverged("hard fine-tuning loss is not finite".into()));
        }
        g.backward(ce)?;
        let gc = g.grad(c_leaf).expect("centers receive gradient").clone();
        let mut params = vec![centers.to_tensor()];
        opt.step(&mut params, &[gc]);
        centers = CenterSet::from_tensor(&params[0])?;

        if let Some(t) = telemetry.as_mut() {
            let e = g.value(ce).item();
            t.record(state.iteration(), state.sigma(), e, e, 0.0, None, {
                let p = hard_histogram(&[&stream], cfg.l)?;
                sample_entropy(&p)
            })?;
        }
        state.exponential_step()?;
    }
    if let Some(t) = telemetry.take() {
        t.finish()?;
    }

    // finalize against f32 storage
    centers.round_to_f32();
    let w_hat = reconstruct(&stream, &centers)?;
    let mut model = Model { spec, params: baseline.params.clone() };
    model.set_from_flat(w_hat.flat())?;
    model.round_to_f32();

    let p = hard_histogram(&[&stream], cfg.l)?;
    let h_p_bits = sample_entropy(&p);
    let table = FreqTable::from_stream(&stream)?;
    let bitstream = Bitstream::encode(&stream, &centers, &table, cfg.coder)?;
    let total_bits = bitstream.total_bits();
    let quantized_accuracy = accuracy(&model, test)?;

    Ok(CompressedNet {
        model,
        centers,
        stream,
        compression_factor: coded_size_report(
            d as u64,
            cfg.l as u64,
            1,
            bitstream.payload.len() as u64 * 8,
            bitstream.header_bits(),
        ),
        bits_per_weight: total_bits as f64 / d as f64,
        h_p_bits,
        bitstream,
        quantized_accuracy,
    })
}

/// Scale gradients so their joint L2 norm is at most `cap`.
fn clip_global_norm(grads: &mut [&mut Tensor], cap: f64) {
    let norm: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|&v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > cap {
        let scale = cap / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Selection matrix `[d, L]` with a 1 at each weight's assigned center.
fn selection_matrix(symbols: &[u32], d: usize, l: usize) -> Tensor {
    let mut data = vec![0.0; d * l];
    for (i, &s) in symbols.iter().enumerate() {
        data[i * l + s as usize] = 1.0;
    }
    Tensor::from_raw(vec![d, l], data)
}

/// Cross entropy of the same batch under hard-quantized weights.
fn hard_batch_ce(
    spec: &ModelSpec,
    w_flat: &[f64],
    centers: &CenterSet,
    training_graph: &Graph,
    xn: NodeId,
    yn: NodeId,
) -> Result<f64> {
    let cols = reshape_columns(w_flat, 1)?;
    let (_, w_hat) = crate::quantizer::hard_quantize(&cols, centers)?;
    let mut g = Graph::new();
    let flat = g.constant(Tensor::from_raw(vec![w_flat.len()], w_hat.flat().to_vec()))?;
    let parts = params_from_flat_node(&mut g, flat, spec)?;
    let x = g.constant(training_graph.value(xn).clone())?;
    let y = g.constant(training_graph.value(yn).clone())?;
    let logits = forward_with(&mut g, spec, x, &parts, &mut |_, b| Ok(b))?;
    let ce = cross_entropy_graph(&mut g, logits, y)?;
    Ok(g.value(ce).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipelines::data::two_moons;

    #[test]
    fn beta_zero_control_keeps_accuracy_and_rate() {
        // without the entropy term, quantization to L centers costs little
        // accuracy and the factor sits near 32 / log2(L) less overheads
        let seeds = SeedTree::new(88);
        let train = two_moons(600, 0.08, &mut seeds.stream("train"));
        let test = two_moons(300, 0.08, &mut seeds.stream("test"));
        let cfg = NetCompressConfig {
            hidden: (32, 16),
            l: 8,
            beta_total: 0.0,
            baseline_iters: 400,
            max_soft_iters: 700,
            finetune_iters: 100,
            growth: 1.005,
            ..NetCompressConfig::default()
        };
        let baseline = train_baseline(&cfg, &train, &seeds).unwrap();
        let base_acc = accuracy(&baseline, &test).unwrap();
        let out = compress(&cfg, &baseline, &train, &test, &seeds, None).unwrap();
        assert!(
            out.quantized_accuracy >= base_acc - 0.03,
            "beta = 0 accuracy {} fell from baseline {}",
            out.quantized_accuracy,
            base_acc
        );
        // H stays near log2(L) without entropy pressure, so the factor is
        // close to 32 / log2(8) minus header and table overheads
        assert!(
            out.compression_factor > 0.6 * (32.0 / 3.0)
                && out.compression_factor < 1.2 * (32.0 / 3.0),
            "factor {} far from 32/log2(L)",
            out.compression_factor
        );
    }

    #[test]
    fn smoke_compress_tiny() {
        let seeds = SeedTree::new(77);
        let train = two_moons(200, 0.08, &mut seeds.stream("train"));
        let test = two_moons(100, 0.08, &mut seeds.stream("test"));
        let cfg = NetCompressConfig {
            hidden: (16, 8),
            l: 8,
            baseline_iters: 150,
            max_soft_iters: 60,
            finetune_iters: 20,
            switch_factor: 1.02,
            growth: 1.001,
            beta_total: 0.1,
            ..NetCompressConfig::default()
        };
        let baseline = train_baseline(&cfg, &train, &seeds).unwrap();
        let acc = accuracy(&baseline, &test).unwrap();
        assert!(acc > 0.8, "baseline accuracy {acc}");
        let out = compress(&cfg, &baseline, &train, &test, &seeds, None).unwrap();
        // lossless symbol path
        assert_eq!(out.bitstream.decode().unwrap().symbols, out.stream.symbols);
        // quantized weights are exactly the picked (f32) centers
        for &w in &out.model.flatten_params() {
            assert!(out.centers.flat().iter().any(|&c| c == w));
        }
    }
}
