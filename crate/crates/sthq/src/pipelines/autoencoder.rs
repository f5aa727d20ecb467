//! Convolutional autoencoder with a quantized bottleneck.
//!
//! Two-stage training: stage 1 learns the autoencoder with an identity
//! bottleneck; stage 2 initializes centers from collected bottleneck
//! patches and jointly trains weights and centers under the
//! rate-distortion objective with gap-feedback annealing. Each bottleneck
//! channel gets its own histogram and entropy term (one shared beta); the
//! center set is shared.

use std::path::Path;

use crate::annealing::{AnnealState, TelemetryWriter};
use crate::coder::{Bitstream, CoderKind, FreqTable};
use crate::entropy::{sample_entropy, soft_cross_entropy_qp_graph, HistogramPMF, RunningHistogram};
use crate::error::{Result, SthqError};
use crate::exec;
use crate::graph::{Graph, NodeId};
use crate::optim::Adam;
use crate::pipelines::data::{batch_tensor, GrayImage};
use crate::pipelines::metrics::{mse, psnr};
use crate::pipelines::model::{
    forward_after_bottleneck, forward_to_bottleneck, forward_with, Activation, LayerSpec, Model,
    ModelSpec,
};
use crate::pipelines::patches::{extract_patches, patches_graph, place_patches, unpatches_graph};
use crate::pipelines::{mse_graph, rd_loss_graph, LossKind, RdObjectiveConfig};
use crate::quantizer::{
    batch_hard_assign, init_centers, soft_assign_graph, soft_quantize_graph, CenterSet,
    ColumnMatrix, InitOptions, SymbolStream,
};
use crate::rng::SeedTree;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AeConfig {
    pub image_size: usize,
    pub bottleneck_channels: usize,
    pub hidden_channels: usize,
    /// Identity-skip conv blocks after the first downsampling; off by default.
    pub residual_blocks: usize,
    pub l: usize,
    /// (patch height, patch width); the column dimensionality is their product.
    pub patch: (usize, usize),
    pub beta_total: f64,
    pub lambda: f64,
    pub stage1_iters: usize,
    pub stage1_lr: f64,
    pub stage2_iters: usize,
    pub stage2_lr: f64,
    pub batch: usize,
    /// T in the gap-feedback schedule.
    pub half_life: f64,
    /// K_G; when unset, chosen so gain * gap(0) is about
    /// `gain_factor * sigma0`.
    pub gain: Option<f64>,
    /// The auto-gain factor. 0.1 tracks loosely; raise it when a run must
    /// drive the soft/hard gap all the way down.
    pub gain_factor: f64,
    pub hist_interval: u64,
    pub coder: CoderKind,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            image_size: 32,
            bottleneck_channels: 4,
            hidden_channels: 8,
            residual_blocks: 0,
            l: 64,
            patch: (2, 2),
            beta_total: 3e-3,
            lambda: 1e-9,
            stage1_iters: 1500,
            stage1_lr: 2e-3,
            stage2_iters: 4000,
            stage2_lr: 5e-4,
            batch: 8,
            half_life: 250.0,
            gain: None,
            gain_factor: 0.1,
            hist_interval: 10,
            coder: CoderKind::Arithmetic,
        }
    }
}

/// conv(s2) x2 into the bottleneck, nearest-neighbor upsample + conv x2 out.
pub fn ae_spec(cfg: &AeConfig) -> ModelSpec {
    let (h, c) = (cfg.hidden_channels, cfg.bottleneck_channels);
    let mut layers = vec![LayerSpec::Conv {
        cin: 1,
        cout: h,
        k: 3,
        stride: 2,
        pad: 1,
        act: Activation::Relu,
    }];
    for _ in 0..cfg.residual_blocks {
        layers.push(LayerSpec::ResidualConv { ch: h, k: 3 });
    }
    layers.extend([
        LayerSpec::Conv { cin: h, cout: c, k: 3, stride: 2, pad: 1, act: Activation::Linear },
        LayerSpec::Bottleneck,
        LayerSpec::Upsample2x,
        LayerSpec::Conv { cin: c, cout: h, k: 3, stride: 1, pad: 1, act: Activation::Relu },
        LayerSpec::Upsample2x,
        LayerSpec::Conv { cin: h, cout: 1, k: 3, stride: 1, pad: 1, act: Activation::Linear },
    ]);
    ModelSpec { layers }
}

/// Spatial/channel shape of the bottleneck for a given input size.
pub fn bottleneck_dims(model: &Model, h: usize, w: usize) -> Result<(usize, usize, usize)> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1, h, w]))?;
    let weights: Vec<NodeId> =
        model.params.iter().map(|p| g.constant(p.clone())).collect::<Result<_>>()?;
    let b = forward_to_bottleneck(&mut g, &model.spec, x, &weights)?;
    let s = g.value(b).shape();
    Ok((s[1], s[2], s[3]))
}

fn sample_images<'a>(
    images: &'a [GrayImage],
    batch: usize,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Vec<&'a GrayImage> {
    (0..batch).map(|_| &images[rand::Rng::random_range(rng, 0..images.len())]).collect()
}

/// Stage 1: train the autoencoder with an identity bottleneck.
pub fn train_stage1(cfg: &AeConfig, images: &[GrayImage], seeds: &SeedTree) -> Result<Model> {
    if images.is_empty() {
        return Err(SthqError::InvalidArgument("no training images".into()));
    }
    let mut rng = seeds.stream("ae.stage1");
    let mut model = Model::init(ae_spec(cfg), &mut rng);
    let mut opt = Adam::new(cfg.stage1_lr);
    for _ in 0..cfg.stage1_iters {
        let batch = sample_images(images, cfg.batch, &mut rng);
        let x = batch_tensor(&batch);
        let mut g = Graph::new();
        let xn = g.constant(x)?;
        let weights: Vec<NodeId> =
            model.params.iter().map(|p| g.leaf(p.clone())).collect::<Result<_>>()?;
        let out = forward_with(&mut g, &model.spec, xn, &weights, &mut |_, b| Ok(b))?;
        let loss = mse_graph(&mut g, out, xn)?;
        if !g.value(loss).all_finite() {
            return Err(SthqError::Diverged("stage-1 loss is not finite".into()));
        }
        g.backward(loss)?;
        let grads: Vec<Tensor> =
            weights.iter().map(|&w| g.grad(w).expect("trainable leaf").clone()).collect();
        opt.step(&mut model.params, &grads);
    }
    Ok(model)
}

/// Encoder output for a single image.
fn encode_bottleneck(model: &Model, img: &GrayImage) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(img.to_tensor())?;
    let weights: Vec<NodeId> =
        model.params.iter().map(|p| g.constant(p.clone())).collect::<Result<_>>()?;
    let b = forward_to_bottleneck(&mut g, &model.spec, x, &weights)?;
    Ok(g.value(b).clone())
}

/// Per-channel patch columns of one image's bottleneck, channel order.
fn bottleneck_columns(bneck: &Tensor, ph: usize, pw: usize) -> Result<Vec<ColumnMatrix>> {
    let s = bneck.shape();
    let (c, bh, bw) = (s[1], s[2], s[3]);
    let plane = bh * bw;
    (0..c)
        .map(|ci| extract_patches(&bneck.data()[ci * plane..(ci + 1) * plane], bh, bw, ph, pw))
        .collect()
}

/// All bottleneck patch columns over a set of images, pooled across
/// channels (the center set is shared; histograms are not).
pub fn collect_columns(model: &Model, images: &[GrayImage], ph: usize, pw: usize) -> Result<ColumnMatrix> {
    let mut data = Vec::new();
    for img in images {
        let b = encode_bottleneck(model, img)?;
        for cols in bottleneck_columns(&b, ph, pw)? {
            data.extend_from_slice(cols.flat());
        }
    }
    ColumnMatrix::from_rows(ph * pw, data)
}

/// Everything needed to encode and decode images: the trained model plus
/// the shared centers, coding table, patch geometry, and coder choice.
#[derive(Debug, Clone)]
pub struct AeCodec {
    pub model: Model,
    pub centers: CenterSet,
    pub table: FreqTable,
    pub patch: (usize, usize),
    pub coder: CoderKind,
}

const CODEC_MAGIC: &[u8; 4] = b"STHC";

impl AeCodec {
    /// Persist as `model.sthm` plus `codec.bin` in a run directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(&dir.join("model.sthm"))?;
        let mut out = Vec::new();
        out.extend_from_slice(CODEC_MAGIC);
        out.push(1u8);
        out.push(self.coder as u8);
        out.push(self.patch.0 as u8);
        out.push(self.patch.1 as u8);
        self.centers.write_block(&mut out);
        for &c in self.table.counts() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        std::fs::write(dir.join("codec.bin"), out)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<AeCodec> {
        let model = Model::load(&dir.join("model.sthm"))?;
        let bytes = std::fs::read(dir.join("codec.bin"))?;
        let bad = |m: &str| SthqError::Decode(format!("codec.bin: {m}"));
        if bytes.len() < 8 || &bytes[0..4] != CODEC_MAGIC || bytes[4] != 1 {
            return Err(bad("bad header"));
        }
        let coder = match bytes[5] {
            0 => CoderKind::Arithmetic,
            1 => CoderKind::Huffman,
            _ => return Err(bad("unknown coder")),
        };
        let patch = (bytes[6] as usize, bytes[7] as usize);
        let (centers, used) = CenterSet::read_block(&bytes[8..])?;
        let mut off = 8 + used;
        let l = centers.len();
        if bytes.len() < off + 4 * l {
            return Err(bad("truncated table"));
        }
        let mut counts = Vec::with_capacity(l);
        for _ in 0..l {
            counts.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        Ok(AeCodec { model, centers, table: FreqTable::from_exact(counts)?, patch, coder })
    }
}

/// A trained stage-2 model with run statistics.
#[derive(Debug, Clone)]
pub struct TrainedAe {
    pub codec: AeCodec,
    /// Pooled sample entropy of the training symbols, bits/symbol.
    pub h_p_bits: f64,
    pub sigma_final: f64,
    pub e_soft_final: f64,
    pub e_hard_final: f64,
}

/// Stage 2: joint training of weights and centers under the
/// rate-distortion objective with gap-feedback annealing.
pub fn train_stage2(
    cfg: &AeConfig,
    stage1: &Model,
    images: &[GrayImage],
    seeds: &SeedTree,
    telemetry_path: Option<&Path>,
) -> Result<TrainedAe> {
    let rd = RdObjectiveConfig {
        beta_total: cfg.beta_total,
        lambda: cfg.lambda,
        loss_kind: LossKind::Mse,
    };
    rd.validate()?;
    let (ph, pw) = cfg.patch;
    let dim = ph * pw;
    let mut model = stage1.clone();
    let (c, bh, bw) = bottleneck_dims(&model, cfg.image_size, cfg.image_size)?;

    // centers from the stage-1 bottleneck distribution
    let pooled = collect_columns(&model, images, ph, pw)?;
    let mut init_rng = seeds.stream("ae.centers");
    let (centers0, sigma0) = init_centers(&pooled, cfg.l, &InitOptions::default(), &mut init_rng)?;

    let mut histograms: Vec<RunningHistogram> = (0..c)
        .map(|_| RunningHistogram::new(cfg.l, images.len(), cfg.hist_interval))
        .collect::<Result<_>>()?;

    let epoch_len = images.len().div_ceil(cfg.batch).max(1);
    let mut epoch0_gaps: Vec<f64> = Vec::new();
    let mut state: Option<AnnealState> = None;

    let mut train_params: Vec<Tensor> = model.params.clone();
    train_params.push(centers0.to_tensor());
    let mut opt = Adam::new(cfg.stage2_lr);
    let mut rng = seeds.stream("ae.stage2");
    let mut telemetry = telemetry_path.map(TelemetryWriter::create).transpose()?;
    let mut last_soft = f64::NAN;
    let mut last_hard = f64::NAN;

    for t in 0..cfg.stage2_iters {
        let sigma = state.as_ref().map(|s| s.sigma()).unwrap_or(sigma0);
        let centers = CenterSet::from_tensor(train_params.last().unwrap())?;
        let batch = sample_images(images, cfg.batch, &mut rng);
        let x = batch_tensor(&batch);

        let mut g = Graph::new();
        let xn = g.constant(x)?;
        let n_model = model.params.len();
        let weights: Vec<NodeId> = train_params[..n_model]
            .iter()
            .map(|p| g.leaf(p.clone()))
            .collect::<Result<_>>()?;
        let c_leaf = g.leaf(train_params[n_model].clone())?;
        let sig = g.constant(Tensor::scalar(sigma))?;
        let bneck = forward_to_bottleneck(&mut g, &model.spec, xn, &weights)?;

        let mut chan_q = Vec::with_capacity(c);
        let mut entropy_terms = Vec::with_capacity(c);
        for ci in 0..c {
            let chan = g.slice(bneck, 1, ci, 1)?;
            let cols = patches_graph(&mut g, chan, ph, pw)?;
            let phi = soft_assign_graph(&mut g, cols, c_leaf, sig)?;
            let zq = soft_quantize_graph(&mut g, phi, c_leaf)?;
            chan_q.push(unpatches_graph(&mut g, zq, cfg.batch, bh, bw, ph, pw)?);
            entropy_terms.push(soft_cross_entropy_qp_graph(&mut g, phi, histograms[ci].pmf())?);
        }
        let bneck_q = g.concat(&chan_q, 1)?;
        let out = forward_after_bottleneck(&mut g, &model.spec, bneck_q, &weights)?;
        let e_soft_node = mse_graph(&mut g, out, xn)?;
        // same beta for every channel: mean per-symbol entropy (equal m_c)
        let mut ent = entropy_terms[0];
        for &e in &entropy_terms[1..] {
            ent = g.add(ent, e)?;
        }
        let ent = g.scale(ent, 1.0 / c as f64)?;
        let mut l2_leaves = weights.clone();
        l2_leaves.push(c_leaf);
        let loss = rd_loss_graph(&mut g, e_soft_node, &l2_leaves, Some(ent), &rd)?;
        g.backward(loss)?;

        // hard pass: symbols + hard reconstruction error on the same batch,
        // against the current (not stage-1) weights
        let bneck_val = g.value(bneck).clone();
        let (streams, bneck_hard) = hard_quantize_bottleneck(&bneck_val, &centers, ph, pw)?;
        let e_hard = decoder_mse(&model.spec, &train_params[..n_model], &bneck_hard, g.value(xn))?;
        let e_soft = g.value(e_soft_node).item();
        last_soft = e_soft;
        last_hard = e_hard;
        let gap_t = crate::annealing::gap(e_soft, e_hard);

        // per-image per-channel streams feed the sliding histograms
        for (ci, hist) in histograms.iter_mut().enumerate() {
            let per_image: Vec<SymbolStream> = streams[ci].clone();
            hist.update(&per_image)?;
        }

        if let Some(tw) = telemetry.as_mut() {
            let h_mean = histograms.iter().map(|h| sample_entropy(h.pmf())).sum::<f64>() / c as f64;
            tw.record(
                t as u64,
                sigma,
                e_soft,
                e_hard,
                gap_t,
                state.as_ref().and_then(|s| s.target_gap()),
                h_mean,
            )?;
        }

        // gap(0) is the first epoch's average; feedback starts afterwards
        if t < epoch_len {
            epoch0_gaps.push(gap_t);
            if t + 1 == epoch_len {
                let gap0 = epoch0_gaps.iter().sum::<f64>() / epoch0_gaps.len() as f64;
                let gain = cfg.gain.unwrap_or(cfg.gain_factor * sigma0 / gap0.abs().max(1e-6));
                state = Some(AnnealState::gap_feedback(sigma0, cfg.half_life, gain, gap0)?);
            }
        } else {
            state.as_mut().unwrap().gap_feedback_step(gap_t)?;
        }

        let mut grads = Vec::with_capacity(train_params.len());
        for &w in weights.iter().chain(std::iter::once(&c_leaf)) {
            grads.push(g.grad(w).expect("trainable leaf").clone());
        }
        opt.step(&mut train_params, &grads);
    }
    if let Some(tw) = telemetry.take() {
        tw.finish()?;
    }

    // finalize against f32 storage and rebuild the coding table
    model.params = train_params[..model.params.len()].to_vec();
    model.round_to_f32();
    let mut centers = CenterSet::from_tensor(train_params.last().unwrap())?;
    centers.round_to_f32();

    let mut pooled_counts = vec![0u64; cfg.l];
    let mut total_syms = 0u64;
    let mut h_counts = vec![0.0f64; cfg.l];
    for img in images {
        let b = encode_bottleneck(&model, img)?;
        for cols in bottleneck_columns(&b, ph, pw)? {
            for s in batch_hard_assign(&cols, &centers)? {
                pooled_counts[s as usize] += 1;
                h_counts[s as usize] += 1.0;
                total_syms += 1;
            }
        }
    }
    if total_syms == 0 {
        return Err(SthqError::InvalidArgument("no symbols produced by training set".into()));
    }
    let table = FreqTable::from_counts(&pooled_counts)?;
    let h_p_bits = sample_entropy(&HistogramPMF::from_counts(h_counts)?);

    let sigma_final = state.map(|s| s.sigma()).unwrap_or(sigma0);
    let _ = (dim, last_soft, last_hard);

    // end-of-annealing errors over the whole training set
    let codec = AeCodec { model, centers, table, patch: (ph, pw), coder: cfg.coder };
    let (e_soft_final, e_hard_final) = full_set_errors(&codec, images, sigma_final)?;
    Ok(TrainedAe { codec, h_p_bits, sigma_final, e_soft_final, e_hard_final })
}

/// Soft and hard reconstruction MSE over an image set at a fixed hardness.
fn full_set_errors(codec: &AeCodec, images: &[GrayImage], sigma: f64) -> Result<(f64, f64)> {
    let (ph, pw) = codec.patch;
    let mut soft_err = 0.0;
    let mut hard_err = 0.0;
    let mut pixels = 0usize;
    for img in images {
        let x = img.to_tensor();
        let bneck = encode_bottleneck(&codec.model, img)?;
        let s = bneck.shape().to_vec();
        let (c, bh, bw) = (s[1], s[2], s[3]);
        let plane = bh * bw;
        let mut soft_b = vec![0.0f64; bneck.numel()];
        for ci in 0..c {
            let cols = extract_patches(&bneck.data()[ci * plane..(ci + 1) * plane], bh, bw, ph, pw)?;
            let mut soft_cols = Vec::with_capacity(cols.flat().len());
            for l in 0..cols.num_columns() {
                soft_cols.extend(crate::quantizer::soft_quantize(cols.column(l), &codec.centers, sigma)?);
            }
            let soft_cm = ColumnMatrix::from_rows(ph * pw, soft_cols)?;
            soft_b[ci * plane..(ci + 1) * plane]
                .copy_from_slice(&place_patches(&soft_cm, bh, bw, ph, pw)?);
        }
        let (_, bneck_hard) = hard_quantize_bottleneck(&bneck, &codec.centers, ph, pw)?;
        let n = img.pixels.len();
        soft_err += decoder_mse(
            &codec.model.spec,
            &codec.model.params,
            &Tensor::from_raw(s.clone(), soft_b),
            &x,
        )? * n as f64;
        hard_err += decoder_mse(&codec.model.spec, &codec.model.params, &bneck_hard, &x)? * n as f64;
        pixels += n;
    }
    Ok((soft_err / pixels as f64, hard_err / pixels as f64))
}

/// Hard-assign every channel of a `[B, c, bh, bw]` bottleneck. Returns
/// per-channel, per-image streams plus the quantized bottleneck values.
fn hard_quantize_bottleneck(
    bneck: &Tensor,
    centers: &CenterSet,
    ph: usize,
    pw: usize,
) -> Result<(Vec<Vec<SymbolStream>>, Tensor)> {
    let s = bneck.shape().to_vec();
    let (b, c, bh, bw) = (s[0], s[1], s[2], s[3]);
    let plane = bh * bw;
    let mut hard = vec![0.0f64; bneck.numel()];
    let mut streams: Vec<Vec<SymbolStream>> = vec![Vec::with_capacity(b); c];
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * plane;
            let cols = extract_patches(&bneck.data()[off..off + plane], bh, bw, ph, pw)?;
            let symbols = batch_hard_assign(&cols, centers)?;
            let recon = crate::quantizer::reconstruct(
                &SymbolStream::new(symbols.clone(), centers.len())?,
                centers,
            )?;
            hard[off..off + plane].copy_from_slice(&place_patches(&recon, bh, bw, ph, pw)?);
            streams[ci].push(SymbolStream::new(symbols, centers.len())?);
        }
    }
    Ok((streams, Tensor::from_raw(s, hard)))
}

/// MSE of the decoder run on a fixed bottleneck (no gradients).
fn decoder_mse(spec: &ModelSpec, params: &[Tensor], bneck: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let b = g.constant(bneck.clone())?;
    let weights: Vec<NodeId> =
        params.iter().map(|p| g.constant(p.clone())).collect::<Result<_>>()?;
    let out = forward_after_bottleneck(&mut g, spec, b, &weights)?;
    let t = g.constant(target.clone())?;
    let m = mse_graph(&mut g, out, t)?;
    Ok(g.value(m).item())
}

/// Decoder output for a bottleneck, clamped to the pixel range.
fn decode_bottleneck_to_image(model: &Model, bneck: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let b = g.constant(bneck.clone())?;
    let weights: Vec<NodeId> =
        model.params.iter().map(|p| g.constant(p.clone())).collect::<Result<_>>()?;
    let out = forward_after_bottleneck(&mut g, &model.spec, b, &weights)?;
    Ok(g.value(out).data().iter().map(|&v| v.clamp(0.0, 1.0)).collect())
}

/// One compressed image.
#[derive(Debug, Clone)]
pub struct ImageArtifact {
    pub bytes: Vec<u8>,
    pub stream: SymbolStream,
    pub payload_bits: u64,
    /// Hard-quantized reconstruction computed in memory (pixels in [0, 1]).
    pub reconstruction: Vec<f64>,
}

/// Compress one image: encoder, per-channel nearest-neighbor symbols,
/// entropy-coded container prefixed with the model hash and image geometry.
pub fn compress_image(codec: &AeCodec, img: &GrayImage) -> Result<ImageArtifact> {
    let (ph, pw) = codec.patch;
    if img.w % 4 != 0 || img.h % 4 != 0 {
        return Err(SthqError::InvalidArgument(format!(
            "image {}x{} not divisible by the 4x downsampling factor",
            img.w, img.h
        )));
    }
    let (_, bh, bw) = bottleneck_dims(&codec.model, img.h, img.w)?;
    if bh % ph != 0 || bw % pw != 0 {
        return Err(SthqError::InvalidArgument(format!(
            "bottleneck {bh}x{bw} not divisible into {ph}x{pw} patches; image sides must be multiples of {}",
            4 * ph.max(pw)
        )));
    }
    let bneck = encode_bottleneck(&codec.model, img)?;
    let (streams, bneck_hard) = hard_quantize_bottleneck(&bneck, &codec.centers, ph, pw)?;
    let mut symbols = Vec::new();
    for chan in &streams {
        for s in chan {
            symbols.extend_from_slice(&s.symbols);
        }
    }
    let stream = SymbolStream::new(symbols, codec.centers.len())?;
    let bs = Bitstream::encode(&stream, &codec.centers, &codec.table, codec.coder)?;
    let payload_bits = bs.payload_bits;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(&codec.model.hash().to_le_bytes());
    bytes.extend_from_slice(&(img.w as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.h as u32).to_le_bytes());
    bytes.push(ph as u8);
    bytes.push(pw as u8);
    bytes.extend_from_slice(&bs.to_bytes());

    let reconstruction = decode_bottleneck_to_image(&codec.model, &bneck_hard)?;
    Ok(ImageArtifact { bytes, stream, payload_bits, reconstruction })
}

/// Decode an artifact produced by [`compress_image`] back to pixels.
pub fn decompress_image(model: &Model, bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 18 {
        return Err(SthqError::Decode("artifact truncated".into()));
    }
    let hash = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    if hash != model.hash() {
        return Err(SthqError::Decode("artifact does not pair with this model".into()));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let (ph, pw) = (bytes[16] as usize, bytes[17] as usize);
    let (bs, _) = Bitstream::from_bytes(&bytes[18..])?;
    let stream = bs.decode()?;

    let (c, bh, bw) = bottleneck_dims(model, h, w)?;
    let per_channel = (bh / ph) * (bw / pw);
    if stream.len() != c * per_channel {
        return Err(SthqError::Decode(format!(
            "artifact has {} symbols, model expects {}",
            stream.len(),
            c * per_channel
        )));
    }
    let plane = bh * bw;
    let mut bneck = vec![0.0f64; c * plane];
    for ci in 0..c {
        let sub = SymbolStream::new(
            stream.symbols[ci * per_channel..(ci + 1) * per_channel].to_vec(),
            bs.centers.len(),
        )?;
        let cols = crate::quantizer::reconstruct(&sub, &bs.centers)?;
        bneck[ci * plane..(ci + 1) * plane]
            .copy_from_slice(&place_patches(&cols, bh, bw, ph, pw)?);
    }
    let pixels =
        decode_bottleneck_to_image(model, &Tensor::from_raw(vec![1, c, bh, bw], bneck))?;
    Ok(GrayImage::new(w, h, pixels))
}

/// Aggregate evaluation of a trained model over an image set.
#[derive(Debug, Clone)]
pub struct AeEvalSummary {
    /// payload bits over pixel count
    pub bpp: f64,
    pub mse: f64,
    pub psnr_db: f64,
    pub coded_bits: u64,
    /// sample entropy of the concatenated coded streams
    pub h_stream_bits: f64,
    pub total_symbols: u64,
}

pub fn eval_images(codec: &AeCodec, images: &[GrayImage]) -> Result<AeEvalSummary> {
    let results = exec::par_map(images.len(), |i| {
        let img = &images[i];
        let artifact = compress_image(codec, img)?;
        let err = mse(&artifact.reconstruction, &img.pixels);
        Ok::<_, SthqError>((artifact.payload_bits, artifact.stream, err, img.pixels.len()))
    });
    let mut payload = 0u64;
    let mut pixels = 0usize;
    let mut err_sum = 0.0;
    let mut counts = vec![0.0f64; codec.centers.len()];
    let mut total_symbols = 0u64;
    for r in results {
        let (bits, stream, err, px) = r?;
        payload += bits;
        pixels += px;
        err_sum += err * px as f64;
        for &s in &stream.symbols {
            counts[s as usize] += 1.0;
        }
        total_symbols += stream.len() as u64;
    }
    let mse_total = err_sum / pixels as f64;
    Ok(AeEvalSummary {
        bpp: payload as f64 / pixels as f64,
        mse: mse_total,
        psnr_db: psnr(mse_total, 1.0),
        coded_bits: payload,
        h_stream_bits: sample_entropy(&HistogramPMF::from_counts(counts)?),
        total_symbols,
    })
}
