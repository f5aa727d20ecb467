//! Network specs, parameter storage, the graph forward builder, and the
//! `STHM` model file format.
//!
//! Model file layout (little-endian): magic `"STHM"`, version u8 = 1, layer
//! count u16, per-layer records, parameter count u64, parameters as f32.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, SthqError};
use crate::graph::{Graph, NodeId};
use crate::rng::fnv1a64;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"STHM";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize, act: Activation },
    Conv { cin: usize, cout: usize, k: usize, stride: usize, pad: usize, act: Activation },
    /// `relu(x + conv_k(x))`, stride 1, same padding.
    ResidualConv { ch: usize, k: usize },
    Upsample2x,
    /// Marks where the compressible representation lives; no parameters.
    Bottleneck,
}

impl LayerSpec {
    /// Parameter tensor shapes introduced by this layer (weights, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { input, output, .. } => {
                vec![vec![input, output], vec![output]]
            }
            LayerSpec::Conv { cin, cout, k, .. } => {
                vec![vec![cout, cin, k, k], vec![1, cout, 1, 1]]
            }
            LayerSpec::ResidualConv { ch, k } => {
                vec![vec![ch, ch, k, k], vec![1, ch, 1, 1]]
            }
            LayerSpec::Upsample2x | LayerSpec::Bottleneck => vec![],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv { cin, k, .. } => cin * k * k,
            LayerSpec::ResidualConv { ch, k } => ch * k * k,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| l.param_shapes()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn bottleneck_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, LayerSpec::Bottleneck))
    }
}

/// A spec plus its parameters, in layer order (weights then bias per layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

impl Model {
    /// He-style initialization scaled by fan-in; biases zero.
    pub fn init(spec: ModelSpec, rng: &mut ChaCha12Rng) -> Model {
        let mut params = Vec::new();
        for layer in &spec.layers {
            let shapes = layer.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let std = (2.0 / layer.fan_in().max(1) as f64).sqrt();
            // weights
            let wshape = &shapes[0];
            let n: usize = wshape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    // Box-Muller
                    let u: f64 = rng.random::<f64>().max(1e-12);
                    let v: f64 = rng.random();
                    std * (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
                })
                .collect();
            params.push(Tensor::from_raw(wshape.clone(), data));
            // bias
            params.push(Tensor::zeros(&shapes[1]));
        }
        Model { spec, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// All parameters concatenated into one flat vector (layer order).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.data());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(SthqError::InvalidArgument(format!(
                "flat vector of {} does not match {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0usize;
        for p in &mut self.params {
            let n = p.numel();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Snap every parameter to f32 precision; the file format stores f32,
    /// so final artifacts are evaluated against the rounded values.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for v in p.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.spec.layers.len() as u16).to_le_bytes());
        for layer in &self.spec.layers {
            match *layer {
                LayerSpec::Dense { input, output, act } => {
                    out.push(0);
                    out.extend_from_slice(&(input as u32).to_le_bytes());
                    out.extend_from_slice(&(output as u32).to_le_bytes());
                    out.push(act as u8);
                }
                LayerSpec::Conv { cin, cout, k, stride, pad, act } => {
                    out.push(1);
                    for v in [cin, cout, k, stride, pad] {
                        out.extend_from_slice(&(v as u32).to_le_bytes());
                    }
                    out.push(act as u8);
                }
                LayerSpec::ResidualConv { ch, k } => {
                    out.push(2);
                    out.extend_from_slice(&(ch as u32).to_le_bytes());
                    out.extend_from_slice(&(k as u32).to_le_bytes());
                }
                LayerSpec::Upsample2x => out.push(3),
                LayerSpec::Bottleneck => out.push(4),
            }
        }
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for p in &self.params {
            for &v in p.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let bad = |m: &str| SthqError::Decode(format!("model file: {m}"));
        if bytes.len() < 7 || &bytes[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        let n_layers = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let mut off = 7usize;
        let read_u32 = |off: &mut usize| -> Result<u32> {
            if bytes.len() < *off + 4 {
                return Err(SthqError::Decode("model file: truncated".into()));
            }
            let v = u32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
            *off += 4;
            Ok(v)
        };
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            if bytes.len() <= off {
                return Err(bad("truncated"));
            }
            let kind = bytes[off];
            off += 1;
            let layer = match kind {
                0 => {
                    let input = read_u32(&mut off)? as usize;
                    let output = read_u32(&mut off)? as usize;
                    let act = parse_act(bytes, &mut off)?;
                    LayerSpec::Dense { input, output, act }
                }
                1 => {
                    let cin = read_u32(&mut off)? as usize;
                    let cout = read_u32(&mut off)? as usize;
                    let k = read_u32(&mut off)? as usize;
                    let stride = read_u32(&mut off)? as usize;
                    let pad = read_u32(&mut off)? as usize;
                    let act = parse_act(bytes, &mut off)?;
                    LayerSpec::Conv { cin, cout, k, stride, pad, act }
                }
                2 => {
                    let ch = read_u32(&mut off)? as usize;
                    let k = read_u32(&mut off)? as usize;
                    LayerSpec::ResidualConv { ch, k }
                }
                3 => LayerSpec::Upsample2x,
                4 => LayerSpec::Bottleneck,
                other => return Err(bad(&format!("unknown layer kind {other}"))),
            };
            layers.push(layer);
        }
        if bytes.len() < off + 8 {
            return Err(bad("truncated"));
        }
        let count = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        off += 8;
        let spec = ModelSpec { layers };
        if count != spec.param_count() {
            return Err(bad("parameter count does not match the spec"));
        }
        if bytes.len() < off + 4 * count {
            return Err(bad("truncated parameters"));
        }
        let mut params = Vec::new();
        for shape in spec.param_shapes() {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
                off += 4;
            }
            params.push(Tensor::from_raw(shape, data));
        }
        Ok(Model { spec, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_bytes(&fs::read(path)?)
    }

    /// Pairing hash for compressed artifacts.
    pub fn hash(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

fn parse_act(bytes: &[u8], off: &mut usize) -> Result<Activation> {
    if bytes.len() <= *off {
        return Err(SthqError::Decode("model file: truncated".into()));
    }
    let v = bytes[*off];
    *off += 1;
    match v {
        0 => Ok(Activation::Linear),
        1 => Ok(Activation::Relu),
        other => Err(SthqError::Decode(format!("model file: unknown activation {other}"))),
    }
}

fn apply_act(g: &mut Graph, x: NodeId, act: Activation) -> Result<NodeId> {
    match act {
        Activation::Linear => Ok(x),
        Activation::Relu => g.relu(x),
    }
}

/// Run the spec on the graph. `weights` are per-parameter nodes in layer
/// order; `at_bottleneck` maps the bottleneck tensor (identity for plain
/// forward, quantization during training/compression).
pub fn forward_with(
    g: &mut Graph,
    spec: &ModelSpec,
    input: NodeId,
    weights: &[NodeId],
    at_bottleneck: &mut dyn FnMut(&mut Graph, NodeId) -> Result<NodeId>,
) -> Result<NodeId> {
    forward_layers(g, &spec.layers, input, weights, at_bottleneck)
}

/// Run only the layers before the bottleneck marker (the image encoder).
pub fn forward_to_bottleneck(
    g: &mut Graph,
    spec: &ModelSpec,
    input: NodeId,
    weights: &[NodeId],
) -> Result<NodeId> {
    let idx = spec
        .bottleneck_index()
        .ok_or_else(|| SthqError::InvalidArgument("spec has no bottleneck".into()))?;
    forward_layers(g, &spec.layers[..idx], input, weights, &mut |_, x| Ok(x))
}

/// Run only the layers after the bottleneck marker (the image decoder).
pub fn forward_after_bottleneck(
    g: &mut Graph,
    spec: &ModelSpec,
    bottleneck: NodeId,
    weights: &[NodeId],
) -> Result<NodeId> {
    let idx = spec
        .bottleneck_index()
        .ok_or_else(|| SthqError::InvalidArgument("spec has no bottleneck".into()))?;
    // skip the weights consumed by the encoder half
    let consumed: usize = spec.layers[..idx].iter().map(|l| l.param_shapes().len()).sum();
    forward_layers(g, &spec.layers[idx + 1..], bottleneck, &weights[consumed..], &mut |_, x| Ok(x))
}

fn forward_layers(
    g: &mut Graph,
    layers: &[LayerSpec],
    input: NodeId,
    weights: &[NodeId],
    at_bottleneck: &mut dyn FnMut(&mut Graph, NodeId) -> Result<NodeId>,
) -> Result<NodeId> {
    let mut x = input;
    let mut wi = 0usize;
    for layer in layers {
        match *layer {
            LayerSpec::Dense { act, .. } => {
                let w = weights[wi];
                let b = weights[wi + 1];
                wi += 2;
                let y = g.matmul(x, w)?;
                let y = g.add(y, b)?;
                x = apply_act(g, y, act)?;
            }
            LayerSpec::Conv { stride, pad, act, .. } => {
                let w = weights[wi];
                let b = weights[wi + 1];
                wi += 2;
                let y = g.conv2d(x, w, stride, pad)?;
                let y = g.add(y, b)?;
                x = apply_act(g, y, act)?;
            }
            LayerSpec::ResidualConv { k, .. } => {
                let w = weights[wi];
                let b = weights[wi + 1];
                wi += 2;
                let y = g.conv2d(x, w, 1, k / 2)?;
                let y = g.add(y, b)?;
                let y = g.add(x, y)?;
                x = g.relu(y)?;
            }
            LayerSpec::Upsample2x => {
                x = g.upsample2x(x)?;
            }
            LayerSpec::Bottleneck => {
                x = at_bottleneck(g, x)?;
            }
        }
    }
    Ok(x)
}

/// Plain evaluation with the model's own parameters as constants.
pub fn eval_forward(model: &Model, input: Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(input)?;
    let weights: Vec<NodeId> =
        model.params.iter().map(|p| g.constant(p.clone())).collect::<Result<_>>()?;
    let out = forward_with(&mut g, &model.spec, x, &weights, &mut |_, b| Ok(b))?;
    Ok(g.value(out).clone())
}

/// Slice a flat `[d]` parameter node into per-parameter nodes shaped per
/// the spec (for training quantized weights end to end).
pub fn params_from_flat_node(g: &mut Graph, flat: NodeId, spec: &ModelSpec) -> Result<Vec<NodeId>> {
    let d = g.value(flat).numel();
    if d != spec.param_count() {
        return Err(SthqError::InvalidArgument(format!(
            "flat node has {d} values, spec wants {}",
            spec.param_count()
        )));
    }
    let flat = g.reshape(flat, vec![d])?;
    let mut out = Vec::new();
    let mut off = 0usize;
    for shape in spec.param_shapes() {
        let n: usize = shape.iter().product();
        let piece = g.slice(flat, 0, off, n)?;
        out.push(g.reshape(piece, shape)?);
        off += n;
    }
    Ok(out)
}
