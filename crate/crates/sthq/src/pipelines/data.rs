//! Procedurally generated desk-scale datasets.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tensor::Tensor;

/// A grayscale image with pixels in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub w: usize,
    pub h: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(w: usize, h: usize, pixels: Vec<f64>) -> GrayImage {
        assert_eq!(pixels.len(), w * h);
        GrayImage { w, h, pixels }
    }

    /// `[1, 1, h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(vec![1, 1, self.h, self.w], self.pixels.clone())
    }
}

/// Stack images of equal size into a `[B, 1, h, w]` batch.
pub fn batch_tensor(images: &[&GrayImage]) -> Tensor {
    let (h, w) = (images[0].h, images[0].w);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        assert_eq!((img.h, img.w), (h, w));
        data.extend_from_slice(&img.pixels);
    }
    Tensor::from_raw(vec![images.len(), 1, h, w], data)
}

fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random::<f64>().max(1e-12);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// One synthetic texture: bilinear value noise plus two oriented sinusoids,
/// normalized to [0, 1]. Smooth enough to be compressible, varied enough to
/// exercise the bottleneck.
pub fn texture(size: usize, rng: &mut ChaCha12Rng) -> GrayImage {
    let grid = 4usize;
    let noise: Vec<f64> = (0..grid * grid).map(|_| rng.random::<f64>()).collect();
    let (f1, f2) = (rng.random_range(0.5..2.5), rng.random_range(0.5..3.5));
    let (a1, a2) = (
        rng.random_range(0.0..std::f64::consts::PI),
        rng.random_range(0.0..std::f64::consts::PI),
    );
    let (p1, p2) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let w_noise = rng.random_range(0.3..0.7);

    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / size as f64, y as f64 / size as f64);
            // bilinear sample of the noise grid
            let gx = fx * (grid - 1) as f64;
            let gy = fy * (grid - 1) as f64;
            let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(grid - 1), (y0 + 1).min(grid - 1));
            let (tx, ty) = (gx - x0 as f64, gy - y0 as f64);
            let n00 = noise[y0 * grid + x0];
            let n10 = noise[y0 * grid + x1];
            let n01 = noise[y1 * grid + x0];
            let n11 = noise[y1 * grid + x1];
            let n = n00 * (1.0 - tx) * (1.0 - ty)
                + n10 * tx * (1.0 - ty)
                + n01 * (1.0 - tx) * ty
                + n11 * tx * ty;

            let s1 = ((fx * a1.cos() + fy * a1.sin()) * f1 * std::f64::consts::TAU + p1).sin();
            let s2 = ((fx * a2.cos() + fy * a2.sin()) * f2 * std::f64::consts::TAU + p2).sin();
            let v = w_noise * n + (1.0 - w_noise) * (0.5 + 0.25 * s1 + 0.25 * s2);
            pixels.push(v);
        }
    }
    let lo = pixels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    for p in &mut pixels {
        *p = (*p - lo) / span;
    }
    GrayImage::new(size, size, pixels)
}

pub fn texture_set(count: usize, size: usize, rng: &mut ChaCha12Rng) -> Vec<GrayImage> {
    (0..count).map(|_| texture(size, rng)).collect()
}

/// Two interleaved half-moons with Gaussian jitter; a classic separable but
/// non-linear 2-class task.
#[derive(Debug, Clone)]
pub struct LabeledPoints {
    /// `[N, 2]` features.
    pub xs: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl LabeledPoints {
    pub fn features_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.xs.len() * 2);
        for p in &self.xs {
            data.extend_from_slice(p);
        }
        Tensor::from_raw(vec![self.xs.len(), 2], data)
    }

    /// One-hot `[N, 2]` targets.
    pub fn onehot_tensor(&self) -> Tensor {
        let mut data = vec![0.0; self.labels.len() * 2];
        for (i, &c) in self.labels.iter().enumerate() {
            data[i * 2 + c] = 1.0;
        }
        Tensor::from_raw(vec![self.labels.len(), 2], data)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

pub fn two_moons(n: usize, noise: f64, rng: &mut ChaCha12Rng) -> LabeledPoints {
    let mut xs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(0.0..std::f64::consts::PI);
        let (mut x, mut y, label) = if i % 2 == 0 {
            (t.cos(), t.sin(), 0)
        } else {
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        x += noise * gaussian(rng);
        y += noise * gaussian(rng);
        xs.push([x, y]);
        labels.push(label);
    }
    LabeledPoints { xs, labels }
}
