//! Dense row-major tensors of 64-bit reals.

use crate::error::{Result, SthqError};

/// A dense tensor: `shape` extents and row-major `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Validating constructor: extents must multiply to the data length and
    /// every value must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SthqError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SthqError::NonFinite("Tensor::new"));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for op outputs; skips the finiteness scan.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor { shape, data: self.data.clone() }
    }
}

/// Broadcast shape of two operands, numpy-style: align trailing dims, each
/// pair must be equal or contain a 1.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(SthqError::ShapeMismatch {
                op,
                detail: format!("cannot broadcast {:?} with {:?}", a, b),
            });
        }
    }
    Ok(out)
}

/// Row-major strides, with stride 0 on broadcast (size-1 or missing) dims
/// relative to `out_shape`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = s;
        acc *= shape[i];
    }
    strides
}

/// Elementwise binary op with broadcasting. Shapes must already be
/// broadcast-compatible (checked by `broadcast_shape`).
pub fn broadcast_binary(
    a: &Tensor,
    b: &Tensor,
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let n: usize = out_shape.iter().product();
    // Fast paths: same shape, or scalar operand.
    if a.shape() == b.shape() {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_raw(out_shape.to_vec(), data);
    }
    if b.numel() == 1 {
        let y = b.data[0];
        return Tensor::from_raw(out_shape.to_vec(), a.data.iter().map(|&x| f(x, y)).collect());
    }
    if a.numel() == 1 {
        let x = a.data[0];
        return Tensor::from_raw(out_shape.to_vec(), b.data.iter().map(|&y| f(x, y)).collect());
    }

    let sa = broadcast_strides(a.shape(), out_shape);
    let sb = broadcast_strides(b.shape(), out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f(a.data[oa], b.data[ob]));
        // odometer increment
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
    Tensor::from_raw(out_shape.to_vec(), data)
}

/// Sum `grad` down to `target_shape` (the adjoint of broadcasting).
pub fn reduce_to_shape(grad: &Tensor, target_shape: &[usize]) -> Tensor {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let out_shape = grad.shape().to_vec();
    let st = broadcast_strides(target_shape, &out_shape);
    let n_target: usize = target_shape.iter().product();
    let mut acc = vec![0.0f64; n_target];
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut ot = 0usize;
    for g in grad.data().iter() {
        acc[ot] += g;
        for d in (0..rank).rev() {
            idx[d] += 1;
            ot += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ot -= st[d] * out_shape[d];
        }
    }
    Tensor::from_raw(target_shape.to_vec(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn new_rejects_nan() {
        assert!(Tensor::new(vec![2], vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", &[3, 1], &[1, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shape("t", &[5], &[2, 5]).unwrap(), vec![2, 5]);
        assert!(broadcast_shape("t", &[3], &[4]).is_err());
    }

    #[test]
    fn broadcast_binary_bias_add() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(vec![3], vec![10., 20., 30.]).unwrap();
        let out = broadcast_binary(&a, &b, &[2, 3], |x, y| x + y);
        assert_eq!(out.data(), &[11., 22., 33., 14., 25., 36.]);
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        let g = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = reduce_to_shape(&g, &[3]);
        assert_eq!(r.data(), &[5., 7., 9.]);
        let r2 = reduce_to_shape(&g, &[2, 1]);
        assert_eq!(r2.data(), &[6., 15.]);
    }
}
