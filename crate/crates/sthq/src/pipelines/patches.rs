//! Splitting bottleneck channels into `ph x pw` patch columns and back.
//!
//! Patch positions run row-major over the channel; each patch is vectorized
//! row-major. The plain and graph paths use the same ordering, and
//! `place_patches` is the exact inverse of `extract_patches`.

use crate::error::{Result, SthqError};
use crate::graph::{Graph, NodeId};
use crate::quantizer::ColumnMatrix;

pub fn check_divisible(h: usize, w: usize, ph: usize, pw: usize) -> Result<()> {
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(SthqError::InvalidArgument(format!(
            "channel {h}x{w} is not divisible into {ph}x{pw} patches"
        )));
    }
    Ok(())
}

/// Columns of one channel plane (`h x w`, row-major), patch-position-major.
pub fn extract_patches(plane: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Result<ColumnMatrix> {
    check_divisible(h, w, ph, pw)?;
    let mut data = Vec::with_capacity(h * w);
    for py in 0..h / ph {
        for px in 0..w / pw {
            for dy in 0..ph {
                for dx in 0..pw {
                    data.push(plane[(py * ph + dy) * w + px * pw + dx]);
                }
            }
        }
    }
    ColumnMatrix::from_rows(ph * pw, data)
}

/// Inverse of [`extract_patches`].
pub fn place_patches(cols: &ColumnMatrix, h: usize, w: usize, ph: usize, pw: usize) -> Result<Vec<f64>> {
    check_divisible(h, w, ph, pw)?;
    if cols.dim() != ph * pw || cols.num_columns() != (h / ph) * (w / pw) {
        return Err(SthqError::InvalidArgument(format!(
            "column matrix {}x{} does not tile a {h}x{w} plane with {ph}x{pw} patches",
            cols.num_columns(),
            cols.dim()
        )));
    }
    let mut plane = vec![0.0; h * w];
    let mut l = 0usize;
    for py in 0..h / ph {
        for px in 0..w / pw {
            let col = cols.column(l);
            l += 1;
            for dy in 0..ph {
                for dx in 0..pw {
                    plane[(py * ph + dy) * w + px * pw + dx] = col[dy * pw + dx];
                }
            }
        }
    }
    Ok(plane)
}

/// Graph twin of [`extract_patches`] for a `[B, 1, h, w]` channel node;
/// returns `[B * P, ph * pw]` with patch positions major and batch minor,
/// i.e. row `p * B + b`.
pub fn patches_graph(g: &mut Graph, chan: NodeId, ph: usize, pw: usize) -> Result<NodeId> {
    let s = g.value(chan).shape().to_vec();
    if s.len() != 4 || s[1] != 1 {
        return Err(SthqError::ShapeMismatch {
            op: "patches",
            detail: format!("expected [B, 1, h, w], got {:?}", s),
        });
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    check_divisible(h, w, ph, pw)?;
    if ph == h && pw == w {
        return g.reshape(chan, vec![b, h * w]);
    }
    let mut parts = Vec::new();
    for py in 0..h / ph {
        let row = g.slice(chan, 2, py * ph, ph)?;
        for px in 0..w / pw {
            let patch = g.slice(row, 3, px * pw, pw)?;
            parts.push(g.reshape(patch, vec![b, ph * pw])?);
        }
    }
    g.concat(&parts, 0)
}

/// Graph inverse of [`patches_graph`]: reassemble `[B * P, ph * pw]` into
/// `[B, 1, h, w]`.
pub fn unpatches_graph(
    g: &mut Graph,
    cols: NodeId,
    b: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
) -> Result<NodeId> {
    check_divisible(h, w, ph, pw)?;
    let p = (h / ph) * (w / pw);
    let s = g.value(cols).shape().to_vec();
    if s != vec![b * p, ph * pw] {
        return Err(SthqError::ShapeMismatch {
            op: "unpatches",
            detail: format!("expected [{}, {}], got {:?}", b * p, ph * pw, s),
        });
    }
    if p == 1 {
        return g.reshape(cols, vec![b, 1, h, w]);
    }
    let mut rows = Vec::new();
    let mut pos = 0usize;
    for _py in 0..h / ph {
        let mut row_parts = Vec::new();
        for _px in 0..w / pw {
            let block = g.slice(cols, 0, pos * b, b)?;
            pos += 1;
            row_parts.push(g.reshape(block, vec![b, 1, ph, pw])?);
        }
        rows.push(g.concat(&row_parts, 3)?);
    }
    g.concat(&rows, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn extract_place_roundtrip() {
        let plane: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let cols = extract_patches(&plane, 4, 4, 2, 2).unwrap();
        assert_eq!(cols.num_columns(), 4);
        assert_eq!(cols.column(0), &[0., 1., 4., 5.]);
        assert_eq!(cols.column(1), &[2., 3., 6., 7.]);
        let back = place_patches(&cols, 4, 4, 2, 2).unwrap();
        assert_eq!(back, plane);
    }

    #[test]
    fn graph_matches_plain_for_single_image() {
        let plane: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let cols = extract_patches(&plane, 4, 4, 2, 2).unwrap();

        let mut g = Graph::new();
        let chan = g.constant(Tensor::from_raw(vec![1, 1, 4, 4], plane.clone())).unwrap();
        let node = patches_graph(&mut g, chan, 2, 2).unwrap();
        assert_eq!(g.value(node).data(), cols.flat());

        let back = unpatches_graph(&mut g, node, 1, 4, 4, 2, 2).unwrap();
        assert_eq!(g.value(back).data(), plane.as_slice());
    }

    #[test]
    fn graph_roundtrip_batched() {
        let data: Vec<f64> = (0..2 * 16).map(|i| i as f64 * 0.5).collect();
        let mut g = Graph::new();
        let chan = g.constant(Tensor::from_raw(vec![2, 1, 4, 4], data.clone())).unwrap();
        let cols = patches_graph(&mut g, chan, 2, 2).unwrap();
        assert_eq!(g.value(cols).shape(), &[8, 4]);
        let back = unpatches_graph(&mut g, cols, 2, 4, 4, 2, 2).unwrap();
        assert_eq!(g.value(back).data(), data.as_slice());
    }

    #[test]
    fn indivisible_rejected() {
        assert!(extract_patches(&[0.0; 9], 3, 3, 2, 2).is_err());
    }
}
