use ndarray::{s, Array3};

use crate::tensor::Scalar;

/// End-anchored pooling positions: every k-th index counted backward
/// from the last position, returned ascending. The final position is
/// always kept, so the EOS-bearing state survives pooling at any stride.
pub fn pool_indices(m: usize, k: usize) -> Vec<usize> {
    assert!(m >= 1 && k >= 1);
    let n = m.div_ceil(k);
    (0..n).rev().map(|j| m - 1 - j * k).collect()
}

/// Number of pooled positions for a source of length `m`.
pub fn pooled_len(m: usize, k: usize) -> usize {
    m.div_ceil(k)
}

/// Gathers pooled positions per batch column. Columns are left-aligned:
/// column b keeps `pooled_len(lens[b], k)` rows, shorter columns are
/// zero-padded at the tail. Returns the pooled tensor and pooled lengths.
pub fn pool_forward<S: Scalar>(
    x: &Array3<S>,
    lens: &[usize],
    k: usize,
) -> (Array3<S>, Vec<usize>) {
    let (_, b_sz, d) = x.dim();
    assert_eq!(lens.len(), b_sz);
    let plens: Vec<usize> = lens.iter().map(|&m| pooled_len(m, k)).collect();
    let tp = plens.iter().copied().max().unwrap_or(0);
    let mut out = Array3::zeros((tp, b_sz, d));
    for (b, &m) in lens.iter().enumerate() {
        for (j, idx) in pool_indices(m, k).into_iter().enumerate() {
            out.slice_mut(s![j, b, ..]).assign(&x.slice(s![idx, b, ..]));
        }
    }
    (out, plens)
}

/// Scatters pooled gradients back to the source positions; everything
/// that pooling skipped receives zero.
pub fn pool_backward<S: Scalar>(
    dy: &Array3<S>,
    lens: &[usize],
    k: usize,
    t_full: usize,
) -> Array3<S> {
    let (_, b_sz, d) = dy.dim();
    let mut dx = Array3::zeros((t_full, b_sz, d));
    for (b, &m) in lens.iter().enumerate() {
        for (j, idx) in pool_indices(m, k).into_iter().enumerate() {
            dx.slice_mut(s![idx, b, ..]).assign(&dy.slice(s![j, b, ..]));
        }
    }
    dx
}
