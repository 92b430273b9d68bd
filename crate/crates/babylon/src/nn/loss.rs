use ndarray::{Array2, Array3};

use crate::tensor::Scalar;

/// Masked softmax cross-entropy over time-major logits `[T, B, V]` and
/// targets `[T, B]`. Positions whose target equals `pad` contribute
/// nothing and get zero gradient.
///
/// Returns `(loss_sum, token_count, dlogits)` where `dlogits` is the
/// gradient of the SUM, not the mean: callers fold sums across chunks
/// and divide once by the global token count, which keeps results
/// independent of chunking.
pub fn softmax_xent<S: Scalar>(
    logits: &Array3<S>,
    targets: &Array2<u32>,
    pad: u32,
) -> (f64, usize, Array3<S>) {
    let (t, b, v) = logits.dim();
    assert_eq!(targets.dim(), (t, b));
    let mut dlogits = Array3::zeros((t, b, v));
    let mut loss_sum = 0.0f64;
    let mut tokens = 0usize;
    for ti in 0..t {
        for bi in 0..b {
            let target = targets[[ti, bi]];
            if target == pad {
                continue;
            }
            tokens += 1;
            let row = logits.slice(ndarray::s![ti, bi, ..]);
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            let mut drow = dlogits.slice_mut(ndarray::s![ti, bi, ..]);
            for (dst, &x) in drow.iter_mut().zip(row.iter()) {
                let e = (x - max).exp();
                *dst = e;
                sum += e;
            }
            let log_z = sum.to_f64c().ln() + max.to_f64c();
            loss_sum += log_z - row[target as usize].to_f64c();
            drow.mapv_inplace(|e| e / sum);
            drow[target as usize] -= S::one();
        }
    }
    (loss_sum, tokens, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn uniform_logits_give_ln_v() {
        let logits = Array3::<f64>::zeros((2, 1, 7));
        let targets = arr2(&[[3u32], [5]]);
        let (sum, n, _) = softmax_xent(&logits, &targets, 0);
        assert_eq!(n, 2);
        assert!((sum / n as f64 - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let mut logits = Array3::<f64>::zeros((1, 1, 2));
        logits[[0, 0, 0]] = 1.0;
        let targets = arr2(&[[1u32]]);
        let (sum, n, d) = softmax_xent(&logits, &targets, 0);
        let p0 = 1f64.exp() / (1f64.exp() + 1.0);
        assert_eq!(n, 1);
        assert!((sum + (1.0 - p0).ln()).abs() < 1e-12);
        assert!((d[[0, 0, 0]] - p0).abs() < 1e-12);
        assert!((d[[0, 0, 1]] - (1.0 - p0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn pad_targets_are_ignored() {
        let logits = Array3::<f64>::from_elem((2, 2, 3), 0.7);
        let targets = arr2(&[[0u32, 1], [0, 0]]);
        let (sum, n, d) = softmax_xent(&logits, &targets, 0);
        assert_eq!(n, 1);
        assert!((sum - 3f64.ln()).abs() < 1e-12);
        assert!(d.slice(ndarray::s![0, 0, ..]).iter().all(|&x| x == 0.0));
        assert!(d.slice(ndarray::s![1, .., ..]).iter().all(|&x| x == 0.0));
        assert!(d.slice(ndarray::s![0, 1, ..]).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn loss_decreases_along_negative_gradient() {
        let mut logits = Array3::<f64>::from_shape_fn((1, 1, 4), |(_, _, v)| v as f64 * 0.3);
        let targets = arr2(&[[2u32]]);
        let (before, _, d) = softmax_xent(&logits, &targets, 0);
        logits.zip_mut_with(&d, |x, &g| *x -= 0.1 * g);
        let (after, _, _) = softmax_xent(&logits, &targets, 0);
        assert!(after < before);
    }
}
