use ndarray::{s, Array2, Array3, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{softmax_rows_inplace, Grads, Params, Scalar};

use super::Linear;

/// Additive score penalty for masked pairs. Large enough that softmax
/// underflows the masked entries to exactly zero, which is what makes the
/// masked-gradient path exact.
const NEG_INF: f64 = -1e9;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Full,
    Causal,
}

/// Attention mask: optional causality plus optional per-batch key
/// lengths (keys at or beyond a batch row's length are padding).
pub struct AttnMask {
    pub kind: MaskKind,
    pub key_lens: Option<Vec<usize>>,
}

impl AttnMask {
    pub fn none() -> AttnMask {
        AttnMask {
            kind: MaskKind::Full,
            key_lens: None,
        }
    }

    pub fn causal() -> AttnMask {
        AttnMask {
            kind: MaskKind::Causal,
            key_lens: None,
        }
    }

    pub fn key_pad(lens: Vec<usize>) -> AttnMask {
        AttnMask {
            kind: MaskKind::Full,
            key_lens: Some(lens),
        }
    }

    fn apply<S: Scalar>(&self, scores: &mut Array2<S>, batch: usize) {
        let neg = S::from_f64c(NEG_INF);
        if let Some(lens) = &self.key_lens {
            let len = lens[batch];
            if len < scores.dim().1 {
                scores.slice_mut(s![.., len..]).fill(neg);
            }
        }
        if self.kind == MaskKind::Causal {
            for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                row.slice_mut(s![i + 1..]).fill(neg);
            }
        }
    }
}

/// Multi-head scaled dot-product attention with output projection.
/// Heads are contiguous `d_k`-wide slices of the projected vectors.
pub struct MultiHeadAttn {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
}

/// Everything backward needs: projected q/k/v, per-(batch, head)
/// attention weights, and the concatenated head outputs fed to wo.
pub struct AttnCache<S: Scalar> {
    pub q3: Array3<S>,
    pub k3: Array3<S>,
    pub v3: Array3<S>,
    pub attn: Vec<Array2<S>>,
    pub heads_out: Array3<S>,
}

impl MultiHeadAttn {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> MultiHeadAttn {
        assert!(d_model % heads == 0, "d_model must divide into heads");
        MultiHeadAttn {
            wq: Linear::new(params, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(params, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(params, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(params, &format!("{name}.wo"), d_model, d_model, rng),
            heads,
            d_model,
            d_k: d_model / heads,
        }
    }

    fn scale<S: Scalar>(&self) -> S {
        S::from_f64c(1.0 / (self.d_k as f64).sqrt())
    }

    /// Full forward over `[Tq, B, D]` queries and `[Tk, B, D]` keys and
    /// values (the same tensor for self-attention).
    pub fn forward<S: Scalar>(
        &self,
        params: &Params<S>,
        q_in: &Array3<S>,
        k_in: &Array3<S>,
        v_in: &Array3<S>,
        mask: &AttnMask,
    ) -> (Array3<S>, AttnCache<S>) {
        let (tq, b, _) = q_in.dim();
        let tk = k_in.dim().0;
        let q3 = self.wq.forward3(params, q_in);
        let k3 = self.wk.forward3(params, k_in);
        let v3 = self.wv.forward3(params, v_in);
        let scale = self.scale::<S>();

        let mut heads_out = Array3::zeros((tq, b, self.d_model));
        let mut attn = Vec::with_capacity(b * self.heads);
        for bi in 0..b {
            for h in 0..self.heads {
                let cols = h * self.d_k..(h + 1) * self.d_k;
                let q = q3.slice(s![.., bi, cols.clone()]).to_owned();
                let k = k3.slice(s![.., bi, cols.clone()]).to_owned();
                let v = v3.slice(s![.., bi, cols.clone()]).to_owned();
                let mut scores = q.dot(&k.t());
                scores.mapv_inplace(|x| x * scale);
                mask.apply(&mut scores, bi);
                softmax_rows_inplace(&mut scores.view_mut());
                let ctx = scores.dot(&v);
                heads_out.slice_mut(s![.., bi, cols]).assign(&ctx);
                attn.push(scores);
            }
        }
        debug_assert_eq!(attn.len(), b * self.heads);
        debug_assert_eq!(attn[0].dim(), (tq, tk));
        let out = self.wo.forward3(params, &heads_out);
        let cache = AttnCache {
            q3,
            k3,
            v3,
            attn,
            heads_out,
        };
        (out, cache)
    }

    /// Backward pass. Returns `(dq_in, dk_in, dv_in)`; for self-attention
    /// the caller sums all three into the shared input gradient.
    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        q_in: &Array3<S>,
        k_in: &Array3<S>,
        v_in: &Array3<S>,
        cache: &AttnCache<S>,
        dy: &Array3<S>,
    ) -> (Array3<S>, Array3<S>, Array3<S>) {
        let (tq, b, _) = dy.dim();
        let tk = cache.k3.dim().0;
        let scale = self.scale::<S>();

        let dheads = self
            .wo
            .backward3(params, grads, &cache.heads_out, dy);

        let mut dq3 = Array3::zeros((tq, b, self.d_model));
        let mut dk3 = Array3::zeros((tk, b, self.d_model));
        let mut dv3 = Array3::zeros((tk, b, self.d_model));
        for bi in 0..b {
            for h in 0..self.heads {
                let cols = h * self.d_k..(h + 1) * self.d_k;
                let attn = &cache.attn[bi * self.heads + h];
                let q = cache.q3.slice(s![.., bi, cols.clone()]).to_owned();
                let k = cache.k3.slice(s![.., bi, cols.clone()]).to_owned();
                let v = cache.v3.slice(s![.., bi, cols.clone()]).to_owned();
                let dctx = dheads.slice(s![.., bi, cols.clone()]).to_owned();

                let dattn = dctx.dot(&v.t());
                let dv = attn.t().dot(&dctx);
                // Softmax backward, rowwise: ds = a * (da - sum(da * a)).
                // Masked entries have a == 0, so ds vanishes there.
                let mut dscores = dattn;
                for (mut dsr, ar) in dscores.rows_mut().into_iter().zip(attn.rows()) {
                    let dot = dsr
                        .iter()
                        .zip(ar.iter())
                        .map(|(&da, &a)| da * a)
                        .sum::<S>();
                    for (ds, &a) in dsr.iter_mut().zip(ar.iter()) {
                        *ds = a * (*ds - dot);
                    }
                }
                dscores.mapv_inplace(|x| x * scale);
                let dq = dscores.dot(&k);
                let dk = dscores.t().dot(&q);
                dq3.slice_mut(s![.., bi, cols.clone()]).assign(&dq);
                dk3.slice_mut(s![.., bi, cols.clone()]).assign(&dk);
                dv3.slice_mut(s![.., bi, cols]).assign(&dv);
            }
        }
        let dq_in = self.wq.backward3(params, grads, q_in, &dq3);
        let dk_in = self.wk.backward3(params, grads, k_in, &dk3);
        let dv_in = self.wv.backward3(params, grads, v_in, &dv3);
        (dq_in, dk_in, dv_in)
    }

    /// Projects one input step to (k, v) rows for a decode cache.
    pub fn project_kv_step<S: Scalar>(
        &self,
        params: &Params<S>,
        x_step: ArrayView2<S>,
    ) -> (Array2<S>, Array2<S>) {
        (
            self.wk.forward2(params, x_step),
            self.wv.forward2(params, x_step),
        )
    }

    /// Single-query attention against cached keys and values `[Tk, B, D]`
    /// (already projected). Causality is implicit: the cache only holds
    /// past steps.
    pub fn step<S: Scalar>(
        &self,
        params: &Params<S>,
        q_step: ArrayView2<S>,
        k3: &Array3<S>,
        v3: &Array3<S>,
        key_lens: Option<&[usize]>,
    ) -> Array2<S> {
        let (tk, b, _) = k3.dim();
        let q = self.wq.forward2(params, q_step);
        let scale = self.scale::<S>();
        let neg = S::from_f64c(NEG_INF);

        let mut heads_out = Array2::zeros((b, self.d_model));
        for bi in 0..b {
            let limit = key_lens.map_or(tk, |l| l[bi].min(tk));
            for h in 0..self.heads {
                let cols = h * self.d_k..(h + 1) * self.d_k;
                let qv = q.slice(s![bi, cols.clone()]);
                let mut scores = Array2::zeros((1, tk));
                for t in 0..tk {
                    let kv = k3.slice(s![t, bi, cols.clone()]);
                    let dot = qv.iter().zip(kv.iter()).map(|(&a, &b)| a * b).sum::<S>();
                    scores[[0, t]] = if t < limit { dot * scale } else { neg };
                }
                softmax_rows_inplace(&mut scores.view_mut());
                let mut out = heads_out.slice_mut(s![bi, cols]);
                for t in 0..limit {
                    let w = scores[[0, t]];
                    let vv = v3.slice(s![t, bi, h * self.d_k..(h + 1) * self.d_k]);
                    out.zip_mut_with(&vv, |o, &x| *o += w * x);
                }
            }
        }
        self.wo.forward2(params, heads_out.view())
    }
}

/// Sums the three input gradients of a self-attention call, where query,
/// key, and value all came from one tensor.
#[cfg(test)]
pub fn sum3<S: Scalar>(a: Array3<S>, b: &Array3<S>, c: &Array3<S>) -> Array3<S> {
    let mut out = a;
    out += b;
    out += c;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use rand::SeedableRng;

    fn fixture(d: usize, heads: usize) -> (Params<f64>, MultiHeadAttn) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params = Params::new();
        let attn = MultiHeadAttn::new(&mut params, "a", d, heads, &mut rng);
        (params, attn)
    }

    fn random_x(t: usize, b: usize, d: usize, seed: u64) -> Array3<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((t, b, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (params, attn) = fixture(8, 2);
        let x = random_x(5, 2, 8, 1);
        let (_, cache) = attn.forward(&params, &x, &x, &x, &AttnMask::causal());
        for a in &cache.attn {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn causal_mask_blocks_future_inputs() {
        let (params, attn) = fixture(8, 2);
        let x = random_x(6, 1, 8, 2);
        let (y1, _) = attn.forward(&params, &x, &x, &x, &AttnMask::causal());
        let mut x2 = x.clone();
        x2.slice_mut(s![4.., .., ..]).fill(9.0);
        let (y2, _) = attn.forward(&params, &x2, &x2, &x2, &AttnMask::causal());
        for t in 0..4 {
            for d in 0..8 {
                assert_eq!(y1[[t, 0, d]], y2[[t, 0, d]], "t={t} leaked future");
            }
        }
        assert_ne!(y1[[5, 0, 0]], y2[[5, 0, 0]]);
    }

    #[test]
    fn key_padding_ignores_tail_garbage() {
        let (params, attn) = fixture(8, 4);
        let q = random_x(3, 2, 8, 3);
        let kv = random_x(7, 2, 8, 4);
        let mut kv2 = kv.clone();
        kv2.slice_mut(s![5.., 0, ..]).fill(123.0);
        kv2.slice_mut(s![6.., 1, ..]).fill(-55.0);
        let mask = AttnMask::key_pad(vec![5, 6]);
        let (y1, _) = attn.forward(&params, &q, &kv, &kv, &mask);
        let (y2, _) = attn.forward(&params, &q, &kv2, &kv2, &mask);
        for (a, b) in y1.iter().zip(y2.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn incremental_step_matches_full_causal_forward() {
        let (params, attn) = fixture(12, 3);
        let x = random_x(5, 2, 12, 5);
        let (full, _) = attn.forward(&params, &x, &x, &x, &AttnMask::causal());

        let (tq, b, d) = x.dim();
        let mut k_cache = Array3::zeros((0, b, d));
        let mut v_cache = Array3::zeros((0, b, d));
        for t in 0..tq {
            let step = x.slice(s![t, .., ..]);
            let (k, v) = attn.project_kv_step(&params, step);
            k_cache
                .append(Axis(0), k.insert_axis(Axis(0)).view())
                .unwrap();
            v_cache
                .append(Axis(0), v.insert_axis(Axis(0)).view())
                .unwrap();
            let y = attn.step(&params, step, &k_cache, &v_cache, None);
            for bi in 0..b {
                for di in 0..d {
                    assert!(
                        (y[[bi, di]] - full[[t, bi, di]]).abs() < 1e-10,
                        "step t={t} diverges from full forward"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut params, attn) = fixture(4, 2);
        let q = random_x(3, 2, 4, 6);
        let kv = random_x(4, 2, 4, 7);
        let r = random_x(3, 2, 4, 8);
        let mask = AttnMask::key_pad(vec![4, 3]);

        let loss = |p: &Params<f64>| -> f64 {
            let (y, _) = attn.forward(p, &q, &kv, &kv, &mask);
            y.iter().zip(r.iter()).map(|(&a, &b)| a * b).sum()
        };

        let mut grads = Grads::zeros_of(&params);
        let (y, cache) = attn.forward(&params, &q, &kv, &kv, &mask);
        assert_eq!(y.dim(), (3, 2, 4));
        let (_, dk, dv) = attn.backward(&params, &mut grads, &q, &kv, &kv, &cache, &r);
        let _ = (dk, dv);

        let eps = 1e-6;
        for ti in 0..params.len() {
            let n = params.tensors()[ti].len();
            for j in 0..n {
                let orig = params.tensors()[ti].as_slice().unwrap()[j];
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig + eps;
                let up = loss(&params);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig - eps;
                let down = loss(&params);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.tensors()[ti].as_slice().unwrap()[j];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "param {ti}[{j}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn self_attention_input_gradient_matches_finite_differences() {
        let (params, attn) = fixture(4, 1);
        let x = random_x(3, 1, 4, 9);
        let r = random_x(3, 1, 4, 10);
        let mask = AttnMask::causal();

        let loss = |x: &Array3<f64>| -> f64 {
            let (y, _) = attn.forward(&params, x, x, x, &mask);
            y.iter().zip(r.iter()).map(|(&a, &b)| a * b).sum()
        };

        let mut grads = Grads::zeros_of(&params);
        let (_, cache) = attn.forward(&params, &x, &x, &x, &mask);
        let (dq, dk, dv) = attn.backward(&params, &mut grads, &x, &x, &x, &cache, &r);
        let dx = sum3(dq, &dk, &dv);

        let eps = 1e-6;
        let mut x2 = x.clone();
        for t in 0..3 {
            for d in 0..4 {
                let orig = x2[[t, 0, d]];
                x2[[t, 0, d]] = orig + eps;
                let up = loss(&x2);
                x2[[t, 0, d]] = orig - eps;
                let down = loss(&x2);
                x2[[t, 0, d]] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = dx[[t, 0, d]];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "x[{t},0,{d}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }
}
