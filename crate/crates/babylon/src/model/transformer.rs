use ndarray::{Array2, Array3, Axis};
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    AttnCache, AttnMask, Ctx, Dropout, FeedForward, FfnCache, LayerNorm, MultiHeadAttn, NormCache,
};
use crate::tensor::{Grads, Params, Scalar};

/// Post-norm transformer encoder layer: residual + LayerNorm wrapping
/// self-attention and the feed-forward block, dropout on each sublayer
/// output.
pub struct EncoderLayer {
    pub attn: MultiHeadAttn,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
    pub drop: Dropout,
}

pub struct EncLayerCache<S: Scalar> {
    x: Array3<S>,
    attn: AttnCache<S>,
    drop1: Option<Array3<S>>,
    norm1: NormCache<S>,
    ffn: FfnCache<S>,
    drop2: Option<Array3<S>>,
    norm2: NormCache<S>,
}

impl EncoderLayer {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_model: usize,
        d_ffn: usize,
        heads: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> EncoderLayer {
        EncoderLayer {
            attn: MultiHeadAttn::new(params, &format!("{name}.attn"), d_model, heads, rng),
            norm1: LayerNorm::new(params, &format!("{name}.norm1"), d_model),
            ffn: FeedForward::new(params, &format!("{name}.ffn"), d_model, d_ffn, rng),
            norm2: LayerNorm::new(params, &format!("{name}.norm2"), d_model),
            drop: Dropout::new(dropout),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &Params<S>,
        ctx: &mut Ctx,
        x: &Array3<S>,
        mask: &AttnMask,
    ) -> (Array3<S>, EncLayerCache<S>) {
        let (mut a, attn) = self.attn.forward(params, x, x, x, mask);
        let drop1 = self.drop.forward(ctx, &mut a);
        a += x;
        let (x1, norm1) = self.norm1.forward3(params, &a);
        let (mut f, ffn) = self.ffn.forward(params, &x1);
        let drop2 = self.drop.forward(ctx, &mut f);
        f += &x1;
        let (y, norm2) = self.norm2.forward3(params, &f);
        (
            y,
            EncLayerCache {
                x: x.clone(),
                attn,
                drop1,
                norm1,
                ffn,
                drop2,
                norm2,
            },
        )
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        cache: &EncLayerCache<S>,
        dy: &Array3<S>,
    ) -> Array3<S> {
        let dsum2 = self.norm2.backward3(params, grads, &cache.norm2, dy);
        let mut df = dsum2.clone();
        self.drop.backward(&cache.drop2, &mut df);
        let mut dx1 = self.ffn.backward(params, grads, &cache.ffn, &df);
        dx1 += &dsum2;
        let dsum1 = self.norm1.backward3(params, grads, &cache.norm1, &dx1);
        let mut da = dsum1.clone();
        self.drop.backward(&cache.drop1, &mut da);
        let (dq, dk, dv) = self
            .attn
            .backward(params, grads, &cache.x, &cache.x, &cache.x, &cache.attn, &da);
        let mut dx = dsum1;
        dx += &dq;
        dx += &dk;
        dx += &dv;
        dx
    }
}

/// Post-norm decoder layer: causal self-attention, cross-attention over
/// the encoded source, feed-forward; one residual + LayerNorm each.
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttn,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttn,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
    pub drop: Dropout,
}

pub struct DecLayerCache<S: Scalar> {
    x: Array3<S>,
    self_attn: AttnCache<S>,
    drop1: Option<Array3<S>>,
    norm1: NormCache<S>,
    x1: Array3<S>,
    cross: AttnCache<S>,
    drop2: Option<Array3<S>>,
    norm2: NormCache<S>,
    ffn: FfnCache<S>,
    drop3: Option<Array3<S>>,
    norm3: NormCache<S>,
}

/// Growing self-attention key/value cache plus the fixed projected
/// source keys/values for one decode.
pub struct DecStepState<S: Scalar> {
    pub self_k: Array3<S>,
    pub self_v: Array3<S>,
    pub cross_k: Array3<S>,
    pub cross_v: Array3<S>,
}

impl DecoderLayer {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_model: usize,
        d_ffn: usize,
        heads: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> DecoderLayer {
        DecoderLayer {
            self_attn: MultiHeadAttn::new(params, &format!("{name}.self"), d_model, heads, rng),
            norm1: LayerNorm::new(params, &format!("{name}.norm1"), d_model),
            cross_attn: MultiHeadAttn::new(params, &format!("{name}.cross"), d_model, heads, rng),
            norm2: LayerNorm::new(params, &format!("{name}.norm2"), d_model),
            ffn: FeedForward::new(params, &format!("{name}.ffn"), d_model, d_ffn, rng),
            norm3: LayerNorm::new(params, &format!("{name}.norm3"), d_model),
            drop: Dropout::new(dropout),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &Params<S>,
        ctx: &mut Ctx,
        x: &Array3<S>,
        enc: &Array3<S>,
        cross_mask: &AttnMask,
    ) -> (Array3<S>, DecLayerCache<S>) {
        let causal = AttnMask::causal();
        let (mut a, self_attn) = self.self_attn.forward(params, x, x, x, &causal);
        let drop1 = self.drop.forward(ctx, &mut a);
        a += x;
        let (x1, norm1) = self.norm1.forward3(params, &a);
        let (mut c, cross) = self.cross_attn.forward(params, &x1, enc, enc, cross_mask);
        let drop2 = self.drop.forward(ctx, &mut c);
        c += &x1;
        let (x2, norm2) = self.norm2.forward3(params, &c);
        let (mut f, ffn) = self.ffn.forward(params, &x2);
        let drop3 = self.drop.forward(ctx, &mut f);
        f += &x2;
        let (y, norm3) = self.norm3.forward3(params, &f);
        (
            y,
            DecLayerCache {
                x: x.clone(),
                self_attn,
                drop1,
                norm1,
                x1,
                cross,
                drop2,
                norm2,
                ffn,
                drop3,
                norm3,
            },
        )
    }

    /// Returns `(dx, d_enc)`.
    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        cache: &DecLayerCache<S>,
        enc: &Array3<S>,
        dy: &Array3<S>,
    ) -> (Array3<S>, Array3<S>) {
        let dsum3 = self.norm3.backward3(params, grads, &cache.norm3, dy);
        let mut df = dsum3.clone();
        self.drop.backward(&cache.drop3, &mut df);
        let mut dx2 = self.ffn.backward(params, grads, &cache.ffn, &df);
        dx2 += &dsum3;
        let dsum2 = self.norm2.backward3(params, grads, &cache.norm2, &dx2);
        let mut dc = dsum2.clone();
        self.drop.backward(&cache.drop2, &mut dc);
        let (dq_c, dk_c, dv_c) = self.cross_attn.backward(
            params,
            grads,
            &cache.x1,
            enc,
            enc,
            &cache.cross,
            &dc,
        );
        let mut denc = dk_c;
        denc += &dv_c;
        let mut dx1 = dsum2;
        dx1 += &dq_c;
        let dsum1 = self.norm1.backward3(params, grads, &cache.norm1, &dx1);
        let mut da = dsum1.clone();
        self.drop.backward(&cache.drop1, &mut da);
        let (dq, dk, dv) = self.self_attn.backward(
            params,
            grads,
            &cache.x,
            &cache.x,
            &cache.x,
            &cache.self_attn,
            &da,
        );
        let mut dx = dsum1;
        dx += &dq;
        dx += &dk;
        dx += &dv;
        (dx, denc)
    }

    /// Prepares a decode state: projects the encoded source to this
    /// layer's cross keys/values once, before any step runs.
    pub fn begin_decode<S: Scalar>(
        &self,
        params: &Params<S>,
        enc: &Array3<S>,
    ) -> DecStepState<S> {
        let (_, b, d) = enc.dim();
        let cross_k = self.cross_attn.wk.forward3(params, enc);
        let cross_v = self.cross_attn.wv.forward3(params, enc);
        DecStepState {
            self_k: Array3::zeros((0, b, d)),
            self_v: Array3::zeros((0, b, d)),
            cross_k,
            cross_v,
        }
    }

    /// One eval-mode decode step over `[B, D]` input rows. Appends this
    /// step's keys/values to the state, then attends.
    pub fn step<S: Scalar>(
        &self,
        params: &Params<S>,
        state: &mut DecStepState<S>,
        x_step: &Array2<S>,
        src_lens: Option<&[usize]>,
    ) -> Array2<S> {
        let (k, v) = self.self_attn.project_kv_step(params, x_step.view());
        state
            .self_k
            .append(Axis(0), k.insert_axis(Axis(0)).view())
            .expect("cache layout is appendable");
        state
            .self_v
            .append(Axis(0), v.insert_axis(Axis(0)).view())
            .expect("cache layout is appendable");

        let a = self
            .self_attn
            .step(params, x_step.view(), &state.self_k, &state.self_v, None);
        let x1 = self.norm1.forward2(params, (&a + x_step).view()).0;
        let c = self
            .cross_attn
            .step(params, x1.view(), &state.cross_k, &state.cross_v, src_lens);
        let x2 = self.norm2.forward2(params, (&c + &x1).view()).0;
        let mut h = self.ffn.w1.forward2(params, x2.view());
        h.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
        let f = self.ffn.w2.forward2(params, h.view());
        self.norm3.forward2(params, (&f + &x2).view()).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_x(t: usize, b: usize, d: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((t, b, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn encoder_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params: Params<f64> = Params::new();
        let layer = EncoderLayer::new(&mut params, "e", 4, 6, 2, 0.0, &mut rng);
        let x = random_x(3, 2, 4, 22);
        let r = random_x(3, 2, 4, 23);
        let mask = AttnMask::key_pad(vec![3, 2]);

        let loss = |p: &Params<f64>, x: &Array3<f64>| -> f64 {
            let (y, _) = layer.forward(p, &mut Ctx::eval(), x, &mask);
            y.iter().zip(r.iter()).map(|(&a, &b)| a * b).sum()
        };

        let mut grads = Grads::zeros_of(&params);
        let (_, cache) = layer.forward(&params, &mut Ctx::eval(), &x, &mask);
        let dx = layer.backward(&params, &mut grads, &cache, &r);

        let eps = 1e-6;
        for ti in 0..params.len() {
            for j in 0..params.tensors()[ti].len() {
                let orig = params.tensors()[ti].as_slice().unwrap()[j];
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig + eps;
                let up = loss(&params, &x);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig - eps;
                let down = loss(&params, &x);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.tensors()[ti].as_slice().unwrap()[j];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "param {ti}[{j}] ({}): fd {fd} vs analytic {an}",
                    params.names()[ti]
                );
            }
        }
        let mut x2 = x.clone();
        for (pos, _) in x.indexed_iter() {
            let orig = x2[pos];
            x2[pos] = orig + eps;
            let up = loss(&params, &x2);
            x2[pos] = orig - eps;
            let down = loss(&params, &x2);
            x2[pos] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = dx[pos];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                "input {pos:?}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn decoder_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut params: Params<f64> = Params::new();
        let layer = DecoderLayer::new(&mut params, "d", 4, 6, 2, 0.0, &mut rng);
        let x = random_x(3, 2, 4, 32);
        let enc = random_x(4, 2, 4, 33);
        let r = random_x(3, 2, 4, 34);
        let mask = AttnMask::key_pad(vec![4, 2]);

        let loss = |p: &Params<f64>, x: &Array3<f64>, enc: &Array3<f64>| -> f64 {
            let (y, _) = layer.forward(p, &mut Ctx::eval(), x, enc, &mask);
            y.iter().zip(r.iter()).map(|(&a, &b)| a * b).sum()
        };

        let mut grads = Grads::zeros_of(&params);
        let (_, cache) = layer.forward(&params, &mut Ctx::eval(), &x, &enc, &mask);
        let (dx, denc) = layer.backward(&params, &mut grads, &cache, &enc, &r);

        let eps = 1e-6;
        for ti in 0..params.len() {
            for j in 0..params.tensors()[ti].len() {
                let orig = params.tensors()[ti].as_slice().unwrap()[j];
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig + eps;
                let up = loss(&params, &x, &enc);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig - eps;
                let down = loss(&params, &x, &enc);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.tensors()[ti].as_slice().unwrap()[j];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "param {ti}[{j}] ({}): fd {fd} vs analytic {an}",
                    params.names()[ti]
                );
            }
        }
        let mut probe = x.clone();
        for (pos, _) in x.indexed_iter() {
            let orig = probe[pos];
            probe[pos] = orig + eps;
            let up = loss(&params, &probe, &enc);
            probe[pos] = orig - eps;
            let down = loss(&params, &probe, &enc);
            probe[pos] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = dx[pos];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                "x {pos:?}: fd {fd} vs analytic {an}"
            );
        }
        let mut probe = enc.clone();
        for (pos, _) in enc.indexed_iter() {
            let orig = probe[pos];
            probe[pos] = orig + eps;
            let up = loss(&params, &x, &probe);
            probe[pos] = orig - eps;
            let down = loss(&params, &x, &probe);
            probe[pos] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = denc[pos];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                "enc {pos:?}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn decode_steps_match_teacher_forced_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut params: Params<f64> = Params::new();
        let layer = DecoderLayer::new(&mut params, "d", 8, 12, 2, 0.0, &mut rng);
        let x = random_x(5, 2, 8, 42);
        let enc = random_x(6, 2, 8, 43);
        let lens = vec![6usize, 4];
        let mask = AttnMask::key_pad(lens.clone());
        let (full, _) = layer.forward(&params, &mut Ctx::eval(), &x, &enc, &mask);

        let mut state = layer.begin_decode(&params, &enc);
        for t in 0..5 {
            let step = x.index_axis(Axis(0), t).to_owned();
            let y = layer.step(&params, &mut state, &step, Some(&lens));
            for b in 0..2 {
                for d in 0..8 {
                    assert!(
                        (y[[b, d]] - full[[t, b, d]]).abs() < 1e-10,
                        "step {t} b={b} d={d}"
                    );
                }
            }
        }
    }
}
