use ndarray::{s, Array1, Array2, Array3, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::nn::{last_h, Ctx, Dropout, Embedding, Linear, Lstm, LstmCache};
use crate::tensor::{softmax_rows_inplace, uniform_init, Grads, PRef, Params, Scalar};
use crate::transcode::{BOS, EOS};

use super::config::ModelConfig;
use super::seq2seq::argmax_row;
use super::{Batch, Decoded};

const NEG_INF: f64 = -1e9;

/// Alignment width for the additive attention MLP, capped so the
/// per-step score tensor stays small at full model size.
fn attn_dim(cfg: &ModelConfig) -> usize {
    cfg.lstm_hidden.min(128)
}

/// LSTM encoder-decoder with additive attention. The decoder is input
/// feeding: each step attends with the previous top-layer state, and the
/// resulting context is concatenated to the embedded previous token as
/// the recurrent input, then again to the top state for the output head.
pub struct DelphiModel<S: Scalar> {
    pub cfg: ModelConfig,
    src_embed: Embedding,
    tgt_embed: Embedding,
    enc: Vec<Lstm>,
    dec: Vec<Lstm>,
    wa: Linear,
    ua: Linear,
    v: PRef,
    init: Vec<Linear>,
    head: Linear,
    drop: Dropout,
    _marker: std::marker::PhantomData<S>,
}

pub struct DelphiCache<S: Scalar> {
    // Encoder side.
    enc_in: Vec<Array3<S>>,
    enc_caches: Vec<LstmCache<S>>,
    enc_h: Vec<Array3<S>>,
    enc_drop: Vec<Option<Array3<S>>>,
    src_drop: Option<Array3<S>>,
    pub enc_top: Array3<S>,
    enc_last: Array2<S>,
    ua_h: Array3<S>,
    // Decoder side, step-indexed.
    pub attn: Array3<S>,
    x0: Array3<S>,
    h: Vec<Array3<S>>,
    c: Vec<Array3<S>>,
    gates: Vec<Array3<S>>,
    h0: Vec<Array2<S>>,
    head_in: Array3<S>,
    tgt_drop: Option<Array3<S>>,
}

impl<S: Scalar> DelphiModel<S> {
    pub fn build(
        cfg: &ModelConfig,
        params: &mut Params<S>,
        rng: &mut ChaCha8Rng,
    ) -> DelphiModel<S> {
        let d = cfg.d_model;
        let h = cfg.lstm_hidden;
        let a = attn_dim(cfg);
        let src_embed = Embedding::new(params, "src_embed", cfg.src_vocab, d, false, rng);
        let tgt_embed = Embedding::new(params, "tgt_embed", cfg.tgt_vocab, d, false, rng);
        let enc = (0..cfg.lstm_layers)
            .map(|i| {
                let d_in = if i == 0 { d } else { h };
                Lstm::new(params, &format!("enc.{i}"), d_in, h, rng)
            })
            .collect();
        let dec = (0..cfg.lstm_layers)
            .map(|i| {
                let d_in = if i == 0 { d + h } else { h };
                Lstm::new(params, &format!("dec.{i}"), d_in, h, rng)
            })
            .collect();
        let wa = Linear::new(params, "attn.wa", h, a, rng);
        let ua = Linear::new(params, "attn.ua", h, a, rng);
        let v = params.add(
            "attn.v".to_string(),
            uniform_init(&[a], (3.0 / a as f64).sqrt(), rng),
        );
        let init = (0..cfg.lstm_layers)
            .map(|i| Linear::new(params, &format!("init.{i}"), h, h, rng))
            .collect();
        let head = Linear::new_small(params, "head", 2 * h, cfg.tgt_vocab, 0.01, rng);
        DelphiModel {
            cfg: cfg.clone(),
            src_embed,
            tgt_embed,
            enc,
            dec,
            wa,
            ua,
            v,
            init,
            head,
            drop: Dropout::new(cfg.dropout),
            _marker: std::marker::PhantomData,
        }
    }

    fn check_source(&self, len: usize) -> Result<(), ModelError> {
        if len > self.cfg.max_source_len {
            return Err(ModelError::SourceTooLong {
                len,
                max: self.cfg.max_source_len,
            });
        }
        Ok(())
    }

    /// Runs the encoder stack; returns per-layer inputs/outputs plus the
    /// attention key projection and the gathered final states.
    #[allow(clippy::type_complexity)]
    pub(crate) fn encode(
        &self,
        params: &Params<S>,
        ctx: &mut Ctx,
        src: &Array2<u32>,
        src_lens: &[usize],
    ) -> Result<EncPart<S>, ModelError> {
        self.check_source(src.dim().0)?;
        let mut x = self.src_embed.forward(params, src);
        let src_drop = self.drop.forward(ctx, &mut x);
        let mut enc_in = Vec::new();
        let mut enc_caches = Vec::new();
        let mut enc_h = Vec::new();
        let mut enc_drop = Vec::new();
        let last = self.enc.len() - 1;
        for (l, layer) in self.enc.iter().enumerate() {
            enc_in.push(x.clone());
            let (h, cache) = layer.forward(params, &x, None);
            enc_caches.push(cache);
            enc_h.push(h.clone());
            x = h;
            if l < last {
                enc_drop.push(self.drop.forward(ctx, &mut x));
            } else {
                enc_drop.push(None);
            }
        }
        let enc_top = enc_h[last].clone();
        let enc_last = last_h(&enc_top, src_lens);
        let ua_h = self.ua.forward3(params, &enc_top);
        Ok(EncPart {
            enc_in,
            enc_caches,
            enc_h,
            enc_drop,
            src_drop,
            enc_top,
            enc_last,
            ua_h,
        })
    }

    fn init_states(&self, params: &Params<S>, enc_last: &Array2<S>) -> Vec<Array2<S>> {
        self.init
            .iter()
            .map(|lin| {
                let mut h0 = lin.forward2(params, enc_last.view());
                h0.mapv_inplace(|x| x.tanh());
                h0
            })
            .collect()
    }

    /// Additive attention for one step: scores over source positions
    /// from query `q`, masked by `src_lens`. Returns `(weights, ctx)`.
    fn attend(
        &self,
        params: &Params<S>,
        q: &Array2<S>,
        enc_top: &Array3<S>,
        ua_h: &Array3<S>,
        src_lens: &[usize],
    ) -> (Array2<S>, Array2<S>) {
        let (ts, b, hd) = enc_top.dim();
        let a_dim = ua_h.dim().2;
        let waq = self.wa.forward2(params, q.view());
        let v = params.v(self.v);
        let neg = S::from_f64c(NEG_INF);

        let mut scores = Array2::zeros((b, ts));
        for j in 0..ts {
            for bi in 0..b {
                if j >= src_lens[bi] {
                    scores[[bi, j]] = neg;
                    continue;
                }
                let mut e = S::zero();
                for ai in 0..a_dim {
                    let u = (waq[[bi, ai]] + ua_h[[j, bi, ai]]).tanh();
                    e += v[ai] * u;
                }
                scores[[bi, j]] = e;
            }
        }
        softmax_rows_inplace(&mut scores.view_mut());
        let mut ctx = Array2::zeros((b, hd));
        for j in 0..ts {
            for bi in 0..b {
                let w = scores[[bi, j]];
                if w == S::zero() {
                    continue;
                }
                let mut row = ctx.row_mut(bi);
                row.scaled_add(w, &enc_top.slice(s![j, bi, ..]));
            }
        }
        (scores, ctx)
    }

    pub fn forward_train(
        &self,
        params: &Params<S>,
        ctx: &mut Ctx,
        batch: &Batch,
    ) -> Result<(Array3<S>, DelphiCache<S>), ModelError> {
        let part = self.encode(params, ctx, &batch.src, &batch.src_lens)?;
        let (tt, b) = batch.tgt_in.dim();
        let hd = self.cfg.lstm_hidden;
        let d = self.cfg.d_model;
        let ts = part.enc_top.dim().0;
        let layers = self.dec.len();

        let mut tgt_emb = self.tgt_embed.forward(params, &batch.tgt_in);
        let tgt_drop = self.drop.forward(ctx, &mut tgt_emb);

        let h0 = self.init_states(params, &part.enc_last);
        let mut h_prev = h0.clone();
        let mut c_prev: Vec<Array2<S>> = vec![Array2::zeros((b, hd)); layers];

        let mut attn = Array3::zeros((tt, b, ts));
        let mut x0_all = Array3::zeros((tt, b, d + hd));
        let mut h_all: Vec<Array3<S>> = vec![Array3::zeros((tt, b, hd)); layers];
        let mut c_all: Vec<Array3<S>> = vec![Array3::zeros((tt, b, hd)); layers];
        let mut gates_all: Vec<Array3<S>> = vec![Array3::zeros((tt, b, 4 * hd)); layers];
        let mut head_in = Array3::zeros((tt, b, 2 * hd));
        let mut logits = Array3::zeros((tt, b, self.cfg.tgt_vocab));

        for t in 0..tt {
            let (w, ctx_t) = self.attend(
                params,
                &h_prev[layers - 1],
                &part.enc_top,
                &part.ua_h,
                &batch.src_lens,
            );
            attn.slice_mut(s![t, .., ..]).assign(&w);

            let mut x0 = Array2::zeros((b, d + hd));
            x0.slice_mut(s![.., ..d])
                .assign(&tgt_emb.slice(s![t, .., ..]));
            x0.slice_mut(s![.., d..]).assign(&ctx_t);
            x0_all.slice_mut(s![t, .., ..]).assign(&x0);

            let mut input = x0;
            for l in 0..layers {
                let (h, c, gates) =
                    self.dec[l].step(params, input.view(), &h_prev[l], &c_prev[l]);
                h_all[l].slice_mut(s![t, .., ..]).assign(&h);
                c_all[l].slice_mut(s![t, .., ..]).assign(&c);
                gates_all[l].slice_mut(s![t, .., ..]).assign(&gates);
                h_prev[l] = h.clone();
                c_prev[l] = c;
                input = h;
            }

            let mut hi = Array2::zeros((b, 2 * hd));
            hi.slice_mut(s![.., ..hd]).assign(&h_prev[layers - 1]);
            hi.slice_mut(s![.., hd..]).assign(&ctx_t);
            head_in.slice_mut(s![t, .., ..]).assign(&hi);
            logits
                .slice_mut(s![t, .., ..])
                .assign(&self.head.forward2(params, hi.view()));
        }

        let cache = DelphiCache {
            enc_in: part.enc_in,
            enc_caches: part.enc_caches,
            enc_h: part.enc_h,
            enc_drop: part.enc_drop,
            src_drop: part.src_drop,
            enc_top: part.enc_top,
            enc_last: part.enc_last,
            ua_h: part.ua_h,
            attn,
            x0: x0_all,
            h: h_all,
            c: c_all,
            gates: gates_all,
            h0,
            head_in,
            tgt_drop,
        };
        Ok((logits, cache))
    }

    /// Backward through the fused attention-decoder loop, the init
    /// projections, and the encoder stack.
    pub fn backward(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        batch: &Batch,
        cache: &DelphiCache<S>,
        dlogits: &Array3<S>,
    ) {
        let (tt, b) = batch.tgt_in.dim();
        let hd = self.cfg.lstm_hidden;
        let d = self.cfg.d_model;
        let (ts, _, _) = cache.enc_top.dim();
        let a_dim = cache.ua_h.dim().2;
        let layers = self.dec.len();

        let mut denc_top: Array3<S> = Array3::zeros((ts, b, hd));
        let mut dua_h: Array3<S> = Array3::zeros((ts, b, a_dim));
        let mut dtgt_emb: Array3<S> = Array3::zeros((tt, b, d));

        let mut dh_carry: Vec<Array2<S>> = vec![Array2::zeros((b, hd)); layers];
        let mut dc_carry: Vec<Array2<S>> = vec![Array2::zeros((b, hd)); layers];
        let mut dh0: Vec<Array2<S>> = vec![Array2::zeros((b, hd)); layers];

        let v = params.v(self.v).to_owned();

        for t in (0..tt).rev() {
            let mut dh_cur = std::mem::replace(
                &mut dh_carry,
                vec![Array2::zeros((b, hd)); layers],
            );
            let dc_cur = std::mem::replace(
                &mut dc_carry,
                vec![Array2::zeros((b, hd)); layers],
            );

            // Output head: gradient splits between the top state and
            // the attention context.
            let head_in_t = cache.head_in.slice(s![t, .., ..]).to_owned();
            let dhead = self.head.backward2(
                params,
                grads,
                head_in_t.view(),
                dlogits.slice(s![t, .., ..]),
            );
            {
                let mut top = dh_cur[layers - 1].view_mut();
                top += &dhead.slice(s![.., ..hd]);
            }
            let mut dctx = dhead.slice(s![.., hd..]).to_owned();

            // Decoder stack, top down.
            for l in (0..layers).rev() {
                let x_t = if l == 0 {
                    cache.x0.slice(s![t, .., ..]).to_owned()
                } else {
                    cache.h[l - 1].slice(s![t, .., ..]).to_owned()
                };
                let h_prev = if t == 0 {
                    cache.h0[l].clone()
                } else {
                    cache.h[l].slice(s![t - 1, .., ..]).to_owned()
                };
                let c_prev = if t == 0 {
                    Array2::zeros((b, hd))
                } else {
                    cache.c[l].slice(s![t - 1, .., ..]).to_owned()
                };
                let gates = cache.gates[l].slice(s![t, .., ..]).to_owned();
                let c_new = cache.c[l].slice(s![t, .., ..]).to_owned();
                let (dx, dh_prev, dc_prev) = self.dec[l].step_backward(
                    params, grads, x_t.view(), &h_prev, &c_prev, &gates, &c_new, &dh_cur[l],
                    &dc_cur[l],
                );
                if t == 0 {
                    dh0[l] += &dh_prev;
                } else {
                    dh_carry[l] += &dh_prev;
                    dc_carry[l] += &dc_prev;
                }
                if l > 0 {
                    dh_cur[l - 1] += &dx;
                } else {
                    let mut demb = dtgt_emb.slice_mut(s![t, .., ..]);
                    demb += &dx.slice(s![.., ..d]);
                    dctx += &dx.slice(s![.., d..]);
                }
            }

            // Attention backward: context combination, softmax, additive
            // score MLP. Query was the previous top state.
            let q = if t == 0 {
                cache.h0[layers - 1].clone()
            } else {
                cache.h[layers - 1].slice(s![t - 1, .., ..]).to_owned()
            };
            let a_t = cache.attn.slice(s![t, .., ..]);
            // d(score weights) from the context combination.
            let mut da = Array2::zeros((b, ts));
            for j in 0..ts {
                for bi in 0..b {
                    let enc_row = cache.enc_top.slice(s![j, bi, ..]);
                    da[[bi, j]] = dctx
                        .row(bi)
                        .iter()
                        .zip(enc_row.iter())
                        .map(|(&x, &y)| x * y)
                        .sum();
                    // Context was a convex combination of encoder rows.
                    let w = a_t[[bi, j]];
                    if w != S::zero() {
                        let mut dst = denc_top.slice_mut(s![j, bi, ..]);
                        dst.scaled_add(w, &dctx.row(bi));
                    }
                }
            }
            // Softmax backward; masked entries have zero weight.
            let mut de = da;
            for (mut der, ar) in de.rows_mut().into_iter().zip(a_t.rows()) {
                let dot = der
                    .iter()
                    .zip(ar.iter())
                    .map(|(&x, &y)| x * y)
                    .sum::<S>();
                for (dv, &av) in der.iter_mut().zip(ar.iter()) {
                    *dv = av * (*dv - dot);
                }
            }
            // Additive MLP backward, recomputing tanh activations.
            let waq = self.wa.forward2(params, q.view());
            let mut dwaq = Array2::zeros((b, a_dim));
            {
                let mut dv_acc = Array1::<S>::zeros(a_dim);
                for j in 0..ts {
                    for bi in 0..b {
                        let g = de[[bi, j]];
                        if g == S::zero() {
                            continue;
                        }
                        for ai in 0..a_dim {
                            let u = (waq[[bi, ai]] + cache.ua_h[[j, bi, ai]]).tanh();
                            dv_acc[ai] += g * u;
                            let du = g * v[ai] * (S::one() - u * u);
                            dwaq[[bi, ai]] += du;
                            dua_h[[j, bi, ai]] += du;
                        }
                    }
                }
                let mut dv = grads.v_mut(self.v);
                dv += &dv_acc;
            }
            let dq = self.wa.backward2(params, grads, q.view(), dwaq.view());
            if t == 0 {
                dh0[layers - 1] += &dq;
            } else {
                dh_carry[layers - 1] += &dq;
            }
        }

        // Init projections: dh0 through tanh, accumulated onto the
        // gathered final encoder state.
        let mut denc_last = Array2::zeros((b, hd));
        for l in 0..layers {
            let mut dpre = dh0[l].clone();
            dpre.zip_mut_with(&cache.h0[l], |g, &y| *g *= S::one() - y * y);
            denc_last += &self.init[l].backward2(
                params,
                grads,
                cache.enc_last.view(),
                dpre.view(),
            );
        }

        // Attention key projection over all source positions.
        denc_top += &self.ua.backward3(params, grads, &cache.enc_top, &dua_h);

        // Encoder stack, top down; the final-state gradient enters at
        // each column's last valid step.
        let mut dy = denc_top;
        let last = self.enc.len() - 1;
        for l in (0..self.enc.len()).rev() {
            let extra = if l == last {
                Some((&denc_last, batch.src_lens.as_slice()))
            } else {
                None
            };
            let (mut dx, _, _) = self.enc[l].backward(
                params,
                grads,
                &cache.enc_in[l],
                &cache.enc_h[l],
                &cache.enc_caches[l],
                None,
                &dy,
                extra,
            );
            if l > 0 {
                self.drop.backward(&cache.enc_drop[l - 1], &mut dx);
            } else {
                self.drop.backward(&cache.src_drop, &mut dx);
            }
            dy = dx;
        }
        self.src_embed.backward(grads, &batch.src, &dy);

        let mut dtgt = dtgt_emb;
        self.drop.backward(&cache.tgt_drop, &mut dtgt);
        self.tgt_embed.backward(grads, &batch.tgt_in, &dtgt);
    }

    pub fn greedy_decode(
        &self,
        params: &Params<S>,
        src_ids: &[u32],
        max_len: usize,
    ) -> Result<Decoded, ModelError> {
        let mut ctx = Ctx::eval();
        let m = src_ids.len();
        let src = Array2::from_shape_fn((m, 1), |(t, _)| src_ids[t]);
        let lens = [m];
        let part = self.encode(params, &mut ctx, &src, &lens)?;
        let layers = self.dec.len();
        let hd = self.cfg.lstm_hidden;
        let d = self.cfg.d_model;

        let mut h_prev = self.init_states(params, &part.enc_last);
        let mut c_prev: Vec<Array2<S>> = vec![Array2::zeros((1, hd)); layers];
        let mut ids = Vec::new();
        let mut prev = BOS;
        for _ in 0..max_len {
            let (_, ctx_t) =
                self.attend(params, &h_prev[layers - 1], &part.enc_top, &part.ua_h, &lens);
            let emb = params.m(self.tgt_embed.table);
            let mut x0 = Array2::zeros((1, d + hd));
            x0.slice_mut(s![.., ..d])
                .assign(&emb.row(prev as usize).insert_axis(Axis(0)));
            x0.slice_mut(s![.., d..]).assign(&ctx_t);

            let mut input = x0;
            for l in 0..layers {
                let (h, c, _) = self.dec[l].step(params, input.view(), &h_prev[l], &c_prev[l]);
                h_prev[l] = h.clone();
                c_prev[l] = c;
                input = h;
            }
            let mut hi = Array2::zeros((1, 2 * hd));
            hi.slice_mut(s![.., ..hd]).assign(&h_prev[layers - 1]);
            hi.slice_mut(s![.., hd..]).assign(&ctx_t);
            let logits = self.head.forward2(params, hi.view());
            let next = argmax_row(&logits);
            if next == EOS {
                return Ok(Decoded {
                    ids,
                    truncated: false,
                });
            }
            ids.push(next);
            prev = next;
        }
        Ok(Decoded {
            ids,
            truncated: true,
        })
    }
}

pub(crate) struct EncPart<S: Scalar> {
    enc_in: Vec<Array3<S>>,
    enc_caches: Vec<LstmCache<S>>,
    enc_h: Vec<Array3<S>>,
    enc_drop: Vec<Option<Array3<S>>>,
    src_drop: Option<Array3<S>>,
    enc_top: Array3<S>,
    enc_last: Array2<S>,
    ua_h: Array3<S>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> (ModelConfig, Params<f64>, DelphiModel<f64>) {
        let mut cfg = ModelConfig::preset(super::super::config::Arch::Delphi, 9, 11);
        cfg.d_model = 6;
        cfg.lstm_hidden = 5;
        cfg.lstm_layers = 2;
        cfg.dropout = 0.0;
        cfg.max_source_len = 16;
        cfg.max_target_len = 8;
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = DelphiModel::build(&cfg, &mut params, &mut rng);
        (cfg, params, model)
    }

    fn batch(src: &[&[u32]], tgt: &[&[u32]]) -> Batch {
        let f = |ids: &[u32]| {
            let mut v = vec![BOS];
            v.extend_from_slice(ids);
            v.push(EOS);
            v
        };
        Batch::new(
            &src.iter().map(|s| f(s)).collect::<Vec<_>>(),
            &tgt.iter().map(|s| f(s)).collect::<Vec<_>>(),
        )
    }

    #[test]
    fn attention_rows_are_distributions_over_valid_positions() {
        let (_, params, model) = tiny();
        let b = batch(&[&[4, 5, 6, 7], &[8, 4]], &[&[3, 4], &[5, 6, 7]]);
        let mut ctx = Ctx::eval();
        let (_, cache) = model.forward_train(&params, &mut ctx, &b).unwrap();
        let (tt, bs, ts) = cache.attn.dim();
        for t in 0..tt {
            for bi in 0..bs {
                let mut sum = 0.0;
                for j in 0..ts {
                    let w = cache.attn[[t, bi, j]];
                    assert!(w >= 0.0);
                    if j >= b.src_lens[bi] {
                        assert_eq!(w, 0.0, "padding must get zero weight");
                    }
                    sum += w;
                }
                assert!((sum - 1.0).abs() < 1e-9, "weights at ({t},{bi}) sum to {sum}");
            }
        }
    }

    #[test]
    fn single_position_source_pins_context_to_that_state() {
        let (cfg, params, model) = tiny();
        // One real batch column; a source of length 1 after framing needs
        // a raw frame [BOS], so build the grid by hand.
        let src = Array2::from_shape_vec((1, 1), vec![4u32]).unwrap();
        let tgt = batch(&[&[4]], &[&[3, 4]]);
        let b = Batch {
            src,
            src_lens: vec![1],
            tgt_in: tgt.tgt_in,
            tgt_out: tgt.tgt_out,
            tgt_lens: tgt.tgt_lens,
        };
        let mut ctx = Ctx::eval();
        let (_, cache) = model.forward_train(&params, &mut ctx, &b).unwrap();
        let hd = cfg.lstm_hidden;
        for t in 0..cache.head_in.dim().0 {
            assert!((cache.attn[[t, 0, 0]] - 1.0).abs() < 1e-12);
            for k in 0..hd {
                let ctx_k = cache.head_in[[t, 0, hd + k]];
                let enc_k = cache.enc_top[[0, 0, k]];
                assert!((ctx_k - enc_k).abs() < 1e-12, "context must equal the only state");
            }
        }
    }
}
