use ndarray::{s, Array2, Array3, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::nn::{
    add_positional, sinusoidal_table, AttnMask, BiLstm, BiLstmCache, Ctx, Dropout, Embedding,
    Linear,
};
use crate::tensor::{Grads, Params, Scalar};
use crate::transcode::{BOS, EOS};

use super::config::{Arch, ModelConfig};
use super::pool::{pool_backward, pool_forward};
use super::transformer::{DecLayerCache, DecStepState, DecoderLayer, EncLayerCache, EncoderLayer};
use super::{Batch, Decoded};

/// Babylon and Camelot share this structure: an optional Bi-LSTM
/// front-end with end-anchored pooling feeding a transformer
/// encoder-decoder. Camelot is the degenerate case: no front-end,
/// stride 1.
pub struct TransformerSeq2Seq<S: Scalar> {
    pub cfg: ModelConfig,
    src_embed: Embedding,
    tgt_embed: Embedding,
    enc: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
    head: Linear,
    drop: Dropout,
    front: Vec<BiLstm>,
    pe: Array2<S>,
}

pub struct Seq2SeqCache<S: Scalar> {
    front_in: Vec<Array3<S>>,
    front: Vec<BiLstmCache<S>>,
    t_full: usize,
    enc_drop: Option<Array3<S>>,
    enc_caches: Vec<EncLayerCache<S>>,
    enc_out: Array3<S>,
    dec_drop: Option<Array3<S>>,
    dec_caches: Vec<DecLayerCache<S>>,
    head_in: Array3<S>,
}

impl<S: Scalar> TransformerSeq2Seq<S> {
    pub fn build(
        cfg: &ModelConfig,
        params: &mut Params<S>,
        rng: &mut ChaCha8Rng,
    ) -> TransformerSeq2Seq<S> {
        let d = cfg.d_model;
        let src_embed = Embedding::new(params, "src_embed", cfg.src_vocab, d, true, rng);
        let tgt_embed = Embedding::new(params, "tgt_embed", cfg.tgt_vocab, d, true, rng);
        let enc = (0..cfg.enc_layers)
            .map(|i| {
                EncoderLayer::new(
                    params,
                    &format!("enc.{i}"),
                    d,
                    cfg.d_ffn,
                    cfg.heads,
                    cfg.dropout,
                    rng,
                )
            })
            .collect();
        let dec = (0..cfg.dec_layers)
            .map(|i| {
                DecoderLayer::new(
                    params,
                    &format!("dec.{i}"),
                    d,
                    cfg.d_ffn,
                    cfg.heads,
                    cfg.dropout,
                    rng,
                )
            })
            .collect();
        let head = Linear::new_small(params, "head", d, cfg.tgt_vocab, 0.01, rng);
        // The recurrent front-end comes last so that, with the same
        // seed, the shared tensors above are drawn identically whether
        // or not a front-end exists.
        let front = if cfg.arch == Arch::Babylon && !cfg.identity_front {
            (0..cfg.lstm_layers)
                .map(|i| BiLstm::new(params, &format!("front.{i}"), d, cfg.lstm_hidden, rng))
                .collect()
        } else {
            Vec::new()
        };
        let max_pe = cfg.max_source_len.max(cfg.max_target_len);
        TransformerSeq2Seq {
            cfg: cfg.clone(),
            src_embed,
            tgt_embed,
            enc,
            dec,
            head,
            drop: Dropout::new(cfg.dropout),
            front,
            pe: sinusoidal_table(max_pe, d),
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

    /// Front-end plus encoder stack; shared by training and decoding.
    pub(crate) fn encode(
        &self,
        params: &Params<S>,
        ctx: &mut Ctx,
        src: &Array2<u32>,
        src_lens: &[usize],
    ) -> Result<(Array3<S>, Seq2SeqEncPart<S>), ModelError> {
        self.check_source(src.dim().0)?;
        let t_full = src.dim().0;
        let mut front_in = Vec::new();
        let mut front = Vec::new();
        let mut h = self.src_embed.forward(params, src);
        for layer in &self.front {
            front_in.push(h.clone());
            let (next, cache) = layer.forward(params, &h, src_lens);
            front.push(cache);
            h = next;
        }
        if self.cfg.pe_before_pooling {
            add_positional(&mut h, &self.pe);
        }
        let (mut pooled, plens) = pool_forward(&h, src_lens, self.cfg.pool_k);
        if !self.cfg.pe_before_pooling {
            add_positional(&mut pooled, &self.pe);
        }
        let enc_drop = self.drop.forward(ctx, &mut pooled);

        let mask = AttnMask::key_pad(plens.clone());
        let mut enc_caches = Vec::new();
        let mut x = pooled;
        for layer in &self.enc {
            let (next, cache) = layer.forward(params, ctx, &x, &mask);
            enc_caches.push(cache);
            x = next;
        }
        Ok((
            x,
            Seq2SeqEncPart {
                front_in,
                front,
                plens,
                t_full,
                enc_drop,
                enc_caches,
            },
        ))
    }

    pub fn forward_train(
        &self,
        params: &Params<S>,
        ctx: &mut Ctx,
        batch: &Batch,
    ) -> Result<(Array3<S>, Seq2SeqCache<S>), ModelError> {
        let (enc_out, enc_part) = self.encode(params, ctx, &batch.src, &batch.src_lens)?;

        let mut dec_in = self.tgt_embed.forward(params, &batch.tgt_in);
        add_positional(&mut dec_in, &self.pe);
        let dec_drop = self.drop.forward(ctx, &mut dec_in);

        let cross_mask = AttnMask::key_pad(enc_part.plens.clone());
        let mut dec_caches = Vec::new();
        let mut x = dec_in;
        for layer in &self.dec {
            let (next, cache) = layer.forward(params, ctx, &x, &enc_out, &cross_mask);
            dec_caches.push(cache);
            x = next;
        }
        let logits = self.head.forward3(params, &x);
        let cache = Seq2SeqCache {
            front_in: enc_part.front_in,
            front: enc_part.front,
            t_full: enc_part.t_full,
            enc_drop: enc_part.enc_drop,
            enc_caches: enc_part.enc_caches,
            enc_out,
            dec_drop,
            dec_caches,
            head_in: x,
        };
        Ok((logits, cache))
    }

    pub fn backward(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        batch: &Batch,
        cache: &Seq2SeqCache<S>,
        dlogits: &Array3<S>,
    ) {
        // Head consumed the final decoder output, stashed as head_in.
        let mut dx = self
            .head
            .backward3(params, grads, &cache.head_in, dlogits);
        let mut denc = Array3::zeros(cache.enc_out.dim());
        for (layer, lcache) in self.dec.iter().zip(&cache.dec_caches).rev() {
            let (dprev, denc_l) = layer.backward(params, grads, lcache, &cache.enc_out, &dx);
            dx = dprev;
            denc += &denc_l;
        }
        self.drop.backward(&cache.dec_drop, &mut dx);
        self.tgt_embed.backward(grads, &batch.tgt_in, &dx);

        let mut dpooled = denc;
        for (layer, lcache) in self.enc.iter().zip(&cache.enc_caches).rev() {
            dpooled = layer.backward(params, grads, lcache, &dpooled);
        }
        self.drop.backward(&cache.enc_drop, &mut dpooled);
        // Positional encoding is additive: gradient passes through.
        let mut dh = pool_backward(&dpooled, &batch.src_lens, self.cfg.pool_k, cache.t_full);
        for ((layer, lcache), x_in) in self
            .front
            .iter()
            .zip(&cache.front)
            .zip(&cache.front_in)
            .rev()
        {
            dh = layer.backward(params, grads, x_in, lcache, &dh, &batch.src_lens);
        }
        self.src_embed.backward(grads, &batch.src, &dh);
    }

    /// Greedy decode of one framed source sequence (BOS..EOS ids).
    pub fn greedy_decode(
        &self,
        params: &Params<S>,
        src_ids: &[u32],
        max_len: usize,
    ) -> Result<Decoded, ModelError> {
        let mut ctx = Ctx::eval();
        let m = src_ids.len();
        let src =
            Array2::from_shape_fn((m, 1), |(t, _)| src_ids[t]);
        let (enc_out, part) = self.encode(params, &mut ctx, &src, &[m])?;
        let plens = part.plens;

        let mut states: Vec<DecStepState<S>> = self
            .dec
            .iter()
            .map(|l| l.begin_decode(params, &enc_out))
            .collect();
        let mut ids = Vec::new();
        let mut prev = BOS;
        let sqrt_d = S::from_f64c((self.cfg.d_model as f64).sqrt());
        for t in 0..max_len {
            let emb = params.m(self.tgt_embed.table);
            let mut x: Array2<S> = emb
                .row(prev as usize)
                .to_owned()
                .insert_axis(Axis(0));
            x.mapv_inplace(|v| v * sqrt_d);
            let mut row = x.row_mut(0);
            row += &self.pe.row(t);
            let mut step = x;
            for (layer, state) in self.dec.iter().zip(states.iter_mut()) {
                step = layer.step(params, state, &step, Some(&plens));
            }
            let logits = self.head.forward2(params, step.view());
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

    /// Eval-mode teacher-forced logits; used by tests and the loss path.
    pub fn logits_eval(
        &self,
        params: &Params<S>,
        batch: &Batch,
    ) -> Result<Array3<S>, ModelError> {
        Ok(self.forward_train(params, &mut Ctx::eval(), batch)?.0)
    }
}

pub(crate) struct Seq2SeqEncPart<S: Scalar> {
    front_in: Vec<Array3<S>>,
    front: Vec<BiLstmCache<S>>,
    plens: Vec<usize>,
    t_full: usize,
    enc_drop: Option<Array3<S>>,
    enc_caches: Vec<EncLayerCache<S>>,
}

pub(crate) fn argmax_row<S: Scalar>(logits: &Array2<S>) -> u32 {
    let row = logits.slice(s![0, ..]);
    let mut best = 0usize;
    let mut best_v = S::neg_infinity();
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as u32
}
