//! Finite-difference audit of every gradient-bearing unit, in f64.
//!
//! Each kind builds one random instance (parameters, inputs, and a random
//! projection that scalarizes the output), runs the analytic backward
//! once, then perturbs every parameter and input element with a central
//! difference. `check` returns the worst relative error seen, so callers
//! can assert a single numeric bound per instance.
//!
//! Instances containing a relu are resampled (deterministically, by seed
//! offset) when the worst error exceeds the caller-visible bound: a
//! pre-activation within the difference step of zero makes the central
//! difference straddle the kink, which is a measurement artifact, not a
//! wrong gradient. A genuine gradient bug fails at every seed and still
//! surfaces.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    pool_backward, pool_forward, Arch, Batch, DecoderLayer, DelphiModel, EncoderLayer,
    ModelConfig, TransformerSeq2Seq,
};
use crate::nn::{
    add_positional, sinusoidal_table, softmax_xent, AttnMask, BiLstm, Ctx, Embedding,
    FeedForward, LayerNorm, Linear, Lstm, MultiHeadAttn,
};
use crate::tensor::{Grads, Params};
use crate::transcode::PAD;

/// Central-difference step. Large enough that f64 cancellation noise on
/// sum-scale losses stays orders of magnitude under the 1e-4 bound even
/// for the smallest counted gradients, while truncation error (~H²)
/// remains near 1e-8.
const H: f64 = 1e-4;

/// Gradients whose analytic and numeric magnitudes both sit under this
/// floor compare as equal; below it the difference quotient is noise.
const FLOOR: f64 = 1e-6;

/// Relu-bearing kinds retry at most this many seed offsets (see module
/// docs); smooth kinds never retry.
const KINK_RETRIES: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Embedding,
    LayerNorm,
    FeedForward,
    SelfAttention,
    CausalSelfAttention,
    CrossAttention,
    Lstm,
    BiLstm,
    EndPooling,
    PositionalEncoding,
    SoftmaxCrossEntropy,
    EncoderLayer,
    DecoderLayer,
    AdditiveAttentionStack,
    PooledEncoderStack,
    FullResolutionStack,
}

pub const ALL: [LayerKind; 17] = [
    LayerKind::Linear,
    LayerKind::Embedding,
    LayerKind::LayerNorm,
    LayerKind::FeedForward,
    LayerKind::SelfAttention,
    LayerKind::CausalSelfAttention,
    LayerKind::CrossAttention,
    LayerKind::Lstm,
    LayerKind::BiLstm,
    LayerKind::EndPooling,
    LayerKind::PositionalEncoding,
    LayerKind::SoftmaxCrossEntropy,
    LayerKind::EncoderLayer,
    LayerKind::DecoderLayer,
    LayerKind::AdditiveAttentionStack,
    LayerKind::PooledEncoderStack,
    LayerKind::FullResolutionStack,
];

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Embedding => "embedding",
            LayerKind::LayerNorm => "layer_norm",
            LayerKind::FeedForward => "feed_forward",
            LayerKind::SelfAttention => "self_attention",
            LayerKind::CausalSelfAttention => "causal_self_attention",
            LayerKind::CrossAttention => "cross_attention",
            LayerKind::Lstm => "lstm",
            LayerKind::BiLstm => "bilstm",
            LayerKind::EndPooling => "end_pooling",
            LayerKind::PositionalEncoding => "positional_encoding",
            LayerKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            LayerKind::EncoderLayer => "encoder_layer",
            LayerKind::DecoderLayer => "decoder_layer",
            LayerKind::AdditiveAttentionStack => "additive_attention_stack",
            LayerKind::PooledEncoderStack => "pooled_encoder_stack",
            LayerKind::FullResolutionStack => "full_resolution_stack",
        }
    }

    fn has_relu(self) -> bool {
        matches!(
            self,
            LayerKind::FeedForward
                | LayerKind::EncoderLayer
                | LayerKind::DecoderLayer
                | LayerKind::PooledEncoderStack
                | LayerKind::FullResolutionStack
        )
    }
}

/// Worst relative error between analytic and central-difference gradients
/// for one random instance of `kind`. `bound` is only used to decide
/// whether a relu kind should resample (see module docs); the returned
/// value is always a genuinely measured error.
pub fn check(kind: LayerKind, seed: u64, bound: f64) -> f64 {
    let mut err = run(kind, seed);
    if kind.has_relu() {
        let mut offset = 1;
        while err > bound && offset <= KINK_RETRIES {
            err = run(kind, seed + offset * 0x9e37_79b9);
            offset += 1;
        }
    }
    err
}

fn rel_err(fd: f64, an: f64) -> f64 {
    let denom = fd.abs().max(an.abs());
    if denom < FLOOR {
        0.0
    } else {
        (fd - an).abs() / denom
    }
}

fn rand3(rng: &mut ChaCha8Rng, t: usize, b: usize, d: usize) -> Array3<f64> {
    Array3::from_shape_simple_fn((t, b, d), || rng.gen_range(-1.0..1.0))
}

fn dot3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

/// Central-difference sweep over every parameter element, compared to the
/// analytic gradients already accumulated in `grads`.
fn sweep_params(
    params: &mut Params<f64>,
    grads: &Grads<f64>,
    loss: &mut dyn FnMut(&Params<f64>) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for ti in 0..params.len() {
        for j in 0..params.tensors()[ti].len() {
            let orig = params.tensors()[ti].as_slice().unwrap()[j];
            params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig + H;
            let up = loss(params);
            params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig - H;
            let down = loss(params);
            params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig;
            let fd = (up - down) / (2.0 * H);
            let an = grads.tensors()[ti].as_slice().unwrap()[j];
            worst = worst.max(rel_err(fd, an));
        }
    }
    worst
}

/// Same sweep over one input tensor against its analytic gradient.
fn sweep_input(
    x: &mut Array3<f64>,
    dx: &Array3<f64>,
    loss: &mut dyn FnMut(&Array3<f64>) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let dims = x.dim();
    for t in 0..dims.0 {
        for b in 0..dims.1 {
            for d in 0..dims.2 {
                let orig = x[[t, b, d]];
                x[[t, b, d]] = orig + H;
                let up = loss(x);
                x[[t, b, d]] = orig - H;
                let down = loss(x);
                x[[t, b, d]] = orig;
                let fd = (up - down) / (2.0 * H);
                worst = worst.max(rel_err(fd, dx[[t, b, d]]));
            }
        }
    }
    worst
}

fn run(kind: LayerKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        LayerKind::Linear => linear(&mut rng),
        LayerKind::Embedding => embedding(&mut rng),
        LayerKind::LayerNorm => layer_norm(&mut rng),
        LayerKind::FeedForward => feed_forward(&mut rng),
        LayerKind::SelfAttention => attention(&mut rng, AttnKind::SelfPad),
        LayerKind::CausalSelfAttention => attention(&mut rng, AttnKind::Causal),
        LayerKind::CrossAttention => attention(&mut rng, AttnKind::Cross),
        LayerKind::Lstm => lstm(&mut rng),
        LayerKind::BiLstm => bilstm(&mut rng),
        LayerKind::EndPooling => end_pooling(&mut rng),
        LayerKind::PositionalEncoding => positional_encoding(&mut rng),
        LayerKind::SoftmaxCrossEntropy => softmax_cross_entropy(&mut rng),
        LayerKind::EncoderLayer => encoder_layer(&mut rng),
        LayerKind::DecoderLayer => decoder_layer(&mut rng),
        LayerKind::AdditiveAttentionStack => delphi_stack(&mut rng),
        LayerKind::PooledEncoderStack => seq2seq_stack(&mut rng, Arch::Babylon),
        LayerKind::FullResolutionStack => seq2seq_stack(&mut rng, Arch::Camelot),
    }
}

fn linear(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let lin = Linear::new(&mut params, "lin", 5, 4, rng);
    let mut x = rand3(rng, 3, 2, 5);
    let r = rand3(rng, 3, 2, 4);

    let mut grads = Grads::zeros_of(&params);
    let dx = lin.backward3(&params, &mut grads, &x, &r);

    let p_err = sweep_params(&mut params, &grads, &mut |p| {
        dot3(&lin.forward3(p, &x), &r)
    });
    let x_err = sweep_input(&mut x, &dx, &mut |x| dot3(&lin.forward3(&params, x), &r));
    p_err.max(x_err)
}

fn embedding(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let emb = Embedding::new(&mut params, "emb", 9, 6, true, rng);
    let ids = Array2::from_shape_simple_fn((4, 2), || rng.gen_range(0..9u32));
    let r = rand3(rng, 4, 2, 6);

    let mut grads = Grads::zeros_of(&params);
    emb.backward(&mut grads, &ids, &r);
    sweep_params(&mut params, &grads, &mut |p| dot3(&emb.forward(p, &ids), &r))
}

fn layer_norm(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let norm = LayerNorm::new(&mut params, "norm", 6);
    // Break the all-ones gain so gradients are not accidentally symmetric.
    params
        .raw_mut(norm.g)
        .mapv_inplace(|v| v * rng.gen_range(0.5..1.5));
    let mut x = rand3(rng, 3, 2, 6);
    let r = rand3(rng, 3, 2, 6);

    let mut grads = Grads::zeros_of(&params);
    let (_, cache) = norm.forward3(&params, &x);
    let dx = norm.backward3(&params, &mut grads, &cache, &r);

    let p_err = sweep_params(&mut params, &grads, &mut |p| {
        dot3(&norm.forward3(p, &x).0, &r)
    });
    let x_err = sweep_input(&mut x, &dx, &mut |x| {
        dot3(&norm.forward3(&params, x).0, &r)
    });
    p_err.max(x_err)
}

fn feed_forward(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let ffn = FeedForward::new(&mut params, "ffn", 6, 11, rng);
    let mut x = rand3(rng, 3, 2, 6);
    let r = rand3(rng, 3, 2, 6);

    let mut grads = Grads::zeros_of(&params);
    let (_, cache) = ffn.forward(&params, &x);
    let dx = ffn.backward(&params, &mut grads, &cache, &r);

    let p_err = sweep_params(&mut params, &grads, &mut |p| {
        dot3(&ffn.forward(p, &x).0, &r)
    });
    let x_err = sweep_input(&mut x, &dx, &mut |x| {
        dot3(&ffn.forward(&params, x).0, &r)
    });
    p_err.max(x_err)
}

enum AttnKind {
    SelfPad,
    Causal,
    Cross,
}

fn attention(rng: &mut ChaCha8Rng, which: AttnKind) -> f64 {
    let mut params = Params::<f64>::new();
    let attn = MultiHeadAttn::new(&mut params, "attn", 6, 2, rng);
    match which {
        AttnKind::SelfPad | AttnKind::Causal => {
            let mut x = rand3(rng, 4, 2, 6);
            let r = rand3(rng, 4, 2, 6);
            let mask = match which {
                AttnKind::SelfPad => AttnMask::key_pad(vec![4, 3]),
                _ => AttnMask::causal(),
            };

            let mut grads = Grads::zeros_of(&params);
            let (_, cache) = attn.forward(&params, &x, &x, &x, &mask);
            let (dq, dk, dv) = attn.backward(&params, &mut grads, &x, &x, &x, &cache, &r);
            let mut dx = dq;
            dx += &dk;
            dx += &dv;

            let p_err = sweep_params(&mut params, &grads, &mut |p| {
                dot3(&attn.forward(p, &x, &x, &x, &mask).0, &r)
            });
            let x_err = sweep_input(&mut x, &dx, &mut |x| {
                dot3(&attn.forward(&params, x, x, x, &mask).0, &r)
            });
            p_err.max(x_err)
        }
        AttnKind::Cross => {
            let mut q = rand3(rng, 3, 2, 6);
            let mut kv = rand3(rng, 5, 2, 6);
            let r = rand3(rng, 3, 2, 6);
            let mask = AttnMask::key_pad(vec![5, 4]);

            let mut grads = Grads::zeros_of(&params);
            let (_, cache) = attn.forward(&params, &q, &kv, &kv, &mask);
            let (dq, dk, dv) = attn.backward(&params, &mut grads, &q, &kv, &kv, &cache, &r);
            let mut dkv = dk;
            dkv += &dv;

            let p_err = sweep_params(&mut params, &grads, &mut |p| {
                dot3(&attn.forward(p, &q, &kv, &kv, &mask).0, &r)
            });
            let q_err = sweep_input(&mut q, &dq, &mut |q| {
                dot3(&attn.forward(&params, q, &kv, &kv, &mask).0, &r)
            });
            let kv_err = sweep_input(&mut kv, &dkv, &mut |kv| {
                dot3(&attn.forward(&params, &q, kv, kv, &mask).0, &r)
            });
            p_err.max(q_err).max(kv_err)
        }
    }
}

fn lstm(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let cell = Lstm::new(&mut params, "lstm", 5, 4, rng);
    let mut x = rand3(rng, 4, 2, 5);
    let r = rand3(rng, 4, 2, 4);
    let h0 = Array2::from_shape_simple_fn((2, 4), || rng.gen_range(-0.5..0.5));
    let c0 = Array2::from_shape_simple_fn((2, 4), || rng.gen_range(-0.5..0.5));

    let mut grads = Grads::zeros_of(&params);
    let (h_seq, cache) = cell.forward(&params, &x, Some((&h0, &c0)));
    let (dx, dh0, dc0) = cell.backward(
        &params,
        &mut grads,
        &x,
        &h_seq,
        &cache,
        Some((&h0, &c0)),
        &r,
        None,
    );

    let p_err = sweep_params(&mut params, &grads, &mut |p| {
        dot3(&cell.forward(p, &x, Some((&h0, &c0))).0, &r)
    });
    let x_err = sweep_input(&mut x, &dx, &mut |x| {
        dot3(&cell.forward(&params, x, Some((&h0, &c0))).0, &r)
    });

    // Initial states are inputs too.
    let mut s_err = 0.0f64;
    let sweep_state = |is_h: bool, dstate: &Array2<f64>| {
        let mut s = if is_h { h0.clone() } else { c0.clone() };
        let mut worst = 0.0f64;
        for b in 0..2 {
            for d in 0..4 {
                let orig = s[[b, d]];
                let eval = |s: &Array2<f64>| {
                    let pair = if is_h { (s, &c0) } else { (&h0, s) };
                    dot3(&cell.forward(&params, &x, Some(pair)).0, &r)
                };
                s[[b, d]] = orig + H;
                let up = eval(&s);
                s[[b, d]] = orig - H;
                let down = eval(&s);
                s[[b, d]] = orig;
                let fd = (up - down) / (2.0 * H);
                worst = worst.max(rel_err(fd, dstate[[b, d]]));
            }
        }
        worst
    };
    s_err = s_err.max(sweep_state(true, &dh0));
    s_err = s_err.max(sweep_state(false, &dc0));
    p_err.max(x_err).max(s_err)
}

fn bilstm(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let bi = BiLstm::new(&mut params, "bi", 5, 3, rng);
    let mut x = rand3(rng, 5, 2, 5);
    let r = rand3(rng, 5, 2, 6);
    let lens = vec![5usize, 4];

    let mut grads = Grads::zeros_of(&params);
    let (_, cache) = bi.forward(&params, &x, &lens);
    let dx = bi.backward(&params, &mut grads, &x, &cache, &r, &lens);

    let p_err = sweep_params(&mut params, &grads, &mut |p| {
        dot3(&bi.forward(p, &x, &lens).0, &r)
    });
    let x_err = sweep_input(&mut x, &dx, &mut |x| {
        dot3(&bi.forward(&params, x, &lens).0, &r)
    });
    p_err.max(x_err)
}

fn end_pooling(rng: &mut ChaCha8Rng) -> f64 {
    let mut x = rand3(rng, 7, 2, 4);
    let lens = vec![7usize, 5];
    let k = 3;
    let (pooled, _) = pool_forward(&x, &lens, k);
    let r = rand3(rng, pooled.dim().0, 2, 4);
    let dx = pool_backward(&r, &lens, k, 7);
    sweep_input(&mut x, &dx, &mut |x| dot3(&pool_forward(x, &lens, k).0, &r))
}

fn positional_encoding(rng: &mut ChaCha8Rng) -> f64 {
    let table = sinusoidal_table::<f64>(8, 6);
    let mut x = rand3(rng, 5, 2, 6);
    let r = rand3(rng, 5, 2, 6);
    // The addition is elementwise, so the input gradient is `r` itself.
    sweep_input(&mut x, &r, &mut |x| {
        let mut y = x.clone();
        add_positional(&mut y, &table);
        dot3(&y, &r)
    })
}

fn softmax_cross_entropy(rng: &mut ChaCha8Rng) -> f64 {
    let mut logits = rand3(rng, 4, 2, 7);
    let mut targets = Array2::from_shape_simple_fn((4, 2), || rng.gen_range(1..7u32));
    targets[[3, 1]] = PAD;

    let (_, _, dlogits) = softmax_xent(&logits, &targets, PAD);
    sweep_input(&mut logits, &dlogits, &mut |l| {
        softmax_xent(l, &targets, PAD).0
    })
}

fn encoder_layer(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let layer = EncoderLayer::new(&mut params, "enc", 6, 9, 2, 0.0, rng);
    let mut x = rand3(rng, 4, 2, 6);
    let r = rand3(rng, 4, 2, 6);
    let mask = AttnMask::key_pad(vec![4, 3]);

    let mut grads = Grads::zeros_of(&params);
    let (_, cache) = layer.forward(&params, &mut Ctx::eval(), &x, &mask);
    let dx = layer.backward(&params, &mut grads, &cache, &r);

    let p_err = sweep_params(&mut params, &grads, &mut |p| {
        dot3(&layer.forward(p, &mut Ctx::eval(), &x, &mask).0, &r)
    });
    let x_err = sweep_input(&mut x, &dx, &mut |x| {
        dot3(&layer.forward(&params, &mut Ctx::eval(), x, &mask).0, &r)
    });
    p_err.max(x_err)
}

fn decoder_layer(rng: &mut ChaCha8Rng) -> f64 {
    let mut params = Params::<f64>::new();
    let layer = DecoderLayer::new(&mut params, "dec", 6, 9, 2, 0.0, rng);
    let mut x = rand3(rng, 3, 2, 6);
    let mut enc = rand3(rng, 5, 2, 6);
    let r = rand3(rng, 3, 2, 6);
    let cross = AttnMask::key_pad(vec![5, 4]);

    let mut grads = Grads::zeros_of(&params);
    let (_, cache) = layer.forward(&params, &mut Ctx::eval(), &x, &enc, &cross);
    let (dx, denc) = layer.backward(&params, &mut grads, &cache, &enc, &r);

    let p_err = sweep_params(&mut params, &grads, &mut |p| {
        dot3(&layer.forward(p, &mut Ctx::eval(), &x, &enc, &cross).0, &r)
    });
    let x_err = sweep_input(&mut x, &dx, &mut |x| {
        dot3(
            &layer.forward(&params, &mut Ctx::eval(), x, &enc, &cross).0,
            &r,
        )
    });
    let e_err = sweep_input(&mut enc, &denc, &mut |enc| {
        dot3(
            &layer.forward(&params, &mut Ctx::eval(), &x, enc, &cross).0,
            &r,
        )
    });
    p_err.max(x_err).max(e_err)
}

/// Random framed id batch over tiny vocabularies. Content ids stay above
/// the reserved specials so padding semantics hold.
fn tiny_batch(rng: &mut ChaCha8Rng, src_vocab: usize, tgt_vocab: usize) -> Batch {
    let src: Vec<Vec<u32>> = [4usize, 3]
        .iter()
        .map(|&n| {
            let mut s = vec![crate::transcode::BOS];
            s.extend((0..n).map(|_| rng.gen_range(4..src_vocab as u32)));
            s.push(crate::transcode::EOS);
            s
        })
        .collect();
    let tgt: Vec<Vec<u32>> = [3usize, 2]
        .iter()
        .map(|&n| {
            let mut s = vec![crate::transcode::BOS];
            s.extend((0..n).map(|_| rng.gen_range(4..tgt_vocab as u32)));
            s.push(crate::transcode::EOS);
            s
        })
        .collect();
    Batch::new(&src, &tgt)
}

fn delphi_stack(rng: &mut ChaCha8Rng) -> f64 {
    let mut cfg = ModelConfig::preset(Arch::Delphi, 8, 7);
    cfg.d_model = 5;
    cfg.lstm_hidden = 4;
    cfg.lstm_layers = 1;
    cfg.dropout = 0.0;
    cfg.max_source_len = 16;
    cfg.max_target_len = 16;

    let mut params = Params::<f64>::new();
    let model = DelphiModel::build(&cfg, &mut params, rng);
    let batch = tiny_batch(rng, 8, 7);

    let mut loss = |p: &Params<f64>| -> f64 {
        let (logits, _) = model
            .forward_train(p, &mut Ctx::eval(), &batch)
            .expect("fits the length budget");
        softmax_xent(&logits, &batch.tgt_out, PAD).0
    };

    let mut grads = Grads::zeros_of(&params);
    let (logits, cache) = model
        .forward_train(&params, &mut Ctx::eval(), &batch)
        .expect("fits the length budget");
    let (_, _, dlogits) = softmax_xent(&logits, &batch.tgt_out, PAD);
    model.backward(&params, &mut grads, &batch, &cache, &dlogits);

    sweep_params(&mut params, &grads, &mut loss)
}

fn seq2seq_stack(rng: &mut ChaCha8Rng, arch: Arch) -> f64 {
    let mut cfg = ModelConfig::preset(arch, 8, 7);
    cfg.d_model = 6;
    cfg.heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.d_ffn = 8;
    cfg.dropout = 0.0;
    cfg.max_source_len = 16;
    cfg.max_target_len = 16;
    if arch == Arch::Babylon {
        cfg.lstm_hidden = 3;
        cfg.lstm_layers = 1;
        cfg.pool_k = 2;
    }

    let mut params = Params::<f64>::new();
    let model = TransformerSeq2Seq::build(&cfg, &mut params, rng);
    let batch = tiny_batch(rng, 8, 7);

    let mut loss = |p: &Params<f64>| -> f64 {
        let (logits, _) = model
            .forward_train(p, &mut Ctx::eval(), &batch)
            .expect("fits the length budget");
        softmax_xent(&logits, &batch.tgt_out, PAD).0
    };

    let mut grads = Grads::zeros_of(&params);
    let (logits, cache) = model
        .forward_train(&params, &mut Ctx::eval(), &batch)
        .expect("fits the length budget");
    let (_, _, dlogits) = softmax_xent(&logits, &batch.tgt_out, PAD);
    model.backward(&params, &mut grads, &batch, &cache, &dlogits);

    sweep_params(&mut params, &grads, &mut loss)
}
