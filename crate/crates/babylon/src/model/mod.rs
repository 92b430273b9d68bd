//! Sequence-to-sequence models over phoneme ids. Three architectures
//! share one calling convention: teacher-forced training logits with a
//! backward pass accumulating into a [`Grads`] store, and greedy
//! single-sequence decoding.
//!
//! The transformer-based pair differs only in the recurrent front end:
//! one pools a bidirectional LSTM stack before the encoder, the other
//! feeds embeddings straight in. Identity-front construction makes that
//! equivalence testable, so the two share [`TransformerSeq2Seq`].

mod config;
mod delphi;
mod pool;
mod seq2seq;
mod transformer;

pub use config::{Arch, ModelConfig};
pub use delphi::DelphiModel;
pub use pool::{pool_backward, pool_forward, pool_indices, pooled_len};
pub use seq2seq::TransformerSeq2Seq;
pub use transformer::{DecoderLayer, EncoderLayer};

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::nn::{softmax_xent, Ctx};
use crate::tensor::{Grads, Params, Scalar};
use crate::transcode::{BOS, EOS, PAD};

/// Time-major training batch. Source and target columns are framed id
/// sequences (`BOS .. EOS`) padded with `PAD`; the target is split into
/// the teacher-forcing input (`BOS` plus tokens) and the shifted output
/// (tokens plus `EOS`), so `tgt_lens[b]` counts the loss-bearing steps.
pub struct Batch {
    pub src: Array2<u32>,
    pub src_lens: Vec<usize>,
    pub tgt_in: Array2<u32>,
    pub tgt_out: Array2<u32>,
    pub tgt_lens: Vec<usize>,
}

impl Batch {
    /// Packs framed id sequences into padded grids. Every sequence must
    /// already carry its `BOS`/`EOS` frame.
    pub fn new(src: &[Vec<u32>], tgt: &[Vec<u32>]) -> Batch {
        assert_eq!(src.len(), tgt.len(), "source/target count mismatch");
        assert!(!src.is_empty(), "empty batch");
        for s in src.iter().chain(tgt.iter()) {
            debug_assert!(s.len() >= 2 && s[0] == BOS && *s.last().unwrap() == EOS);
        }
        let b = src.len();
        let ts = src.iter().map(Vec::len).max().unwrap();
        let tt = tgt.iter().map(|s| s.len() - 1).max().unwrap();

        let mut src_grid = Array2::from_elem((ts, b), PAD);
        for (bi, s) in src.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                src_grid[[t, bi]] = id;
            }
        }
        let mut tgt_in = Array2::from_elem((tt, b), PAD);
        let mut tgt_out = Array2::from_elem((tt, b), PAD);
        for (bi, s) in tgt.iter().enumerate() {
            for t in 0..s.len() - 1 {
                tgt_in[[t, bi]] = s[t];
                tgt_out[[t, bi]] = s[t + 1];
            }
        }
        Batch {
            src: src_grid,
            src_lens: src.iter().map(Vec::len).collect(),
            tgt_in,
            tgt_out,
            tgt_lens: tgt.iter().map(|s| s.len() - 1).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.src_lens.len()
    }

    /// Loss-bearing target tokens, the normalizer for batch loss.
    pub fn target_tokens(&self) -> usize {
        self.tgt_lens.iter().sum()
    }
}

/// Greedy decode result. `truncated` marks decodes that hit the length
/// cap before emitting `EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub ids: Vec<u32>,
    pub truncated: bool,
}

pub enum Model<S: Scalar> {
    Transformer(TransformerSeq2Seq<S>),
    Delphi(DelphiModel<S>),
}

impl<S: Scalar> Model<S> {
    /// Validates the config, then registers all parameters in `params`
    /// in a fixed order keyed by the architecture.
    pub fn build(
        cfg: &ModelConfig,
        params: &mut Params<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Model<S>, ModelError> {
        cfg.validate()?;
        Ok(match cfg.arch {
            Arch::Delphi => Model::Delphi(DelphiModel::build(cfg, params, rng)),
            Arch::Babylon | Arch::Camelot => {
                Model::Transformer(TransformerSeq2Seq::build(cfg, params, rng))
            }
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Transformer(m) => &m.cfg,
            Model::Delphi(m) => &m.cfg,
        }
    }

    /// Teacher-forced forward, token-level cross entropy against
    /// `tgt_out`, and a full backward pass accumulated into `grads`.
    /// Returns the summed loss and the token count so callers can fold
    /// chunks and normalize once.
    pub fn loss_and_grads(
        &self,
        params: &Params<S>,
        ctx: &mut Ctx,
        batch: &Batch,
        grads: &mut Grads<S>,
    ) -> Result<(f64, usize), ModelError> {
        match self {
            Model::Transformer(m) => {
                let (logits, cache) = m.forward_train(params, ctx, batch)?;
                let (loss, tokens, dlogits) = softmax_xent(&logits, &batch.tgt_out, PAD);
                m.backward(params, grads, batch, &cache, &dlogits);
                Ok((loss, tokens))
            }
            Model::Delphi(m) => {
                let (logits, cache) = m.forward_train(params, ctx, batch)?;
                let (loss, tokens, dlogits) = softmax_xent(&logits, &batch.tgt_out, PAD);
                m.backward(params, grads, batch, &cache, &dlogits);
                Ok((loss, tokens))
            }
        }
    }

    /// Teacher-forced logits without dropout, for validation loss.
    pub fn logits_eval(
        &self,
        params: &Params<S>,
        batch: &Batch,
    ) -> Result<Array3<S>, ModelError> {
        match self {
            Model::Transformer(m) => m.logits_eval(params, batch),
            Model::Delphi(m) => Ok(m.forward_train(params, &mut Ctx::eval(), batch)?.0),
        }
    }

    /// Greedy decode of one framed source sequence; returns unframed
    /// target ids.
    pub fn greedy_decode(
        &self,
        params: &Params<S>,
        src_ids: &[u32],
        max_len: usize,
    ) -> Result<Decoded, ModelError> {
        match self {
            Model::Transformer(m) => m.greedy_decode(params, src_ids, max_len),
            Model::Delphi(m) => m.greedy_decode(params, src_ids, max_len),
        }
    }

    /// Runs only the encoder on one sequence and discards the result, so
    /// the latency harness can time the encoder apart from decoding.
    pub fn encode_only(&self, params: &Params<S>, src_ids: &[u32]) -> Result<(), ModelError> {
        let mut ctx = Ctx::eval();
        let m = src_ids.len();
        let src = Array2::from_shape_fn((m, 1), |(t, _)| src_ids[t]);
        match self {
            Model::Transformer(model) => model.encode(params, &mut ctx, &src, &[m]).map(|_| ()),
            Model::Delphi(model) => model.encode(params, &mut ctx, &src, &[m]).map(|_| ()),
        }
    }
}
