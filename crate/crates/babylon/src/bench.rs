//! Single-threaded latency and memory harness.
//!
//! Latency is wall-clock time around full greedy inference (encode plus
//! decode), warmups excluded, reported per source-length bucket with
//! dispersion. Memory is analytic: parameter bytes are the serialized f32
//! payload, activation bytes are the peak of the forward pass's
//! sequence-shaped buffers at the configured maximum lengths. Both are
//! deterministic functions of the checkpoint, never OS-level samples.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::datagen::{read_dataset, Sample, World};
use crate::error::{BabylonError, DataError, ModelError};
use crate::model::{pooled_len, Arch, Model, ModelConfig};
use crate::par;
use crate::phoneme::SourceVocab;
use crate::tensor::{Params, Scalar};
use crate::transcode::TranscodeVocab;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub warmup: usize,
    pub measured: usize,
    /// Headline numbers require one thread; violations are errors, not
    /// silently corrected.
    pub single_thread: bool,
    /// Inclusive upper bounds on source phoneme count, ascending.
    pub buckets: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            checkpoint: PathBuf::new(),
            data: PathBuf::new(),
            warmup: 5,
            measured: 30,
            single_thread: true,
            buckets: vec![16, 32, 64, 128, 256, 512],
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut problems = Vec::new();
        if self.warmup < 5 {
            problems.push("warmup iterations must be at least 5".to_string());
        }
        if self.measured < 30 {
            problems.push("measured iterations must be at least 30 per bucket".to_string());
        }
        if self.buckets.is_empty() {
            problems.push("at least one length bucket is required".to_string());
        }
        if self.buckets.windows(2).any(|w| w[0] >= w[1]) {
            problems.push("buckets must be strictly ascending".to_string());
        }
        if self.buckets.first().is_some_and(|b| *b == 0) {
            problems.push("buckets must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::Config(problems.join("; ")))
        }
    }
}

/// Latency statistics for one source-length bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: usize,
    /// Timed iterations behind the statistics.
    pub n: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Mean phoneme count of the timed sequences.
    pub mean_len: f64,
    pub per_phoneme_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub rows: Vec<BucketRow>,
    pub param_bytes: u64,
    pub act_bytes: u64,
    /// Encoder self-attention multiplies at the configured maximum source
    /// length.
    pub encoder_attn_ops: u128,
}

pub const CSV_HEADER: &str =
    "model,bucket,n,mean_ms,median_ms,p95_ms,per_phoneme_ms,param_bytes,act_bytes";

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                self.model,
                r.bucket,
                r.n,
                r.mean_ms,
                r.median_ms,
                r.p95_ms,
                r.per_phoneme_ms,
                self.param_bytes,
                self.act_bytes,
            ));
        }
        out
    }
}

/// Multiplies spent in encoder self-attention for one sequence of m
/// phonemes: score and mixing matmuls summed over layers, projections and
/// the recurrent front end excluded. The pooled front end divides the
/// attention length, which is the whole point of comparing these counts.
/// Delphi's encoder has no self-attention.
pub fn encoder_attn_ops(cfg: &ModelConfig, m: usize) -> u128 {
    let len = match cfg.arch {
        Arch::Camelot => m,
        Arch::Babylon => pooled_len(m, cfg.pool_k),
        Arch::Delphi => return 0,
    } as u128;
    2 * cfg.enc_layers as u128 * len * len * cfg.d_model as u128
}

/// Serialized tensor payload size: checkpoints store every value as f32.
pub fn parameter_bytes<S: Scalar>(params: &Params<S>) -> u64 {
    4 * params.element_count() as u64
}

/// Peak bytes of sequence-shaped forward buffers at the configured maximum
/// lengths, assuming f32 activations and batch 1. The accounting counts
/// what the forward pass actually keeps live: embeddings, recurrent gate
/// and state tracks, attention scores, feed-forward intermediates, and
/// decode-time key/value caches. Per-step vectors and scalars are ignored.
pub fn activation_bytes(cfg: &ModelConfig) -> u64 {
    let f = 4u64;
    let m = cfg.max_source_len as u64;
    let t = cfg.max_target_len as u64;
    let d = cfg.d_model as u64;
    let h = cfg.lstm_hidden as u64;
    let layers = cfg.lstm_layers as u64;
    let heads = cfg.heads as u64;
    let ffn = cfg.d_ffn as u64;
    match cfg.arch {
        Arch::Delphi => {
            // Encoder: embedding plus per-layer gates [m,4h] and h track
            // [m,h]; attention keys [m,min(h,128)]; decoder holds per-layer
            // step states and one attention row.
            let attn = cfg.lstm_hidden.min(128) as u64;
            let enc = m * d + layers * m * 5 * h;
            let dec = m * attn + m + layers * 2 * h + t * 2 * h;
            (enc + dec) * f
        }
        Arch::Babylon | Arch::Camelot => {
            // Front end (Babylon only): per-layer forward and backward gate
            // and state tracks. Stack: embeddings plus per-layer attention
            // scores, Q/K/V, residuals, and the feed-forward intermediate at
            // the pooled length. Decode: per-layer self K/V over t and
            // cross K/V over the pooled length.
            let p = if cfg.arch == Arch::Babylon {
                pooled_len(cfg.max_source_len, cfg.pool_k) as u64
            } else {
                m
            };
            let front = if cfg.arch == Arch::Babylon {
                layers * m * 10 * h
            } else {
                0
            };
            let stack = p * d
                + cfg.enc_layers as u64 * (heads * p * p + 6 * p * d + p * ffn);
            let dec = cfg.dec_layers as u64 * (2 * t * d + 2 * p * d) + t * d;
            (m * d + front + stack + dec) * f
        }
    }
}

/// Loads a checkpoint and reports (parameter bytes, activation bytes).
pub fn measure_memory(path: &std::path::Path) -> Result<(u64, u64), BabylonError> {
    let (meta, params) = checkpoint::load(path)?;
    Ok((parameter_bytes(&params), activation_bytes(&meta.config)))
}

fn stats(ms: &mut [f64]) -> (f64, f64, f64) {
    ms.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = ms.len();
    let mean = ms.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        ms[n / 2]
    } else {
        0.5 * (ms[n / 2 - 1] + ms[n / 2])
    };
    let p95 = ms[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1];
    (mean, median, p95)
}

/// Times full greedy inference per bucket over an in-memory dataset.
/// Samples land in the first bucket whose bound covers their phoneme
/// count; longer samples are skipped. Iterations cycle through a bucket's
/// samples in dataset order, so runs are reproducible up to clock noise.
pub fn bench_model(
    model: &Model<f32>,
    params: &Params<f32>,
    samples: &[Sample],
    src_vocab: &SourceVocab,
    cfg: &BenchConfig,
) -> Result<BenchReport, BabylonError> {
    cfg.validate().map_err(BabylonError::Data)?;
    if cfg.single_thread && par::inside_worker_pool() {
        return Err(ModelError::ThreadModeViolation.into());
    }
    let model_cfg = model.config();
    let max_len = model_cfg.max_target_len;
    let mut grouped: Vec<Vec<(Vec<u32>, usize)>> = vec![Vec::new(); cfg.buckets.len()];
    for s in samples {
        let len = s.noisy.len();
        if let Some(slot) = cfg.buckets.iter().position(|b| len <= *b) {
            let framed = src_vocab.encode_framed(&s.noisy);
            if framed.len() <= model_cfg.max_source_len {
                grouped[slot].push((framed, len));
            }
        }
    }
    let mut rows = Vec::new();
    for (slot, bucket) in grouped.iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        for i in 0..cfg.warmup {
            let (src, _) = &bucket[i % bucket.len()];
            model.greedy_decode(params, src, max_len)?;
        }
        let mut ms = Vec::with_capacity(cfg.measured);
        let mut len_sum = 0usize;
        for i in 0..cfg.measured {
            let (src, len) = &bucket[i % bucket.len()];
            let t0 = Instant::now();
            model.greedy_decode(params, src, max_len)?;
            ms.push(t0.elapsed().as_secs_f64() * 1e3);
            len_sum += len;
        }
        let (mean, median, p95) = stats(&mut ms);
        let mean_len = len_sum as f64 / cfg.measured as f64;
        rows.push(BucketRow {
            bucket: cfg.buckets[slot],
            n: cfg.measured,
            mean_ms: mean,
            median_ms: median,
            p95_ms: p95,
            mean_len,
            per_phoneme_ms: mean / mean_len,
        });
    }
    if rows.is_empty() {
        return Err(BabylonError::Data(DataError::Config(
            "no samples fall inside the requested length buckets".into(),
        )));
    }
    Ok(BenchReport {
        model: model_cfg.arch.as_str().to_string(),
        rows,
        param_bytes: parameter_bytes(params),
        act_bytes: activation_bytes(model_cfg),
        encoder_attn_ops: encoder_attn_ops(model_cfg, model_cfg.max_source_len),
    })
}

/// File-level entry point: loads the checkpoint and dataset, refuses
/// vocabulary drift, and times the restored model.
pub fn measure_latency(cfg: &BenchConfig, world: &World) -> Result<BenchReport, BabylonError> {
    cfg.validate().map_err(BabylonError::Data)?;
    let (meta, loaded) = checkpoint::load(&cfg.checkpoint)?;
    let src_vocab = SourceVocab::new(world.alphabet.clone());
    let src_symbols: Vec<String> = (0..src_vocab.size() as u32)
        .map(|i| src_vocab.id_to_symbol(i).expect("dense ids").to_string())
        .collect();
    checkpoint::check_vocab(&meta, "source", &src_symbols)?;
    let tgt_vocab = TranscodeVocab::from_menu(&world.menu);
    checkpoint::check_vocab(&meta, "target", tgt_vocab.tokens())?;
    let (model, params) = checkpoint::restore_model(&meta, loaded)?;
    let samples = read_dataset(&cfg.data, world).map_err(BabylonError::Data)?;
    bench_model(&model, &params, &samples, &src_vocab, cfg)
}

/// Median milliseconds to encode one synthetic sequence of `len` phonemes,
/// decoding excluded. Used to compare encoder scaling across models.
pub fn time_encoder(
    model: &Model<f32>,
    params: &Params<f32>,
    len: usize,
    warmup: usize,
    iters: usize,
) -> Result<f64, BabylonError> {
    let vocab = model.config().src_vocab as u32;
    let ids: Vec<u32> = (0..len as u32).map(|i| 4 + i % (vocab - 4)).collect();
    for _ in 0..warmup {
        model.encode_only(params, &ids)?;
    }
    let mut ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        model.encode_only(params, &ids)?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let (_, median, _) = stats(&mut ms);
    Ok(median)
}
