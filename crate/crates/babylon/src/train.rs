//! Training loop: teacher-forced cross entropy, AdamW with epoch-boundary
//! learning-rate decay, length-bucketed batches, and periodic greedy
//! exact-match probes on a held-out set.
//!
//! Batches are split into fixed-size chunks ([`par::GRAD_CHUNK`]) whose
//! gradients are folded in chunk order, so enabling the `parallel`
//! feature changes throughput but never the resulting weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Sample, World};
use crate::error::{BabylonError, DataError, ModelError};
use crate::model::{Batch, Model, ModelConfig};
use crate::nn::Ctx;
use crate::optim::AdamW;
use crate::par;
use crate::phoneme::SourceVocab;
use crate::tensor::{Grads, Params};
use crate::transcode::TranscodeVocab;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate every `lr_step_epochs`.
    pub gamma: f64,
    pub lr_step_epochs: usize,
    pub clip: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Optional global step cap, taking precedence over `epochs`.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Steps between held-out exact-match probes; 0 disables probing.
    pub eval_every: usize,
    /// Probe size cap; the probe uses a fixed prefix of the held-out set.
    pub eval_samples: usize,
    /// Stop once a probe reaches this exact-match fraction.
    pub early_stop_em: Option<f64>,
    /// Train on the noise-corrupted phoneme column instead of the clean one.
    pub noisy: bool,
    /// Compute gradient chunks on worker threads (fold order is fixed).
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 128,
            lr: 3e-4,
            gamma: 0.1,
            lr_step_epochs: 6,
            clip: 0.05,
            weight_decay: 0.0,
            epochs: 10,
            max_steps: None,
            seed: 0,
            eval_every: 100,
            eval_samples: 300,
            early_stop_em: None,
            noisy: true,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            problems.push("lr must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            problems.push("gamma must be in (0, 1]");
        }
        if self.lr_step_epochs == 0 {
            problems.push("lr_step_epochs must be positive");
        }
        if !(self.clip > 0.0) {
            problems.push("clip must be positive");
        }
        if self.weight_decay < 0.0 {
            problems.push("weight_decay must be non-negative");
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            problems.push("either epochs or max_steps must be positive");
        }
        if let Some(em) = self.early_stop_em {
            if !(0.0..=1.0).contains(&em) {
                problems.push("early_stop_em must be in [0, 1]");
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::Config(problems.join("; ")))
        }
    }
}

/// One loss-curve record; the CSV column order is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub const CURVE_HEADER: &str = "epoch,step,loss,lr";

impl CurvePoint {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.step, self.loss, self.lr)
    }
}

pub fn write_curve(path: &std::path::Path, curve: &[CurvePoint]) -> Result<(), DataError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(w, "{}", p.csv_line())?;
    }
    w.flush()?;
    Ok(())
}

pub struct TrainRun {
    pub params: Params<f32>,
    pub curve: Vec<CurvePoint>,
    /// Last probe result, if probing ran.
    pub val_em: Option<f64>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// A sample encoded to framed id sequences.
pub struct Encoded {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

/// Encodes one sample: framed phoneme ids on the chosen column, framed
/// transcode token ids. Gold lines tokenize against the same menu the
/// vocabulary was built from, so encoding cannot fail.
pub fn encode_sample(
    s: &Sample,
    noisy: bool,
    world: &World,
    src_vocab: &SourceVocab,
    tgt_vocab: &TranscodeVocab,
) -> Encoded {
    let seq = if noisy { &s.noisy } else { &s.clean };
    let src = src_vocab.encode_framed(seq);
    let tokens = crate::transcode::tokenize(&s.gold.to_line(), &world.menu)
        .expect("gold lines are well formed");
    let tgt = tgt_vocab
        .encode_framed(&tokens)
        .expect("gold tokens are in the closed vocabulary");
    Encoded { src, tgt }
}

/// Length-bucketed batch index lists: samples sorted by source length,
/// cut into consecutive batches. Padding waste stays low and the layout
/// is deterministic; epoch-level shuffling permutes whole batches.
fn bucketed_batches(encoded: &[Encoded], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.sort_by_key(|&i| (encoded[i].src.len(), i));
    order
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect()
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    fn splitmix64(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(a).wrapping_add(splitmix64(b)).wrapping_add(splitmix64(c).rotate_left(17))
}

fn batch_of(encoded: &[Encoded], idx: &[usize]) -> Batch {
    let src: Vec<Vec<u32>> = idx.iter().map(|&i| encoded[i].src.clone()).collect();
    let tgt: Vec<Vec<u32>> = idx.iter().map(|&i| encoded[i].tgt.clone()).collect();
    Batch::new(&src, &tgt)
}

/// Greedy exact-match fraction over encoded samples: predicted unframed
/// ids must equal the gold unframed ids. Truncated decodes are misses.
pub fn exact_match_ids(
    model: &Model<f32>,
    params: &Params<f32>,
    probe: &[Encoded],
    max_len: usize,
    parallel: bool,
) -> f64 {
    if probe.is_empty() {
        return 0.0;
    }
    let hits: Vec<bool> = par::map_slice(probe, parallel, |e| {
        match model.greedy_decode(params, &e.src, max_len) {
            Ok(d) => !d.truncated && d.ids == e.tgt[1..e.tgt.len() - 1],
            Err(_) => false,
        }
    });
    hits.iter().filter(|&&h| h).count() as f64 / probe.len() as f64
}

pub fn train(
    world: &World,
    model_cfg: &ModelConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainRun, BabylonError> {
    train_with(world, model_cfg, train_samples, val_samples, cfg, |_| {})
}

/// Progress notifications emitted while training runs.
#[derive(Debug, Clone, Copy)]
pub enum TrainEvent {
    Step { epoch: usize, step: usize, loss: f64, lr: f64 },
    Probe { step: usize, exact_match: f64 },
}

/// [`train`] with a progress callback, for live reporting.
pub fn train_with(
    world: &World,
    model_cfg: &ModelConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent),
) -> Result<TrainRun, BabylonError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_samples.is_empty() {
        return Err(DataError::Config("training set is empty".into()).into());
    }
    let src_vocab = SourceVocab::new(world.alphabet.clone());
    let tgt_vocab = TranscodeVocab::from_menu(&world.menu);
    let encoded: Vec<Encoded> = train_samples
        .iter()
        .map(|s| encode_sample(s, cfg.noisy, world, &src_vocab, &tgt_vocab))
        .collect();
    for (i, e) in encoded.iter().enumerate() {
        if e.src.len() > model_cfg.max_source_len {
            return Err(ModelError::SourceTooLong {
                len: e.src.len(),
                max: model_cfg.max_source_len,
            }
            .into());
        }
        if e.tgt.len() - 1 > model_cfg.max_target_len {
            return Err(DataError::Config(format!(
                "sample {i}: target of {} tokens exceeds the model maximum {}",
                e.tgt.len() - 1,
                model_cfg.max_target_len
            ))
            .into());
        }
    }
    let probe: Vec<Encoded> = val_samples
        .iter()
        .take(cfg.eval_samples)
        .map(|s| encode_sample(s, cfg.noisy, world, &src_vocab, &tgt_vocab))
        .collect();

    let mut params: Params<f32> = Params::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::build(model_cfg, &mut params, &mut rng)?;
    let mut opt = AdamW::new(&params, cfg.lr, cfg.weight_decay, cfg.clip);

    let batches = bucketed_batches(&encoded, cfg.batch_size);
    let mut curve = Vec::new();
    let mut val_em = None;
    let mut step = 0usize;
    let mut stopped_early = false;

    'epochs: for epoch in 0..cfg.epochs.max(1) {
        if epoch > 0 && epoch % cfg.lr_step_epochs == 0 {
            opt.set_lr(opt.lr() * cfg.gamma);
        }
        let mut order: Vec<usize> = (0..batches.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 1));
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for &bi in &order {
            let idx = &batches[bi];
            let chunks: Vec<&[usize]> = idx.chunks(par::GRAD_CHUNK).collect();
            let results: Vec<(f64, usize, Grads<f32>)> =
                par::map_indexed(chunks.len(), cfg.parallel, |ci| {
                    let batch = batch_of(&encoded, chunks[ci]);
                    let mut grads = Grads::zeros_of(&params);
                    let mut ctx = Ctx::train(mix(cfg.seed, step as u64, ci as u64 + 2));
                    let (loss, tokens) = model
                        .loss_and_grads(&params, &mut ctx, &batch, &mut grads)
                        .expect("batch respects the model length limits");
                    (loss, tokens, grads)
                });
            let mut grads: Option<Grads<f32>> = None;
            let mut loss_sum = 0.0;
            let mut tokens = 0usize;
            for (l, t, g) in results {
                loss_sum += l;
                tokens += t;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.accumulate(&g),
                }
            }
            let mut grads = grads.expect("at least one chunk per batch");
            let loss = loss_sum / tokens as f64;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { step, loss }.into());
            }
            grads.scale(1.0 / tokens as f32);
            opt.step(&mut params, &mut grads)?;
            step += 1;
            curve.push(CurvePoint {
                epoch,
                step,
                loss,
                lr: opt.lr(),
            });
            on_event(TrainEvent::Step {
                epoch,
                step,
                loss,
                lr: opt.lr(),
            });

            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !probe.is_empty() {
                let em = exact_match_ids(
                    &model,
                    &params,
                    &probe,
                    model_cfg.max_target_len,
                    cfg.parallel,
                );
                val_em = Some(em);
                on_event(TrainEvent::Probe {
                    step,
                    exact_match: em,
                });
                if cfg.early_stop_em.is_some_and(|t| em >= t) {
                    stopped_early = true;
                    break 'epochs;
                }
            }
            if cfg.max_steps.is_some_and(|cap| step >= cap) {
                stopped_early = true;
                break 'epochs;
            }
        }
    }

    Ok(TrainRun {
        params,
        curve,
        val_em,
        steps: step,
        stopped_early,
    })
}

/// Stable one-line description of a finished run, stored in checkpoints
/// and echoed by the inspect command.
pub fn fingerprint(cfg: &TrainConfig, model_cfg: &ModelConfig, samples: usize, steps: usize) -> String {
    format!(
        "arch={} seed={} samples={} steps={} batch={} lr={} gamma={} step_epochs={} clip={} noisy={}",
        model_cfg.arch.as_str(),
        cfg.seed,
        samples,
        steps,
        cfg.batch_size,
        cfg.lr,
        cfg.gamma,
        cfg.lr_step_epochs,
        cfg.clip,
        cfg.noisy,
    )
}

/// Validation cross entropy per token, for curve sanity checks.
pub fn eval_loss(
    model: &Model<f32>,
    params: &Params<f32>,
    encoded: &[Encoded],
    batch_size: usize,
) -> f64 {
    let mut loss_sum = 0.0;
    let mut tokens = 0usize;
    let order: Vec<usize> = (0..encoded.len()).collect();
    for idx in order.chunks(batch_size) {
        let batch = batch_of(encoded, idx);
        let logits = model
            .logits_eval(params, &batch)
            .expect("encoded samples fit the model");
        let (l, t, _) = crate::nn::softmax_xent(&logits, &batch.tgt_out, crate::transcode::PAD);
        loss_sum += l;
        tokens += t;
    }
    loss_sum / tokens.max(1) as f64
}

/// Decodes one framed source line to transcode text.
pub fn decode_to_line(
    model: &Model<f32>,
    params: &Params<f32>,
    src: &[u32],
    tgt_vocab: &TranscodeVocab,
    max_len: usize,
) -> Result<(String, bool), BabylonError> {
    let d = model.greedy_decode(params, src, max_len)?;
    let mut words = Vec::with_capacity(d.ids.len());
    for id in &d.ids {
        words.push(tgt_vocab.token(*id).unwrap_or("<unk>"));
    }
    Ok((words.join(" "), d.truncated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};
    use crate::model::Arch;

    fn tiny_world_data(n: usize) -> (World, Vec<Sample>) {
        let world = World::builtin();
        let cfg = GenConfig {
            sample_count: n,
            ..GenConfig::default()
        };
        let samples = generate(&cfg, &world).unwrap();
        (world, samples)
    }

    fn tiny_model_cfg(world: &World, arch: Arch) -> ModelConfig {
        let src = SourceVocab::new(world.alphabet.clone()).size();
        let tgt = TranscodeVocab::from_menu(&world.menu).len();
        let mut cfg = ModelConfig::preset(arch, src, tgt);
        cfg.d_model = 16;
        cfg.heads = 2;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1;
        cfg.d_ffn = 32;
        cfg.lstm_hidden = 8;
        cfg.lstm_layers = if arch == Arch::Delphi { 2 } else { 1 };
        cfg
    }

    #[test]
    fn initial_loss_is_log_vocab() {
        let (world, samples) = tiny_world_data(32);
        let model_cfg = tiny_model_cfg(&world, Arch::Camelot);
        let cfg = TrainConfig {
            epochs: 1,
            max_steps: Some(1),
            batch_size: 32,
            eval_every: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = train(&world, &model_cfg, &samples, &[], &cfg).unwrap();
        let expected = (model_cfg.tgt_vocab as f64).ln();
        let got = run.curve[0].loss;
        assert!(
            (got - expected).abs() / expected < 0.05,
            "first loss {got} should be within 5% of ln(V) = {expected}"
        );
    }

    #[test]
    fn same_seed_reproduces_the_curve() {
        let (world, samples) = tiny_world_data(40);
        let model_cfg = tiny_model_cfg(&world, Arch::Babylon);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            eval_every: 0,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&world, &model_cfg, &samples, &[], &cfg).unwrap();
        let b = train(&world, &model_cfg, &samples, &[], &cfg).unwrap();
        assert_eq!(a.curve, b.curve, "training must be deterministic");
        assert_eq!(a.params.tensors(), b.params.tensors());
    }

    #[test]
    fn loss_decreases_on_a_small_set() {
        let (world, samples) = tiny_world_data(48);
        for arch in [Arch::Babylon, Arch::Camelot, Arch::Delphi] {
            let model_cfg = tiny_model_cfg(&world, arch);
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 16,
                lr: 3e-3,
                eval_every: 0,
                seed: 7,
                ..TrainConfig::default()
            };
            let run = train(&world, &model_cfg, &samples, &[], &cfg).unwrap();
            let per_epoch: Vec<f64> = (0..3)
                .map(|e| {
                    let pts: Vec<&CurvePoint> =
                        run.curve.iter().filter(|p| p.epoch == e).collect();
                    pts.iter().map(|p| p.loss).sum::<f64>() / pts.len() as f64
                })
                .collect();
            assert!(
                per_epoch[2] < per_epoch[0],
                "{arch:?}: epoch losses {per_epoch:?} should trend down"
            );
        }
    }

    #[test]
    fn lr_schedule_decays_at_epoch_boundaries() {
        let (world, samples) = tiny_world_data(8);
        let model_cfg = tiny_model_cfg(&world, Arch::Camelot);
        let cfg = TrainConfig {
            epochs: 4,
            lr_step_epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            gamma: 0.1,
            eval_every: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let run = train(&world, &model_cfg, &samples, &[], &cfg).unwrap();
        let lr_of = |e: usize| {
            run.curve
                .iter()
                .find(|p| p.epoch == e)
                .map(|p| p.lr)
                .unwrap()
        };
        assert!((lr_of(0) - 1e-3).abs() < 1e-12);
        assert!((lr_of(1) - 1e-3).abs() < 1e-12);
        assert!((lr_of(2) - 1e-4).abs() < 1e-15);
        assert!((lr_of(3) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn curve_csv_round_trips_the_column_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = vec![CurvePoint {
            epoch: 0,
            step: 1,
            loss: 4.25,
            lr: 0.0003,
        }];
        write_curve(&path, &curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,step,loss,lr"));
        assert_eq!(lines.next(), Some("0,1,4.25,0.0003"));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = TrainConfig::default();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.gamma = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        cfg.max_steps = None;
        assert!(cfg.validate().is_err());
    }
}
