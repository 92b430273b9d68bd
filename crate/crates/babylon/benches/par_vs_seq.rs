//! Compares the data-parallel worker path against the sequential
//! fallback on the two hot loops that use it: batched greedy decoding
//! and gradient accumulation. Both paths produce identical results; only
//! wall time differs. On a single-core host the parallel path may tie or
//! lose to the fallback, which is exactly what this suite makes visible.
//!
//! Run with `cargo bench --bench par_vs_seq`; add
//! `--no-default-features` to measure a build without the worker pool
//! compiled in at all (the `parallel` knob then has no effect).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use babylon::datagen::{generate, GenConfig, Sample, World};
use babylon::eval::evaluate;
use babylon::model::{Arch, Model, ModelConfig};
use babylon::tensor::Params;
use babylon::train::{train_with, TrainConfig};

fn small_world() -> (World, Vec<Sample>) {
    let world = World::builtin();
    let cfg = GenConfig {
        sample_count: 64,
        seed: 77,
        ..GenConfig::default()
    };
    let samples = generate(&cfg, &world).expect("builtin generation succeeds");
    (world, samples)
}

fn small_model(world: &World, samples: &[Sample]) -> (ModelConfig, Model<f32>, Params<f32>) {
    let src = babylon::phoneme::SourceVocab::new(world.alphabet.clone());
    let tgt = babylon::transcode::TranscodeVocab::from_menu(&world.menu);
    let mut cfg = ModelConfig::preset(Arch::Camelot, src.size(), tgt.len());
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.d_ffn = 32;
    cfg.dropout = 0.0;
    let max_src = samples
        .iter()
        .map(|s| s.clean.len().max(s.noisy.len()) + 2)
        .max()
        .unwrap();
    let max_tgt = samples
        .iter()
        .map(|s| s.gold.serialize().len() + 2)
        .max()
        .unwrap();
    cfg.max_source_len = max_src;
    cfg.max_target_len = max_tgt;
    let mut params = Params::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let model = Model::build(&cfg, &mut params, &mut rng).expect("valid config");
    (cfg, model, params)
}

fn bench_decode(c: &mut Criterion) {
    let (world, samples) = small_world();
    let (_cfg, model, params) = small_model(&world, &samples);
    let mut group = c.benchmark_group("batched_greedy_decode");
    group.sample_size(10);
    for (label, parallel) in [("sequential", false), ("parallel", true)] {
        group.bench_with_input(
            BenchmarkId::from_parameter(label),
            &parallel,
            |b, &parallel| {
                b.iter(|| {
                    evaluate(&world, &model, &params, &samples, false, parallel)
                        .expect("decoding succeeds")
                })
            },
        );
    }
    group.finish();
}

fn bench_train_steps(c: &mut Criterion) {
    let (world, samples) = small_world();
    let (model_cfg, _, _) = small_model(&world, &samples);
    let mut group = c.benchmark_group("gradient_accumulation_10_steps");
    group.sample_size(10);
    for (label, parallel) in [("sequential", false), ("parallel", true)] {
        let cfg = TrainConfig {
            epochs: 1,
            max_steps: Some(10),
            batch_size: 16,
            eval_every: 10_000,
            noisy: false,
            parallel,
            seed: 5,
            ..TrainConfig::default()
        };
        group.bench_with_input(
            BenchmarkId::from_parameter(label),
            &cfg,
            |b, cfg| {
                b.iter(|| {
                    train_with(&world, &model_cfg, &samples, &[], cfg, |_| {})
                        .expect("training succeeds")
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_decode, bench_train_steps);
criterion_main!(benches);
