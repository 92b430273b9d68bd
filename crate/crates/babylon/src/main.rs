//! Command-line entry point tying the pipeline together. Payload goes to
//! stdout; the resolved configuration and progress go to stderr, so every
//! subcommand is cleanly pipeable.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use babylon::bench::{self, BenchConfig};
use babylon::checkpoint::{self, CheckpointMeta};
use babylon::datagen::{
    generate, read_dataset, split, write_dataset, DatasetStats, GenConfig, Sample, World,
};
use babylon::error::{BabylonError, DataError};
use babylon::eval::evaluate;
use babylon::model::{pool_indices, Arch, Model, ModelConfig};
use babylon::phoneme::{Alphabet, ConfusionClasses, Lexicon, NoiseModel, SourceVocab};
use babylon::tensor::Params;
use babylon::train::{fingerprint, train_with, TrainConfig, TrainEvent};
use babylon::transcode::TranscodeVocab;

#[derive(Parser)]
#[command(
    name = "babylon",
    version,
    about = "Phoneme-to-transcode intent translation at desk scale"
)]
struct Cli {
    /// Seed for anything stochastic in the chosen subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print progress detail while running.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset and write train/val/test splits.
    Generate(GenerateArgs),
    /// Train a model and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint against a dataset file.
    Evaluate(EvaluateArgs),
    /// Translate phoneme lines (or word lines) into transcode lines.
    Translate(TranslateArgs),
    /// Time greedy inference on a dataset and report memory footprints.
    Bench(BenchArgs),
    /// Print a checkpoint summary.
    Inspect(InspectArgs),
}

/// Domain files; the bundled menu, alphabet, and lexicon are the defaults.
#[derive(Args)]
struct WorldArgs {
    /// Menu TOML.
    #[arg(long)]
    menu: Option<PathBuf>,
    /// Phoneme inventory, one symbol per line.
    #[arg(long)]
    alphabet: Option<PathBuf>,
    /// Pronunciation lexicon TSV.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl WorldArgs {
    fn load(&self) -> Result<World, BabylonError> {
        if self.menu.is_none() && self.alphabet.is_none() && self.lexicon.is_none() {
            return Ok(World::builtin());
        }
        let menu = match &self.menu {
            Some(p) => babylon::menu::Menu::load(p).map_err(BabylonError::Data)?,
            None => babylon::menu::Menu::builtin(),
        };
        let alphabet = match &self.alphabet {
            Some(p) => Alphabet::load(p).map_err(BabylonError::Data)?,
            None => Alphabet::builtin(),
        };
        let lexicon = match &self.lexicon {
            Some(p) => Lexicon::load(p, &alphabet).map_err(BabylonError::Data)?,
            None => Lexicon::builtin(&alphabet),
        };
        let classes = ConfusionClasses::standard(&alphabet);
        Ok(World {
            menu,
            alphabet,
            lexicon,
            classes,
        })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Samples to generate before splitting.
    #[arg(long)]
    count: usize,
    /// Train/val/test fractions, summing to 1.
    #[arg(long, default_value = "0.90,0.05,0.05")]
    split: String,
    /// Output directory for train.tsv, val.tsv, and test.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Phoneme substitution rate for the noisy column.
    #[arg(long)]
    sub_rate: Option<f64>,
    /// Phoneme insertion rate for the noisy column.
    #[arg(long)]
    ins_rate: Option<f64>,
    /// Phoneme deletion rate for the noisy column.
    #[arg(long)]
    del_rate: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Directory holding train.tsv and, optionally, val.tsv.
    #[arg(long)]
    data: PathBuf,
    /// Architecture: babylon, camelot, or delphi.
    #[arg(long)]
    arch: String,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV output path.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Train on the clean phoneme column instead of the noisy one.
    #[arg(long)]
    clean: bool,
    /// Compute gradient chunks on worker threads (same weights either way).
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr_step_epochs: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
    /// Stop once a validation probe reaches this exact-match fraction.
    #[arg(long)]
    early_stop_em: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    d_ffn: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    lstm_layers: Option<usize>,
    #[arg(long)]
    pool_k: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Maximum framed source length; defaults to the dataset maximum.
    #[arg(long)]
    max_source_len: Option<usize>,
    /// Maximum target length; defaults to the dataset maximum.
    #[arg(long)]
    max_target_len: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset TSV to score.
    #[arg(long)]
    data: PathBuf,
    /// Score the clean phoneme column instead of the noisy one.
    #[arg(long)]
    clean: bool,
    /// Decode samples on worker threads (same records either way).
    #[arg(long)]
    parallel: bool,
    /// Also write the summary to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one JSON record per sample to this file.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Treat input as whitespace-separated words and route them through
    /// the pronunciation lexicon.
    #[arg(long)]
    words: bool,
    /// Print the pooled index set and decode steps to stderr.
    #[arg(long)]
    explain: bool,
    /// Input lines; stdin is read when none are given.
    input: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset TSV supplying the timed sources.
    #[arg(long)]
    data: PathBuf,
    /// Enforce one thread (the default; headline numbers require it).
    #[arg(long, conflicts_with = "multi_thread")]
    single_thread: bool,
    /// Allow worker threads; numbers are then not headline-comparable.
    #[arg(long)]
    multi_thread: bool,
    /// Inclusive source-length bucket bounds, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128, 256, 512])]
    buckets: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 30)]
    measured: usize,
    /// Also write the CSV report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match &cli.cmd {
        Cmd::Generate(args) => cmd_generate(&cli, args),
        Cmd::Train(args) => cmd_train(&cli, args),
        Cmd::Evaluate(args) => cmd_evaluate(&cli, args),
        Cmd::Translate(args) => cmd_translate(&cli, args),
        Cmd::Bench(args) => cmd_bench(&cli, args),
        Cmd::Inspect(args) => cmd_inspect(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn log_config(value: serde_json::Value) {
    eprintln!("config: {value}");
}

fn parse_fractions(text: &str) -> Result<(f64, f64, f64), BabylonError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| BabylonError::Data(DataError::Config(format!("bad split `{text}`: {e}"))))?;
    if parts.len() != 3 {
        return Err(BabylonError::Data(DataError::Config(format!(
            "split `{text}` must have exactly three fractions"
        ))));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> Result<(), BabylonError> {
    let world = args.world.load()?;
    let mut cfg = GenConfig {
        sample_count: args.count,
        seed: cli.seed,
        ..GenConfig::default()
    };
    if args.sub_rate.is_some() || args.ins_rate.is_some() || args.del_rate.is_some() {
        cfg.noise = NoiseModel::new(
            args.sub_rate.unwrap_or(cfg.noise.p_sub),
            args.ins_rate.unwrap_or(cfg.noise.p_ins),
            args.del_rate.unwrap_or(cfg.noise.p_del),
        )
        .map_err(BabylonError::Phoneme)?;
    }
    let fractions = parse_fractions(&args.split)?;
    log_config(serde_json::json!({
        "command": "generate",
        "out": args.out,
        "split": [fractions.0, fractions.1, fractions.2],
        "generator": &cfg,
    }));
    let samples = generate(&cfg, &world)?;
    if cli.verbose {
        let stats = DatasetStats::compute(&samples);
        eprintln!(
            "generated {} samples: mean {:.1} words, max {} words, mean clean length {:.1}, max clean length {}",
            stats.count, stats.mean_words, stats.max_words, stats.mean_clean_len, stats.max_clean_len
        );
        for (tag, count) in &stats.tag_counts {
            eprintln!("tag {tag}: {count}");
        }
    }
    let (train, val, test) = split(samples, fractions, cli.seed).map_err(BabylonError::Data)?;
    std::fs::create_dir_all(&args.out)?;
    for (name, set) in [("train.tsv", &train), ("val.tsv", &val), ("test.tsv", &test)] {
        write_dataset(&args.out.join(name), set, &world).map_err(BabylonError::Data)?;
        eprintln!("wrote {} ({} samples)", args.out.join(name).display(), set.len());
    }
    Ok(())
}

/// Framed-source and target length ceilings implied by a sample set.
fn data_limits(samples: &[Sample]) -> (usize, usize) {
    let mut max_src = 0usize;
    let mut max_tgt = 0usize;
    for s in samples {
        max_src = max_src.max(s.clean.len().max(s.noisy.len()) + 2);
        max_tgt = max_tgt.max(s.gold.serialize().len() + 2);
    }
    (max_src, max_tgt)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), BabylonError> {
    let world = args.world.load()?;
    let arch = Arch::from_str(&args.arch).map_err(BabylonError::Model)?;
    let train_set = read_dataset(&args.data.join("train.tsv"), &world).map_err(BabylonError::Data)?;
    let val_path = args.data.join("val.tsv");
    let val_set = if val_path.exists() {
        read_dataset(&val_path, &world).map_err(BabylonError::Data)?
    } else {
        Vec::new()
    };

    let src_vocab = SourceVocab::new(world.alphabet.clone());
    let tgt_vocab = TranscodeVocab::from_menu(&world.menu);
    let mut model_cfg = ModelConfig::preset(arch, src_vocab.size(), tgt_vocab.len());
    let (data_src, data_tgt) = {
        let (a, b) = data_limits(&train_set);
        let (c, d) = data_limits(&val_set);
        (a.max(c), b.max(d))
    };
    model_cfg.max_source_len = args.max_source_len.unwrap_or(data_src);
    model_cfg.max_target_len = args.max_target_len.unwrap_or(data_tgt);
    if let Some(v) = args.d_model {
        model_cfg.d_model = v;
    }
    if let Some(v) = args.heads {
        model_cfg.heads = v;
    }
    if let Some(v) = args.enc_layers {
        model_cfg.enc_layers = v;
    }
    if let Some(v) = args.dec_layers {
        model_cfg.dec_layers = v;
    }
    if let Some(v) = args.d_ffn {
        model_cfg.d_ffn = v;
    }
    if let Some(v) = args.lstm_hidden {
        model_cfg.lstm_hidden = v;
    }
    if let Some(v) = args.lstm_layers {
        model_cfg.lstm_layers = v;
    }
    if let Some(v) = args.pool_k {
        model_cfg.pool_k = v;
    }
    if let Some(v) = args.dropout {
        model_cfg.dropout = v;
    }

    let mut cfg = TrainConfig {
        seed: cli.seed,
        noisy: !args.clean,
        parallel: args.parallel,
        ..TrainConfig::default()
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.lr_step_epochs {
        cfg.lr_step_epochs = v;
    }
    if let Some(v) = args.clip {
        cfg.clip = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.eval_samples {
        cfg.eval_samples = v;
    }
    cfg.max_steps = args.max_steps;
    cfg.early_stop_em = args.early_stop_em;

    log_config(serde_json::json!({
        "command": "train",
        "data": args.data,
        "out": args.out,
        "model": &model_cfg,
        "train": &cfg,
    }));

    let verbose = cli.verbose;
    let run = train_with(&world, &model_cfg, &train_set, &val_set, &cfg, |event| {
        if !verbose {
            return;
        }
        match event {
            TrainEvent::Step { epoch, step, loss, lr } => {
                if step % 50 == 0 {
                    eprintln!("epoch {epoch} step {step}: loss {loss:.4} lr {lr:.2e}");
                }
            }
            TrainEvent::Probe { step, exact_match } => {
                eprintln!("probe at step {step}: exact match {exact_match:.4}");
            }
        }
    })?;

    let meta = CheckpointMeta::new(
        model_cfg.clone(),
        &src_vocab,
        &tgt_vocab,
        fingerprint(&cfg, &model_cfg, train_set.len(), run.steps),
    );
    checkpoint::save(&args.out, &run.params, &meta)?;
    if let Some(curve_path) = &args.curve {
        babylon::train::write_curve(curve_path, &run.curve).map_err(BabylonError::Data)?;
    }
    let final_loss = run.curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
    eprintln!(
        "trained {} steps, final loss {:.4}, probe exact match {}, stopped early: {}",
        run.steps,
        final_loss,
        run.val_em
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        run.stopped_early,
    );
    eprintln!("saved checkpoint to {}", args.out.display());
    Ok(())
}

/// Loads a checkpoint and refuses vocabulary drift against the live world.
fn load_model(
    path: &Path,
    world: &World,
) -> Result<(CheckpointMeta, Model<f32>, Params<f32>, SourceVocab, TranscodeVocab), BabylonError> {
    let (meta, loaded) = checkpoint::load(path)?;
    let src_vocab = SourceVocab::new(world.alphabet.clone());
    let src_symbols: Vec<String> = (0..src_vocab.size() as u32)
        .map(|i| src_vocab.id_to_symbol(i).expect("dense ids").to_string())
        .collect();
    checkpoint::check_vocab(&meta, "source", &src_symbols)?;
    let tgt_vocab = TranscodeVocab::from_menu(&world.menu);
    checkpoint::check_vocab(&meta, "target", tgt_vocab.tokens())?;
    let (model, params) = checkpoint::restore_model(&meta, loaded)?;
    Ok((meta, model, params, src_vocab, tgt_vocab))
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<(), BabylonError> {
    let world = args.world.load()?;
    log_config(serde_json::json!({
        "command": "evaluate",
        "checkpoint": args.checkpoint,
        "data": args.data,
        "column": if args.clean { "clean" } else { "noisy" },
        "parallel": args.parallel,
        "seed": cli.seed,
    }));
    let (_meta, model, params, _src, _tgt) = load_model(&args.checkpoint, &world)?;
    let samples = read_dataset(&args.data, &world).map_err(BabylonError::Data)?;
    let report = evaluate(&world, &model, &params, &samples, !args.clean, args.parallel)?;
    print!("{}", report.to_text());
    if let Some(path) = &args.out {
        std::fs::write(path, report.to_text())?;
    }
    if let Some(path) = &args.records {
        std::fs::write(path, report.records_jsonl())?;
    }
    Ok(())
}

fn cmd_translate(cli: &Cli, args: &TranslateArgs) -> Result<(), BabylonError> {
    let world = args.world.load()?;
    log_config(serde_json::json!({
        "command": "translate",
        "checkpoint": args.checkpoint,
        "words": args.words,
        "explain": args.explain,
        "seed": cli.seed,
    }));
    let (meta, model, params, src_vocab, tgt_vocab) = load_model(&args.checkpoint, &world)?;
    let lines: Vec<String> = if args.input.is_empty() {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        buf.lines().map(|l| l.to_string()).collect()
    } else {
        args.input.clone()
    };
    for line in &lines {
        let seq = if args.words {
            world.lexicon.transcribe(line).map_err(BabylonError::Phoneme)?
        } else {
            world.alphabet.parse_seq(line).map_err(BabylonError::Phoneme)?
        };
        let src = src_vocab.encode_framed(&seq);
        let decoded = model.greedy_decode(&params, &src, meta.config.max_target_len)?;
        if args.explain {
            let indices = pool_indices(src.len(), meta.config.pool_k);
            eprintln!(
                "pooled {} of {} positions (k = {}): {:?}",
                indices.len(),
                src.len(),
                meta.config.pool_k,
                indices
            );
            for (t, id) in decoded.ids.iter().enumerate() {
                let token = tgt_vocab.token(*id).unwrap_or("<invalid>");
                eprintln!("step {t}: {token} ({id})");
            }
            if decoded.truncated {
                eprintln!("decode hit the length limit before <eos>");
            }
        }
        let tokens = tgt_vocab.decode(&decoded.ids).map_err(BabylonError::Transcode)?;
        println!("{}", tokens.join(" "));
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<(), BabylonError> {
    let world = args.world.load()?;
    let cfg = BenchConfig {
        checkpoint: args.checkpoint.clone(),
        data: args.data.clone(),
        warmup: args.warmup,
        measured: args.measured,
        single_thread: !args.multi_thread,
        buckets: args.buckets.clone(),
    };
    log_config(serde_json::json!({
        "command": "bench",
        "bench": &cfg,
        "seed": cli.seed,
    }));
    let report = bench::measure_latency(&cfg, &world)?;
    print!("{}", report.to_csv());
    eprintln!(
        "model {}: {} parameter bytes, {} activation bytes, {} encoder attention multiplies",
        report.model, report.param_bytes, report.act_bytes, report.encoder_attn_ops
    );
    if let Some(path) = &args.out {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn cmd_inspect(cli: &Cli, args: &InspectArgs) -> Result<(), BabylonError> {
    log_config(serde_json::json!({
        "command": "inspect",
        "checkpoint": args.checkpoint,
        "seed": cli.seed,
    }));
    let (meta, params) = checkpoint::load(&args.checkpoint)?;
    println!("arch: {}", meta.config.arch.as_str());
    println!("pool_k: {}", meta.config.pool_k);
    println!("parameters: {}", params.element_count());
    println!("parameter_bytes: {}", bench::parameter_bytes(&params));
    println!("activation_bytes: {}", bench::activation_bytes(&meta.config));
    println!("src_vocab: {}", meta.src_symbols.len());
    println!("tgt_vocab: {}", meta.tgt_symbols.len());
    println!("d_model: {}", meta.config.d_model);
    println!("enc_layers: {}", meta.config.enc_layers);
    println!("dec_layers: {}", meta.config.dec_layers);
    println!("max_source_len: {}", meta.config.max_source_len);
    println!("max_target_len: {}", meta.config.max_target_len);
    println!("train_fingerprint: {}", meta.train_fingerprint);
    Ok(())
}
