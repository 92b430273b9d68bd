//! Synthetic ordering-utterance generator.
//!
//! Each sample is drawn by index from three decoupled ChaCha8 streams:
//! stream 0 picks the intent (what the customer wants), stream 1 picks
//! the surface (how they say it, disfluencies included), stream 2 drives
//! ASR noise. Decoupling means changing surface or noise knobs never
//! shifts the underlying intents, and sample `i` is a pure function of
//! `(seed, i)`, so generation parallelizes without changing output.

mod io;
mod templates;

pub use io::{read_dataset, write_dataset};

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BabylonError, DataError};
use crate::menu::Menu;
use crate::par;
use crate::phoneme::{Alphabet, ConfusionClasses, Lexicon, NoiseModel, PhonemeSeq};
use crate::transcode::{
    Action, Clause, IntentProgram, ItemClause, OrderState, Polar, Slot, SlotLabel,
};

/// Everything a generator or evaluator needs to resolve entities and
/// sounds: menu, alphabet, lexicon, confusion classes.
#[derive(Debug, Clone)]
pub struct World {
    pub menu: Menu,
    pub alphabet: Alphabet,
    pub lexicon: Lexicon,
    pub classes: ConfusionClasses,
}

impl World {
    pub fn builtin() -> World {
        let menu = Menu::builtin();
        let alphabet = Alphabet::builtin();
        let lexicon = Lexicon::builtin(&alphabet);
        let classes = ConfusionClasses::standard(&alphabet);
        World {
            menu,
            alphabet,
            lexicon,
            classes,
        }
    }
}

/// Generator knobs. Probabilities are per-opportunity Bernoulli gates.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GenConfig {
    pub sample_count: usize,
    /// Upper bound on user intents per turn; `clause_weights[i]` weights
    /// `i + 1` intents.
    pub max_clauses: usize,
    pub clause_weights: Vec<f64>,
    /// Chance a turn is a bare yes/no answer to a clarification question.
    pub p_polar: f64,
    pub p_repeat: f64,
    pub p_false_start: f64,
    pub p_correction: f64,
    pub p_filler: f64,
    pub quantity_range: (u32, u32),
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> GenConfig {
        GenConfig {
            sample_count: 1000,
            max_clauses: 3,
            clause_weights: vec![0.70, 0.24, 0.06],
            p_polar: 0.06,
            p_repeat: 0.04,
            p_false_start: 0.04,
            p_correction: 0.07,
            p_filler: 0.08,
            quantity_range: (1, 3),
            noise: NoiseModel::new(0.10, 0.02, 0.02).expect("default rates valid"),
            seed: 42,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.sample_count == 0 {
            return Err(DataError::Config("sample_count must be positive".into()));
        }
        if self.max_clauses == 0 || self.clause_weights.len() != self.max_clauses {
            return Err(DataError::Config(format!(
                "clause_weights needs exactly max_clauses={} entries",
                self.max_clauses
            )));
        }
        if self.clause_weights.iter().any(|&w| w < 0.0 || !w.is_finite())
            || self.clause_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(DataError::Config(
                "clause_weights must be non-negative with positive sum".into(),
            ));
        }
        for (name, p) in [
            ("p_polar", self.p_polar),
            ("p_repeat", self.p_repeat),
            ("p_false_start", self.p_false_start),
            ("p_correction", self.p_correction),
            ("p_filler", self.p_filler),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name}={p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.quantity_range;
        if lo == 0 || hi < lo || hi > crate::transcode::MAX_QUANTITY {
            return Err(DataError::Config(format!(
                "quantity_range ({lo}, {hi}) invalid"
            )));
        }
        Ok(())
    }
}

/// Phenomena present in a sample; written to the dataset for per-slice
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    MultiIntent,
    Correction,
    Repeat,
    FalseStart,
    CompoundNoun,
    LongTurn,
}

impl Tag {
    pub const ALL: [Tag; 6] = [
        Tag::MultiIntent,
        Tag::Correction,
        Tag::Repeat,
        Tag::FalseStart,
        Tag::CompoundNoun,
        Tag::LongTurn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::MultiIntent => "multi_intent",
            Tag::Correction => "correction",
            Tag::Repeat => "repeat",
            Tag::FalseStart => "false_start",
            Tag::CompoundNoun => "compound_noun",
            Tag::LongTurn => "long_turn",
        }
    }

    pub fn from_str(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One generated training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub utterance: String,
    pub clean: PhonemeSeq,
    pub noisy: PhonemeSeq,
    pub gold: IntentProgram,
    pub tags: BTreeSet<Tag>,
}

/// A turn is at least 12 words before it counts as long.
pub const LONG_TURN_WORDS: usize = 12;

#[derive(Debug, Clone)]
pub(crate) struct AddIntent {
    pub item: String,
    pub quantity: u32,
    pub size: Option<String>,
    pub extras: Vec<String>,
    pub removals: Vec<(SlotLabel, String)>,
}

#[derive(Debug, Clone)]
pub(crate) enum UpdateKind {
    Size(String),
    Quantity(u32),
}

#[derive(Debug, Clone)]
pub(crate) enum ClauseIntent {
    Polar(Polar),
    Add(AddIntent),
    /// Self-correction: the wrong item is ordered, retracted, replaced.
    AddCorrected { wrong: AddIntent, right: AddIntent },
    Delete { item: String },
    Update {
        item: String,
        quantity: u32,
        kind: UpdateKind,
    },
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream 0: intent, 1: surface, 2: noise.
fn stream_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let word = splitmix64(seed).wrapping_add(splitmix64(index as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(word);
    rng.set_stream(stream);
    rng
}

fn weighted_choice<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn sample_add<R: Rng>(cfg: &GenConfig, world: &World, rng: &mut R) -> AddIntent {
    let items = world.menu.items();
    let item = &items[rng.gen_range(0..items.len())];
    let quantity = rng.gen_range(cfg.quantity_range.0..=cfg.quantity_range.1);
    let size = if !item.sizes.is_empty() && rng.gen::<f64>() < 0.45 {
        Some(item.sizes[rng.gen_range(0..item.sizes.len())].clone())
    } else {
        None
    };
    let mut extras = Vec::new();
    if !item.extras.is_empty() && rng.gen::<f64>() < 0.28 {
        extras.push(item.extras[rng.gen_range(0..item.extras.len())].clone());
        if item.extras.len() > 1 && rng.gen::<f64>() < 0.10 {
            let second = item.extras[rng.gen_range(0..item.extras.len())].clone();
            if second != extras[0] {
                extras.push(second);
            }
        }
    }
    let mut removals = Vec::new();
    let (label, pool) = if !item.sub_items.is_empty() {
        (SlotLabel::SubItem, &item.sub_items)
    } else {
        (SlotLabel::Extras, &item.extras)
    };
    if !pool.is_empty() && rng.gen::<f64>() < 0.12 {
        let value = pool[rng.gen_range(0..pool.len())].clone();
        if !extras.contains(&value) {
            removals.push((label, value));
        }
    }
    AddIntent {
        item: item.name.clone(),
        quantity,
        size,
        extras,
        removals,
    }
}

fn sample_intents<R: Rng>(cfg: &GenConfig, world: &World, rng: &mut R) -> Vec<ClauseIntent> {
    if rng.gen::<f64>() < cfg.p_polar {
        let polar = if rng.gen_bool(0.5) {
            Polar::Yes
        } else {
            Polar::No
        };
        return vec![ClauseIntent::Polar(polar)];
    }
    let n = weighted_choice(rng, &cfg.clause_weights) + 1;
    let mut intents = Vec::with_capacity(n);
    // Open lines by (item, quantity), tracked so deletes and updates
    // always have a real target.
    let mut open: Vec<(String, u32)> = Vec::new();
    for j in 0..n {
        let roll = if j == 0 || open.is_empty() {
            0.0
        } else {
            rng.gen::<f64>()
        };
        if roll < 0.70 {
            let add = sample_add(cfg, world, rng);
            if rng.gen::<f64>() < cfg.p_correction {
                let mut right = sample_add(cfg, world, rng);
                for _ in 0..8 {
                    if right.item != add.item {
                        break;
                    }
                    right = sample_add(cfg, world, rng);
                }
                open.push((right.item.clone(), right.quantity));
                intents.push(ClauseIntent::AddCorrected { wrong: add, right });
            } else {
                open.push((add.item.clone(), add.quantity));
                intents.push(ClauseIntent::Add(add));
            }
        } else if roll < 0.85 {
            let name = open[rng.gen_range(0..open.len())].0.clone();
            let last = open
                .iter()
                .rposition(|(n, _)| *n == name)
                .expect("name came from the open list");
            open.remove(last);
            intents.push(ClauseIntent::Delete { item: name });
        } else {
            let (name, qty) = open.last().cloned().expect("open checked non-empty");
            let sizes = &world.menu.get(&name).expect("open items are menu items").sizes;
            if !sizes.is_empty() && rng.gen::<f64>() < 0.7 {
                let size = sizes[rng.gen_range(0..sizes.len())].clone();
                intents.push(ClauseIntent::Update {
                    item: name,
                    quantity: qty,
                    kind: UpdateKind::Size(size),
                });
            } else {
                let mut new_qty = rng.gen_range(cfg.quantity_range.0..=cfg.quantity_range.1);
                for _ in 0..4 {
                    if new_qty != qty {
                        break;
                    }
                    new_qty = rng.gen_range(cfg.quantity_range.0..=cfg.quantity_range.1);
                }
                open.last_mut().expect("checked").1 = new_qty;
                intents.push(ClauseIntent::Update {
                    item: name,
                    quantity: new_qty,
                    kind: UpdateKind::Quantity(new_qty),
                });
            }
        }
    }
    intents
}

fn add_clause(a: &AddIntent, action: Action) -> Clause {
    let mut slots = Vec::new();
    if let Some(size) = &a.size {
        slots.push(Slot {
            label: SlotLabel::Size,
            quantity: 1,
            value: size.clone(),
        });
    }
    for v in &a.extras {
        slots.push(Slot {
            label: SlotLabel::Extras,
            quantity: 1,
            value: v.clone(),
        });
    }
    for (label, v) in &a.removals {
        slots.push(Slot {
            label: *label,
            quantity: 0,
            value: v.clone(),
        });
    }
    Clause::Item(ItemClause {
        quantity: a.quantity,
        item: a.item.clone(),
        slots,
        action,
    })
}

fn to_gold(intents: &[ClauseIntent], menu: &Menu) -> Result<IntentProgram, BabylonError> {
    let mut clauses = Vec::new();
    for intent in intents {
        match intent {
            ClauseIntent::Polar(p) => clauses.push(Clause::Polar(*p)),
            ClauseIntent::Add(a) => clauses.push(add_clause(a, Action::Add)),
            ClauseIntent::AddCorrected { wrong, right } => {
                clauses.push(add_clause(wrong, Action::Add));
                clauses.push(Clause::Item(ItemClause {
                    quantity: 1,
                    item: wrong.item.clone(),
                    slots: vec![],
                    action: Action::Delete,
                }));
                clauses.push(add_clause(right, Action::Add));
            }
            ClauseIntent::Delete { item } => clauses.push(Clause::Item(ItemClause {
                quantity: 1,
                item: item.clone(),
                slots: vec![],
                action: Action::Delete,
            })),
            ClauseIntent::Update {
                item,
                quantity,
                kind,
            } => {
                let slots = match kind {
                    UpdateKind::Size(s) => vec![Slot {
                        label: SlotLabel::Size,
                        quantity: 1,
                        value: s.clone(),
                    }],
                    UpdateKind::Quantity(_) => vec![],
                };
                clauses.push(Clause::Item(ItemClause {
                    quantity: *quantity,
                    item: item.clone(),
                    slots,
                    action: Action::Update,
                }));
            }
        }
    }
    Ok(IntentProgram::new(clauses, menu).map_err(BabylonError::Transcode)?)
}

fn render_turn<R: Rng>(
    intents: &[ClauseIntent],
    cfg: &GenConfig,
    rng: &mut R,
) -> (String, BTreeSet<Tag>) {
    let mut tags = BTreeSet::new();
    let mut parts: Vec<String> = Vec::new();
    let mut repeated = false;
    let polar_turn = matches!(intents[0], ClauseIntent::Polar(_));
    for (j, intent) in intents.iter().enumerate() {
        let mut words = match intent {
            ClauseIntent::Polar(p) => templates::render_polar(rng, *p),
            ClauseIntent::Add(a) => templates::render_add(rng, a, j == 0),
            ClauseIntent::AddCorrected { wrong, right } => {
                tags.insert(Tag::Correction);
                format!(
                    "{} {}",
                    templates::render_add(rng, wrong, j == 0),
                    templates::render_correction(rng, right)
                )
            }
            ClauseIntent::Delete { item } => templates::render_delete(rng, item),
            ClauseIntent::Update { kind, .. } => templates::render_update(rng, kind),
        };
        if let ClauseIntent::Add(a) = intent {
            if !repeated && rng.gen::<f64>() < cfg.p_repeat {
                repeated = true;
                tags.insert(Tag::Repeat);
                words = format!(
                    "{words} {} {}",
                    templates::filler(rng),
                    templates::render_add(rng, a, j == 0)
                );
            }
        }
        if j == 0
            && matches!(
                intent,
                ClauseIntent::Add(_) | ClauseIntent::AddCorrected { .. }
            )
            && rng.gen::<f64>() < cfg.p_false_start
        {
            tags.insert(Tag::FalseStart);
            words = format!("{} {words}", templates::false_start_fragment(rng));
        }
        if rng.gen::<f64>() < cfg.p_filler {
            words = format!("{} {words}", templates::filler(rng));
        }
        if j > 0 {
            parts.push(templates::connector(rng).to_string());
        }
        parts.push(words);
    }
    if !polar_turn {
        let roll = rng.gen::<f64>();
        if roll < 0.18 {
            parts.push("please".to_string());
        } else if roll < 0.22 {
            parts.push("thanks".to_string());
        }
    }
    let utterance = parts.join(" ");
    if intents.len() > 1 {
        tags.insert(Tag::MultiIntent);
    }
    if utterance.split_whitespace().count() >= LONG_TURN_WORDS {
        tags.insert(Tag::LongTurn);
    }
    (utterance, tags)
}

fn has_compound_entity(gold: &IntentProgram) -> bool {
    gold.clauses().iter().any(|c| match c {
        Clause::Item(c) => {
            c.item.contains(' ') || c.slots.iter().any(|s| s.value.contains(' '))
        }
        Clause::Polar(_) => false,
    })
}

/// Draws sample `index` of the run. Pure in `(cfg.seed, index)`.
pub(crate) fn gen_sample(
    cfg: &GenConfig,
    world: &World,
    index: usize,
) -> Result<Sample, BabylonError> {
    let mut intent_rng = stream_rng(cfg.seed, index, 0);
    let intents = sample_intents(cfg, world, &mut intent_rng);
    let gold = to_gold(&intents, &world.menu)?;
    // Gold must execute; anything else is a generator bug worth failing on.
    OrderState::empty().reduce(&gold)?;

    let mut surface_rng = stream_rng(cfg.seed, index, 1);
    let (utterance, mut tags) = render_turn(&intents, cfg, &mut surface_rng);
    if has_compound_entity(&gold) {
        tags.insert(Tag::CompoundNoun);
    }
    let clean = world.lexicon.transcribe(&utterance)?;

    let mut noise_rng = stream_rng(cfg.seed, index, 2);
    let noisy = if cfg.noise.is_silent() {
        clean.clone()
    } else {
        cfg.noise.corrupt(&clean, &world.classes, &mut noise_rng)?
    };

    Ok(Sample {
        utterance,
        clean,
        noisy,
        gold,
        tags,
    })
}

/// Generates the full sample set for a config. Deterministic in
/// `cfg.seed`, parallel over sample indices.
pub fn generate(cfg: &GenConfig, world: &World) -> Result<Vec<Sample>, BabylonError> {
    cfg.validate()?;
    par::map_indexed(cfg.sample_count, true, |i| gen_sample(cfg, world, i))
        .into_iter()
        .collect()
}

/// Splits samples into train/validation/test by seeded shuffle. Fraction
/// rounding follows largest remainder so sizes always sum exactly.
pub fn split(
    samples: Vec<Sample>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), DataError> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(DataError::Config(format!(
            "split fractions ({a}, {b}, {c}) must be non-negative and sum to 1"
        )));
    }
    let n = samples.len();
    let mut counts = [
        (a * n as f64).floor() as usize,
        (b * n as f64).floor() as usize,
        (c * n as f64).floor() as usize,
    ];
    let mut remainders = [
        (a * n as f64).fract(),
        (b * n as f64).fract(),
        (c * n as f64).fract(),
    ];
    while counts.iter().sum::<usize>() < n {
        let i = remainders
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).expect("fractions are finite"))
            .map(|(i, _)| i)
            .expect("three buckets");
        counts[i] += 1;
        remainders[i] = -1.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut pools: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Sample> {
        idx.iter()
            .map(|&i| pools[i].take().expect("each index used once"))
            .collect()
    };
    let train = take(&order[..counts[0]]);
    let val = take(&order[counts[0]..counts[0] + counts[1]]);
    let test = take(&order[counts[0] + counts[1]..]);
    Ok((train, val, test))
}

/// Summary statistics over a sample set, for generate-time reporting.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DatasetStats {
    pub count: usize,
    pub mean_words: f64,
    pub max_words: usize,
    pub mean_clean_len: f64,
    pub max_clean_len: usize,
    pub mean_noisy_len: f64,
    pub mean_gold_tokens: f64,
    pub max_gold_tokens: usize,
    pub clause_histogram: Vec<usize>,
    pub tag_counts: Vec<(String, usize)>,
}

impl DatasetStats {
    pub fn compute(samples: &[Sample]) -> DatasetStats {
        let n = samples.len().max(1);
        let mut stats = DatasetStats {
            count: samples.len(),
            mean_words: 0.0,
            max_words: 0,
            mean_clean_len: 0.0,
            max_clean_len: 0,
            mean_noisy_len: 0.0,
            mean_gold_tokens: 0.0,
            max_gold_tokens: 0,
            clause_histogram: Vec::new(),
            tag_counts: Tag::ALL.iter().map(|t| (t.to_string(), 0)).collect(),
        };
        for s in samples {
            let words = s.utterance.split_whitespace().count();
            stats.mean_words += words as f64;
            stats.max_words = stats.max_words.max(words);
            stats.mean_clean_len += s.clean.len() as f64;
            stats.max_clean_len = stats.max_clean_len.max(s.clean.len());
            stats.mean_noisy_len += s.noisy.len() as f64;
            let gold_tokens = s.gold.serialize().len();
            stats.mean_gold_tokens += gold_tokens as f64;
            stats.max_gold_tokens = stats.max_gold_tokens.max(gold_tokens);
            let clauses = s.gold.clauses().len();
            if stats.clause_histogram.len() < clauses {
                stats.clause_histogram.resize(clauses, 0);
            }
            stats.clause_histogram[clauses - 1] += 1;
            for (i, tag) in Tag::ALL.iter().enumerate() {
                if s.tags.contains(tag) {
                    stats.tag_counts[i].1 += 1;
                }
            }
        }
        stats.mean_words /= n as f64;
        stats.mean_clean_len /= n as f64;
        stats.mean_noisy_len /= n as f64;
        stats.mean_gold_tokens /= n as f64;
        stats
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples            {}", self.count)?;
        writeln!(
            f,
            "utterance words    mean {:.1}  max {}",
            self.mean_words, self.max_words
        )?;
        writeln!(
            f,
            "clean phonemes     mean {:.1}  max {}",
            self.mean_clean_len, self.max_clean_len
        )?;
        writeln!(f, "noisy phonemes     mean {:.1}", self.mean_noisy_len)?;
        writeln!(
            f,
            "gold tokens        mean {:.1}  max {}",
            self.mean_gold_tokens, self.max_gold_tokens
        )?;
        write!(f, "gold clauses       ")?;
        for (i, c) in self.clause_histogram.iter().enumerate() {
            write!(f, "{}:{c} ", i + 1)?;
        }
        writeln!(f)?;
        for (name, count) in &self.tag_counts {
            writeln!(f, "tag {name:<14} {count}")?;
        }
        Ok(())
    }
}
