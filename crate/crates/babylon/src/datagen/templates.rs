//! Surface realization: clause intents to English word sequences.
//!
//! Every word emitted here must have a lexicon entry; a coverage test
//! holds the two files in lockstep. Pools multiply combinatorially, so a
//! single-add pattern alone yields hundreds of distinct surfaces.

use rand::Rng;

use crate::datagen::{AddIntent, UpdateKind};
use crate::transcode::Polar;

const OPENERS_FIRST: [&str; 12] = [
    "can i get",
    "could i get",
    "can i have",
    "may i have",
    "i'll take",
    "i'll have",
    "i'd like",
    "i want",
    "give me",
    "let me get",
    "let me have",
    "can i just get",
];

const OPENERS_LATER: [&str; 5] = ["i'll take", "i'll have", "get me", "i'll get", ""];

const CONNECTORS: [&str; 6] = ["and", "and also", "also", "oh and", "and then", "plus"];

const EXTRA_SHAPES: [&str; 4] = ["with", "with extra", "with-on-it", "and-on-it"];

const REMOVAL_SHAPES: [&str; 4] = ["no", "without", "without the", "hold the"];

const DELETE_TEMPLATES: [&str; 8] = [
    "actually cancel the",
    "cancel the",
    "actually forget the",
    "forget the",
    "remove the",
    "drop the",
    "actually skip the",
    "take off the",
];

const UPDATE_SIZE_HEADS: [&str; 6] = [
    "make that",
    "actually make that",
    "make it",
    "make them",
    "change that to",
    "can you make it",
];

const UPDATE_QTY_HEADS: [&str; 4] = ["make that", "actually make that", "change that to", "make it"];

const CORRECTION_LINKS: [&str; 5] = ["actually no", "no wait", "sorry", "actually", "wait no"];

const CORRECTION_HEADS: [&str; 4] = ["make that", "change that to", "just", ""];

const POLAR_YES: [&str; 6] = ["yes", "yeah", "yep", "yes please", "sure", "yeah sure"];

const POLAR_NO: [&str; 4] = ["no", "nope", "no thanks", "no thank you"];

pub(crate) const FILLERS: [&str; 5] = ["uh", "um", "well", "so", "yeah"];

const NUMBER_WORDS: [&str; 10] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Singular-to-plural for head nouns of menu entities. Words outside the
/// table keep their singular form so transcription never breaks.
const PLURALS: [(&str, &str); 6] = [
    ("coffee", "coffees"),
    ("tea", "teas"),
    ("cream", "creams"),
    ("cone", "cones"),
    ("cookie", "cookies"),
    ("fudge", "fudges"),
];

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn number_word(n: u32) -> &'static str {
    NUMBER_WORDS[(n as usize).clamp(1, 10) - 1]
}

fn pluralize(item: &str) -> String {
    let mut words: Vec<&str> = item.split_whitespace().collect();
    if let Some(last) = words.last_mut() {
        if let Some((_, p)) = PLURALS.iter().find(|(s, _)| s == last) {
            *last = p;
        }
    }
    words.join(" ")
}

fn starts_with_vowel(word: &str) -> bool {
    matches!(word.chars().next(), Some('a' | 'e' | 'i' | 'o' | 'u'))
}

/// Article plus sized noun: "a large coffee", "an iced tea", "two small
/// vanilla ice creams".
fn noun_phrase<R: Rng>(rng: &mut R, a: &AddIntent) -> String {
    let noun = if a.quantity > 1 {
        pluralize(&a.item)
    } else {
        a.item.clone()
    };
    let sized = match &a.size {
        Some(s) => format!("{s} {noun}"),
        None => noun,
    };
    let head = if a.quantity == 1 {
        if rng.gen_bool(0.55) {
            if starts_with_vowel(&sized) { "an" } else { "a" }.to_string()
        } else {
            "one".to_string()
        }
    } else {
        number_word(a.quantity).to_string()
    };
    format!("{head} {sized}")
}

fn extras_phrase<R: Rng>(rng: &mut R, values: &[String]) -> String {
    let list = values.join(" and ");
    match pick(rng, &EXTRA_SHAPES) {
        "with" => format!("with {list}"),
        "with extra" => format!("with extra {list}"),
        "with-on-it" => format!("with {list} on it"),
        _ => format!("and {list} on it"),
    }
}

fn removal_phrase<R: Rng>(rng: &mut R, value: &str) -> String {
    let shape = pick(rng, &REMOVAL_SHAPES);
    format!("{shape} {value}")
}

/// The add phrase without opener or politeness: noun phrase plus slot
/// phrases in size, extras, removal order.
pub(crate) fn add_body<R: Rng>(rng: &mut R, a: &AddIntent) -> String {
    let mut parts = vec![noun_phrase(rng, a)];
    if !a.extras.is_empty() {
        parts.push(extras_phrase(rng, &a.extras));
    }
    for (_, value) in &a.removals {
        parts.push(removal_phrase(rng, value));
    }
    parts.join(" ")
}

pub(crate) fn render_add<R: Rng>(rng: &mut R, a: &AddIntent, first: bool) -> String {
    let opener = if first {
        // Counter speech is often opener-less: "a large coffee please".
        if rng.gen_bool(0.15) {
            ""
        } else {
            pick(rng, &OPENERS_FIRST)
        }
    } else {
        pick(rng, &OPENERS_LATER)
    };
    let body = add_body(rng, a);
    if opener.is_empty() {
        body
    } else {
        format!("{opener} {body}")
    }
}

pub(crate) fn render_delete<R: Rng>(rng: &mut R, item: &str) -> String {
    format!("{} {item}", pick(rng, &DELETE_TEMPLATES))
}

pub(crate) fn render_update<R: Rng>(rng: &mut R, kind: &UpdateKind) -> String {
    match kind {
        UpdateKind::Size(size) => format!("{} {size}", pick(rng, &UPDATE_SIZE_HEADS)),
        UpdateKind::Quantity(q) => {
            format!("{} {}", pick(rng, &UPDATE_QTY_HEADS), number_word(*q))
        }
    }
}

pub(crate) fn render_correction<R: Rng>(rng: &mut R, right: &AddIntent) -> String {
    let link = pick(rng, &CORRECTION_LINKS);
    let head = pick(rng, &CORRECTION_HEADS);
    let body = add_body(rng, right);
    let tail = if rng.gen_bool(0.3) { " instead" } else { "" };
    if head.is_empty() {
        format!("{link} {body}{tail}")
    } else {
        format!("{link} {head} {body}{tail}")
    }
}

pub(crate) fn render_polar<R: Rng>(rng: &mut R, p: Polar) -> String {
    match p {
        Polar::Yes => pick(rng, &POLAR_YES).to_string(),
        Polar::No => pick(rng, &POLAR_NO).to_string(),
    }
}

/// A trailing fragment the speaker abandons before restarting the clause.
pub(crate) fn false_start_fragment<R: Rng>(rng: &mut R) -> String {
    let opener = pick(rng, &OPENERS_FIRST);
    match rng.gen_range(0..3) {
        0 => format!("{opener} uh"),
        1 => format!("{opener} a uh"),
        _ => format!("{opener} the uh"),
    }
}

pub(crate) fn connector<R: Rng>(rng: &mut R) -> &'static str {
    pick(rng, &CONNECTORS)
}

pub(crate) fn filler<R: Rng>(rng: &mut R) -> &'static str {
    pick(rng, &FILLERS)
}

/// Words used by this module that are not menu entities or number words;
/// the lexicon coverage test iterates these.
#[cfg(test)]
pub(crate) fn template_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    let mut extend = |pool: &[&'static str]| {
        for entry in pool {
            words.extend(entry.split_whitespace());
        }
    };
    extend(&OPENERS_FIRST);
    extend(&OPENERS_LATER);
    extend(&CONNECTORS);
    extend(&DELETE_TEMPLATES);
    extend(&UPDATE_SIZE_HEADS);
    extend(&UPDATE_QTY_HEADS);
    extend(&CORRECTION_LINKS);
    extend(&CORRECTION_HEADS);
    extend(&POLAR_YES);
    extend(&POLAR_NO);
    extend(&FILLERS);
    extend(&NUMBER_WORDS);
    words.extend(["with", "extra", "on", "it", "and", "no", "without", "the", "hold"]);
    words.extend(["a", "an", "one", "instead", "uh", "please", "thanks"]);
    words.sort();
    words.dedup();
    words.retain(|w| !w.is_empty() && *w != "with-on-it" && *w != "and-on-it");
    words
}
