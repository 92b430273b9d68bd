//! Phoneme alphabet, sequences, and confusion structure.
//!
//! The built-in alphabet is a 44-symbol English IPA inventory: 24
//! consonants, 12 monophthongs, 8 diphthongs. Sequences store compact
//! alphabet indices; symbols only materialize at file boundaries. A
//! confusion partition groups articulatorily close symbols, which is what
//! the noise model draws substitutions from.

mod lexicon;
mod noise;
mod vocab;

pub use lexicon::Lexicon;
pub use noise::NoiseModel;
pub use vocab::{SourceVocab, BOS, EOS, FIRST_PHONEME, PAD, SPACE};

use std::collections::HashMap;
use std::path::Path;

use crate::error::{DataError, PhonemeError};

/// An ordered phoneme inventory with O(1) symbol lookup.
#[derive(Debug, Clone)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, u16>,
}

const BUILTIN_ALPHABET: &str = include_str!("../../data/alphabet.txt");

impl Alphabet {
    /// The 44-symbol English inventory bundled with the crate.
    pub fn builtin() -> Alphabet {
        Alphabet::from_lines(BUILTIN_ALPHABET).expect("bundled alphabet must be valid")
    }

    pub fn load(path: &Path) -> Result<Alphabet, DataError> {
        let text = std::fs::read_to_string(path)?;
        Alphabet::from_lines(&text)
            .map_err(|e| DataError::Config(format!("{}: {e}", path.display())))
    }

    /// One symbol per line; blank lines and `#` comments are skipped.
    pub fn from_lines(text: &str) -> Result<Alphabet, PhonemeError> {
        let mut symbols = Vec::new();
        let mut index = HashMap::new();
        for line in text.lines() {
            let sym = line.trim();
            if sym.is_empty() || sym.starts_with('#') {
                continue;
            }
            if index.insert(sym.to_string(), symbols.len() as u16).is_some() {
                return Err(PhonemeError::UnknownSymbol {
                    symbol: format!("duplicate `{sym}`"),
                });
            }
            symbols.push(sym.to_string());
        }
        Ok(Alphabet { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, idx: u16) -> &str {
        &self.symbols[idx as usize]
    }

    pub fn lookup(&self, symbol: &str) -> Option<u16> {
        self.index.get(symbol).copied()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Parses a space-separated symbol string into a sequence.
    pub fn parse_seq(&self, text: &str) -> Result<PhonemeSeq, PhonemeError> {
        let mut seq = PhonemeSeq::default();
        for sym in text.split_whitespace() {
            match self.lookup(sym) {
                Some(idx) => seq.0.push(idx),
                None => {
                    return Err(PhonemeError::UnknownSymbol {
                        symbol: sym.to_string(),
                    })
                }
            }
        }
        Ok(seq)
    }

    /// Space-separated symbol rendering, the on-disk text form.
    pub fn format_seq(&self, seq: &PhonemeSeq) -> String {
        seq.0
            .iter()
            .map(|&i| self.symbol(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A phoneme sequence as alphabet indices. Never contains special ids;
/// framing and padding happen at the model boundary in [`SourceVocab`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PhonemeSeq(pub Vec<u16>);

impl PhonemeSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A partition of the alphabet into substitution classes.
#[derive(Debug, Clone)]
pub struct ConfusionClasses {
    class_of: Vec<u16>,
    members: Vec<Vec<u16>>,
}

/// Articulatory grouping of the built-in inventory. Symbols outside these
/// lists (custom alphabets) fall into singleton classes.
const STANDARD_CLASSES: [&[&str]; 7] = [
    &["p", "b", "t", "d", "k", "ɡ", "tʃ", "dʒ"],
    &["f", "v", "θ", "ð", "s", "z", "ʃ", "ʒ", "h"],
    &["m", "n", "ŋ"],
    &["l", "r", "w", "j"],
    &["i", "ɪ", "ɛ", "æ"],
    &["ɑ", "ɒ", "ɔ", "ʊ", "u", "ʌ", "ə", "ɜ"],
    &["eɪ", "aɪ", "ɔɪ", "aʊ", "oʊ", "ɪə", "eə", "ʊə"],
];

impl ConfusionClasses {
    /// Groups `alphabet` by the standard articulatory classes.
    pub fn standard(alphabet: &Alphabet) -> ConfusionClasses {
        let mut class_of = vec![u16::MAX; alphabet.len()];
        let mut members: Vec<Vec<u16>> = Vec::new();
        for class in STANDARD_CLASSES {
            let found: Vec<u16> = class.iter().filter_map(|s| alphabet.lookup(s)).collect();
            if found.is_empty() {
                continue;
            }
            let id = members.len() as u16;
            for &idx in &found {
                class_of[idx as usize] = id;
            }
            members.push(found);
        }
        for idx in 0..alphabet.len() as u16 {
            if class_of[idx as usize] == u16::MAX {
                class_of[idx as usize] = members.len() as u16;
                members.push(vec![idx]);
            }
        }
        ConfusionClasses { class_of, members }
    }

    pub fn alphabet_len(&self) -> usize {
        self.class_of.len()
    }

    /// Members of the class containing `idx`, including `idx` itself.
    pub fn class_members(&self, idx: u16) -> &[u16] {
        &self.members[self.class_of[idx as usize] as usize]
    }

    pub fn class_count(&self) -> usize {
        self.members.len()
    }
}
