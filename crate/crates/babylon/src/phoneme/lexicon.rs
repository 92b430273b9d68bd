//! Word-to-phoneme lexicon.
//!
//! Transcription is plain concatenation of per-word entries: no stress,
//! no coarticulation, no boundary symbols. Any word the lexicon does not
//! cover is a hard error; the utterance generator is tested to stay
//! inside coverage.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{DataError, PhonemeError};
use crate::phoneme::{Alphabet, PhonemeSeq};

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: HashMap<String, PhonemeSeq>,
    words: Vec<String>,
}

const BUILTIN_LEXICON: &str = include_str!("../../data/lexicon.tsv");

impl Lexicon {
    /// The ordering-domain lexicon bundled with the crate.
    pub fn builtin(alphabet: &Alphabet) -> Lexicon {
        Lexicon::from_tsv(BUILTIN_LEXICON, alphabet).expect("bundled lexicon must be valid")
    }

    pub fn load(path: &Path, alphabet: &Alphabet) -> Result<Lexicon, DataError> {
        let text = std::fs::read_to_string(path)?;
        Lexicon::from_tsv(&text, alphabet)
            .map_err(|e| DataError::Config(format!("{}: {e}", path.display())))
    }

    /// `word<TAB>space-separated symbols`, one entry per line.
    pub fn from_tsv(text: &str, alphabet: &Alphabet) -> Result<Lexicon, PhonemeError> {
        let mut entries = HashMap::new();
        let mut words = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, symbols) = line.split_once('\t').ok_or_else(|| {
                PhonemeError::UnknownSymbol {
                    symbol: format!("lexicon line without a tab: `{line}`"),
                }
            })?;
            let word = word.trim().to_lowercase();
            let seq = alphabet.parse_seq(symbols)?;
            if seq.is_empty() {
                return Err(PhonemeError::OutOfLexicon { word });
            }
            if entries.insert(word.clone(), seq).is_some() {
                return Err(PhonemeError::UnknownSymbol {
                    symbol: format!("duplicate lexicon word `{word}`"),
                });
            }
            words.push(word);
        }
        Ok(Lexicon { entries, words })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&PhonemeSeq> {
        self.entries.get(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    /// Transcribes a whitespace-separated utterance. Lookup is
    /// case-insensitive; the result never contains special symbols.
    pub fn transcribe(&self, utterance: &str) -> Result<PhonemeSeq, PhonemeError> {
        let mut out = PhonemeSeq::default();
        for word in utterance.split_whitespace() {
            let key = word.to_lowercase();
            let seq = self
                .entries
                .get(&key)
                .ok_or_else(|| PhonemeError::OutOfLexicon { word: key.clone() })?;
            out.0.extend_from_slice(&seq.0);
        }
        Ok(out)
    }
}
