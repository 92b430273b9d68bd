//! Model-side id space for phoneme input.
//!
//! Ids 0..4 are reserved specials; alphabet symbols start at
//! [`FIRST_PHONEME`]. Encoding is a bijection between ids and
//! symbols-plus-specials, so decode(encode(s)) == s holds exactly.

use crate::error::PhonemeError;
use crate::phoneme::{Alphabet, PhonemeSeq};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// Word-boundary marker. Reserved in the id space for front-ends that
/// emit it; the bundled lexicon's transcriptions never do.
pub const SPACE: u32 = 3;
pub const FIRST_PHONEME: u32 = 4;

const SPECIAL_SYMBOLS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<spc>"];

/// Phoneme-to-id codec for one alphabet.
#[derive(Debug, Clone)]
pub struct SourceVocab {
    alphabet: Alphabet,
}

impl SourceVocab {
    pub fn new(alphabet: Alphabet) -> SourceVocab {
        SourceVocab { alphabet }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Total id count: specials plus alphabet.
    pub fn size(&self) -> usize {
        self.alphabet.len() + FIRST_PHONEME as usize
    }

    /// Sequence ids without framing.
    pub fn encode(&self, seq: &PhonemeSeq) -> Vec<u32> {
        seq.0.iter().map(|&i| i as u32 + FIRST_PHONEME).collect()
    }

    /// Inverse of [`encode`](Self::encode); special ids are invalid here.
    pub fn decode(&self, ids: &[u32]) -> Result<PhonemeSeq, PhonemeError> {
        let mut seq = PhonemeSeq::default();
        for &id in ids {
            if id < FIRST_PHONEME || id as usize >= self.size() {
                return Err(PhonemeError::UnknownId { id });
            }
            seq.0.push((id - FIRST_PHONEME) as u16);
        }
        Ok(seq)
    }

    /// Ids framed for the encoder: `<bos> seq <eos>`.
    pub fn encode_framed(&self, seq: &PhonemeSeq) -> Vec<u32> {
        let mut ids = Vec::with_capacity(seq.len() + 2);
        ids.push(BOS);
        ids.extend(self.encode(seq));
        ids.push(EOS);
        ids
    }

    /// Display name for any id, specials included.
    pub fn id_to_symbol(&self, id: u32) -> Result<&str, PhonemeError> {
        if let Some(&s) = SPECIAL_SYMBOLS.get(id as usize) {
            return Ok(s);
        }
        if (id as usize) < self.size() {
            Ok(self.alphabet.symbol((id - FIRST_PHONEME) as u16))
        } else {
            Err(PhonemeError::UnknownId { id })
        }
    }

    /// Inverse of [`id_to_symbol`](Self::id_to_symbol).
    pub fn symbol_to_id(&self, symbol: &str) -> Result<u32, PhonemeError> {
        if let Some(pos) = SPECIAL_SYMBOLS.iter().position(|&s| s == symbol) {
            return Ok(pos as u32);
        }
        self.alphabet
            .lookup(symbol)
            .map(|i| i as u32 + FIRST_PHONEME)
            .ok_or_else(|| PhonemeError::UnknownSymbol {
                symbol: symbol.to_string(),
            })
    }

    /// Every symbol in id order, the input to vocabulary hashing.
    pub fn all_symbols(&self) -> Vec<String> {
        SPECIAL_SYMBOLS
            .iter()
            .map(|s| s.to_string())
            .chain(self.alphabet.symbols().iter().cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> SourceVocab {
        SourceVocab::new(Alphabet::builtin())
    }

    #[test]
    fn size_counts_specials_and_alphabet() {
        assert_eq!(vocab().size(), 48);
    }

    #[test]
    fn encode_decode_is_a_bijection_over_the_alphabet() {
        let v = vocab();
        let seq = PhonemeSeq((0..44).collect());
        let ids = v.encode(&seq);
        assert_eq!(ids[0], FIRST_PHONEME);
        assert_eq!(v.decode(&ids).unwrap(), seq);
    }

    #[test]
    fn ids_and_symbols_are_mutually_inverse_over_the_whole_space() {
        let v = vocab();
        for id in 0..v.size() as u32 {
            let sym = v.id_to_symbol(id).unwrap().to_string();
            assert_eq!(v.symbol_to_id(&sym).unwrap(), id);
        }
        assert!(v.id_to_symbol(v.size() as u32).is_err());
    }

    #[test]
    fn framing_wraps_with_bos_eos() {
        let v = vocab();
        let seq = v.alphabet.parse_seq("k ɔ f i").unwrap();
        let framed = v.encode_framed(&seq);
        assert_eq!(framed.len(), 6);
        assert_eq!(framed[0], BOS);
        assert_eq!(*framed.last().unwrap(), EOS);
    }

    #[test]
    fn decode_rejects_special_ids() {
        let v = vocab();
        assert!(matches!(
            v.decode(&[PAD]).unwrap_err(),
            PhonemeError::UnknownId { id: 0 }
        ));
    }
}
