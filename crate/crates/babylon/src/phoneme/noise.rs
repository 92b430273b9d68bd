//! ASR-noise simulator: substitution, insertion, deletion.
//!
//! Corruption walks the sequence once. Per symbol, in fixed draw order:
//! delete (symbol gone, no insertion slot), else maybe substitute within
//! the symbol's confusion class, then maybe insert a uniform random
//! symbol after it. Expected output length is therefore
//! `m * (1 - p_del) * (1 + p_ins)`.

use rand::Rng;

use crate::error::PhonemeError;
use crate::phoneme::{ConfusionClasses, PhonemeSeq};

/// Retry budget for the all-deleted edge case.
const EMPTY_RETRIES: usize = 16;

/// Corruption rates, each in [0, 0.5).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NoiseModel {
    pub p_sub: f64,
    pub p_ins: f64,
    pub p_del: f64,
}

impl NoiseModel {
    pub fn new(p_sub: f64, p_ins: f64, p_del: f64) -> Result<NoiseModel, PhonemeError> {
        for (name, value) in [("p_sub", p_sub), ("p_ins", p_ins), ("p_del", p_del)] {
            if !(0.0..0.5).contains(&value) || !value.is_finite() {
                return Err(PhonemeError::BadRate { name, value });
            }
        }
        Ok(NoiseModel {
            p_sub,
            p_ins,
            p_del,
        })
    }

    /// The no-op model.
    pub fn silent() -> NoiseModel {
        NoiseModel {
            p_sub: 0.0,
            p_ins: 0.0,
            p_del: 0.0,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.p_sub == 0.0 && self.p_ins == 0.0 && self.p_del == 0.0
    }

    /// Corrupts `seq`, never returning an empty sequence: an all-deleted
    /// draw is retried, then reported as degenerate.
    pub fn corrupt<R: Rng>(
        &self,
        seq: &PhonemeSeq,
        classes: &ConfusionClasses,
        rng: &mut R,
    ) -> Result<PhonemeSeq, PhonemeError> {
        if seq.is_empty() {
            return Err(PhonemeError::DegenerateNoise { retries: 0 });
        }
        if self.is_silent() {
            return Ok(seq.clone());
        }
        let n_symbols = classes.alphabet_len() as u16;
        for _ in 0..EMPTY_RETRIES {
            let mut out = PhonemeSeq(Vec::with_capacity(seq.len() + 2));
            for &ph in &seq.0 {
                if rng.gen::<f64>() < self.p_del {
                    continue;
                }
                let mut emit = ph;
                if rng.gen::<f64>() < self.p_sub {
                    let members = classes.class_members(ph);
                    if members.len() > 1 {
                        // Uniform over the class minus the symbol itself.
                        let mut pick = rng.gen_range(0..members.len() - 1);
                        if members[pick] == ph {
                            pick = members.len() - 1;
                        }
                        emit = members[pick];
                    }
                }
                out.0.push(emit);
                if rng.gen::<f64>() < self.p_ins {
                    out.0.push(rng.gen_range(0..n_symbols));
                }
            }
            if !out.is_empty() {
                return Ok(out);
            }
        }
        Err(PhonemeError::DegenerateNoise {
            retries: EMPTY_RETRIES,
        })
    }
}
