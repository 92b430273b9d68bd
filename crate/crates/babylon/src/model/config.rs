use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Babylon,
    Camelot,
    Delphi,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Babylon => "babylon",
            Arch::Camelot => "camelot",
            Arch::Delphi => "delphi",
        }
    }

    pub fn from_str(s: &str) -> Result<Arch, ModelError> {
        match s {
            "babylon" => Ok(Arch::Babylon),
            "camelot" => Ok(Arch::Camelot),
            "delphi" => Ok(Arch::Delphi),
            other => Err(ModelError::BadConfig(format!(
                "unknown architecture `{other}` (expected babylon, camelot, or delphi)"
            ))),
        }
    }
}

/// Hyperparameters shared by all three architectures. Per-architecture
/// fields are ignored by the others (`pool_k` by Camelot and Delphi,
/// transformer depths by Delphi, and so on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d_model: usize,
    /// End-anchored pooling stride (Babylon front-end).
    pub pool_k: usize,
    /// Recurrent depth: bidirectional pairs for Babylon, plain layers
    /// for Delphi's encoder and decoder.
    pub lstm_layers: usize,
    /// Hidden units per LSTM direction.
    pub lstm_hidden: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    /// Ablation switch: add positional encoding to the full-resolution
    /// sequence before pooling instead of to the pooled sequence.
    #[serde(default)]
    pub pe_before_pooling: bool,
    /// Test-only: skip the recurrent front-end entirely so a pool_k = 1
    /// Babylon is structurally a Camelot.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub identity_front: bool,
}

impl ModelConfig {
    /// Per-architecture defaults at desk scale. Babylon's two 128-unit
    /// directions concatenate to d_model without a projection; Delphi
    /// keeps full-width recurrent states.
    pub fn preset(arch: Arch, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        let (lstm_layers, lstm_hidden) = match arch {
            Arch::Babylon => (2, 128),
            Arch::Camelot => (0, 0),
            Arch::Delphi => (3, 256),
        };
        ModelConfig {
            arch,
            d_model: 256,
            pool_k: if arch == Arch::Babylon { 4 } else { 1 },
            lstm_layers,
            lstm_hidden,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            d_ffn: 512,
            dropout: 0.1,
            src_vocab,
            tgt_vocab,
            max_source_len: 256,
            max_target_len: 64,
            pe_before_pooling: false,
            identity_front: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if self.d_model == 0 || self.src_vocab == 0 || self.tgt_vocab == 0 {
            return bad("d_model and vocabulary sizes must be positive".into());
        }
        if self.pool_k == 0 {
            return bad("pooling stride must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return bad("sequence length limits must be positive".into());
        }
        match self.arch {
            Arch::Babylon => {
                if self.d_model % self.heads != 0 {
                    return bad(format!(
                        "d_model {} not divisible by {} heads",
                        self.d_model, self.heads
                    ));
                }
                if !self.identity_front {
                    if self.lstm_layers == 0 {
                        return bad("babylon needs at least one Bi-LSTM layer".into());
                    }
                    if 2 * self.lstm_hidden != self.d_model {
                        return bad(format!(
                            "bidirectional concat 2x{} must equal d_model {}",
                            self.lstm_hidden, self.d_model
                        ));
                    }
                }
                if self.enc_layers == 0 || self.dec_layers == 0 {
                    return bad("transformer depths must be positive".into());
                }
            }
            Arch::Camelot => {
                if self.d_model % self.heads != 0 {
                    return bad(format!(
                        "d_model {} not divisible by {} heads",
                        self.d_model, self.heads
                    ));
                }
                if self.enc_layers == 0 || self.dec_layers == 0 {
                    return bad("transformer depths must be positive".into());
                }
                if self.identity_front {
                    return bad("identity_front is a babylon-only test switch".into());
                }
            }
            Arch::Delphi => {
                if self.lstm_layers == 0 {
                    return bad("delphi needs at least one LSTM layer".into());
                }
                if self.lstm_hidden == 0 {
                    return bad("delphi hidden width must be positive".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for arch in [Arch::Babylon, Arch::Camelot, Arch::Delphi] {
            ModelConfig::preset(arch, 48, 60).validate().unwrap();
        }
    }

    #[test]
    fn babylon_requires_concat_width_to_match() {
        let mut cfg = ModelConfig::preset(Arch::Babylon, 48, 60);
        cfg.lstm_hidden = 100;
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::BadConfig(_))
        ));
    }

    #[test]
    fn heads_must_divide_d_model() {
        let mut cfg = ModelConfig::preset(Arch::Camelot, 48, 60);
        cfg.heads = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ModelConfig::preset(Arch::Delphi, 48, 60);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("\"delphi\""));
    }
}
