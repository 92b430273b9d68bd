//! Spoken-order understanding at desk scale.
//!
//! The pipeline turns a phoneme stream (what a speech front-end would emit
//! for an ordering utterance) into a transcode: a flat token program in a
//! small regular language that an order-management backend can execute.
//! Everything needed to study that pipeline end to end lives here:
//!
//! * [`transcode`]: the target language, its parser, and the order-state
//!   reducer used as a semantic-equality oracle,
//! * [`phoneme`]: IPA alphabet, word lexicon, and an ASR-noise simulator,
//! * [`datagen`]: synthetic ordering-utterance generator with disfluencies,
//! * [`tensor`] / [`nn`] / [`optim`]: a minimal CPU tensor-and-layers
//!   substrate with hand-written reverse-mode gradients,
//! * [`model`]: the three sequence-to-sequence architectures (`babylon`,
//!   `camelot`, `delphi`),
//! * [`train`] / [`eval`] / [`bench`]: harnesses for fitting, scoring and
//!   timing those models on one CPU.
//!
//! All randomness flows through seeded ChaCha8 generators; every public
//! entry point is deterministic given its config, including under the
//! `parallel` feature (work is split into fixed-size chunks and reduced in
//! chunk order, so thread count never changes results).

pub mod bench;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod menu;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod phoneme;
pub mod tensor;
pub mod train;
pub mod transcode;

pub use error::{BabylonError, DataError, ModelError, PhonemeError, TranscodeError};
