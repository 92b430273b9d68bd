//! Binary checkpoint: magic, format version, a JSON meta block, then
//! every parameter tensor in registry order as little-endian f32 with a
//! name/shape header each. Writing is deterministic, so identical
//! training runs produce byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{BabylonError, ModelError};
use crate::model::{Model, ModelConfig};
use crate::phoneme::SourceVocab;
use crate::tensor::{Params, Scalar};
use crate::transcode::TranscodeVocab;

const MAGIC: &[u8; 8] = b"BABYLON\0";
const VERSION: u32 = 1;
/// Caps applied before trusting any length field from disk.
const MAX_META_BYTES: u64 = 1 << 24;
const MAX_NAME_BYTES: u64 = 1 << 12;
const MAX_RANK: u64 = 8;
const MAX_ELEMENTS: u64 = 1 << 30;

/// Everything needed to rebuild the model and refuse mismatched inputs:
/// the architecture config, both vocabularies with their hashes, and a
/// free-form fingerprint of the run that produced the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub src_symbols: Vec<String>,
    pub tgt_symbols: Vec<String>,
    pub src_vocab_hash: String,
    pub tgt_vocab_hash: String,
    pub train_fingerprint: String,
}

impl CheckpointMeta {
    pub fn new(
        config: ModelConfig,
        src: &SourceVocab,
        tgt: &TranscodeVocab,
        train_fingerprint: String,
    ) -> CheckpointMeta {
        let src_symbols: Vec<String> = (0..src.size() as u32)
            .map(|id| src.id_to_symbol(id).expect("id in range").to_string())
            .collect();
        let tgt_symbols = tgt.tokens().to_vec();
        CheckpointMeta {
            src_vocab_hash: vocab_hash(&src_symbols),
            tgt_vocab_hash: vocab_hash(&tgt_symbols),
            config,
            src_symbols,
            tgt_symbols,
            train_fingerprint,
        }
    }
}

/// FNV-1a over the newline-joined symbol list, as a hex string. Stable
/// across platforms; two vocabularies agree iff their id assignments do.
pub fn vocab_hash(symbols: &[String]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut first = true;
    for s in symbols {
        if !first {
            h = fnv_byte(h, b'\n');
        }
        first = false;
        for &b in s.as_bytes() {
            h = fnv_byte(h, b);
        }
    }
    format!("{h:016x}")
}

fn fnv_byte(h: u64, b: u8) -> u64 {
    (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
}

pub fn save<S: Scalar>(
    path: &Path,
    params: &Params<S>,
    meta: &CheckpointMeta,
) -> Result<(), BabylonError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_json = serde_json::to_vec(meta).expect("meta serializes");
    w.write_all(&(meta_json.len() as u64).to_le_bytes())?;
    w.write_all(&meta_json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for name in params.names() {
        let r = params.by_name(name).expect("listed name resolves");
        let tensor = params.raw(r);
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let shape = tensor.shape();
        w.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in tensor.iter() {
            w.write_all(&(x.to_f64c() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Tracks the byte offset so corruption errors can point at it.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: u64, what: &str) -> Result<Vec<u8>, BabylonError> {
        let mut buf = vec![0u8; n as usize];
        let at = self.offset;
        self.inner.read_exact(&mut buf).map_err(|_| {
            ModelError::CorruptCheckpoint {
                offset: at,
                reason: format!("truncated while reading {what}"),
            }
        })?;
        self.offset += n;
        Ok(buf)
    }

    fn u64(&mut self, what: &str) -> Result<u64, BabylonError> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn corrupt(&self, reason: String) -> BabylonError {
        ModelError::CorruptCheckpoint {
            offset: self.offset,
            reason,
        }
        .into()
    }
}

pub fn load(path: &Path) -> Result<(CheckpointMeta, Params<f32>), BabylonError> {
    let mut r = Cursor {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let magic = r.bytes(8, "magic")?;
    if magic != MAGIC {
        return Err(ModelError::CorruptCheckpoint {
            offset: 0,
            reason: "bad magic, not a checkpoint".into(),
        }
        .into());
    }
    let version = u32::from_le_bytes(r.bytes(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::CorruptCheckpoint {
            offset: 8,
            reason: format!("unsupported format version {version}, expected {VERSION}"),
        }
        .into());
    }
    let meta_len = r.u64("meta length")?;
    if meta_len > MAX_META_BYTES {
        return Err(r.corrupt(format!("meta block of {meta_len} bytes is implausible")));
    }
    let meta_at = r.offset;
    let meta_buf = r.bytes(meta_len, "meta block")?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_buf).map_err(|e| {
        ModelError::CorruptCheckpoint {
            offset: meta_at,
            reason: format!("meta block does not parse: {e}"),
        }
    })?;
    meta.config.validate()?;
    if vocab_hash(&meta.src_symbols) != meta.src_vocab_hash {
        return Err(r.corrupt("source vocabulary does not match its stored hash".into()));
    }
    if vocab_hash(&meta.tgt_symbols) != meta.tgt_vocab_hash {
        return Err(r.corrupt("target vocabulary does not match its stored hash".into()));
    }

    let count = r.u64("tensor count")?;
    let mut params: Params<f32> = Params::new();
    for i in 0..count {
        let name_len = r.u64("tensor name length")?;
        if name_len > MAX_NAME_BYTES {
            return Err(r.corrupt(format!("tensor {i} name of {name_len} bytes")));
        }
        let name_at = r.offset;
        let name = String::from_utf8(r.bytes(name_len, "tensor name")?).map_err(|_| {
            ModelError::CorruptCheckpoint {
                offset: name_at,
                reason: format!("tensor {i} name is not UTF-8"),
            }
        })?;
        let rank = r.u64("tensor rank")?;
        if rank > MAX_RANK {
            return Err(r.corrupt(format!("tensor `{name}` rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = r.u64("tensor dimension")?;
            elems = elems.saturating_mul(d.max(1));
            shape.push(d as usize);
        }
        if elems > MAX_ELEMENTS {
            return Err(r.corrupt(format!("tensor `{name}` with {elems} elements")));
        }
        let data = r.bytes(elems * 4, "tensor data")?;
        let values: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(shape, values)
            .map_err(|e| r.corrupt(format!("tensor `{name}` shape: {e}")))?;
        if params.by_name(&name).is_some() {
            return Err(r.corrupt(format!("duplicate tensor `{name}`")));
        }
        params.add(name, arr);
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(r.corrupt("trailing bytes after the last tensor".into()));
    }
    Ok((meta, params))
}

/// Rebuilds the model over the loaded parameters. The registry created
/// by construction must name the same tensors with the same shapes, in
/// the same order, as the file; anything else is a corrupt or foreign
/// checkpoint.
pub fn restore_model(
    meta: &CheckpointMeta,
    loaded: Params<f32>,
) -> Result<(Model<f32>, Params<f32>), BabylonError> {
    let mut fresh: Params<f32> = Params::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let model = Model::build(&meta.config, &mut fresh, &mut rng)?;
    if fresh.names() != loaded.names() {
        return Err(ModelError::CorruptCheckpoint {
            offset: 0,
            reason: format!(
                "tensor registry mismatch: config implies {} tensors, file has {}",
                fresh.len(),
                loaded.len()
            ),
        }
        .into());
    }
    for name in fresh.names() {
        let r = loaded.by_name(name).expect("names verified equal");
        let want = fresh.raw(fresh.by_name(name).unwrap()).shape().to_vec();
        let got = loaded.raw(r).shape().to_vec();
        if want != got {
            return Err(ModelError::ShapeMismatch {
                what: format!("checkpoint tensor `{name}`"),
                expected: format!("{want:?}"),
                got: format!("{got:?}"),
            }
            .into());
        }
    }
    Ok((model, loaded))
}

/// Refuses inputs encoded under a different vocabulary than the weights
/// were trained with.
pub fn check_vocab(
    meta: &CheckpointMeta,
    side: &'static str,
    live: &[String],
) -> Result<(), ModelError> {
    let expected = match side {
        "source" => &meta.src_vocab_hash,
        _ => &meta.tgt_vocab_hash,
    };
    let got = vocab_hash(live);
    if &got != expected {
        return Err(ModelError::VocabMismatch {
            side,
            expected: expected.clone(),
            got,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;
    use crate::phoneme::Alphabet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (CheckpointMeta, Params<f32>) {
        let src = SourceVocab::new(Alphabet::builtin());
        let menu = crate::menu::Menu::builtin();
        let tgt = TranscodeVocab::from_menu(&menu);
        let mut cfg = ModelConfig::preset(Arch::Camelot, src.size(), tgt.len());
        cfg.d_model = 8;
        cfg.heads = 2;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1;
        cfg.d_ffn = 16;
        let meta = CheckpointMeta::new(cfg.clone(), &src, &tgt, "test run".into());
        let mut params: Params<f32> = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Model::build(&cfg, &mut params, &mut rng).unwrap();
        (meta, params)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (meta, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save(&a, &params, &meta).unwrap();
        let (meta2, params2) = load(&a).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(params.names(), params2.names());
        save(&b, &params2, &meta2).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert_eq!(bytes_a, bytes_b, "load/save must not perturb a file");
        let (model, restored) = restore_model(&meta2, params2).unwrap();
        assert_eq!(model.config().arch, Arch::Camelot);
        assert_eq!(restored.element_count(), params.element_count());
    }

    #[test]
    fn truncation_reports_an_offset() {
        let (meta, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save(&path, &params, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        match load(&path) {
            Err(BabylonError::Model(ModelError::CorruptCheckpoint { offset, .. })) => {
                assert!(offset > 0 && offset < bytes.len() as u64);
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn foreign_magic_and_version_are_refused() {
        let (meta, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &params, &meta).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(BabylonError::Model(ModelError::CorruptCheckpoint { offset, .. })) => {
                assert_eq!(offset, 0)
            }
            other => panic!("expected bad magic, got {other:?}"),
        }

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = MAGIC[0];
        bytes[8] = 9;
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(BabylonError::Model(ModelError::CorruptCheckpoint { offset, reason })) => {
                assert_eq!(offset, 8);
                assert!(reason.contains("version"));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn vocab_hash_matches_reference_and_detects_drift() {
        // FNV-1a of "a\nb", computed independently.
        let h = vocab_hash(&["a".into(), "b".into()]);
        assert_eq!(h, "e5beb1190415e670");
        let (meta, _) = fixture();
        assert!(check_vocab(&meta, "source", &meta.src_symbols).is_ok());
        let mut drifted = meta.src_symbols.clone();
        drifted.swap(4, 5);
        match check_vocab(&meta, "source", &drifted) {
            Err(ModelError::VocabMismatch { side, .. }) => assert_eq!(side, "source"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn restore_refuses_a_mismatched_config() {
        let (meta, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ckpt");
        save(&path, &params, &meta).unwrap();
        let (mut meta2, params2) = load(&path).unwrap();
        meta2.config.d_ffn = 32;
        assert!(restore_model(&meta2, params2).is_err());
    }
}
