//! Dataset file format: one sample per line, five tab-separated columns.
//!
//! ```text
//! utterance \t clean phonemes \t noisy phonemes \t transcode \t tags
//! ```
//!
//! Phoneme columns are space-separated alphabet symbols; tags are
//! comma-separated and may be empty. Reading re-validates everything:
//! phonemes against the alphabet, transcodes through the parser.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::datagen::{Sample, Tag, World};
use crate::error::DataError;
use crate::transcode::parse_line;

pub fn write_dataset(path: &Path, samples: &[Sample], world: &World) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let tags: Vec<&str> = s.tags.iter().map(|t| t.as_str()).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            s.utterance,
            world.alphabet.format_seq(&s.clean),
            world.alphabet.format_seq(&s.noisy),
            s.gold.to_line(),
            tags.join(",")
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path, world: &World) -> Result<Vec<Sample>, DataError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let display = path.display().to_string();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(DataError::Dataset {
                path: display,
                line: lineno + 1,
                msg: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let err = |msg: String| DataError::Dataset {
            path: display.clone(),
            line: lineno + 1,
            msg,
        };
        let clean = world
            .alphabet
            .parse_seq(fields[1])
            .map_err(|e| err(format!("clean: {e}")))?;
        let noisy = world
            .alphabet
            .parse_seq(fields[2])
            .map_err(|e| err(format!("noisy: {e}")))?;
        let gold =
            parse_line(fields[3], &world.menu).map_err(|e| err(format!("transcode: {e}")))?;
        let mut tags = BTreeSet::new();
        for t in fields[4].split(',').filter(|t| !t.is_empty()) {
            tags.insert(
                Tag::from_str(t).ok_or_else(|| err(format!("unknown tag `{t}`")))?,
            );
        }
        samples.push(Sample {
            utterance: fields[0].to_string(),
            clean,
            noisy,
            gold,
            tags,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};

    #[test]
    fn write_read_round_trip() {
        let world = World::builtin();
        let cfg = GenConfig {
            sample_count: 120,
            ..GenConfig::default()
        };
        let samples = generate(&cfg, &world).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.tsv");
        write_dataset(&path, &samples, &world).unwrap();
        let back = read_dataset(&path, &world).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn corrupt_lines_are_reported_with_position() {
        let world = World::builtin();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "only\tthree\tfields\n").unwrap();
        match read_dataset(&path, &world).unwrap_err() {
            DataError::Dataset { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn bad_transcode_column_is_rejected() {
        let world = World::builtin();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "hi\tk\tk\tnew_item 1 coffee\t\n").unwrap();
        assert!(read_dataset(&path, &world).is_err());
    }
}
