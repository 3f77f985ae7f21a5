//! Corpus handling: JSONL manifests, text normalization, and word error rate.
//!
//! A manifest is a JSON-Lines file with one utterance object per line:
//!
//! ```json
//! {"id":"utt1","duration_s":4.2,"ref_text":"hello","pl":{"weak":"hallo"},"metrics":{"pseudo_wer":1.0}}
//! ```
//!
//! Only `id` and `duration_s` are required. `pl` maps a pseudo-labeler tag to
//! its transcript, `metrics` maps a metric name to a number, and `frames`
//! optionally carries a frame-symbol sequence for decodable corpora. Unknown
//! fields are rejected so schema drift is caught early.

mod normalize;
mod wer;

pub use normalize::{normalize_text, number_to_words_en, LanguageCode, NormalizationRules, NormalizeError};
pub use wer::{edit_alignment, wer, wer_words, EditOp, WerBreakdown, WerError};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One utterance row of a manifest.
///
/// `pl` and `metrics` use ordered maps so that serialization is
/// deterministic; `frames` is only present for synthetic corpora that can be
/// fed to the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub id: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_text: Option<String>,
    /// Pseudo-label transcripts, keyed by pseudo-labeler tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pl: BTreeMap<String, String>,
    /// Per-utterance scalar metrics (e.g. `pseudo_wer`), keyed by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    /// Frame-symbol sequence for decoding; indices into a model's frame alphabet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<u32>>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, duration_s: f64) -> Self {
        Utterance {
            id: id.into(),
            duration_s,
            ref_text: None,
            pl: BTreeMap::new(),
            metrics: BTreeMap::new(),
            frames: None,
        }
    }
}

/// An ordered collection of utterances plus a provenance tag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    /// Free-form provenance label ("train", "pl_weak", ...). Not serialized
    /// into the JSONL rows; it names where this manifest came from.
    pub source_tag: String,
}

impl Manifest {
    pub fn new(source_tag: impl Into<String>) -> Self {
        Manifest { utterances: Vec::new(), source_tag: source_tag.into() }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Total duration in hours.
    pub fn total_hours(&self) -> f64 {
        self.utterances.iter().map(|u| u.duration_s).sum::<f64>() / 3600.0
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}

/// Errors raised by manifest parsing and validation.
#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("failed to read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid JSON object: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: utterance {id:?}: duration_s must be nonnegative, got {duration_s}")]
    NegativeDuration { line: usize, id: String, duration_s: f64 },
    #[error("line {line}: duplicate utterance id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// Parse a JSONL manifest, validating ids and durations.
///
/// Blank lines are ignored. Duplicate ids and negative durations abort with
/// the offending line number; order is preserved exactly.
pub fn load_manifest(path: impl AsRef<Path>, source_tag: &str) -> Result<Manifest, ManifestError> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut manifest = Manifest::new(source_tag);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line)
            .map_err(|source| ManifestError::Json { line: line_no, source })?;
        if !utt.duration_s.is_finite() || utt.duration_s < 0.0 {
            return Err(ManifestError::NegativeDuration {
                line: line_no,
                id: utt.id,
                duration_s: utt.duration_s,
            });
        }
        if !seen.insert(utt.id.clone()) {
            return Err(ManifestError::DuplicateId { line: line_no, id: utt.id });
        }
        manifest.utterances.push(utt);
    }
    Ok(manifest)
}

/// Write a manifest as JSONL. Round-trips exactly with [`load_manifest`].
pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for utt in &manifest.utterances {
        let line = serde_json::to_string(utt).expect("utterance serializes");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_minimal_and_full_rows() {
        let f = write_lines(&[
            r#"{"id":"a","duration_s":1.5}"#,
            r#"{"id":"b","duration_s":2.0,"ref_text":"hi","pl":{"weak":"hey"},"metrics":{"pseudo_wer":0.5}}"#,
            "",
            r#"{"id":"c","duration_s":0.0,"frames":[1,2,3]}"#,
        ]);
        let m = load_manifest(f.path(), "test").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.utterances[0].id, "a");
        assert_eq!(m.utterances[1].pl["weak"], "hey");
        assert_eq!(m.utterances[1].metrics["pseudo_wer"], 0.5);
        assert_eq!(m.utterances[2].frames.as_deref(), Some(&[1, 2, 3][..]));
        assert_eq!(m.source_tag, "test");
    }

    #[test]
    fn rejects_negative_duration_naming_line() {
        let f = write_lines(&[
            r#"{"id":"a","duration_s":1.0}"#,
            r#"{"id":"bad","duration_s":-1.0}"#,
        ]);
        let err = load_manifest(f.path(), "t").unwrap_err();
        match err {
            ManifestError::NegativeDuration { line, id, duration_s } => {
                assert_eq!(line, 2);
                assert_eq!(id, "bad");
                assert_eq!(duration_s, -1.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_id() {
        let f = write_lines(&[
            r#"{"id":"a","duration_s":1.0}"#,
            r#"{"id":"a","duration_s":2.0}"#,
        ]);
        let err = load_manifest(f.path(), "t").unwrap_err();
        match err {
            ManifestError::DuplicateId { line, id } => {
                assert_eq!(line, 2);
                assert_eq!(id, "a");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_json_naming_line() {
        let f = write_lines(&[r#"{"id":"a","duration_s":1.0}"#, "{not json"]);
        let err = load_manifest(f.path(), "t").unwrap_err();
        match err {
            ManifestError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_fields() {
        let f = write_lines(&[r#"{"id":"a","duration_s":1.0,"junk":true}"#]);
        assert!(load_manifest(f.path(), "t").is_err());
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let mut m = Manifest::new("rt");
        let mut u = Utterance::new("x1", 3.25);
        u.ref_text = Some("HELLO WORLD".into());
        u.pl.insert("weak".into(), "HELLO WORLDS".into());
        u.pl.insert("strong".into(), "HELLO WORLD".into());
        u.metrics.insert("pseudo_wer".into(), 0.5);
        u.frames = Some(vec![7, 8, 9]);
        m.utterances.push(u);
        m.utterances.push(Utterance::new("x2", 1.0));

        let f = tempfile::NamedTempFile::new().unwrap();
        save_manifest(&m, f.path()).unwrap();
        let m2 = load_manifest(f.path(), "rt").unwrap();
        assert_eq!(m, m2);

        // A second save is byte-identical.
        let g = tempfile::NamedTempFile::new().unwrap();
        save_manifest(&m2, g.path()).unwrap();
        assert_eq!(
            std::fs::read(f.path()).unwrap(),
            std::fs::read(g.path()).unwrap()
        );
    }

    #[test]
    fn total_hours_sums_durations() {
        let mut m = Manifest::new("t");
        m.utterances.push(Utterance::new("a", 1800.0));
        m.utterances.push(Utterance::new("b", 1800.0));
        assert!((m.total_hours() - 1.0).abs() < 1e-12);
    }
}
