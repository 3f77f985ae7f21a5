//! Byte-pair-encoding subword vocabulary with word-initial markers.
//!
//! Pieces that begin a word carry the `▁` (U+2581) marker, so a phrase
//! tokenizes differently from the same characters inside a longer word —
//! "cat" never matches inside "concatenate". Training seeds the vocabulary
//! with the corpus alphabet in both plain and marked form, then greedily
//! merges the most frequent adjacent pair until the requested size is
//! reached.
//!
//! Id layout: `<unk>` is id 0, pieces are dense `0..size`, and the blank
//! label used by transducer models is the reserved id `size` (one past the
//! last piece).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Marker prefixed to word-initial pieces.
pub const WORD_INIT: char = '\u{2581}';

/// Reserved piece string for unknown characters.
pub const UNK_PIECE: &str = "<unk>";

const VOCAB_VERSION: &str = "subwords-v1";

#[derive(Debug, thiserror::Error)]
pub enum SubwordError {
    #[error("training corpus has no words")]
    EmptyCorpus,
    #[error("vocab_size {requested} is too small; seeding the alphabet already needs {needed}")]
    VocabTooSmall { requested: usize, needed: usize },
    #[error("failed to read/write vocabulary: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid vocabulary file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported vocabulary version {found:?} (expected {VOCAB_VERSION:?})")]
    Version { found: String },
}

/// An ordered subword vocabulary. Piece ids are dense from 0; id 0 is the
/// reserved `<unk>` piece.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    index: BTreeMap<String, u32>,
    max_piece_chars: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: String,
    pieces: Vec<String>,
}

impl SubwordVocab {
    pub const UNK_ID: u32 = 0;

    /// Build from an explicit piece list; `pieces[0]` must be `<unk>`.
    pub fn from_pieces(pieces: Vec<String>) -> Self {
        assert_eq!(pieces.first().map(String::as_str), Some(UNK_PIECE), "piece 0 must be <unk>");
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        let max_piece_chars = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        SubwordVocab { pieces, index, max_piece_chars }
    }

    /// Number of pieces (the emittable token count, excluding blank).
    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    /// The transducer blank id: one past the last piece.
    pub fn blank_id(&self) -> u32 {
        self.pieces.len() as u32
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Greedy longest-match tokenization.
    ///
    /// Each word is prefixed with the word-initial marker and consumed left
    /// to right, always taking the longest piece that matches. A character
    /// no piece covers becomes `<unk>` (consuming the pending marker with
    /// it at word starts).
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let chars: Vec<char> = std::iter::once(WORD_INIT).chain(word.chars()).collect();
            let mut pos = 0;
            while pos < chars.len() {
                let max_len = self.max_piece_chars.min(chars.len() - pos);
                let mut matched = None;
                for len in (1..=max_len).rev() {
                    let cand: String = chars[pos..pos + len].iter().collect();
                    if let Some(&id) = self.index.get(&cand) {
                        matched = Some((id, len));
                        break;
                    }
                }
                match matched {
                    Some((id, len)) => {
                        ids.push(id);
                        pos += len;
                    }
                    None => {
                        ids.push(Self::UNK_ID);
                        // Swallow the marker together with its uncovered
                        // first character so the next match is not offered a
                        // bare marker.
                        pos += if chars[pos] == WORD_INIT { 2 } else { 1 };
                    }
                }
            }
        }
        ids
    }

    /// Inverse of [`tokenize`](Self::tokenize): concatenate pieces and turn
    /// word-initial markers into spaces. Unknown ids render as `<unk>`.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            match self.piece(id) {
                Some(p) => s.push_str(p),
                None => s.push_str(UNK_PIECE),
            }
        }
        s.replace(WORD_INIT, " ").trim().to_string()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabFile {
            version: VOCAB_VERSION.to_string(),
            pieces: self.pieces.clone(),
        })
        .expect("vocab serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SubwordError> {
        std::fs::write(path.as_ref(), self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SubwordError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let file: VocabFile = serde_json::from_str(&text)?;
        if file.version != VOCAB_VERSION {
            return Err(SubwordError::Version { found: file.version });
        }
        Ok(SubwordVocab::from_pieces(file.pieces))
    }
}

/// Train a BPE vocabulary of `vocab_size` pieces on whitespace-tokenized
/// text.
///
/// The vocabulary starts as `<unk>` plus every alphabet character in plain
/// and word-initial-marked form; each round merges the most frequent
/// adjacent pair (ties broken lexicographically, replaced left-to-right
/// without overlap) until `vocab_size` pieces exist. It stops short of
/// `vocab_size` only when no adjacent pair remains, i.e. every training
/// word has become a single piece. Training is deterministic.
pub fn train_subwords<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<SubwordVocab, SubwordError> {
    // Distinct words with frequencies, each as a current piece sequence.
    let mut word_freqs: BTreeMap<Vec<char>, u64> = BTreeMap::new();
    for line in corpus {
        for word in line.as_ref().split_whitespace() {
            *word_freqs.entry(word.chars().collect()).or_insert(0) += 1;
        }
    }
    if word_freqs.is_empty() {
        return Err(SubwordError::EmptyCorpus);
    }

    let mut alphabet: Vec<char> = word_freqs.keys().flatten().copied().collect();
    alphabet.sort_unstable();
    alphabet.dedup();

    let mut pieces: Vec<String> = vec![UNK_PIECE.to_string()];
    pieces.extend(alphabet.iter().map(|c| c.to_string()));
    pieces.extend(alphabet.iter().map(|c| format!("{WORD_INIT}{c}")));
    if vocab_size < pieces.len() {
        return Err(SubwordError::VocabTooSmall { requested: vocab_size, needed: pieces.len() });
    }

    // Words as sequences of current pieces: marked first char, plain rest.
    let mut sequences: Vec<(Vec<String>, u64)> = word_freqs
        .into_iter()
        .map(|(chars, freq)| {
            let mut seq = Vec::with_capacity(chars.len());
            seq.push(format!("{WORD_INIT}{}", chars[0]));
            seq.extend(chars[1..].iter().map(|c| c.to_string()));
            (seq, freq)
        })
        .collect();

    while pieces.len() < vocab_size {
        // Count adjacent pairs across all word sequences.
        let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (seq, freq) in &sequences {
            for pair in seq.windows(2) {
                *pair_counts.entry((pair[0].clone(), pair[1].clone())).or_insert(0) += freq;
            }
        }
        // Most frequent pair; BTreeMap order makes the tie-break the
        // lexicographically smallest pair.
        // Stop only when no adjacent pair remains (every word is a single
        // piece); until then the vocabulary grows to exactly vocab_size.
        let Some((best_pair, _)) = pair_counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        let merged = format!("{}{}", best_pair.0, best_pair.1);
        for (seq, _) in &mut sequences {
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == best_pair.0 && seq[i + 1] == best_pair.1 {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(seq[i].clone());
                    i += 1;
                }
            }
            *seq = out;
        }
        pieces.push(merged);
    }

    Ok(SubwordVocab::from_pieces(pieces))
}
