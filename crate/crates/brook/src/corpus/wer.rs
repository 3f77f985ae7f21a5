//! Word error rate with a deterministic alignment tie-break.
//!
//! WER is Levenshtein distance over words with unit costs. When several
//! minimal alignments exist, backtracking prefers substitutions over
//! insertions over deletions (S > I > D), which makes the reported breakdown
//! unique and reproducible.

use serde::{Deserialize, Serialize};

use super::{normalize_text, NormalizationRules, NormalizeError};

/// A single word-level edit operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    /// Reference and hypothesis word agree.
    Match,
    /// Reference word replaced by a different hypothesis word.
    Substitute,
    /// Hypothesis word with no reference counterpart.
    Insert,
    /// Reference word missing from the hypothesis.
    Delete,
}

/// Error breakdown for one utterance or an accumulated corpus.
///
/// Serializes with the stable report keys `wer`/`sub`/`ins`/`del`/`ref_words`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub wer: f64,
    #[serde(rename = "sub")]
    pub substitutions: usize,
    #[serde(rename = "ins")]
    pub insertions: usize,
    #[serde(rename = "del")]
    pub deletions: usize,
    pub ref_words: usize,
}

impl WerBreakdown {
    pub fn from_counts(substitutions: usize, insertions: usize, deletions: usize, ref_words: usize) -> Self {
        assert!(ref_words > 0, "WER needs a nonempty reference");
        WerBreakdown {
            wer: (substitutions + insertions + deletions) as f64 / ref_words as f64,
            substitutions,
            insertions,
            deletions,
            ref_words,
        }
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Fold another utterance into a corpus-level breakdown; `wer` becomes
    /// total errors over total reference words.
    pub fn accumulate(&mut self, other: &WerBreakdown) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_words += other.ref_words;
        self.wer = self.errors() as f64 / self.ref_words as f64;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WerError {
    #[error("reference text is empty after normalization")]
    EmptyReference,
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
}

/// Word-level alignment between `ref_words` and `hyp_words`.
///
/// The returned script is minimal-cost; ties are resolved by preferring the
/// diagonal (match/substitution), then insertion, then deletion, applied
/// during backtracking from the end of both sequences.
pub fn edit_alignment<S: AsRef<str>>(ref_words: &[S], hyp_words: &[S]) -> Vec<EditOp> {
    let r = ref_words.len();
    let h = hyp_words.len();
    // d[i][j] = minimal edits aligning ref[..i] with hyp[..j].
    let mut d = vec![vec![0usize; h + 1]; r + 1];
    for i in 0..=r {
        d[i][0] = i;
    }
    for j in 0..=h {
        d[0][j] = j;
    }
    for i in 1..=r {
        for j in 1..=h {
            let sub = d[i - 1][j - 1]
                + usize::from(ref_words[i - 1].as_ref() != hyp_words[j - 1].as_ref());
            let ins = d[i][j - 1] + 1;
            let del = d[i - 1][j] + 1;
            d[i][j] = sub.min(ins).min(del);
        }
    }

    let mut ops = Vec::with_capacity(r.max(h));
    let (mut i, mut j) = (r, h);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let equal = ref_words[i - 1].as_ref() == hyp_words[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!equal) {
                ops.push(if equal { EditOp::Match } else { EditOp::Substitute });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            ops.push(EditOp::Insert);
            j -= 1;
        } else {
            ops.push(EditOp::Delete);
            i -= 1;
        }
    }
    ops.reverse();
    ops
}

/// WER over already-tokenized words (no normalization).
pub fn wer_words<S: AsRef<str>>(ref_words: &[S], hyp_words: &[S]) -> Result<WerBreakdown, WerError> {
    if ref_words.is_empty() {
        return Err(WerError::EmptyReference);
    }
    let mut sub = 0;
    let mut ins = 0;
    let mut del = 0;
    for op in edit_alignment(ref_words, hyp_words) {
        match op {
            EditOp::Match => {}
            EditOp::Substitute => sub += 1,
            EditOp::Insert => ins += 1,
            EditOp::Delete => del += 1,
        }
    }
    Ok(WerBreakdown::from_counts(sub, ins, del, ref_words.len()))
}

/// Normalize both texts under `rules`, then compute WER.
///
/// An empty normalized reference is an error; an empty normalized hypothesis
/// against a nonempty reference counts every reference word as deleted.
pub fn wer(ref_text: &str, hyp_text: &str, rules: &NormalizationRules) -> Result<WerBreakdown, WerError> {
    let ref_norm = normalize_text(ref_text, rules)?;
    let hyp_norm = normalize_text(hyp_text, rules)?;
    let ref_words: Vec<&str> = ref_norm.split_whitespace().collect();
    let hyp_words: Vec<&str> = hyp_norm.split_whitespace().collect();
    wer_words(&ref_words, &hyp_words)
}
