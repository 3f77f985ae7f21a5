//! Frame-synchronous transducer beam search with shallow fusion, chunk-wise
//! streaming simulation, and the 13-configuration decoding sweep.
//!
//! The search keeps two hypothesis sets per frame: `active` hypotheses that
//! may still emit tokens within the frame, and `done` hypotheses that have
//! taken blank (committing the frame). Done hypotheses with identical token
//! sequences merge by log-sum-exp. Each expansion round prunes the union of
//! both sets to the beam, so at `beam = 1` the search commits exactly like
//! greedy decoding, while an unbounded beam computes the exact full-sum
//! score of every token sequence.
//!
//! Streaming reuses the same search verbatim; only the encoder's per-frame
//! visibility changes: `visibility(t) = (t − chunk_start + 1) +
//! min(left_context_frames, chunk_start)`. With full chunk and full left
//! context the visibility profile equals the offline one, so streaming and
//! offline decoding are bitwise identical.

use std::collections::BTreeMap;

use once_cell::sync::Lazy;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::context_graph::{ACState, ContextGraph, SubwordVocab};
use crate::corpus::{wer, Manifest, NormalizationRules, WerBreakdown, WerError};
use crate::transducer::{ModelError, TableTransducer};

/// Default frame duration: reconciles "left-context-frames = 64" with the
/// "lf = 2.5 s" style labels (64 × 40 ms ≈ 2.5 s).
pub const DEFAULT_FRAME_MS: u32 = 40;

/// Emission cap per frame, guaranteeing termination.
pub const DEFAULT_MAX_SYMBOLS_PER_FRAME: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("no frames to decode")]
    EmptyFrames,
    #[error("beam width must be ≥ 1")]
    BadBeam,
    #[error("vocabulary has no pieces")]
    EmptyVocab,
    #[error("model vocab size {model} does not match tokenizer piece count {vocab}")]
    VocabMismatch { model: usize, vocab: usize },
    #[error("chunk_frames must be ≥ 1 (use None for a full-utterance chunk)")]
    ZeroChunk,
    #[error("frame_ms must be ≥ 1")]
    ZeroFrameMs,
    #[error("config label {label:?} does not match `cs=<int>ms;lf=(<real>s|inf)`: {reason}")]
    BadLabel { label: String, reason: String },
    #[error("chunk of {chunk_ms} ms is not a whole number of {frame_ms} ms frames")]
    NonDivisibleChunk { chunk_ms: u64, frame_ms: u32 },
    #[error("manifest has no utterances to sweep")]
    EmptyManifest,
    #[error("utterance {id:?} carries no frame sequence")]
    MissingFrames { id: String },
    #[error("utterance {id:?} carries no reference text")]
    MissingReference { id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Wer(#[from] WerError),
}

/// Chunk/left-context decoding configuration. `None` means FULL (unlimited).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamingConfig {
    /// Frames per chunk; `None` = the whole utterance is one chunk.
    pub chunk_frames: Option<usize>,
    /// History frames visible before the current chunk; `None` = unlimited.
    pub left_context_frames: Option<usize>,
    /// Frame duration in milliseconds.
    pub frame_ms: u32,
}

impl Default for StreamingConfig {
    fn default() -> Self {
        StreamingConfig::offline()
    }
}

impl StreamingConfig {
    /// Full chunk, full left context: the offline configuration.
    pub fn offline() -> Self {
        StreamingConfig { chunk_frames: None, left_context_frames: None, frame_ms: DEFAULT_FRAME_MS }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.chunk_frames == Some(0) {
            return Err(DecodeError::ZeroChunk);
        }
        if self.frame_ms == 0 {
            return Err(DecodeError::ZeroFrameMs);
        }
        Ok(())
    }

    pub fn is_offline(&self) -> bool {
        self.chunk_frames.is_none() && self.left_context_frames.is_none()
    }
}

/// Search knobs beyond the beam width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Maximum token emissions within one frame before blank is forced.
    pub max_symbols_per_frame: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { max_symbols_per_frame: DEFAULT_MAX_SYMBOLS_PER_FRAME }
    }
}

/// One beam-search hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<u32>,
    pub log_score: f64,
    pub ac_state: ACState,
    /// Emissions within the current frame (reset when a blank commits it).
    pub emitted_in_frame: usize,
    /// Frame index at which each token of `tokens` was emitted.
    pub emit_frames: Vec<usize>,
}

/// One n-best entry of a decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub text: String,
    pub score: f64,
}

/// Tokens emitted while a given chunk's frames were being consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkTrace {
    pub chunk_index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub tokens: Vec<u32>,
    pub text: String,
}

/// Result of decoding one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub best_text: String,
    pub best_tokens: Vec<u32>,
    pub best_score: f64,
    /// Sorted by score descending; at most `beam` entries.
    pub nbest: Vec<NBestEntry>,
    /// Per-chunk emission trace for the best hypothesis.
    pub chunk_trace: Vec<ChunkTrace>,
}

/// One row of the sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left_ms: Option<u64>,
    pub wer: f64,
}

/// The 13-configuration sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// States the offline-as-13th-configuration convention.
    pub note: String,
    pub rows: Vec<SweepRow>,
}

/// Per-frame encoder visibility for a streaming configuration:
/// `(t − chunk_start + 1) + min(left_context_frames, chunk_start)`.
pub fn visibility_profile(config: &StreamingConfig, t_len: usize) -> Result<Vec<usize>, DecodeError> {
    config.validate()?;
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let chunk_start = match config.chunk_frames {
            Some(chunk) => (t / chunk) * chunk,
            None => 0,
        };
        let history = match config.left_context_frames {
            Some(left) => left.min(chunk_start),
            None => chunk_start,
        };
        out.push((t - chunk_start + 1) + history);
    }
    Ok(out)
}

/// Offline beam search (unlimited visibility, default per-frame symbol cap).
pub fn beam_search(
    model: &TableTransducer,
    frames: &[u32],
    beam: usize,
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
) -> Result<DecodeResult, DecodeError> {
    beam_search_with_options(model, frames, beam, graph, vocab, &DecodeOptions::default())
}

/// [`beam_search`] with explicit [`DecodeOptions`].
pub fn beam_search_with_options(
    model: &TableTransducer,
    frames: &[u32],
    beam: usize,
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
    options: &DecodeOptions,
) -> Result<DecodeResult, DecodeError> {
    let visibility: Vec<usize> = (0..frames.len()).map(|t| t + 1).collect();
    decode_core(model, frames, &visibility, None, beam, graph, vocab, options)
}

/// Chunk-wise streaming decode. Hypotheses persist across chunks; only the
/// encoder visibility changes. With `chunk = FULL` and `left = FULL` the
/// result is bitwise identical to [`beam_search`].
pub fn streaming_decode(
    model: &TableTransducer,
    frames: &[u32],
    config: &StreamingConfig,
    beam: usize,
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
) -> Result<DecodeResult, DecodeError> {
    streaming_decode_with_options(model, frames, config, beam, graph, vocab, &DecodeOptions::default())
}

/// [`streaming_decode`] with explicit [`DecodeOptions`].
pub fn streaming_decode_with_options(
    model: &TableTransducer,
    frames: &[u32],
    config: &StreamingConfig,
    beam: usize,
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
    options: &DecodeOptions,
) -> Result<DecodeResult, DecodeError> {
    let visibility = visibility_profile(config, frames.len())?;
    decode_core(model, frames, &visibility, config.chunk_frames, beam, graph, vocab, options)
}

/// Greedy decoding: at every step take the single best label (token scores
/// include their fusion bonus), emitting until blank wins or the per-frame
/// cap forces one. Ties prefer the smallest token id, with blank last —
/// the same order [`beam_search`] uses, so `beam = 1` reproduces this
/// exactly.
pub fn greedy_decode(
    model: &TableTransducer,
    frames: &[u32],
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
) -> Result<DecodeResult, DecodeError> {
    greedy_decode_with_options(model, frames, graph, vocab, &DecodeOptions::default())
}

/// [`greedy_decode`] with explicit [`DecodeOptions`].
pub fn greedy_decode_with_options(
    model: &TableTransducer,
    frames: &[u32],
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
    options: &DecodeOptions,
) -> Result<DecodeResult, DecodeError> {
    check_inputs(model, frames, 1, vocab)?;
    let enc = model.encode_offline(frames)?;
    let blank = model.blank() as usize;
    let v = model.vocab_size();

    let mut tokens: Vec<u32> = Vec::new();
    let mut emit_frames: Vec<usize> = Vec::new();
    let mut score = 0.0;
    let mut state = ACState::default();
    for (t, enc_t) in enc.iter().enumerate() {
        let mut emitted = 0;
        loop {
            let logits = model.joint_logits_context(enc_t, model.pred_context(&tokens))?;
            if emitted >= options.max_symbols_per_frame {
                score += logits[blank];
                break;
            }
            // Best token (smallest id wins ties), then compare with blank;
            // the token wins score ties against blank.
            let mut best_k = 0usize;
            let mut best_gain = f64::NEG_INFINITY;
            let mut best_state = state;
            for k in 0..v {
                let (next, bonus) = match graph {
                    Some(g) => g.advance(state, k as u32),
                    None => (state, 0.0),
                };
                let gain = logits[k] + bonus;
                if gain > best_gain {
                    best_gain = gain;
                    best_k = k;
                    best_state = next;
                }
            }
            if logits[blank] > best_gain {
                score += logits[blank];
                break;
            }
            tokens.push(best_k as u32);
            emit_frames.push(t);
            score += best_gain;
            state = best_state;
            emitted += 1;
        }
    }
    let text = vocab.detokenize(&tokens);
    Ok(DecodeResult {
        best_text: text.clone(),
        best_tokens: tokens.clone(),
        best_score: score,
        nbest: vec![NBestEntry { text, score }],
        chunk_trace: build_chunk_trace(None, frames.len(), &tokens, &emit_frames, vocab),
    })
}

fn check_inputs(
    model: &TableTransducer,
    frames: &[u32],
    beam: usize,
    vocab: &SubwordVocab,
) -> Result<(), DecodeError> {
    if frames.is_empty() {
        return Err(DecodeError::EmptyFrames);
    }
    if beam < 1 {
        return Err(DecodeError::BadBeam);
    }
    if vocab.size() == 0 {
        return Err(DecodeError::EmptyVocab);
    }
    if vocab.size() != model.vocab_size() {
        return Err(DecodeError::VocabMismatch { model: model.vocab_size(), vocab: vocab.size() });
    }
    Ok(())
}

/// A `done` hypothesis: blank taken for the current frame, scores of equal
/// token sequences merged by log-sum-exp.
#[derive(Debug, Clone)]
struct DoneHyp {
    log_score: f64,
    /// Score of the single best branch merged in (decides which trace wins).
    best_branch: f64,
    ac_state: ACState,
    emit_frames: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn decode_core(
    model: &TableTransducer,
    frames: &[u32],
    visibility: &[usize],
    chunk_frames: Option<usize>,
    beam: usize,
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
    options: &DecodeOptions,
) -> Result<DecodeResult, DecodeError> {
    check_inputs(model, frames, beam, vocab)?;
    let enc = model.encode(frames, visibility)?;
    let blank = model.blank() as usize;
    let v = model.vocab_size();

    let mut carry: Vec<BeamHypothesis> = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_score: 0.0,
        ac_state: ACState::default(),
        emitted_in_frame: 0,
        emit_frames: Vec::new(),
    }];

    for (t, enc_t) in enc.iter().enumerate() {
        let mut done: BTreeMap<Vec<u32>, DoneHyp> = BTreeMap::new();
        let mut active = carry;

        for round in 0..=options.max_symbols_per_frame {
            let mut new_active: Vec<BeamHypothesis> = Vec::new();
            for hyp in &active {
                let logits = model.joint_logits_context(enc_t, model.pred_context(&hyp.tokens))?;
                // Blank commits the frame: merge into `done`.
                let blank_score = hyp.log_score + logits[blank];
                match done.get_mut(&hyp.tokens) {
                    Some(d) => {
                        d.log_score = crate::transducer::lse2(d.log_score, blank_score);
                        if blank_score > d.best_branch {
                            d.best_branch = blank_score;
                            d.ac_state = hyp.ac_state;
                            d.emit_frames = hyp.emit_frames.clone();
                        }
                    }
                    None => {
                        done.insert(
                            hyp.tokens.clone(),
                            DoneHyp {
                                log_score: blank_score,
                                best_branch: blank_score,
                                ac_state: hyp.ac_state,
                                emit_frames: hyp.emit_frames.clone(),
                            },
                        );
                    }
                }
                // Token emissions stay within the frame (capped).
                if round < options.max_symbols_per_frame {
                    for k in 0..v {
                        let (next_state, bonus) = match graph {
                            Some(g) => g.advance(hyp.ac_state, k as u32),
                            None => (hyp.ac_state, 0.0),
                        };
                        let mut tokens = hyp.tokens.clone();
                        tokens.push(k as u32);
                        let mut emit_frames = hyp.emit_frames.clone();
                        emit_frames.push(t);
                        new_active.push(BeamHypothesis {
                            tokens,
                            log_score: hyp.log_score + logits[k] + bonus,
                            ac_state: next_state,
                            emitted_in_frame: round + 1,
                            emit_frames,
                        });
                    }
                }
            }
            if new_active.is_empty() {
                break;
            }
            // Joint prune of done ∪ new_active to the beam. Done entries can
            // be evicted, which is what makes beam = 1 commit like greedy.
            // Order: score desc, then active before done (so a token emission
            // beats blank on an exact tie, as in greedy), then tokens asc.
            let mut pool: Vec<(bool, &Vec<u32>, f64)> = Vec::with_capacity(done.len() + new_active.len());
            for (tokens, d) in &done {
                pool.push((true, tokens, d.log_score));
            }
            for h in &new_active {
                pool.push((false, &h.tokens, h.log_score));
            }
            pool.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .expect("scores are finite")
                    .then_with(|| a.0.cmp(&b.0))
                    .then_with(|| a.1.cmp(b.1))
            });
            pool.truncate(beam);
            let keep_done: Vec<Vec<u32>> =
                pool.iter().filter(|(is_done, ..)| *is_done).map(|(_, t, _)| (*t).clone()).collect();
            let keep_active: Vec<Vec<u32>> =
                pool.iter().filter(|(is_done, ..)| !*is_done).map(|(_, t, _)| (*t).clone()).collect();
            done.retain(|tokens, _| keep_done.contains(tokens));
            let mut next_active = Vec::with_capacity(keep_active.len());
            for tokens in &keep_active {
                let idx = new_active.iter().position(|h| &h.tokens == tokens).expect("kept hyp exists");
                next_active.push(new_active[idx].clone());
            }
            active = next_active;
            if active.is_empty() {
                break;
            }
        }

        // Survivors of this frame are the done hypotheses.
        carry = done
            .into_iter()
            .map(|(tokens, d)| BeamHypothesis {
                tokens,
                log_score: d.log_score,
                ac_state: d.ac_state,
                emitted_in_frame: 0,
                emit_frames: d.emit_frames,
            })
            .collect();
    }

    // Rank final hypotheses: score desc, tokens asc.
    carry.sort_by(|a, b| {
        b.log_score
            .partial_cmp(&a.log_score)
            .expect("scores are finite")
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    let best = &carry[0];
    let nbest = carry
        .iter()
        .map(|h| NBestEntry { text: vocab.detokenize(&h.tokens), score: h.log_score })
        .collect();
    Ok(DecodeResult {
        best_text: vocab.detokenize(&best.tokens),
        best_tokens: best.tokens.clone(),
        best_score: best.log_score,
        nbest,
        chunk_trace: build_chunk_trace(chunk_frames, frames.len(), &best.tokens, &best.emit_frames, vocab),
    })
}

fn build_chunk_trace(
    chunk_frames: Option<usize>,
    t_len: usize,
    tokens: &[u32],
    emit_frames: &[usize],
    vocab: &SubwordVocab,
) -> Vec<ChunkTrace> {
    let chunk = chunk_frames.unwrap_or(t_len.max(1));
    let n_chunks = t_len.div_ceil(chunk).max(1);
    (0..n_chunks)
        .map(|c| {
            let start = c * chunk;
            let end = ((c + 1) * chunk).min(t_len);
            let chunk_tokens: Vec<u32> = tokens
                .iter()
                .zip(emit_frames)
                .filter(|(_, &f)| f >= start && f < end)
                .map(|(&tok, _)| tok)
                .collect();
            let text = vocab.detokenize(&chunk_tokens);
            ChunkTrace { chunk_index: c, start_frame: start, end_frame: end, tokens: chunk_tokens, text }
        })
        .collect()
}

static LABEL_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^cs=(\d+)ms;lf=(?:inf|(\d+(?:\.\d+)?)s)$").expect("valid regex"));

/// Parse a `cs=<int>ms;lf=(<real>s|inf)` configuration label at the default
/// 40 ms frame duration.
pub fn fuse_configs(label: &str) -> Result<StreamingConfig, DecodeError> {
    fuse_configs_with_frame_ms(label, DEFAULT_FRAME_MS)
}

/// [`fuse_configs`] with an explicit frame duration. The chunk must divide
/// exactly into frames; the left context is converted to milliseconds
/// (rounded to the nearest ms) and then floored to whole frames, so
/// `lf=2.5s` at 40 ms is 62 frames while `lf=2.56s` is exactly 64.
pub fn fuse_configs_with_frame_ms(label: &str, frame_ms: u32) -> Result<StreamingConfig, DecodeError> {
    if frame_ms == 0 {
        return Err(DecodeError::ZeroFrameMs);
    }
    let caps = LABEL_RE.captures(label).ok_or_else(|| DecodeError::BadLabel {
        label: label.to_string(),
        reason: "expected e.g. \"cs=320ms;lf=2.5s\" or \"cs=320ms;lf=inf\"".to_string(),
    })?;
    let chunk_ms: u64 = caps[1].parse().map_err(|e| DecodeError::BadLabel {
        label: label.to_string(),
        reason: format!("chunk milliseconds: {e}"),
    })?;
    if chunk_ms % frame_ms as u64 != 0 {
        return Err(DecodeError::NonDivisibleChunk { chunk_ms, frame_ms });
    }
    let chunk_frames = (chunk_ms / frame_ms as u64) as usize;
    if chunk_frames == 0 {
        return Err(DecodeError::ZeroChunk);
    }
    let left_context_frames = match caps.get(2) {
        None => None, // "inf"
        Some(secs) => {
            let secs: f64 = secs.as_str().parse().map_err(|e| DecodeError::BadLabel {
                label: label.to_string(),
                reason: format!("left-context seconds: {e}"),
            })?;
            let left_ms = (secs * 1000.0).round() as u64;
            Some((left_ms / frame_ms as u64) as usize)
        }
    };
    Ok(StreamingConfig { chunk_frames: Some(chunk_frames), left_context_frames, frame_ms })
}

/// The 12 streaming labels of the default sweep, ordered by chunk then left
/// context (offline is appended separately as the 13th row).
pub fn sweep_labels() -> Vec<String> {
    let mut labels = Vec::with_capacity(12);
    for chunk_ms in [320u64, 640, 1280, 2560] {
        for lf in ["2.56s", "5.12s", "inf"] {
            labels.push(format!("cs={chunk_ms}ms;lf={lf}"));
        }
    }
    labels
}

/// Decode every manifest utterance under the default 13 configurations
/// (chunk {320, 640, 1280, 2560} ms × left {2.56 s, 5.12 s, ∞} plus
/// offline) and report corpus WER per configuration.
pub fn sweep(
    model: &TableTransducer,
    manifest: &Manifest,
    beam: usize,
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
) -> Result<SweepReport, DecodeError> {
    // Validate references and frames up front for a clean error.
    if manifest.utterances.is_empty() {
        return Err(DecodeError::EmptyManifest);
    }
    for utt in &manifest.utterances {
        if utt.frames.as_ref().map_or(true, |f| f.is_empty()) {
            return Err(DecodeError::MissingFrames { id: utt.id.clone() });
        }
        if utt.ref_text.as_deref().map_or(true, |t| t.trim().is_empty()) {
            return Err(DecodeError::MissingReference { id: utt.id.clone() });
        }
    }

    let mut rows = Vec::with_capacity(13);
    let mut configs: Vec<(String, StreamingConfig)> = Vec::with_capacity(13);
    for label in sweep_labels() {
        let config = fuse_configs(&label)?;
        configs.push((label, config));
    }
    configs.push(("offline".to_string(), StreamingConfig::offline()));

    let rules = NormalizationRules::default();
    for (label, config) in configs {
        let breakdowns: Result<Vec<WerBreakdown>, DecodeError> = manifest
            .utterances
            .par_iter()
            .map(|utt| {
                let frames = utt.frames.as_ref().expect("validated above");
                let result = streaming_decode(model, frames, &config, beam, graph, vocab)?;
                let ref_text = utt.ref_text.as_ref().expect("validated above");
                Ok(wer(ref_text, &result.best_text, &rules)?)
            })
            .collect();
        let mut per_utt = breakdowns?.into_iter();
        let mut corpus = per_utt.next().expect("manifest is nonempty");
        for b in per_utt {
            corpus.accumulate(&b);
        }
        let (chunk_ms, left_ms) = match (config.chunk_frames, config.left_context_frames) {
            (Some(c), left) => (
                Some(c as u64 * config.frame_ms as u64),
                left.map(|l| l as u64 * config.frame_ms as u64),
            ),
            (None, _) => (None, None),
        };
        rows.push(SweepRow { label, chunk_ms, left_ms, wer: corpus.wer });
    }

    Ok(SweepReport {
        note: "12 streaming configurations plus offline (full chunk, full left context) as the 13th"
            .to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context_graph::{build_graph, FusionCosts};
    use crate::corpus::Utterance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A vocab whose piece count matches `v` (unk + single letters), so the
    /// model/vocab dimension check passes in tests that only care about ids.
    fn toy_vocab(v: usize) -> SubwordVocab {
        let mut pieces = vec!["<unk>".to_string()];
        for i in 1..v {
            let c = (b'a' + (i - 1) as u8) as char;
            pieces.push(format!("\u{2581}{c}"));
        }
        SubwordVocab::from_pieces(pieces)
    }

    fn toy_model(seed: u64, v: usize, f: usize, h: usize) -> TableTransducer {
        TableTransducer::seeded(v, f, h, seed).expect("valid dims")
    }

    fn random_frames(rng: &mut ChaCha8Rng, f: usize, len: usize) -> Vec<u32> {
        (0..len).map(|_| rng.gen_range(0..f as u32)).collect()
    }

    fn two_word_graph(v: usize) -> ContextGraph {
        // Bias-only graph over token ids 1 and 2 ("▁a", "▁b" pieces).
        let vocab = toy_vocab(v);
        let entries = [crate::context_graph::BiasEntry::new("a b", "test")];
        let graph =
            build_graph(None, &entries, &vocab, &FusionCosts::default()).expect("graph builds");
        assert_eq!(graph.patterns(), vec![(vec![1u32, 2], 0.7)], "fixture wiring");
        graph
    }

    #[test]
    fn input_validation_errors() {
        let model = toy_model(7, 3, 4, 3);
        let vocab = toy_vocab(3);
        assert!(matches!(
            beam_search(&model, &[], 2, None, &vocab),
            Err(DecodeError::EmptyFrames)
        ));
        assert!(matches!(
            beam_search(&model, &[0, 1], 0, None, &vocab),
            Err(DecodeError::BadBeam)
        ));
        let mismatched = toy_vocab(4);
        assert!(matches!(
            beam_search(&model, &[0, 1], 2, None, &mismatched),
            Err(DecodeError::VocabMismatch { model: 3, vocab: 4 })
        ));
    }

    #[test]
    fn beam_one_equals_greedy() {
        let vocab = toy_vocab(3);
        let graph = two_word_graph(3);
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let model = toy_model(seed, 3, 4, 3);
            let frames = random_frames(&mut rng, 4, 1 + (seed as usize % 12));
            for g in [None, Some(&graph)] {
                let beam = beam_search(&model, &frames, 1, g, &vocab).unwrap();
                let greedy = greedy_decode(&model, &frames, g, &vocab).unwrap();
                assert_eq!(beam.best_tokens, greedy.best_tokens, "seed {seed}");
                assert!(
                    (beam.best_score - greedy.best_score).abs() < 1e-12,
                    "seed {seed}: {} vs {}",
                    beam.best_score,
                    greedy.best_score
                );
            }
        }
    }

    #[test]
    fn streaming_full_full_is_bitwise_offline() {
        let vocab = toy_vocab(3);
        let graph = two_word_graph(3);
        let config = StreamingConfig::offline();
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
            let model = toy_model(200 + seed, 3, 4, 3);
            let frames = random_frames(&mut rng, 4, 1 + (seed as usize % 15));
            let offline = beam_search(&model, &frames, 4, Some(&graph), &vocab).unwrap();
            let streamed =
                streaming_decode(&model, &frames, &config, 4, Some(&graph), &vocab).unwrap();
            assert_eq!(offline.best_tokens, streamed.best_tokens);
            assert!(offline.best_score == streamed.best_score, "must be bitwise identical");
            assert_eq!(offline.nbest, streamed.nbest);
        }
    }

    #[test]
    fn absent_graph_equals_empty_graph() {
        let vocab = toy_vocab(3);
        let empty = ContextGraph::empty();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for seed in 0..10u64 {
            let model = toy_model(300 + seed, 3, 4, 3);
            let frames = random_frames(&mut rng, 4, 6);
            let without = beam_search(&model, &frames, 3, None, &vocab).unwrap();
            let with_empty = beam_search(&model, &frames, 3, Some(&empty), &vocab).unwrap();
            assert_eq!(without, with_empty);
        }
    }

    /// Independent oracle: enumerate every RNN-T alignment path (sequences
    /// of emissions/blanks with the per-frame cap), accumulate per-token-
    /// sequence scores by log-sum-exp, and compare with an unpruned search.
    fn enumerate_scores(
        model: &TableTransducer,
        frames: &[u32],
        graph: Option<&ContextGraph>,
        cap: usize,
    ) -> BTreeMap<Vec<u32>, f64> {
        let enc = model.encode_offline(frames).unwrap();
        let blank = model.blank() as usize;
        let v = model.vocab_size();
        let mut scores: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        #[allow(clippy::too_many_arguments)]
        fn rec(
            model: &TableTransducer,
            enc: &[Vec<f64>],
            blank: usize,
            v: usize,
            cap: usize,
            graph: Option<&ContextGraph>,
            t: usize,
            emitted: usize,
            tokens: &mut Vec<u32>,
            state: ACState,
            acc: f64,
            scores: &mut BTreeMap<Vec<u32>, f64>,
        ) {
            let logits =
                model.joint_logits_context(&enc[t], model.pred_context(tokens)).unwrap();
            let blank_acc = acc + logits[blank];
            if t + 1 == enc.len() {
                let entry = scores.entry(tokens.clone()).or_insert(f64::NEG_INFINITY);
                *entry = crate::transducer::lse2(*entry, blank_acc);
            } else {
                rec(model, enc, blank, v, cap, graph, t + 1, 0, tokens, state, blank_acc, scores);
            }
            if emitted < cap {
                for k in 0..v {
                    let (next, bonus) = match graph {
                        Some(g) => g.advance(state, k as u32),
                        None => (state, 0.0),
                    };
                    tokens.push(k as u32);
                    rec(
                        model,
                        enc,
                        blank,
                        v,
                        cap,
                        graph,
                        t,
                        emitted + 1,
                        tokens,
                        next,
                        acc + logits[k] + bonus,
                        scores,
                    );
                    tokens.pop();
                }
            }
        }
        rec(
            model,
            &enc,
            blank,
            v,
            cap,
            graph,
            0,
            0,
            &mut Vec::new(),
            graph.map_or(ACState::default(), |g| g.start()),
            0.0,
            &mut scores,
        );
        scores
    }

    #[test]
    fn unpruned_beam_matches_exhaustive_enumeration() {
        let vocab = toy_vocab(3);
        let graph = two_word_graph(3);
        let options = DecodeOptions { max_symbols_per_frame: 2 };
        for seed in 0..10u64 {
            let model = toy_model(400 + seed, 3, 4, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let frames = random_frames(&mut rng, 4, 2);
            for g in [None, Some(&graph)] {
                let oracle = enumerate_scores(&model, &frames, g, 2);
                let result =
                    beam_search_with_options(&model, &frames, usize::MAX, g, &vocab, &options)
                        .unwrap();
                // The search must produce exactly the token sequences the
                // oracle enumerates, with matching full-sum scores.
                assert_eq!(result.nbest.len(), oracle.len());
                let best_oracle = oracle
                    .iter()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then_with(|| b.0.cmp(a.0)))
                    .unwrap();
                assert!((result.best_score - best_oracle.1).abs() < 1e-9);
                assert_eq!(&result.best_tokens, best_oracle.0);
                // Check every sequence's merged score.
                let mut all = beam_search_with_options(
                    &model, &frames, usize::MAX, g, &vocab, &options,
                )
                .unwrap();
                all.nbest.sort_by(|a, b| a.text.cmp(&b.text));
                for (tokens, score) in &oracle {
                    let text = vocab.detokenize(tokens);
                    let found = all
                        .nbest
                        .iter()
                        .find(|e| e.text == text && (e.score - score).abs() < 1e-9);
                    assert!(found.is_some(), "missing sequence {tokens:?} at score {score}");
                }
            }
        }
    }

    #[test]
    fn unbounded_beam_dominates_finite_beams() {
        // A small per-frame cap keeps the unpruned search tractable while
        // preserving the property under test.
        let vocab = toy_vocab(3);
        let options = DecodeOptions { max_symbols_per_frame: 2 };
        for seed in 0..10u64 {
            let model = toy_model(600 + seed, 3, 4, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames = random_frames(&mut rng, 4, 3);
            let exhaustive =
                beam_search_with_options(&model, &frames, usize::MAX, None, &vocab, &options)
                    .unwrap();
            for beam in [1usize, 2, 4] {
                let pruned =
                    beam_search_with_options(&model, &frames, beam, None, &vocab, &options)
                        .unwrap();
                assert!(
                    exhaustive.best_score >= pruned.best_score - 1e-12,
                    "beam {beam} beat exhaustive"
                );
            }
        }
    }

    #[test]
    fn fusion_adds_exactly_the_scanned_bonus_when_unpruned() {
        let vocab = toy_vocab(3);
        let graph = two_word_graph(3);
        let options = DecodeOptions { max_symbols_per_frame: 2 };
        let model = toy_model(77, 3, 4, 2);
        let frames = vec![0, 3];
        let plain =
            beam_search_with_options(&model, &frames, usize::MAX, None, &vocab, &options).unwrap();
        let fused = beam_search_with_options(
            &model,
            &frames,
            usize::MAX,
            Some(&graph),
            &vocab,
            &options,
        )
        .unwrap();
        // Same token sequences appear in both; fused score = plain + scan.
        let mut plain_sorted = plain.nbest.clone();
        plain_sorted.sort_by(|a, b| a.text.cmp(&b.text));
        let mut fused_sorted = fused.nbest.clone();
        fused_sorted.sort_by(|a, b| a.text.cmp(&b.text));
        assert_eq!(plain_sorted.len(), fused_sorted.len());
        // Spot-check the known pattern "A B" = ids [1, 2]: bonus 0.7.
        let plain_scores = enumerate_scores(&model, &frames, None, 2);
        let fused_scores = enumerate_scores(&model, &frames, Some(&graph), 2);
        for (tokens, base) in &plain_scores {
            let with = fused_scores[tokens];
            let expected = base + graph.scan_total(tokens);
            assert!(
                (with - expected).abs() < 1e-12,
                "tokens {tokens:?}: {with} vs {expected}"
            );
        }
        assert!((fused_scores[&vec![1u32, 2]] - (plain_scores[&vec![1u32, 2]] + 0.7)).abs() < 1e-12);
    }

    #[test]
    fn visibility_profile_matches_formula() {
        let cfg = StreamingConfig {
            chunk_frames: Some(8),
            left_context_frames: Some(64),
            frame_ms: 40,
        };
        let vis = visibility_profile(&cfg, 101).unwrap();
        assert_eq!(vis[0], 1);
        assert_eq!(vis[7], 8);
        assert_eq!(vis[8], 1 + 8); // second chunk sees all 8 history frames
        assert_eq!(vis[100], (100 - 96 + 1) + 64);

        let offline = visibility_profile(&StreamingConfig::offline(), 10).unwrap();
        assert_eq!(offline, (1..=10).collect::<Vec<_>>());

        // More left context never shrinks visibility.
        let small = StreamingConfig { left_context_frames: Some(2), ..cfg };
        let vis_small = visibility_profile(&small, 101).unwrap();
        for (a, b) in vis_small.iter().zip(&vis) {
            assert!(a <= b);
        }
    }

    #[test]
    fn fuse_configs_parses_documented_examples() {
        let c = fuse_configs("cs=320ms;lf=inf").unwrap();
        assert_eq!(c.chunk_frames, Some(8));
        assert_eq!(c.left_context_frames, None);

        // 2.5 s → 2500 ms → floor(2500 / 40) = 62 whole frames.
        let c = fuse_configs("cs=2560ms;lf=2.5s").unwrap();
        assert_eq!(c.chunk_frames, Some(64));
        assert_eq!(c.left_context_frames, Some(62));

        // 2.56 s and 5.12 s are exact multiples.
        let c = fuse_configs("cs=320ms;lf=2.56s").unwrap();
        assert_eq!(c.chunk_frames, Some(8));
        assert_eq!(c.left_context_frames, Some(64));
        let c = fuse_configs("cs=1280ms;lf=5.12s").unwrap();
        assert_eq!(c.chunk_frames, Some(32));
        assert_eq!(c.left_context_frames, Some(128));
    }

    #[test]
    fn fuse_configs_rejects_malformed_labels() {
        for label in [
            "",
            "offline",
            "cs=320;lf=inf",
            "cs=320ms",
            "lf=inf",
            "cs=320ms;lf=infs",
            "cs=-320ms;lf=inf",
            "cs=320ms;lf=2,5s",
            "cs=320ms,lf=inf",
        ] {
            assert!(
                matches!(fuse_configs(label), Err(DecodeError::BadLabel { .. })),
                "{label:?} should be rejected"
            );
        }
        assert!(matches!(
            fuse_configs("cs=100ms;lf=inf"),
            Err(DecodeError::NonDivisibleChunk { chunk_ms: 100, frame_ms: 40 })
        ));
        assert!(matches!(fuse_configs("cs=0ms;lf=inf"), Err(DecodeError::ZeroChunk)));
        assert!(matches!(
            fuse_configs_with_frame_ms("cs=320ms;lf=inf", 0),
            Err(DecodeError::ZeroFrameMs)
        ));
        // Divisibility is checked against the explicit frame duration.
        assert!(fuse_configs_with_frame_ms("cs=100ms;lf=inf", 20).is_ok());
    }

    fn sweep_manifest(model: &TableTransducer, n: usize) -> Manifest {
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let mut utts = Vec::new();
        for i in 0..n {
            let frames = random_frames(&mut rng, model.frame_alphabet(), 6 + (i % 5));
            utts.push(Utterance {
                id: format!("utt-{i:03}"),
                duration_s: frames.len() as f64 * 0.04,
                ref_text: Some("a b".to_string()),
                pl: Default::default(),
                metrics: Default::default(),
                frames: Some(frames),
            });
        }
        Manifest { utterances: utts, source_tag: "test".to_string() }
    }

    #[test]
    fn sweep_produces_thirteen_deterministic_rows() {
        let model = toy_model(99, 3, 4, 3);
        let vocab = toy_vocab(3);
        let manifest = sweep_manifest(&model, 8);
        let report = sweep(&model, &manifest, 2, None, &vocab).unwrap();
        assert_eq!(report.rows.len(), 13);
        let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels[0], "cs=320ms;lf=2.56s");
        assert_eq!(labels[1], "cs=320ms;lf=5.12s");
        assert_eq!(labels[2], "cs=320ms;lf=inf");
        assert_eq!(labels[11], "cs=2560ms;lf=inf");
        assert_eq!(labels[12], "offline");
        assert_eq!(report.rows[0].chunk_ms, Some(320));
        assert_eq!(report.rows[0].left_ms, Some(2560));
        assert_eq!(report.rows[2].left_ms, None);
        assert_eq!(report.rows[12].chunk_ms, None);
        assert!(report.note.contains("13th"));
        for row in &report.rows {
            assert!(row.wer.is_finite() && row.wer >= 0.0);
        }

        // Byte-identical across reruns.
        let again = sweep(&model, &manifest, 2, None, &vocab).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn sweep_requires_frames_and_references() {
        let model = toy_model(99, 3, 4, 3);
        let vocab = toy_vocab(3);
        let mut manifest = sweep_manifest(&model, 2);
        manifest.utterances[1].frames = None;
        assert!(matches!(
            sweep(&model, &manifest, 2, None, &vocab),
            Err(DecodeError::MissingFrames { id }) if id == "utt-001"
        ));
        let mut manifest = sweep_manifest(&model, 2);
        manifest.utterances[0].ref_text = None;
        assert!(matches!(
            sweep(&model, &manifest, 2, None, &vocab),
            Err(DecodeError::MissingReference { id }) if id == "utt-000"
        ));
    }

    #[test]
    fn nbest_is_sorted_and_bounded_by_beam() {
        let model = toy_model(321, 3, 4, 3);
        let vocab = toy_vocab(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames = random_frames(&mut rng, 4, 8);
        for beam in [1usize, 2, 3, 5] {
            let result = beam_search(&model, &frames, beam, None, &vocab).unwrap();
            assert!(result.nbest.len() <= beam);
            assert!(!result.nbest.is_empty());
            for pair in result.nbest.windows(2) {
                assert!(pair[0].score >= pair[1].score);
            }
            assert_eq!(result.nbest[0].score, result.best_score);
            assert_eq!(result.nbest[0].text, result.best_text);
        }
    }

    #[test]
    fn chunk_trace_covers_frames_and_tokens() {
        let model = toy_model(55, 3, 4, 3);
        let vocab = toy_vocab(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames = random_frames(&mut rng, 4, 10);
        let config = StreamingConfig {
            chunk_frames: Some(4),
            left_context_frames: Some(2),
            frame_ms: 40,
        };
        let result = streaming_decode(&model, &frames, &config, 3, None, &vocab).unwrap();
        assert_eq!(result.chunk_trace.len(), 3); // ceil(10 / 4)
        assert_eq!(result.chunk_trace[0].start_frame, 0);
        assert_eq!(result.chunk_trace[2].end_frame, 10);
        let mut concat = Vec::new();
        for (i, trace) in result.chunk_trace.iter().enumerate() {
            assert_eq!(trace.chunk_index, i);
            concat.extend_from_slice(&trace.tokens);
        }
        assert_eq!(concat, result.best_tokens, "trace tokens concat to best hypothesis");

        // Offline: a single chunk holding everything.
        let offline = beam_search(&model, &frames, 3, None, &vocab).unwrap();
        assert_eq!(offline.chunk_trace.len(), 1);
        assert_eq!(offline.chunk_trace[0].tokens, offline.best_tokens);
    }

    #[test]
    fn forced_blank_caps_emissions_per_frame() {
        // With a cap of 1, no frame may emit more than one token.
        let model = toy_model(404, 3, 4, 3);
        let vocab = toy_vocab(3);
        let options = DecodeOptions { max_symbols_per_frame: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let frames = random_frames(&mut rng, 4, 6);
        let result =
            beam_search_with_options(&model, &frames, 4, None, &vocab, &options).unwrap();
        assert!(result.best_tokens.len() <= frames.len());
        let greedy = greedy_decode_with_options(&model, &frames, None, &vocab, &options).unwrap();
        assert!(greedy.best_tokens.len() <= frames.len());
    }
}
