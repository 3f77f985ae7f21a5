//! Bundled synthetic grammar corpus and the end-to-end demo pipeline.
//!
//! This module fabricates a tiny, fully deterministic speech-recognition
//! setting so the whole experiment loop can run in seconds with no audio:
//! a finite grammar over travel-flavored sentences, four confusable
//! place-name pairs, a table-driven acoustic model whose frame symbols vote
//! for vocabulary words, and two simulated pseudo-labelers (weak and strong)
//! that corrupt reference text at different rates. Everything downstream of
//! a seed is byte-identical across runs.
//!
//! [`run_demo`] wires the pipeline end to end:
//!
//! 1. generate corpora — supervised text, a pseudo-labeled pool with planted
//!    filter violations, and a framed eval set ([`supervised_corpus`],
//!    [`pseudo_labeled_pool`], [`eval_corpus`]);
//! 2. filter the weak pseudo-labels with H1–H3;
//! 3. score weak against strong pseudo-labels and select `pseudo_wer ≤ 0.25`;
//! 4. train the n-gram LM and the subword vocabulary on the surviving text;
//! 5. build LM-only, bias-only, and combined context graphs;
//! 6. decode the eval set offline under each graph (the fusion report) and
//!    run the 13-configuration latency sweep;
//! 7. optionally write JSON artifacts plus a summary report with digests.
//!
//! ## How the synthetic acoustics work
//!
//! The model built by [`build_demo_model`] is engineered, not sampled. Each
//! grammar word owns one hidden coordinate and one frame symbol that votes
//! for it while inhibiting everything else by `−4`; the joint matrix reads
//! the coordinates back out, so after the causal-mean encoder a label's
//! score gap over the noise floor is `134 × (visible frames voting for it)
//! / window`. A constant hidden channel (every frame contributes `1`, so
//! its mean is exactly `1` in any window) carries window-independent
//! offsets: blank keeps a floor of `+5` so silence never hallucinates
//! words — and so blank dominates every frame's softmax normalizer, which
//! keeps fusion bonuses from paying for themselves through normalizer
//! shifts. Each *wrong* name variant gets a small tilt. Ambiguous name
//! frames vote for both variants of a pair equally, so without fusion the
//! wrong variant wins by exactly that tilt — which any fusion bonus (plain
//! bias cost, or de-logged LM weight) overturns, while the largest bonus
//! any decode can actually reach stays below the blank floor, so fusion
//! re-ranks the confusable names without ever inserting words into
//! silence. The predictor pins the last two emitted tokens (and their
//! confusable partners) at `−1000` — far below any reachable acoustic
//! score — which is what makes emissions advance left to right instead of
//! re-firing old words.
//!
//! "Registered" utterances hide the disambiguating evidence deep in the
//! past: a short register early in the utterance nudges the correct
//! variant's coordinate (too faintly to transcribe — blank dwarfs it on
//! the spot), a long silence follows, and the ambiguous name occupies
//! frames 128-135 exactly. In that corridor a 5.12 s left context still
//! reaches back to the register, whose diluted residue outweighs the
//! wrong-variant tilt, while a 2.56 s context has lost it — for every
//! chunk size in the sweep. Short windows therefore cost accuracy on
//! precisely the registered utterances, giving the latency sweep a real
//! quality gradient.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context_graph::{
    build_graph, curate_bias_list, train_subwords, BiasEntry, ContextGraph, FusionCosts,
    GraphError, SubwordError, SubwordVocab,
};
use crate::corpus::{
    normalize_text, save_manifest, wer, Manifest, ManifestError, NormalizationRules,
    NormalizeError, Utterance, WerBreakdown, WerError,
};
use crate::decode::{beam_search, sweep, DecodeError, SweepReport};
use crate::lm::{train, write_arpa, ArpaError, LmError, NGramLM, TrainConfig};
use crate::pl_filter::{
    apply_filters, cross_model_wer, mux, select, Direction, FilterConfig, FilterError,
    FilterReport, MuxSchedule, SelectionPolicy, PSEUDO_WER_METRIC,
};
use crate::transducer::{ModelError, TableTransducer};

/// Default seed for the demo pipeline and the bundled corpora.
pub const DEMO_SEED: u64 = 17;

/// Seconds per frame (matches the decoder's 40 ms default).
pub const FRAME_SECONDS: f64 = 0.04;

/// Pseudo-label tag of the weak (noisy) teacher.
pub const WEAK_TAG: &str = "pl_weak";
/// Pseudo-label tag of the strong teacher.
pub const STRONG_TAG: &str = "pl_strong";

/// Beam width used for every demo decode. Wide enough that the decoder's
/// alignment-merging marginals converge: the utterance-level score of a two-
/// word hypothesis is stable from beam 6 upward, while very small beams sit
/// on pruning knife-edges where an evicted accumulator can flip a close
/// name pair.
pub const DEMO_BEAM: usize = 8;

const SUPERVISED_UTTS: usize = 120;
const POOL_UTTS: usize = 300;
const BPE_VOCAB: usize = 512;
const MUX_BATCH: usize = 10;
const MUX_WEIGHTS: (f64, f64) = (0.3, 0.7);

/// Name-swap probability of the weak pseudo-labeler.
const WEAK_SWAP: f64 = 0.30;
/// Name-swap probability of the strong pseudo-labeler.
const STRONG_SWAP: f64 = 0.05;

// -- grammar ---------------------------------------------------------------

const VERBS: [&str; 2] = ["visit", "meet"];
const PREPS: [&str; 2] = ["near", "from"];
const NOUNS: [&str; 4] = ["port", "mount", "lake", "town"];
/// Confusable place-name pairs: (correct form, weak-teacher confusion).
const NE_PAIRS: [(&str, &str); 4] =
    [("dorin", "doran"), ("toman", "tomen"), ("velka", "velna"), ("sorel", "sorek")];

/// The grammar's confusable name pairs, `(correct, wrong)`.
pub fn ne_pairs() -> &'static [(&'static str, &'static str)] {
    &NE_PAIRS
}

/// Every grammar word the acoustic model can voice, correct name variants
/// and weak-teacher confusions included. Order is fixed; it defines the
/// model's hidden-coordinate layout.
pub fn demo_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    words.extend(VERBS);
    words.extend(PREPS);
    words.extend(["the", "old"]);
    words.extend(NOUNS);
    words.extend(NE_PAIRS.iter().map(|(c, _)| *c));
    words.extend(NE_PAIRS.iter().map(|(_, x)| *x));
    words
}

fn sample_ne(rng: &mut ChaCha8Rng) -> &'static str {
    NE_PAIRS[rng.gen_range(0..NE_PAIRS.len())].0
}

/// Draw one sentence from the five grammar templates.
fn sample_sentence(rng: &mut ChaCha8Rng) -> String {
    let verb = VERBS[rng.gen_range(0..VERBS.len())];
    match rng.gen_range(0..5u32) {
        0 => format!("{verb} {}", sample_ne(rng)),
        1 => format!("{verb} {} {}", PREPS[rng.gen_range(0..PREPS.len())], sample_ne(rng)),
        2 => format!("{verb} the {}", NOUNS[rng.gen_range(0..NOUNS.len())]),
        3 => format!(
            "{verb} {} the {}",
            PREPS[rng.gen_range(0..PREPS.len())],
            NOUNS[rng.gen_range(0..NOUNS.len())]
        ),
        _ => format!("{verb} the old {}", NOUNS[rng.gen_range(0..NOUNS.len())]),
    }
}

/// Fixed sentences that guarantee every grammar word — and both
/// `(verb, name)` bigrams per name — appear in the supervised text
/// regardless of sampling luck.
fn coverage_sentences() -> Vec<String> {
    let mut v = Vec::new();
    for (correct, _) in NE_PAIRS {
        v.push(format!("visit {correct}"));
        v.push(format!("meet {correct}"));
    }
    for noun in NOUNS {
        v.push(format!("visit the {noun}"));
    }
    v.push("meet from the port".to_string());
    v.push("meet near the mount".to_string());
    v.push("visit the old lake".to_string());
    v.push("meet the old town".to_string());
    v
}

/// Replace correct names by their confusable variant with probability
/// `swap_prob` per occurrence — the whole pseudo-labeler noise model.
fn corrupt(text: &str, swap_prob: f64, rng: &mut ChaCha8Rng) -> String {
    text.split_whitespace()
        .map(|w| {
            for (correct, wrong) in NE_PAIRS {
                if w == correct && rng.gen_bool(swap_prob) {
                    return wrong;
                }
            }
            w
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Errors raised by corpus generation, model construction, or the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("word {word:?} does not tokenize to a single known piece (got {pieces:?})")]
    NotSinglePiece { word: String, pieces: Vec<String> },
    #[error("frame rendering references unknown word {word:?}")]
    UnknownWord { word: String },
    #[error("frame style {style:?} requires a correct name variant, got {word:?}")]
    NotaName { style: String, word: String },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Arpa(#[from] ArpaError),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Wer(#[from] WerError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("failed to write demo artifact: {0}")]
    Io(#[from] std::io::Error),
}

// -- corpora ---------------------------------------------------------------

/// Ids of the pool utterances that were planted to violate each filter
/// heuristic. [`pseudo_labeled_pool`] guarantees the three sets are disjoint
/// and that no unplanted row violates any heuristic, so a filter run must
/// reproduce them exactly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub h1: Vec<String>,
    pub h2: Vec<String>,
    pub h3: Vec<String>,
}

/// Supervised split: `n` reference-only sentences (the first 16 are the
/// fixed coverage block). Durations assume two words per second.
pub fn supervised_corpus(n: usize, seed: u64) -> Manifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest::new("supervised");
    let coverage = coverage_sentences();
    let sampled = (coverage.len()..n).map(|_| sample_sentence(&mut rng));
    for (i, text) in coverage.into_iter().chain(sampled).take(n).enumerate() {
        let words = text.split_whitespace().count() as f64;
        let mut utt = Utterance::new(format!("sup-{i:03}"), words / 2.0);
        utt.ref_text = Some(text);
        manifest.utterances.push(utt);
    }
    manifest
}

/// Unlabeled pool with simulated weak/strong pseudo-labels and planted
/// filter violations.
///
/// Layout is by index modulo 25: slot 3 plants an H1 hallucination loop,
/// slot 10 an over-long garbage word (H2), slot 17 a pathological duration
/// (H3; too slow and too fast alternate per block), and slots 20–22 plant
/// "carrier" rows whose weak label swaps exactly one name in a four-word
/// sentence — they survive filtering with `pseudo_wer = 0.25`, which is how
/// the confusable variants legitimately enter the downstream LM and
/// tokenizer text. All remaining rows are clean grammar sentences with
/// probabilistic name swaps (weak 30%, strong 5%).
pub fn pseudo_labeled_pool(n: usize, seed: u64) -> (Manifest, PlantedTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest::new("pool");
    let mut planted = PlantedTruth::default();
    for i in 0..n {
        let id = format!("pool-{i:04}");
        let slot = i % 25;
        let block = i / 25;
        let reference = sample_sentence(&mut rng);
        let ref_words = reference.split_whitespace().count() as f64;
        let (weak, strong, duration) = match slot {
            3 => {
                planted.h1.push(id.clone());
                let first = reference.split_whitespace().next().expect("nonempty sentence");
                let weak = format!("{first} {first} {first} {first}");
                (weak, corrupt(&reference, STRONG_SWAP, &mut rng), 2.0)
            }
            10 => {
                planted.h2.push(id.clone());
                let weak = format!("{reference} overlongboundwordxx");
                (weak, corrupt(&reference, STRONG_SWAP, &mut rng), ref_words / 2.0)
            }
            17 => {
                planted.h3.push(id.clone());
                let weak = corrupt(&reference, WEAK_SWAP, &mut rng);
                let words = weak.split_whitespace().count() as f64;
                // Alternate between impossibly slow (< 1 w/s) and fast (> 4 w/s).
                let duration = if block % 2 == 0 { words * 2.0 } else { words / 8.0 };
                (weak, corrupt(&reference, STRONG_SWAP, &mut rng), duration)
            }
            20 | 21 | 22 => {
                let (correct, wrong) = NE_PAIRS[(block * 3 + (slot - 20)) % NE_PAIRS.len()];
                let carrier_ref = format!("meet from the {correct}");
                let weak = format!("meet from the {wrong}");
                let strong = carrier_ref.clone();
                let mut utt = Utterance::new(id, 2.0);
                utt.ref_text = Some(carrier_ref);
                utt.pl.insert(WEAK_TAG.to_string(), weak);
                utt.pl.insert(STRONG_TAG.to_string(), strong);
                manifest.utterances.push(utt);
                continue;
            }
            _ => (
                corrupt(&reference, WEAK_SWAP, &mut rng),
                corrupt(&reference, STRONG_SWAP, &mut rng),
                ref_words / 2.0,
            ),
        };
        let mut utt = Utterance::new(id, duration);
        utt.ref_text = Some(reference);
        utt.pl.insert(WEAK_TAG.to_string(), weak);
        utt.pl.insert(STRONG_TAG.to_string(), strong);
        manifest.utterances.push(utt);
    }
    (manifest, planted)
}

// -- acoustic model --------------------------------------------------------

/// Vote a word's frame symbol casts for its own hidden coordinate. Large
/// enough that a handful of frames at the end of a 130-frame registered
/// utterance still clears the blank floor despite causal-mean dilution.
const VOTE_WORD: f64 = 130.0;
/// Inhibition every frame applies to all coordinates it does not vote for.
/// Uniform across frames, so it cancels in every log-softmax comparison.
const CROSS_INHIBIT: f64 = 4.0;
/// Register-frame advantage of the correct name variant over the rest of
/// the vocabulary. Deliberately tiny: at the decision point (~130 frames
/// later) the diluted residue must still exceed [`AMBIG_TILT`], but at the
/// register itself the name must stay far below blank, or a beam path
/// would cash the register in by emitting the name right there.
const REGISTER_NE_GAP: f64 = 2.0;
/// Register-frame vote for blank: the register is loud but voiceless, so
/// transcribing anything during it costs a beam path dearly.
const REGISTER_BLANK_VOTE: f64 = 12.0;
/// Constant score advantage of a wrong name variant over its correct twin
/// on ambiguous frames. Any fusion bonus above this flips the choice back;
/// every stacked LM bonus a decode can actually reach stays well below the
/// blank floor, so fusion can re-rank but never insert.
const AMBIG_TILT: f64 = 0.015;
/// Constant blank score floor: silence frames carry no votes of their own,
/// so this alone keeps massless words out of quiet regions. It also makes
/// blank dominate every frame's softmax normalizer, so a beam path cannot
/// profit from emitting a word merely to knock it out of the normalizer
/// via the recency penalty for the rest of a long utterance.
const BLANK_FLOOR: f64 = 5.0;
/// Predictor penalty on the last two emitted tokens and their partners.
/// Must dwarf the largest reachable coordinate value (`VOTE_WORD` + the
/// cross-inhibition), or a just-emitted word could re-fire through it.
const CONTEXT_PENALTY: f64 = 1000.0;

/// Frame-run lengths for rendered utterances.
const VERB_RUN: usize = 4;
const SECOND_RUN: usize = 5;
const GAP_SIL: usize = 2;
const TAIL_SIL: usize = 8;
const REGISTER_RUN: usize = 6;
/// Silence between the register and the ambiguity. Sized so the ambiguity
/// occupies frames 128-135: the only span where a 128-frame left context
/// still reaches the register (frames 6-11) but a 64-frame one does not,
/// for every chunk size in the sweep (chunk starts are multiples of 8).
const REGISTER_PAD_SIL: usize = 116;
/// The registered ambiguity run: exactly the frames-128-135 corridor.
const REGISTER_NE_RUN: usize = 8;

/// Maps grammar words to the demo model's frame symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMap {
    frame_alphabet: usize,
    /// Normalized word → its clean frame symbol.
    word_symbols: BTreeMap<String, u32>,
    /// Normalized correct name → the pair's ambiguous frame symbol.
    ambig_symbols: BTreeMap<String, u32>,
    /// Normalized correct name → the pair's register frame symbol.
    register_symbols: BTreeMap<String, u32>,
}

impl FrameMap {
    /// The silence frame symbol.
    pub const SILENCE: u32 = 0;

    pub fn frame_alphabet(&self) -> usize {
        self.frame_alphabet
    }

    /// Clean frame symbol for a grammar word (case-insensitive).
    pub fn word(&self, word: &str) -> Option<u32> {
        self.word_symbols.get(&word.to_ascii_uppercase()).copied()
    }

    /// Ambiguous frame symbol for a correct name variant.
    pub fn ambiguous(&self, correct: &str) -> Option<u32> {
        self.ambig_symbols.get(&correct.to_ascii_uppercase()).copied()
    }

    /// Register frame symbol for a correct name variant.
    pub fn register(&self, correct: &str) -> Option<u32> {
        self.register_symbols.get(&correct.to_ascii_uppercase()).copied()
    }
}

/// Build the engineered table transducer for `vocab` (which must have been
/// trained on demo-grammar text so every grammar word is a single piece).
///
/// The tables are closed-form, not sampled; the recorded seed is 0.
pub fn build_demo_model(vocab: &SubwordVocab) -> Result<(TableTransducer, FrameMap), DemoError> {
    let rules = NormalizationRules::default();
    // (normalized word, piece id) in demo_words() order.
    let mut active: Vec<(String, u32)> = Vec::new();
    for word in demo_words() {
        let normalized = normalize_text(word, &rules)?;
        let tokens = vocab.tokenize(&normalized);
        let known = tokens.len() == 1 && vocab.piece(tokens[0]).is_some_and(|p| p != "<unk>");
        if !known {
            return Err(DemoError::NotSinglePiece {
                word: word.to_string(),
                pieces: tokens
                    .iter()
                    .map(|&t| vocab.piece(t).unwrap_or("<?>").to_string())
                    .collect(),
            });
        }
        active.push((normalized, tokens[0]));
    }

    let a = active.len(); // 18 grammar words
    let blank_c = a;
    let dead_c = a + 1;
    let const_c = a + 2;
    let h = a + 3;
    let v = vocab.size();
    let f = 1 + a + 2 * NE_PAIRS.len(); // silence + words + ambig + register

    let coord_of: BTreeMap<u32, usize> =
        active.iter().enumerate().map(|(k, (_, id))| (*id, k)).collect();
    let index_of: BTreeMap<&str, usize> =
        active.iter().enumerate().map(|(k, (w, _))| (w.as_str(), k)).collect();
    // piece id → confusable-partner piece id, both directions.
    let mut partner: BTreeMap<u32, u32> = BTreeMap::new();
    for (correct, wrong) in NE_PAIRS {
        let c_id = active[index_of[correct.to_ascii_uppercase().as_str()]].1;
        let x_id = active[index_of[wrong.to_ascii_uppercase().as_str()]].1;
        partner.insert(c_id, x_id);
        partner.insert(x_id, c_id);
    }
    let wrong_pieces: Vec<u32> = NE_PAIRS
        .iter()
        .map(|(_, x)| active[index_of[x.to_ascii_uppercase().as_str()]].1)
        .collect();

    // Embeddings: every frame inhibits all word coordinates, the dead
    // coordinate, and blank by CROSS_INHIBIT, then casts its votes on top;
    // the constant channel is 1 everywhere.
    let base_row = |row: &mut [f64]| {
        for c in 0..=dead_c {
            row[c] = -CROSS_INHIBIT;
        }
        row[const_c] = 1.0;
    };
    // Silence carries no votes: blank wins quiet regions on its constant
    // floor alone, so long pads cannot inflate blank against late words.
    let mut embed = vec![0.0; f * h];
    base_row(&mut embed[0..h]);
    let mut word_symbols = BTreeMap::new();
    for (k, (word, _)) in active.iter().enumerate() {
        let sym = 1 + k;
        let row = &mut embed[sym * h..(sym + 1) * h];
        base_row(row);
        row[k] = VOTE_WORD;
        word_symbols.insert(word.clone(), sym as u32);
    }
    let mut ambig_symbols = BTreeMap::new();
    let mut register_symbols = BTreeMap::new();
    for (p, (correct, wrong)) in NE_PAIRS.iter().enumerate() {
        let c_coord = index_of[correct.to_ascii_uppercase().as_str()];
        let x_coord = index_of[wrong.to_ascii_uppercase().as_str()];
        let ambig_sym = 1 + a + p;
        let row = &mut embed[ambig_sym * h..(ambig_sym + 1) * h];
        base_row(row);
        row[c_coord] = VOTE_WORD;
        row[x_coord] = VOTE_WORD;
        ambig_symbols.insert(correct.to_ascii_uppercase(), ambig_sym as u32);

        let reg_sym = 1 + a + NE_PAIRS.len() + p;
        let row = &mut embed[reg_sym * h..(reg_sym + 1) * h];
        base_row(row);
        row[c_coord] = -CROSS_INHIBIT + REGISTER_NE_GAP;
        row[blank_c] = REGISTER_BLANK_VOTE;
        register_symbols.insert(correct.to_ascii_uppercase(), reg_sym as u32);
    }

    // Predictor: kill the last two emitted tokens and their confusable
    // partners so decoding advances left to right and a pair never fires
    // twice for one acoustic event. Pieces outside the grammar share the
    // dead coordinate and deliberately get no penalty — penalizing their
    // shared coordinate would knock every such piece out of the softmax
    // normalizer at once, handing the emitting path an artificial per-frame
    // advantage for the rest of the utterance.
    let v1 = v + 1;
    let mut predictor = vec![0.0; v1 * v1 * h];
    for prev2 in 0..v1 {
        for prev1 in 0..v1 {
            let row = &mut predictor[(prev2 * v1 + prev1) * h..(prev2 * v1 + prev1 + 1) * h];
            for y in [prev2, prev1] {
                if y >= v {
                    continue; // start pad
                }
                if let Some(&c) = coord_of.get(&(y as u32)) {
                    row[c] = -CONTEXT_PENALTY;
                    if let Some(&twin) = partner.get(&(y as u32)) {
                        row[coord_of[&twin]] = -CONTEXT_PENALTY;
                    }
                }
            }
        }
    }

    // Joint: identity read-out plus the constant-channel offsets.
    let mut joint = vec![0.0; v1 * h];
    for piece in 0..v {
        let row = &mut joint[piece * h..(piece + 1) * h];
        match coord_of.get(&(piece as u32)) {
            Some(&c) => {
                row[c] = 1.0;
                if wrong_pieces.contains(&(piece as u32)) {
                    row[const_c] = AMBIG_TILT;
                }
            }
            None => row[dead_c] = 1.0,
        }
    }
    joint[v * h + blank_c] = 1.0;
    joint[v * h + const_c] = BLANK_FLOOR;

    let model = TableTransducer::from_tables(v, f, h, 0, embed, predictor, joint)?;
    let map = FrameMap {
        frame_alphabet: f,
        word_symbols,
        ambig_symbols,
        register_symbols,
    };
    Ok((model, map))
}

/// How an utterance's second word is voiced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStyle {
    /// Clean frames voting only for the true word.
    Clean,
    /// Ambiguous frames voting equally for both variants of a name pair;
    /// the wrong variant wins by [`AMBIG_TILT`] unless fusion intervenes.
    Ambiguous,
    /// Ambiguous frames at the far end of a long silence whose start holds
    /// a register prefix favoring the correct variant, so only decoders
    /// with enough left context recover the right name.
    Registered,
}

/// Render the frame sequence for a two-word utterance `"{verb} {second}"`.
pub fn render_frames(
    map: &FrameMap,
    verb: &str,
    second: &str,
    style: FrameStyle,
) -> Result<Vec<u32>, DemoError> {
    let word_sym = |w: &str| {
        map.word(w).ok_or_else(|| DemoError::UnknownWord { word: w.to_string() })
    };
    let name_sym = |w: &str, pick: &dyn Fn(&FrameMap, &str) -> Option<u32>| {
        pick(map, w).ok_or_else(|| DemoError::NotaName {
            style: format!("{style:?}"),
            word: w.to_string(),
        })
    };
    let mut frames = Vec::new();
    let push_run = |frames: &mut Vec<u32>, sym: u32, len: usize| {
        frames.extend(std::iter::repeat(sym).take(len));
    };
    match style {
        FrameStyle::Clean => {
            push_run(&mut frames, word_sym(verb)?, VERB_RUN);
            push_run(&mut frames, FrameMap::SILENCE, GAP_SIL);
            push_run(&mut frames, word_sym(second)?, SECOND_RUN);
            push_run(&mut frames, FrameMap::SILENCE, TAIL_SIL);
        }
        FrameStyle::Ambiguous => {
            push_run(&mut frames, word_sym(verb)?, VERB_RUN);
            push_run(&mut frames, FrameMap::SILENCE, GAP_SIL);
            push_run(&mut frames, name_sym(second, &FrameMap::ambiguous)?, SECOND_RUN);
            push_run(&mut frames, FrameMap::SILENCE, TAIL_SIL);
        }
        FrameStyle::Registered => {
            push_run(&mut frames, word_sym(verb)?, VERB_RUN);
            push_run(&mut frames, FrameMap::SILENCE, GAP_SIL);
            push_run(&mut frames, name_sym(second, &FrameMap::register)?, REGISTER_RUN);
            push_run(&mut frames, FrameMap::SILENCE, REGISTER_PAD_SIL);
            push_run(&mut frames, name_sym(second, &FrameMap::ambiguous)?, REGISTER_NE_RUN);
            push_run(&mut frames, FrameMap::SILENCE, TAIL_SIL);
        }
    }
    Ok(frames)
}

/// Framed evaluation set: 16 ambiguous-name utterances (four per pair),
/// four clean noun utterances, and four registered-name utterances. Fully
/// deterministic — no sampling.
pub fn eval_corpus(map: &FrameMap) -> Result<Manifest, DemoError> {
    let mut manifest = Manifest::new("eval");
    let mut idx = 0usize;
    let mut push = |text: String, frames: Vec<u32>, manifest: &mut Manifest| {
        let mut utt =
            Utterance::new(format!("eval-{idx:02}"), frames.len() as f64 * FRAME_SECONDS);
        utt.ref_text = Some(text);
        utt.frames = Some(frames);
        manifest.utterances.push(utt);
        idx += 1;
    };
    for (k, (correct, _)) in NE_PAIRS.iter().enumerate() {
        for rep in 0..4 {
            let verb = VERBS[(k + rep) % VERBS.len()];
            let frames = render_frames(map, verb, correct, FrameStyle::Ambiguous)?;
            push(format!("{verb} {correct}"), frames, &mut manifest);
        }
    }
    for (j, noun) in NOUNS.iter().enumerate() {
        let verb = VERBS[j % VERBS.len()];
        let frames = render_frames(map, verb, noun, FrameStyle::Clean)?;
        push(format!("{verb} {noun}"), frames, &mut manifest);
    }
    for (k, (correct, _)) in NE_PAIRS.iter().enumerate() {
        let verb = VERBS[k % VERBS.len()];
        let frames = render_frames(map, verb, correct, FrameStyle::Registered)?;
        push(format!("{verb} {correct}"), frames, &mut manifest);
    }
    Ok(manifest)
}

// -- pipeline --------------------------------------------------------------

/// Corpus WER of the eval set under each fusion graph (offline decoding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub none: WerBreakdown,
    pub lm: WerBreakdown,
    pub bias: WerBreakdown,
    pub combined: WerBreakdown,
}

fn corpus_wer(
    model: &TableTransducer,
    manifest: &Manifest,
    graph: Option<&ContextGraph>,
    vocab: &SubwordVocab,
) -> Result<WerBreakdown, DemoError> {
    let rules = NormalizationRules::default();
    let mut total: Option<WerBreakdown> = None;
    for utt in &manifest.utterances {
        let frames = utt.frames.as_ref().expect("eval utterances carry frames");
        let reference = utt.ref_text.as_ref().expect("eval utterances carry references");
        let result = beam_search(model, frames, DEMO_BEAM, graph, vocab)?;
        let breakdown = wer(reference, &result.best_text, &rules)?;
        match &mut total {
            Some(acc) => acc.accumulate(&breakdown),
            None => total = Some(breakdown),
        }
    }
    Ok(total.expect("eval manifest is nonempty"))
}

/// Every intermediate product of the demo pipeline, kept in memory so tests
/// and reports can inspect any stage.
#[derive(Debug, Clone)]
pub struct DemoPipeline {
    pub seed: u64,
    pub supervised: Manifest,
    pub pool: Manifest,
    pub planted: PlantedTruth,
    pub filtered: Manifest,
    pub filter_report: FilterReport,
    pub selected: Manifest,
    pub lm: NGramLM,
    pub vocab: SubwordVocab,
    pub model: TableTransducer,
    pub frame_map: FrameMap,
    pub eval: Manifest,
    pub bias: Vec<BiasEntry>,
    pub graph_lm: ContextGraph,
    pub graph_bias: ContextGraph,
    pub graph_combined: ContextGraph,
    pub fusion: FusionReport,
    pub sweep: SweepReport,
    pub mux: MuxSchedule,
}

/// Run every pipeline stage in memory. All randomness derives from `seed`.
pub fn build_pipeline(seed: u64) -> Result<DemoPipeline, DemoError> {
    let supervised = supervised_corpus(SUPERVISED_UTTS, seed.wrapping_add(1));
    let (pool, planted) = pseudo_labeled_pool(POOL_UTTS, seed);

    // Filter the weak labels, score them against the strong teacher, and
    // keep only near-agreeing rows.
    let cfg = FilterConfig::default();
    let (filtered, filter_report) = apply_filters(&pool, &cfg, WEAK_TAG)?;
    let scored = cross_model_wer(&filtered, WEAK_TAG, STRONG_TAG)?;
    let policy = SelectionPolicy::threshold(PSEUDO_WER_METRIC, Direction::Ascending, 0.25);
    let selected = select(&scored, &policy)?;

    // LM and tokenizer train on supervised references plus selected weak
    // labels (the filter already normalized the kept labels).
    let rules = NormalizationRules::default();
    let mut lm_text: Vec<String> = Vec::new();
    for utt in &supervised.utterances {
        let text = utt.ref_text.as_deref().expect("supervised rows carry references");
        lm_text.push(normalize_text(text, &rules)?);
    }
    for utt in &selected.utterances {
        lm_text.push(utt.pl[WEAK_TAG].clone());
    }
    let lm = train(&lm_text, &TrainConfig::default())?;
    let vocab = train_subwords(&lm_text, BPE_VOCAB)?;

    let (model, frame_map) = build_demo_model(&vocab)?;
    let eval = eval_corpus(&frame_map)?;

    let bias_raw: Vec<(String, String)> =
        NE_PAIRS.iter().map(|(c, _)| (c.to_string(), "place".to_string())).collect();
    let bias = curate_bias_list(&bias_raw, &rules)?;
    let costs = FusionCosts::default();
    let graph_lm = build_graph(Some(&lm), &[], &vocab, &costs)?;
    let graph_bias = build_graph(None, &bias, &vocab, &costs)?;
    let graph_combined = build_graph(Some(&lm), &bias, &vocab, &costs)?;

    let fusion = FusionReport {
        none: corpus_wer(&model, &eval, None, &vocab)?,
        lm: corpus_wer(&model, &eval, Some(&graph_lm), &vocab)?,
        bias: corpus_wer(&model, &eval, Some(&graph_bias), &vocab)?,
        combined: corpus_wer(&model, &eval, Some(&graph_combined), &vocab)?,
    };
    let sweep = sweep(&model, &eval, DEMO_BEAM, None, &vocab)?;
    let mux = mux(&supervised, &selected, MUX_BATCH, MUX_WEIGHTS, seed)?;

    Ok(DemoPipeline {
        seed,
        supervised,
        pool,
        planted,
        filtered,
        filter_report,
        selected,
        lm,
        vocab,
        model,
        frame_map,
        eval,
        bias,
        graph_lm,
        graph_bias,
        graph_combined,
        fusion,
        sweep,
        mux,
    })
}

/// Summary of a demo run; serialized as `demo_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub supervised_utts: usize,
    pub pool_utts: usize,
    pub filter: FilterReport,
    pub selected_utts: usize,
    pub selected_hours: f64,
    pub lm_order: usize,
    /// Stored n-gram counts per order (1-based).
    pub lm_ngrams: Vec<usize>,
    pub vocab_pieces: usize,
    pub bias_phrases: Vec<String>,
    /// SHA-256 digests of the three fusion graphs.
    pub graph_digests: BTreeMap<String, String>,
    pub fusion: FusionReport,
    pub sweep: SweepReport,
    pub mux_items: usize,
    pub mux_window_ok: bool,
    /// Artifact file name → SHA-256 of its bytes (empty without an output
    /// directory).
    pub artifacts: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Build the report for a finished pipeline and, if `out_dir` is given,
/// write every artifact there (manifests, reports, ARPA LM, vocabulary,
/// model, graphs, mux schedule, and the summary itself).
pub fn emit_report(
    pipeline: &DemoPipeline,
    out_dir: Option<&Path>,
) -> Result<DemoReport, DemoError> {
    let durations: BTreeMap<String, f64> = pipeline
        .supervised
        .utterances
        .iter()
        .chain(&pipeline.selected.utterances)
        .map(|u| (u.id.clone(), u.duration_s))
        .collect();
    let mut report = DemoReport {
        seed: pipeline.seed,
        supervised_utts: pipeline.supervised.len(),
        pool_utts: pipeline.pool.len(),
        filter: pipeline.filter_report.clone(),
        selected_utts: pipeline.selected.len(),
        selected_hours: pipeline.selected.total_hours(),
        lm_order: pipeline.lm.order(),
        lm_ngrams: (1..=pipeline.lm.order()).map(|n| pipeline.lm.ngram_count(n)).collect(),
        vocab_pieces: pipeline.vocab.size(),
        bias_phrases: pipeline.bias.iter().map(|b| b.phrase.clone()).collect(),
        graph_digests: BTreeMap::from([
            ("lm".to_string(), pipeline.graph_lm.digest()),
            ("bias".to_string(), pipeline.graph_bias.digest()),
            ("combined".to_string(), pipeline.graph_combined.digest()),
        ]),
        fusion: pipeline.fusion.clone(),
        sweep: pipeline.sweep.clone(),
        mux_items: pipeline.mux.items.len(),
        mux_window_ok: pipeline.mux.window_guarantee_holds(&durations),
        artifacts: BTreeMap::new(),
    };

    let Some(dir) = out_dir else { return Ok(report) };
    std::fs::create_dir_all(dir)?;
    let register = |name: &str, report: &mut DemoReport| -> Result<(), DemoError> {
        let bytes = std::fs::read(dir.join(name))?;
        report.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    };

    for (name, manifest) in [
        ("supervised.jsonl", &pipeline.supervised),
        ("pool.jsonl", &pipeline.pool),
        ("eval.jsonl", &pipeline.eval),
        ("filtered.jsonl", &pipeline.filtered),
        ("selected.jsonl", &pipeline.selected),
    ] {
        save_manifest(manifest, dir.join(name))?;
        register(name, &mut report)?;
    }

    let write_json = |name: &str, json: String| -> Result<(), DemoError> {
        std::fs::write(dir.join(name), json + "\n")?;
        Ok(())
    };
    write_json(
        "filter_report.json",
        serde_json::to_string_pretty(&pipeline.filter_report).expect("report serializes"),
    )?;
    register("filter_report.json", &mut report)?;

    write_arpa(&pipeline.lm, dir.join("lm.arpa"))?;
    register("lm.arpa", &mut report)?;

    pipeline.vocab.save(dir.join("subwords.json"))?;
    register("subwords.json", &mut report)?;

    let bias_lines: String = pipeline
        .bias
        .iter()
        .map(|b| format!("{}\t{}\n", b.phrase, b.source))
        .collect();
    std::fs::write(dir.join("bias.txt"), bias_lines)?;
    register("bias.txt", &mut report)?;

    pipeline.model.save(dir.join("model.json"))?;
    register("model.json", &mut report)?;

    for (name, graph) in [
        ("graph_lm.json", &pipeline.graph_lm),
        ("graph_bias.json", &pipeline.graph_bias),
        ("graph_combined.json", &pipeline.graph_combined),
    ] {
        graph.save(dir.join(name))?;
        register(name, &mut report)?;
    }

    write_json(
        "fusion_report.json",
        serde_json::to_string_pretty(&pipeline.fusion).expect("report serializes"),
    )?;
    register("fusion_report.json", &mut report)?;
    write_json(
        "sweep.json",
        serde_json::to_string_pretty(&pipeline.sweep).expect("report serializes"),
    )?;
    register("sweep.json", &mut report)?;
    write_json(
        "mux.json",
        serde_json::to_string_pretty(&pipeline.mux).expect("schedule serializes"),
    )?;
    register("mux.json", &mut report)?;

    // The summary is written last and lists every other artifact's digest;
    // it does not list its own.
    write_json(
        "demo_summary.json",
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

/// Run the full demo pipeline. With an output directory, also write all
/// artifacts; they are byte-identical across runs with the same seed.
pub fn run_demo(seed: u64, out_dir: Option<&Path>) -> Result<DemoReport, DemoError> {
    let pipeline = build_pipeline(seed)?;
    emit_report(&pipeline, out_dir)
}
