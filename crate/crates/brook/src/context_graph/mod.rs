//! Contextual shallow-fusion graph: bias-list curation plus an Aho-Corasick
//! prefix trie over subword tokens that carries probability-domain bonuses
//! from a word-level n-gram LM and a curated named-entity bias list.
//!
//! Pattern bonuses (all probability-domain, hence ≥ 0):
//! * plain LM n-gram: `lm_scale · 10^logprob`,
//! * bias phrase that is also a stored LM n-gram: `lm_scale · 10^logprob + alpha_in_lm`,
//! * bias phrase absent from the LM: `alpha_out_lm`,
//! * bias phrase in a bias-only graph (no LM): `plain_bias`.
//!
//! A decoder holds one [`ACState`] per hypothesis and calls
//! [`ContextGraph::advance`] on every emitted token; the returned delta is
//! the sum of bonuses of every pattern that ends at the new position
//! (via output links), added to the hypothesis log score.

pub mod subword;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{normalize_text, NormalizationRules, NormalizeError};
use crate::lm::{NGramLM, SENT_END, SENT_START, UNK};
pub use subword::{train_subwords, SubwordError, SubwordVocab, UNK_PIECE, WORD_INIT};

const GRAPH_VERSION: &str = "context-graph-v1";

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("no patterns: need an LM, a non-empty bias list, or both")]
    NoPatterns,
    #[error("pattern {phrase:?} tokenized to an empty sequence")]
    EmptyPattern { phrase: String },
    #[error("invalid fusion costs: {what}")]
    BadCosts { what: String },
    #[error("failed to read/write graph: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid graph file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported graph version {found:?} (expected {GRAPH_VERSION:?})")]
    Version { found: String },
}

/// A curated named-entity phrase with its source tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub phrase: String,
    pub source: String,
}

impl BiasEntry {
    pub fn new(phrase: impl Into<String>, source: impl Into<String>) -> Self {
        BiasEntry { phrase: phrase.into(), source: source.into() }
    }
}

/// Shallow-fusion cost constants (probability domain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionCosts {
    /// Bonus for a bias phrase in a bias-only graph (no LM present).
    pub plain_bias: f64,
    /// Additive bonus for a bias phrase that is also a stored LM n-gram.
    pub alpha_in_lm: f64,
    /// Bonus for a bias phrase the LM does not contain.
    pub alpha_out_lm: f64,
    /// Multiplier on de-logged LM weights.
    pub lm_scale: f64,
}

impl Default for FusionCosts {
    fn default() -> Self {
        FusionCosts { plain_bias: 0.7, alpha_in_lm: 0.5, alpha_out_lm: 1.5, lm_scale: 1.0 }
    }
}

impl FusionCosts {
    pub fn validate(&self) -> Result<(), GraphError> {
        let fields = [
            ("plain_bias", self.plain_bias),
            ("alpha_in_lm", self.alpha_in_lm),
            ("alpha_out_lm", self.alpha_out_lm),
            ("lm_scale", self.lm_scale),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(GraphError::BadCosts { what: format!("{name} must be finite, got {v}") });
            }
            if v < 0.0 {
                return Err(GraphError::BadCosts { what: format!("{name} must be ≥ 0, got {v}") });
            }
        }
        if self.plain_bias <= 0.0 {
            return Err(GraphError::BadCosts {
                what: format!("plain_bias must be > 0, got {}", self.plain_bias),
            });
        }
        Ok(())
    }
}

/// Build-time options not covered by [`FusionCosts`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// When true, only the longest pattern ending at each position scores
    /// (instead of stacking every suffix pattern's bonus).
    pub longest_match_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    children: BTreeMap<u32, u32>,
    fail: u32,
    output: Option<u32>,
    bonus: f64,
    pattern_end: bool,
    depth: u32,
}

impl Node {
    fn new(depth: u32) -> Self {
        Node { children: BTreeMap::new(), fail: 0, output: None, bonus: 0.0, pattern_end: false, depth }
    }
}

/// Automaton position held by a decoder hypothesis. The root state is the
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct ACState(u32);

/// Immutable Aho-Corasick bonus graph over subword token ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextGraph {
    version: String,
    options: GraphOptions,
    nodes: Vec<Node>,
}

/// Parse a bias-list file: one phrase per line, with an optional
/// tab-separated source tag (default `"bias"`). Blank lines and `#` comment
/// lines are skipped.
pub fn parse_bias_lines(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| match l.split_once('\t') {
            Some((phrase, tag)) if !tag.trim().is_empty() => {
                (phrase.trim().to_string(), tag.trim().to_string())
            }
            _ => (l.to_string(), "bias".to_string()),
        })
        .collect()
}

/// Curate raw named-entity phrases into a bias list.
///
/// Each phrase is normalized with `rules` (case-folding it into the same
/// text space as the LM training data), then dropped unless it has 1–4
/// words, with single words additionally required to be at least 5
/// characters. Exact duplicates (after normalization) keep the first
/// occurrence; order is stable.
pub fn curate_bias_list<S: AsRef<str>, T: AsRef<str>>(
    raw_entries: &[(S, T)],
    rules: &NormalizationRules,
) -> Result<Vec<BiasEntry>, NormalizeError> {
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    let mut out = Vec::new();
    for (phrase, source) in raw_entries {
        let normalized = normalize_text(phrase.as_ref(), rules)?;
        let words: Vec<&str> = normalized.split_whitespace().collect();
        if words.is_empty() || words.len() > 4 {
            continue;
        }
        if words.len() == 1 && words[0].chars().count() < 5 {
            continue;
        }
        if seen.insert(normalized.clone(), ()).is_some() {
            continue;
        }
        out.push(BiasEntry::new(normalized, source.as_ref().to_string()));
    }
    Ok(out)
}

/// Build the fusion graph from an optional LM and an optional bias list.
/// See the module docs for the bonus formula per pattern class.
pub fn build_graph(
    lm: Option<&NGramLM>,
    bias: &[BiasEntry],
    vocab: &SubwordVocab,
    costs: &FusionCosts,
) -> Result<ContextGraph, GraphError> {
    build_graph_with_options(lm, bias, vocab, costs, &GraphOptions::default())
}

/// [`build_graph`] with explicit [`GraphOptions`].
pub fn build_graph_with_options(
    lm: Option<&NGramLM>,
    bias: &[BiasEntry],
    vocab: &SubwordVocab,
    costs: &FusionCosts,
    options: &GraphOptions,
) -> Result<ContextGraph, GraphError> {
    costs.validate()?;
    if lm.is_none() && bias.is_empty() {
        return Err(GraphError::NoPatterns);
    }

    // Token-sequence patterns with their bonuses. Keyed by token sequence so
    // collisions are explicit; distinct same-key contributions sum, except
    // the LM/bias collision which resolves to the in-LM formula exactly once.
    let mut patterns: BTreeMap<Vec<u32>, f64> = BTreeMap::new();

    if let Some(lm) = lm {
        for n in 1..=lm.order() {
            for (key, entry) in lm.ngrams(n) {
                if key.iter().any(|w| w == SENT_START || w == SENT_END || w == UNK) {
                    continue; // sentence markers and <unk> are not text patterns
                }
                let tokens = tokenize_pattern(vocab, &key.join(" "))?;
                *patterns.entry(tokens).or_insert(0.0) += costs.lm_scale * 10f64.powf(entry.logprob);
            }
        }
    }

    for entry in bias {
        let words: Vec<String> = entry.phrase.split_whitespace().map(str::to_string).collect();
        let tokens = tokenize_pattern(vocab, &entry.phrase)?;
        match lm {
            Some(lm) if lm.contains(&words) => {
                let lp = lm.entry(&words).expect("contains implies entry").logprob;
                // Replace the plain-LM bonus: in-LM case, never double-counted.
                patterns.insert(tokens, costs.lm_scale * 10f64.powf(lp) + costs.alpha_in_lm);
            }
            Some(_) => {
                *patterns.entry(tokens).or_insert(0.0) += costs.alpha_out_lm;
            }
            None => {
                *patterns.entry(tokens).or_insert(0.0) += costs.plain_bias;
            }
        }
    }

    Ok(ContextGraph::from_patterns(patterns, options.clone()))
}

fn tokenize_pattern(vocab: &SubwordVocab, phrase: &str) -> Result<Vec<u32>, GraphError> {
    let tokens = vocab.tokenize(phrase);
    if tokens.is_empty() {
        return Err(GraphError::EmptyPattern { phrase: phrase.to_string() });
    }
    Ok(tokens)
}

impl ContextGraph {
    /// Build directly from token-sequence patterns (test/tooling hook; the
    /// public path is [`build_graph`]).
    fn from_patterns(patterns: BTreeMap<Vec<u32>, f64>, options: GraphOptions) -> Self {
        let mut nodes = vec![Node::new(0)];
        for (tokens, bonus) in &patterns {
            let mut cur = 0u32;
            for &tok in tokens {
                let next_id = nodes.len() as u32;
                let depth = nodes[cur as usize].depth + 1;
                cur = *nodes[cur as usize].children.entry(tok).or_insert_with(|| {
                    next_id
                });
                if cur == next_id {
                    nodes.push(Node::new(depth));
                }
            }
            let end = &mut nodes[cur as usize];
            end.pattern_end = true;
            end.bonus = *bonus;
        }

        // Breadth-first fail and output links.
        let mut queue = VecDeque::new();
        let root_children: Vec<(u32, u32)> =
            nodes[0].children.iter().map(|(&t, &c)| (t, c)).collect();
        for (_, child) in root_children {
            nodes[child as usize].fail = 0;
            queue.push_back(child);
        }
        while let Some(v) = queue.pop_front() {
            let children: Vec<(u32, u32)> =
                nodes[v as usize].children.iter().map(|(&t, &c)| (t, c)).collect();
            for (tok, child) in children {
                // Walk v's fail chain looking for a node with a `tok` child.
                let mut f = nodes[v as usize].fail;
                let fail_target = loop {
                    if let Some(&next) = nodes[f as usize].children.get(&tok) {
                        break next;
                    }
                    if f == 0 {
                        break 0;
                    }
                    f = nodes[f as usize].fail;
                };
                // `fail_target` can equal `child` when v's fail chain bottomed
                // out at root and root's `tok` child IS this child.
                let fail_link = if fail_target == child { 0 } else { fail_target };
                nodes[child as usize].fail = fail_link;
                nodes[child as usize].output = if nodes[fail_link as usize].pattern_end {
                    Some(fail_link)
                } else {
                    nodes[fail_link as usize].output
                };
                queue.push_back(child);
            }
        }

        ContextGraph { version: GRAPH_VERSION.to_string(), options, nodes }
    }

    /// A graph with no patterns: every [`advance`](Self::advance) stays at
    /// the root with a zero bonus, so fusing it is a no-op. ([`build_graph`]
    /// rejects empty inputs; this is the explicit way to say "no context".)
    pub fn empty() -> Self {
        ContextGraph::from_patterns(BTreeMap::new(), GraphOptions::default())
    }

    /// The automaton start state (root).
    pub fn start(&self) -> ACState {
        ACState(0)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn options(&self) -> &GraphOptions {
        &self.options
    }

    /// Number of distinct patterns stored.
    pub fn pattern_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.pattern_end).count()
    }

    /// One Aho-Corasick step: follow the `token` child, falling back along
    /// fail links to root. Returns the new state and the summed bonus of
    /// every pattern that ends at it (or only the longest such pattern when
    /// the graph was built with `longest_match_only`). Total: never fails.
    pub fn advance(&self, state: ACState, token: u32) -> (ACState, f64) {
        let mut cur = state.0;
        let next = loop {
            if let Some(&child) = self.nodes[cur as usize].children.get(&token) {
                break child;
            }
            if cur == 0 {
                break 0;
            }
            cur = self.nodes[cur as usize].fail;
        };

        let node = &self.nodes[next as usize];
        let mut delta = 0.0;
        if self.options.longest_match_only {
            if node.pattern_end {
                delta = node.bonus;
            } else if let Some(out) = node.output {
                delta = self.nodes[out as usize].bonus;
            }
        } else {
            if node.pattern_end {
                delta += node.bonus;
            }
            let mut out = node.output;
            while let Some(o) = out {
                delta += self.nodes[o as usize].bonus;
                out = self.nodes[o as usize].output;
            }
        }
        (ACState(next), delta)
    }

    /// Fold [`advance`](Self::advance) over a token sequence from root and
    /// return the total bonus.
    pub fn scan_total(&self, tokens: &[u32]) -> f64 {
        let mut state = self.start();
        let mut total = 0.0;
        for &tok in tokens {
            let (next, delta) = self.advance(state, tok);
            state = next;
            total += delta;
        }
        total
    }

    /// All stored patterns as (token sequence, bonus), reconstructed by
    /// walking the trie's child edges (independent of the fail/output
    /// machinery; used by scan oracles and introspection).
    pub fn patterns(&self) -> Vec<(Vec<u32>, f64)> {
        let mut out = Vec::new();
        let mut stack: Vec<(u32, Vec<u32>)> = vec![(0, Vec::new())];
        while let Some((id, path)) = stack.pop() {
            let node = &self.nodes[id as usize];
            if node.pattern_end {
                out.push((path.clone(), node.bonus));
            }
            for (&tok, &child) in node.children.iter().rev() {
                let mut next_path = path.clone();
                next_path.push(tok);
                stack.push((child, next_path));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// Stable SHA-256 digest of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        let bytes = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in bytes {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path.as_ref(), self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let graph: ContextGraph = serde_json::from_str(&text)?;
        if graph.version != GRAPH_VERSION {
            return Err(GraphError::Version { found: graph.version });
        }
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train, Smoothing, TrainConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn vocab_for(corpus: &[&str], size: usize) -> SubwordVocab {
        train_subwords(corpus, size).unwrap()
    }

    /// Naive O(n·m) oracle: for every start position and every pattern,
    /// compare slices directly.
    fn naive_scan(patterns: &[(Vec<u32>, f64)], text: &[u32]) -> f64 {
        let mut total = 0.0;
        for i in 0..text.len() {
            for (pat, bonus) in patterns {
                if i + pat.len() <= text.len() && &text[i..i + pat.len()] == pat.as_slice() {
                    total += bonus;
                }
            }
        }
        total
    }

    /// Longest-only oracle: at each END position, only the longest pattern
    /// ending there scores.
    fn naive_scan_longest(patterns: &[(Vec<u32>, f64)], text: &[u32]) -> f64 {
        let mut total = 0.0;
        for end in 1..=text.len() {
            let mut best: Option<(usize, f64)> = None;
            for (pat, bonus) in patterns {
                if pat.len() <= end && &text[end - pat.len()..end] == pat.as_slice() {
                    if best.map_or(true, |(len, _)| pat.len() > len) {
                        best = Some((pat.len(), *bonus));
                    }
                }
            }
            if let Some((_, bonus)) = best {
                total += bonus;
            }
        }
        total
    }

    #[test]
    fn curation_drops_short_singles_and_long_phrases() {
        let rules = NormalizationRules::default();
        let raw = vec![
            ("san", "LOC"),
            ("port dorin", "LOC"),
            ("velka", "PER"),
            ("one two three four five", "ORG"),
            ("the old port of mount lake", "LOC"), // 6 words -> dropped
            ("Port Dorin", "LOC"),                 // duplicate after case fold
            ("a b!", "X"),                          // 2 words, kept (no length rule)
        ];
        let got = curate_bias_list(&raw, &rules).unwrap();
        let phrases: Vec<&str> = got.iter().map(|e| e.phrase.as_str()).collect();
        assert_eq!(phrases, vec!["PORT DORIN", "VELKA", "A B"]);
        assert_eq!(got[0].source, "LOC");
    }

    #[test]
    fn curation_single_word_boundary_is_five_chars() {
        let rules = NormalizationRules::default();
        let got = curate_bias_list(&[("abcd", "t"), ("abcde", "t")], &rules).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].phrase, "ABCDE");
    }

    #[test]
    fn parse_bias_lines_handles_tags_and_comments() {
        let text = "port dorin\tLOC\n# comment\n\nvelka\n  toman sorel \t PER \n";
        let got = parse_bias_lines(text);
        assert_eq!(
            got,
            vec![
                ("port dorin".to_string(), "LOC".to_string()),
                ("velka".to_string(), "bias".to_string()),
                ("toman sorel".to_string(), "PER".to_string()),
            ]
        );
    }

    #[test]
    fn bias_only_bonus_is_plain_bias() {
        let corpus = ["port dorin near town"];
        let vocab = vocab_for(&corpus, 80);
        let bias = vec![BiasEntry::new("port dorin", "LOC")];
        let g = build_graph(None, &bias, &vocab, &FusionCosts::default()).unwrap();
        let toks = vocab.tokenize("port dorin");
        let total = g.scan_total(&toks);
        assert!((total - 0.7).abs() < 1e-12, "got {total}");
        // Bonus fires exactly once, at the final token.
        let mut state = g.start();
        let mut deltas = Vec::new();
        for &t in &toks {
            let (next, d) = g.advance(state, t);
            state = next;
            deltas.push(d);
        }
        for d in &deltas[..deltas.len() - 1] {
            assert_eq!(*d, 0.0);
        }
        assert!((deltas[deltas.len() - 1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn lm_only_bonus_is_delogged_weight() {
        // Hand-built unigram LM: "night" with logprob −1 → bonus 0.1.
        use crate::lm::NGramEntry;
        let mut unigrams = BTreeMap::new();
        unigrams.insert(vec!["night".to_string()], NGramEntry { logprob: -1.0, backoff: None });
        unigrams.insert(vec![UNK.to_string()], NGramEntry { logprob: -0.5, backoff: None });
        let lm = NGramLM::from_tables(vec![unigrams]).unwrap();
        let vocab = vocab_for(&["night falls"], 60);
        let g = build_graph(Some(&lm), &[], &vocab, &FusionCosts::default()).unwrap();
        let total = g.scan_total(&vocab.tokenize("night"));
        assert!((total - 0.1).abs() < 1e-12, "got {total}");
        // <unk> was skipped: only one pattern exists.
        assert_eq!(g.pattern_count(), 1);
    }

    #[test]
    fn in_lm_and_out_lm_bias_cases() {
        use crate::lm::NGramEntry;
        let mut unigrams = BTreeMap::new();
        for w in ["north", "gate", "velka"] {
            unigrams.insert(vec![w.to_string()], NGramEntry { logprob: -0.6, backoff: Some(0.0) });
        }
        unigrams.insert(vec![UNK.to_string()], NGramEntry { logprob: -0.9, backoff: Some(0.0) });
        let mut bigrams = BTreeMap::new();
        bigrams.insert(
            vec!["north".to_string(), "gate".to_string()],
            NGramEntry { logprob: -1.0, backoff: None },
        );
        let lm = NGramLM::from_tables(vec![unigrams, bigrams]).unwrap();
        let vocab = vocab_for(&["north gate velka sorel"], 90);
        let bias = vec![
            BiasEntry::new("north gate", "LOC"),  // in LM: 0.1 + 0.5
            BiasEntry::new("velka sorel", "PER"), // not an LM bigram: 1.5
        ];
        let g = build_graph(Some(&lm), &bias, &vocab, &FusionCosts::default()).unwrap();

        // `north gate` must not be double-counted: one pattern carrying
        // 10^-1 + 0.5, plus unigram patterns for north (0.25...) etc.
        let pats = g.patterns();
        let ng = vocab.tokenize("north gate");
        let ng_bonus = pats.iter().find(|(p, _)| *p == ng).map(|(_, b)| *b).unwrap();
        assert!((ng_bonus - 0.6).abs() < 1e-12, "got {ng_bonus}");
        let vs = vocab.tokenize("velka sorel");
        let vs_bonus = pats.iter().find(|(p, _)| *p == vs).map(|(_, b)| *b).unwrap();
        assert!((vs_bonus - 1.5).abs() < 1e-12, "got {vs_bonus}");

        // Scanning "north gate" fires the unigrams north (10^-0.6) and gate
        // plus the bigram bonus.
        let expect = 2.0 * 10f64.powf(-0.6) + 0.6;
        let total = g.scan_total(&ng);
        assert!((total - expect).abs() < 1e-12, "got {total} want {expect}");
    }

    #[test]
    fn lm_scale_multiplies_delogged_weights() {
        use crate::lm::NGramEntry;
        let mut unigrams = BTreeMap::new();
        unigrams.insert(vec!["night".to_string()], NGramEntry { logprob: -1.0, backoff: None });
        let lm = NGramLM::from_tables(vec![unigrams]).unwrap();
        let vocab = vocab_for(&["night"], 60);
        let costs = FusionCosts { lm_scale: 2.0, ..FusionCosts::default() };
        let g = build_graph(Some(&lm), &[], &vocab, &costs).unwrap();
        let total = g.scan_total(&vocab.tokenize("night"));
        assert!((total - 0.2).abs() < 1e-12, "got {total}");
    }

    #[test]
    fn empty_inputs_error() {
        let vocab = vocab_for(&["a"], 10);
        assert!(matches!(
            build_graph(None, &[], &vocab, &FusionCosts::default()),
            Err(GraphError::NoPatterns)
        ));
    }

    #[test]
    fn empty_pattern_errors() {
        let vocab = vocab_for(&["a"], 10);
        let bias = vec![BiasEntry::new("", "X")];
        assert!(matches!(
            build_graph(None, &bias, &vocab, &FusionCosts::default()),
            Err(GraphError::EmptyPattern { .. })
        ));
    }

    #[test]
    fn bad_costs_rejected() {
        let vocab = vocab_for(&["a"], 10);
        let bias = vec![BiasEntry::new("abcde", "X")];
        for costs in [
            FusionCosts { plain_bias: 0.0, ..FusionCosts::default() },
            FusionCosts { alpha_in_lm: f64::NAN, ..FusionCosts::default() },
            FusionCosts { alpha_out_lm: -1.0, ..FusionCosts::default() },
        ] {
            assert!(matches!(
                build_graph(None, &bias, &vocab, &costs),
                Err(GraphError::BadCosts { .. })
            ));
        }
    }

    #[test]
    fn empty_graph_never_matches() {
        // A graph with patterns, scanned with tokens never in any pattern,
        // stays at root with zero delta; and advancing unknown tokens from
        // root is total.
        let vocab = vocab_for(&["abcde xyz"], 40);
        let bias = vec![BiasEntry::new("abcde", "X")];
        let g = build_graph(None, &bias, &vocab, &FusionCosts::default()).unwrap();
        let toks = vocab.tokenize("xyz");
        let mut state = g.start();
        for &t in &toks {
            let (next, d) = g.advance(state, t);
            assert_eq!(d, 0.0);
            state = next;
        }
        // Token ids outside every pattern keep the scan at root.
        let (s, d) = g.advance(g.start(), 9999);
        assert_eq!((s, d), (g.start(), 0.0));
    }

    #[test]
    fn overlapping_patterns_all_fire() {
        // Patterns "alpha beta gamma" and its word suffix "beta gamma":
        // scanning the long phrase must fire both at the shared final token.
        let bias = vec![
            BiasEntry::new("alpha beta gamma", "X"),
            BiasEntry::new("beta gamma", "X"),
        ];
        let vocab = vocab_for(&["alpha beta gamma"], 80);
        let g = build_graph(None, &bias, &vocab, &FusionCosts::default()).unwrap();
        let toks = vocab.tokenize("alpha beta gamma");
        let mut state = g.start();
        let mut last_delta = 0.0;
        for &t in &toks {
            let (next, d) = g.advance(state, t);
            state = next;
            last_delta = d;
        }
        assert!((last_delta - 1.4).abs() < 1e-12, "got {last_delta}");
        assert!((g.scan_total(&toks) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn fail_links_are_well_founded() {
        let corpus = ["the old port near the old town gate"];
        let vocab = vocab_for(&corpus, 120);
        let lm = train(&corpus, &TrainConfig::default()).unwrap();
        let bias = vec![BiasEntry::new("old town gate", "LOC")];
        let g = build_graph(Some(&lm), &bias, &vocab, &FusionCosts::default()).unwrap();
        for (id, node) in g.nodes.iter().enumerate() {
            if id == 0 {
                assert_eq!(node.fail, 0);
                continue;
            }
            // depth(fail(v)) < depth(v), and the chain reaches root in ≤
            // depth steps.
            assert!(g.nodes[node.fail as usize].depth < node.depth);
            let mut cur = id as u32;
            let mut steps = 0;
            while cur != 0 {
                cur = g.nodes[cur as usize].fail;
                steps += 1;
                assert!(steps <= node.depth, "fail chain too long at node {id}");
            }
        }
        // bonus only on pattern ends.
        for node in &g.nodes {
            if !node.pattern_end {
                assert_eq!(node.bonus, 0.0);
            } else {
                assert!(node.bonus >= 0.0);
            }
        }
    }

    #[test]
    fn ac_matches_naive_scan_on_random_instances() {
        let words = ["ka", "tor", "mel", "sa", "vin", "dor", "ne", "pola"];
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        for trial in 0..60 {
            // Random corpus defines both the vocab and the LM.
            let n_lines = rng.gen_range(3..8);
            let corpus: Vec<String> = (0..n_lines)
                .map(|_| {
                    let n = rng.gen_range(2..7);
                    (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
                })
                .collect();
            let vocab = train_subwords(&corpus, 64).unwrap();
            let order = rng.gen_range(1..=3);
            let lm = train(
                &corpus,
                &TrainConfig { order, smoothing: Smoothing::WittenBell, prune_min_count: 1 },
            )
            .unwrap();
            let n_bias = rng.gen_range(0..5);
            let bias_raw: Vec<(String, String)> = (0..n_bias)
                .map(|_| {
                    let n = rng.gen_range(1..=3);
                    let phrase =
                        (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
                    (phrase, "t".to_string())
                })
                .collect();
            let bias = curate_bias_list(
                &bias_raw,
                &NormalizationRules { uppercase: false, ..NormalizationRules::default() },
            )
            .unwrap();
            let costs = FusionCosts {
                plain_bias: 0.7,
                alpha_in_lm: rng.gen_range(0.0..1.0),
                alpha_out_lm: rng.gen_range(0.5..2.0),
                lm_scale: rng.gen_range(0.1..2.0),
            };
            let g = build_graph(Some(&lm), &bias, &vocab, &costs).unwrap();

            let text: String = (0..rng.gen_range(5..40))
                .map(|_| *words.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            let toks = vocab.tokenize(&text);
            let pats = g.patterns();
            let naive = naive_scan(&pats, &toks);
            let ac = g.scan_total(&toks);
            assert!(
                (ac - naive).abs() <= 1e-9,
                "trial {trial}: ac={ac} naive={naive} text={text:?}"
            );
        }
    }

    #[test]
    fn longest_match_only_mode() {
        let bias = vec![
            BiasEntry::new("alpha beta gamma", "X"),
            BiasEntry::new("beta gamma", "X"),
        ];
        let vocab = vocab_for(&["alpha beta gamma"], 80);
        let opts = GraphOptions { longest_match_only: true };
        let g = build_graph_with_options(None, &bias, &vocab, &FusionCosts::default(), &opts)
            .unwrap();
        let toks = vocab.tokenize("alpha beta gamma");
        // Only the 3-word pattern scores at the shared end.
        let total = g.scan_total(&toks);
        assert!((total - 0.7).abs() < 1e-12, "got {total}");
        // And it agrees with the longest-only oracle on random text.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let words = ["alpha", "beta", "gamma"];
        for _ in 0..40 {
            let text: String = (0..rng.gen_range(1..20))
                .map(|_| *words.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            let toks = vocab.tokenize(&text);
            let want = naive_scan_longest(&g.patterns(), &toks);
            let got = g.scan_total(&toks);
            assert!((got - want).abs() <= 1e-9, "text={text:?} got={got} want={want}");
        }
    }

    #[test]
    fn build_is_deterministic_and_digest_stable() {
        let corpus = ["visit the old port", "meet near mount lake"];
        let vocab = vocab_for(&corpus, 100);
        let lm = train(&corpus, &TrainConfig::default()).unwrap();
        let bias = vec![BiasEntry::new("mount lake", "LOC")];
        let a = build_graph(Some(&lm), &bias, &vocab, &FusionCosts::default()).unwrap();
        let b = build_graph(Some(&lm), &bias, &vocab, &FusionCosts::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn save_load_round_trip() {
        let vocab = vocab_for(&["abcde"], 20);
        let bias = vec![BiasEntry::new("abcde", "X")];
        let g = build_graph(None, &bias, &vocab, &FusionCosts::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        g.save(&path).unwrap();
        let loaded = ContextGraph::load(&path).unwrap();
        assert_eq!(g, loaded);
        assert_eq!(g.digest(), loaded.digest());
    }

    #[test]
    fn rejects_wrong_version() {
        let vocab = vocab_for(&["abcde"], 20);
        let bias = vec![BiasEntry::new("abcde", "X")];
        let g = build_graph(None, &bias, &vocab, &FusionCosts::default()).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        json["version"] = serde_json::Value::String("context-graph-v9".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        std::fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
        assert!(matches!(ContextGraph::load(&path).unwrap_err(), GraphError::Version { .. }));
    }
}
