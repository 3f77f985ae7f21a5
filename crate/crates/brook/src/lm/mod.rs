//! Backoff n-gram language models in the log10 domain.
//!
//! Models are trained with Witten-Bell smoothing (default) or add-k, store
//! explicit probabilities for observed n-grams plus Katz-style backoff
//! weights, and round-trip through the ARPA text format. `<s>`, `</s>`, and
//! `<unk>` are reserved markers; `<unk>` is always in the vocabulary and
//! absorbs the unigram leftover mass, which guarantees that the conditional
//! distribution under any context sums to one.

mod arpa;

pub use arpa::{arpa_to_string, read_arpa, read_arpa_str, write_arpa, ArpaError};

use std::collections::BTreeMap;

/// Sentence-start marker (context only; has a dummy probability).
pub const SENT_START: &str = "<s>";
/// Sentence-end marker (a predicted event in every sentence).
pub const SENT_END: &str = "</s>";
/// Unknown-word marker; always present, holds the unigram smoothing floor.
pub const UNK: &str = "<unk>";

/// log10 probability assigned to the never-predicted `<s>` entry.
const SENT_START_LOGPROB: f64 = -99.0;

/// Smoothing method used at estimation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    /// Witten-Bell: reserves `T/(c+T)` of each context's mass for backoff,
    /// where `T` is the number of distinct continuation types and `c` the
    /// context count.
    WittenBell,
    /// Add-k over the observed continuations plus one unseen bucket:
    /// `P(w|h) = (c(hw)+k) / (c(h) + k(T+1))`. Mainly for closed-form tests.
    AddK { k: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    /// n-grams with a count below this are dropped before estimation.
    pub prune_min_count: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { order: 3, smoothing: Smoothing::WittenBell, prune_min_count: 1 }
    }
}

/// One stored n-gram: log10 probability plus, below the maximum order, a
/// log10 backoff weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramEntry {
    pub logprob: f64,
    pub backoff: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("add-k smoothing needs k > 0, got {k}")]
    BadK { k: f64 },
    #[error("training corpus has no usable sentences")]
    EmptyCorpus,
    #[error("inconsistent model: {ngram:?} lacks its {what} {missing:?}")]
    Inconsistent { ngram: Vec<String>, what: &'static str, missing: Vec<String> },
}

/// A backoff n-gram model. Tables are ordered maps so iteration, ARPA
/// serialization, and downstream graph construction are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    /// `tables[n-1]` holds the order-`n` entries keyed by token sequence.
    tables: Vec<BTreeMap<Vec<String>, NGramEntry>>,
}

impl NGramLM {
    /// Assemble a model from explicit tables, checking ARPA-style
    /// consistency: every (n>1)-gram must have its prefix and suffix
    /// (n-1)-grams stored.
    pub fn from_tables(
        tables: Vec<BTreeMap<Vec<String>, NGramEntry>>,
    ) -> Result<NGramLM, LmError> {
        if tables.is_empty() {
            return Err(LmError::ZeroOrder);
        }
        let lm = NGramLM { order: tables.len(), tables };
        lm.validate()?;
        Ok(lm)
    }

    fn validate(&self) -> Result<(), LmError> {
        for n in 2..=self.order {
            for key in self.tables[n - 1].keys() {
                let prefix = &key[..n - 1];
                if !self.tables[n - 2].contains_key(prefix) {
                    return Err(LmError::Inconsistent {
                        ngram: key.clone(),
                        what: "prefix",
                        missing: prefix.to_vec(),
                    });
                }
                let suffix = &key[1..];
                if !self.tables[n - 2].contains_key(suffix) {
                    return Err(LmError::Inconsistent {
                        ngram: key.clone(),
                        what: "suffix",
                        missing: suffix.to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of stored entries at order `n` (1-based).
    pub fn ngram_count(&self, n: usize) -> usize {
        self.tables.get(n - 1).map_or(0, BTreeMap::len)
    }

    /// Iterate the stored order-`n` entries in sorted key order.
    pub fn ngrams(&self, n: usize) -> impl Iterator<Item = (&Vec<String>, &NGramEntry)> {
        self.tables.get(n - 1).into_iter().flat_map(BTreeMap::iter)
    }

    pub fn contains(&self, ngram: &[String]) -> bool {
        self.tables
            .get(ngram.len().wrapping_sub(1))
            .is_some_and(|t| t.contains_key(ngram))
    }

    pub fn entry(&self, ngram: &[String]) -> Option<&NGramEntry> {
        self.tables.get(ngram.len().wrapping_sub(1))?.get(ngram)
    }

    /// True if `word` has a unigram entry (markers included).
    pub fn in_vocab(&self, word: &str) -> bool {
        self.tables[0].contains_key(std::slice::from_ref(&word.to_string()))
    }

    /// All words the model can predict: the unigram vocabulary minus `<s>`.
    pub fn prediction_vocab(&self) -> Vec<String> {
        self.tables[0]
            .keys()
            .map(|k| k[0].clone())
            .filter(|w| w != SENT_START)
            .collect()
    }

    /// log10 P(word | context) with Katz-style backoff.
    ///
    /// Out-of-vocabulary tokens (in the context or as the predicted word)
    /// are mapped to `<unk>`; the context is truncated to the last
    /// `order - 1` tokens.
    pub fn logprob(&self, context: &[&str], word: &str) -> f64 {
        let map = |w: &str| -> String {
            if self.in_vocab(w) { w.to_string() } else { UNK.to_string() }
        };
        let start = context.len().saturating_sub(self.order - 1);
        let ctx: Vec<String> = context[start..].iter().map(|w| map(w)).collect();
        lookup_logprob(&self.tables, &ctx, &map(word))
    }

    /// Sum of log10 event probabilities for one sentence: every word plus
    /// the final `</s>`, each conditioned on its `<s>`-padded history.
    pub fn sentence_logprob(&self, words: &[&str]) -> f64 {
        let mut tokens: Vec<&str> = Vec::with_capacity(words.len() + 2);
        tokens.push(SENT_START);
        tokens.extend_from_slice(words);
        tokens.push(SENT_END);
        let mut total = 0.0;
        for i in 1..tokens.len() {
            total += self.logprob(&tokens[..i], tokens[i]);
        }
        total
    }

    /// Perplexity of whitespace-separated, pre-normalized text:
    /// `10^(-logprob / N)` with `N = word count + 1` (for `</s>`).
    pub fn perplexity(&self, text: &str) -> f64 {
        let words: Vec<&str> = text.split_whitespace().collect();
        let n = words.len() + 1;
        10f64.powf(-self.sentence_logprob(&words) / n as f64)
    }
}

/// Backoff lookup over (possibly partially built) tables. Tokens must
/// already be vocabulary-mapped.
fn lookup_logprob(tables: &[BTreeMap<Vec<String>, NGramEntry>], ctx: &[String], word: &str) -> f64 {
    let mut key: Vec<String> = Vec::with_capacity(ctx.len() + 1);
    key.extend_from_slice(ctx);
    key.push(word.to_string());
    if let Some(table) = tables.get(key.len() - 1) {
        if let Some(e) = table.get(&key) {
            return e.logprob;
        }
    }
    if ctx.is_empty() {
        // Vocabulary mapping guarantees a unigram entry exists; the unk
        // fallback keeps the function total even on hand-built models.
        let unk = vec![UNK.to_string()];
        return tables[0].get(&unk).map_or(f64::NEG_INFINITY, |e| e.logprob);
    }
    let bow = tables[ctx.len() - 1]
        .get(ctx)
        .and_then(|e| e.backoff)
        .unwrap_or(0.0);
    bow + lookup_logprob(tables, &ctx[1..], word)
}

/// Train a backoff n-gram model on pre-normalized sentences.
///
/// Each sentence is padded as `<s> w1 .. wm </s>` and all n-grams of orders
/// `1..=order` are counted. Literal marker tokens inside a sentence are
/// dropped with a warning. Counting, pruning, and estimation are fully
/// deterministic.
pub fn train<S: AsRef<str>>(sentences: &[S], config: &TrainConfig) -> Result<NGramLM, LmError> {
    if config.order == 0 {
        return Err(LmError::ZeroOrder);
    }
    if let Smoothing::AddK { k } = config.smoothing {
        if !(k > 0.0) || !k.is_finite() {
            return Err(LmError::BadK { k });
        }
    }

    // Count n-grams of every order over marker-padded sentences.
    let mut counts: Vec<BTreeMap<Vec<String>, u64>> = vec![BTreeMap::new(); config.order];
    let mut used_sentences = 0usize;
    for sentence in sentences {
        let mut tokens: Vec<String> = vec![SENT_START.to_string()];
        for w in sentence.as_ref().split_whitespace() {
            if w == SENT_START || w == SENT_END || w == UNK {
                log::warn!("dropping literal marker token {w:?} from training sentence");
                continue;
            }
            tokens.push(w.to_string());
        }
        if tokens.len() == 1 {
            continue; // nothing but the start marker
        }
        tokens.push(SENT_END.to_string());
        used_sentences += 1;
        for n in 1..=config.order {
            for window in tokens.windows(n) {
                *counts[n - 1].entry(window.to_vec()).or_insert(0) += 1;
            }
        }
    }
    if used_sentences == 0 {
        return Err(LmError::EmptyCorpus);
    }

    // Prune low-count n-grams. Counts are monotone under extension
    // (count(prefix) >= count(ngram), count(suffix) >= count(ngram)), so a
    // uniform threshold cannot orphan a surviving entry.
    if config.prune_min_count > 1 {
        for table in &mut counts {
            table.retain(|_, c| *c >= config.prune_min_count);
        }
    }

    let mut tables: Vec<BTreeMap<Vec<String>, NGramEntry>> = Vec::with_capacity(config.order);

    // Unigrams: distribute mass over observed words plus <unk>; <s> is
    // never predicted and gets a dummy logprob.
    {
        let mut table = BTreeMap::new();
        let seen: Vec<(&Vec<String>, u64)> = counts[0]
            .iter()
            .filter(|(k, _)| k[0] != SENT_START)
            .map(|(k, &c)| (k, c))
            .collect();
        let c_total: u64 = seen.iter().map(|&(_, c)| c).sum();
        let t_types = seen.len() as f64;
        let c_total = c_total as f64;
        let (denom, unk_mass) = match config.smoothing {
            Smoothing::WittenBell => (c_total + t_types, t_types),
            Smoothing::AddK { k } => (c_total + k * (t_types + 1.0), k),
        };
        for (key, c) in seen {
            let p = match config.smoothing {
                Smoothing::WittenBell => c as f64 / denom,
                Smoothing::AddK { k } => (c as f64 + k) / denom,
            };
            table.insert(key.clone(), NGramEntry { logprob: p.log10(), backoff: None });
        }
        table.insert(
            vec![UNK.to_string()],
            NGramEntry { logprob: (unk_mass / denom).log10(), backoff: None },
        );
        if counts[0].contains_key(&vec![SENT_START.to_string()]) {
            table.insert(
                vec![SENT_START.to_string()],
                NGramEntry { logprob: SENT_START_LOGPROB, backoff: None },
            );
        }
        tables.push(table);
    }

    // Higher orders, bottom-up: explicit probabilities for observed
    // continuations and a normalizing backoff weight on each context.
    for n in 2..=config.order {
        let mut table: BTreeMap<Vec<String>, NGramEntry> = BTreeMap::new();
        // Group order-n counts by context; BTreeMap iteration yields each
        // context's continuations contiguously.
        let mut by_context: BTreeMap<&[String], Vec<(&String, u64)>> = BTreeMap::new();
        for (key, &c) in &counts[n - 1] {
            by_context.entry(&key[..n - 1]).or_default().push((&key[n - 1], c));
        }
        for (ctx, conts) in by_context {
            let c_total: u64 = conts.iter().map(|&(_, c)| c).sum();
            let t_types = conts.len() as f64;
            let c_total = c_total as f64;
            let (denom, leftover) = match config.smoothing {
                Smoothing::WittenBell => {
                    (c_total + t_types, t_types / (c_total + t_types))
                }
                Smoothing::AddK { k } => {
                    let d = c_total + k * (t_types + 1.0);
                    (d, k / d)
                }
            };
            // Backoff normalizer: mass the lower order assigns to the
            // continuations we model explicitly. <unk> is never an observed
            // continuation, so the remainder is strictly positive.
            let mut seen_lower = 0.0;
            for &(w, c) in &conts {
                let p = match config.smoothing {
                    Smoothing::WittenBell => c as f64 / denom,
                    Smoothing::AddK { k } => (c as f64 + k) / denom,
                };
                let mut key = ctx.to_vec();
                key.push(w.clone());
                table.insert(key, NGramEntry { logprob: p.log10(), backoff: None });
                seen_lower += 10f64.powf(lookup_logprob(&tables, &ctx[1..], w));
            }
            let bow_denom = 1.0 - seen_lower;
            assert!(
                bow_denom > 0.0,
                "backoff normalizer must be positive (context {ctx:?})"
            );
            let bow = leftover / bow_denom;
            let prev = tables[n - 2]
                .get_mut(ctx)
                .expect("context exists at lower order by count monotonicity");
            prev.backoff = Some(clean_zero(bow.log10()));
        }
        tables.push(table);
    }

    // Entries below the top order that never served as a context keep a
    // pass-through backoff weight of 1 (log10 = 0).
    let order = config.order;
    for table in tables.iter_mut().take(order - 1) {
        for entry in table.values_mut() {
            entry.backoff.get_or_insert(0.0);
        }
    }

    let lm = NGramLM { order, tables };
    lm.validate()?;
    Ok(lm)
}

/// Collapse IEEE -0.0 to 0.0 so serialized weights are canonical.
fn clean_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}
