//! Pseudo-label quality control: the H1–H3 filtering heuristics with
//! per-language thresholds, cross-model pseudo-WER, metric-based data
//! selection (threshold / budget / seeded random), and the supervised/
//! pseudo-label batch multiplexing schedule.
//!
//! Heuristics, applied in order (an utterance is reported under the first
//! one that rejects it):
//! * **H1** — the pseudo-label repeats one unigram `k`-or-more times
//!   (consecutively by default; a total-occurrence mode exists because the
//!   phrasing is ambiguous),
//! * **H2** — some single word exceeds the per-language character limit
//!   (inclusive boundary: a word exactly at the limit is kept),
//! * **H3** — words-per-second ratio outside `[1, 4]` (strict bounds).
//!
//! Text normalization runs before the heuristics by default
//! (`normalize_before_filters`); either way the kept manifest carries the
//! normalized pseudo-label, so a second pass is a fixpoint.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    normalize_text, wer, LanguageCode, Manifest, NormalizationRules, NormalizeError, WerError,
};

/// Metric key written by [`cross_model_wer`].
pub const PSEUDO_WER_METRIC: &str = "pseudo_wer";

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid filter config: {what}")]
    BadConfig { what: String },
    #[error("utterance {id:?} has no pseudo-label under tag {tag:?}")]
    MissingPl { id: String, tag: String },
    #[error("utterance {id:?} has no metric {metric:?}")]
    MissingMetric { id: String, metric: String },
    #[error("utterance {id:?} has non-positive duration {duration}")]
    BadDuration { id: String, duration: f64 },
    #[error("duration must be > 0, got {duration}")]
    NonPositiveDuration { duration: f64 },
    #[error("{which} manifest has no utterances")]
    EmptyManifest { which: String },
    #[error("invalid mixing weights: {what}")]
    BadWeights { what: String },
    #[error("invalid selection policy: {what}")]
    BadPolicy { what: String },
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Wer(#[from] WerError),
}

/// How H1 counts unigram repeats.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H1Mode {
    /// A word occurring `k`-or-more times in a row (default; hallucinated
    /// loops repeat adjacently).
    #[default]
    Consecutive,
    /// A word occurring `k`-or-more times anywhere in the utterance.
    Total,
}

fn default_repeat_k() -> usize {
    3
}
fn default_ratio_min() -> f64 {
    1.0
}
fn default_ratio_max() -> f64 {
    4.0
}
fn default_true() -> bool {
    true
}
fn default_language() -> LanguageCode {
    LanguageCode::En
}

/// The per-language maximum word lengths in characters.
pub fn default_max_word_len() -> BTreeMap<LanguageCode, usize> {
    BTreeMap::from([
        (LanguageCode::Ca, 16),
        (LanguageCode::En, 16),
        (LanguageCode::De, 30),
        (LanguageCode::Fr, 20),
        (LanguageCode::Es, 25),
        (LanguageCode::It, 22),
    ])
}

/// Configuration for [`apply_filters`]. Serializes to/from the JSON config
/// file consumed by `brook filter --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// H1: reject when one unigram repeats this many times or more.
    #[serde(default = "default_repeat_k")]
    pub repeat_unigram_k: usize,
    /// H1 counting mode (consecutive by default).
    #[serde(default)]
    pub h1_mode: H1Mode,
    /// H2: per-language maximum word length in characters (inclusive).
    #[serde(default = "default_max_word_len")]
    pub max_word_len: BTreeMap<LanguageCode, usize>,
    /// H3: reject when words/second < this bound (strict).
    #[serde(default = "default_ratio_min")]
    pub word_ratio_min: f64,
    /// H3: reject when words/second > this bound (strict).
    #[serde(default = "default_ratio_max")]
    pub word_ratio_max: f64,
    /// Language the corpus is in; selects the H2 threshold and the
    /// normalization rules.
    #[serde(default = "default_language")]
    pub language: LanguageCode,
    /// Run text normalization before H1–H3 (default) or after.
    #[serde(default = "default_true")]
    pub normalize_before_filters: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            repeat_unigram_k: default_repeat_k(),
            h1_mode: H1Mode::default(),
            max_word_len: default_max_word_len(),
            word_ratio_min: default_ratio_min(),
            word_ratio_max: default_ratio_max(),
            language: default_language(),
            normalize_before_filters: true,
        }
    }
}

impl FilterConfig {
    pub fn for_language(language: LanguageCode) -> Self {
        FilterConfig { language, ..FilterConfig::default() }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.repeat_unigram_k < 2 {
            return Err(FilterError::BadConfig {
                what: format!("repeat_unigram_k must be ≥ 2, got {}", self.repeat_unigram_k),
            });
        }
        if !(self.word_ratio_min < self.word_ratio_max) {
            return Err(FilterError::BadConfig {
                what: format!(
                    "word_ratio_min {} must be < word_ratio_max {}",
                    self.word_ratio_min, self.word_ratio_max
                ),
            });
        }
        if self.max_word_len.is_empty() {
            return Err(FilterError::BadConfig { what: "max_word_len table is empty".to_string() });
        }
        if let Some((lang, &len)) = self.max_word_len.iter().find(|(_, &len)| len < 1) {
            return Err(FilterError::BadConfig {
                what: format!("max_word_len[{lang}] must be ≥ 1, got {len}"),
            });
        }
        if !self.max_word_len.contains_key(&self.language) {
            return Err(FilterError::BadConfig {
                what: format!("max_word_len has no entry for language {}", self.language),
            });
        }
        Ok(())
    }

    /// The H2 threshold for the configured language.
    pub fn max_word_len_for_language(&self) -> Result<usize, FilterError> {
        self.max_word_len.get(&self.language).copied().ok_or_else(|| FilterError::BadConfig {
            what: format!("max_word_len has no entry for language {}", self.language),
        })
    }
}

/// Reason code for a rejection (also the JSON wire value).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    #[serde(rename = "h1_repeated_unigram")]
    H1RepeatedUnigram,
    #[serde(rename = "h2_max_word_len")]
    H2MaxWordLen,
    #[serde(rename = "h3_word_ratio")]
    H3WordRatio,
}

/// One rejected utterance with the first heuristic that fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: RejectReason,
}

/// Accounting for one [`apply_filters`] run. An utterance is counted under
/// the FIRST heuristic that rejects it (order H1, H2, H3), so
/// `kept + rejections.len() == input`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub rejected_h1: usize,
    pub rejected_h2: usize,
    pub rejected_h3: usize,
    pub rejections: Vec<Rejection>,
}

/// H1: does some word occur `k`-or-more times consecutively?
pub fn h1_repeated_unigram(text: &str, k: usize) -> bool {
    let mut run = 0usize;
    let mut prev: Option<&str> = None;
    for word in text.split_whitespace() {
        if prev == Some(word) {
            run += 1;
        } else {
            run = 1;
            prev = Some(word);
        }
        if run >= k {
            return true;
        }
    }
    false
}

/// H1, total-occurrence mode: does some word occur `k`-or-more times
/// anywhere in the utterance?
pub fn h1_repeated_unigram_total(text: &str, k: usize) -> bool {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for word in text.split_whitespace() {
        let c = counts.entry(word).or_insert(0);
        *c += 1;
        if *c >= k {
            return true;
        }
    }
    false
}

/// H2: does any single word have more than `threshold` characters?
/// The boundary is inclusive: a word of exactly `threshold` characters is
/// kept. Empty text is vacuously kept.
pub fn h2_max_word_len(text: &str, threshold: usize) -> bool {
    text.split_whitespace().any(|w| w.chars().count() > threshold)
}

/// H3: `(word count / duration_s, reject?)` — rejected when the ratio is
/// strictly below `word_ratio_min` or strictly above `word_ratio_max`.
pub fn h3_word_ratio(
    text: &str,
    duration_s: f64,
    cfg: &FilterConfig,
) -> Result<(f64, bool), FilterError> {
    if !(duration_s > 0.0) {
        return Err(FilterError::NonPositiveDuration { duration: duration_s });
    }
    let words = text.split_whitespace().count();
    let ratio = words as f64 / duration_s;
    Ok((ratio, ratio < cfg.word_ratio_min || ratio > cfg.word_ratio_max))
}

enum Verdict {
    Keep(Box<crate::corpus::Utterance>),
    Reject(String, RejectReason),
}

/// Apply H1–H3 (plus normalization) to every utterance's pseudo-label under
/// `model_tag`. Returns the order-preserving kept manifest — with the
/// pseudo-label rewritten to its normalized form — and the rejection report.
pub fn apply_filters(
    manifest: &Manifest,
    cfg: &FilterConfig,
    model_tag: &str,
) -> Result<(Manifest, FilterReport), FilterError> {
    cfg.validate()?;
    let threshold = cfg.max_word_len_for_language()?;
    let rules = NormalizationRules::for_language(cfg.language.clone());

    let verdicts: Result<Vec<Verdict>, FilterError> = manifest
        .utterances
        .par_iter()
        .map(|utt| {
            let raw = utt.pl.get(model_tag).ok_or_else(|| FilterError::MissingPl {
                id: utt.id.clone(),
                tag: model_tag.to_string(),
            })?;
            let normalized = normalize_text(raw, &rules)?;
            let filter_view: &str = if cfg.normalize_before_filters { &normalized } else { raw };

            let h1 = match cfg.h1_mode {
                H1Mode::Consecutive => h1_repeated_unigram(filter_view, cfg.repeat_unigram_k),
                H1Mode::Total => h1_repeated_unigram_total(filter_view, cfg.repeat_unigram_k),
            };
            if h1 {
                return Ok(Verdict::Reject(utt.id.clone(), RejectReason::H1RepeatedUnigram));
            }
            if h2_max_word_len(filter_view, threshold) {
                return Ok(Verdict::Reject(utt.id.clone(), RejectReason::H2MaxWordLen));
            }
            let (_, reject) =
                h3_word_ratio(filter_view, utt.duration_s, cfg).map_err(|e| match e {
                    FilterError::NonPositiveDuration { duration } => {
                        FilterError::BadDuration { id: utt.id.clone(), duration }
                    }
                    other => other,
                })?;
            if reject {
                return Ok(Verdict::Reject(utt.id.clone(), RejectReason::H3WordRatio));
            }
            let mut kept = utt.clone();
            kept.pl.insert(model_tag.to_string(), normalized);
            Ok(Verdict::Keep(Box::new(kept)))
        })
        .collect();

    let mut report = FilterReport { input: manifest.utterances.len(), ..FilterReport::default() };
    let mut kept = Vec::new();
    for verdict in verdicts? {
        match verdict {
            Verdict::Keep(utt) => kept.push(*utt),
            Verdict::Reject(id, reason) => {
                match reason {
                    RejectReason::H1RepeatedUnigram => report.rejected_h1 += 1,
                    RejectReason::H2MaxWordLen => report.rejected_h2 += 1,
                    RejectReason::H3WordRatio => report.rejected_h3 += 1,
                }
                report.rejections.push(Rejection { id, reason });
            }
        }
    }
    report.kept = kept.len();
    Ok((Manifest { utterances: kept, source_tag: manifest.source_tag.clone() }, report))
}

/// Score `pl[hyp_tag]` against `pl[ref_tag]` per utterance and store the
/// result under `metrics["pseudo_wer"]`. An empty (or normalization-empty)
/// reference pseudo-label gets the sentinel value 1.0 with a warning rather
/// than failing the run.
pub fn cross_model_wer(
    manifest: &Manifest,
    hyp_tag: &str,
    ref_tag: &str,
) -> Result<Manifest, FilterError> {
    let rules = NormalizationRules::default();
    let mut out = manifest.clone();
    for utt in &mut out.utterances {
        let hyp = utt.pl.get(hyp_tag).ok_or_else(|| FilterError::MissingPl {
            id: utt.id.clone(),
            tag: hyp_tag.to_string(),
        })?;
        let reference = utt.pl.get(ref_tag).ok_or_else(|| FilterError::MissingPl {
            id: utt.id.clone(),
            tag: ref_tag.to_string(),
        })?;
        let value = match wer(reference, hyp, &rules) {
            Ok(breakdown) => breakdown.wer,
            Err(WerError::EmptyReference) => {
                log::warn!(
                    "utterance {:?}: empty reference pseudo-label under {:?}; pseudo_wer set to sentinel 1.0",
                    utt.id,
                    ref_tag
                );
                1.0
            }
            Err(e) => return Err(e.into()),
        };
        utt.metrics.insert(PSEUDO_WER_METRIC.to_string(), value);
    }
    Ok(out)
}

/// Sort direction for metric-based selection. In threshold mode this also
/// picks the comparison: ascending keeps `metric ≤ threshold` ("lower is
/// better"), descending keeps `metric ≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascending,
    Descending,
}

/// Selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Threshold,
    Budget,
    Random,
}

/// A data-selection policy: keep utterances passing a metric threshold, or
/// the best utterances by a metric under an hour budget, or a seeded uniform
/// random subset under an hour budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// Key into `Utterance::metrics` (ignored in random mode).
    pub metric_name: String,
    pub direction: Direction,
    pub mode: SelectionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SelectionPolicy {
    /// Threshold selection, e.g. `pseudo_wer ≤ 0.25` with
    /// [`Direction::Ascending`].
    pub fn threshold(metric_name: impl Into<String>, direction: Direction, threshold: f64) -> Self {
        SelectionPolicy {
            metric_name: metric_name.into(),
            direction,
            mode: SelectionMode::Threshold,
            threshold: Some(threshold),
            budget_hours: None,
            seed: None,
        }
    }

    /// Budget selection: best-first by metric until `budget_hours` is full.
    pub fn budget(metric_name: impl Into<String>, direction: Direction, budget_hours: f64) -> Self {
        SelectionPolicy {
            metric_name: metric_name.into(),
            direction,
            mode: SelectionMode::Budget,
            threshold: None,
            budget_hours: Some(budget_hours),
            seed: None,
        }
    }

    /// Seeded uniform random selection under `budget_hours`.
    pub fn random(budget_hours: f64, seed: u64) -> Self {
        SelectionPolicy {
            metric_name: String::new(),
            direction: Direction::Ascending,
            mode: SelectionMode::Random,
            threshold: None,
            budget_hours: Some(budget_hours),
            seed: Some(seed),
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        match self.mode {
            SelectionMode::Threshold => {
                if self.threshold.is_none() {
                    return Err(FilterError::BadPolicy {
                        what: "threshold mode needs a threshold value".to_string(),
                    });
                }
            }
            SelectionMode::Budget | SelectionMode::Random => {
                match self.budget_hours {
                    Some(b) if b > 0.0 && b.is_finite() => {}
                    other => {
                        return Err(FilterError::BadPolicy {
                            what: format!("budget mode needs budget_hours > 0, got {other:?}"),
                        });
                    }
                }
                if self.mode == SelectionMode::Random && self.seed.is_none() {
                    return Err(FilterError::BadPolicy {
                        what: "random mode needs a seed".to_string(),
                    });
                }
            }
        }
        if self.mode != SelectionMode::Random && self.metric_name.is_empty() {
            return Err(FilterError::BadPolicy { what: "metric_name is empty".to_string() });
        }
        Ok(())
    }
}

fn metric_of(utt: &crate::corpus::Utterance, metric: &str) -> Result<f64, FilterError> {
    utt.metrics.get(metric).copied().ok_or_else(|| FilterError::MissingMetric {
        id: utt.id.clone(),
        metric: metric.to_string(),
    })
}

/// Apply a [`SelectionPolicy`]. Threshold mode preserves manifest order;
/// budget mode emits best-first (stable tie-break by id) up to the maximal
/// prefix whose total duration fits the budget; random mode shuffles with
/// the seed and takes the same kind of maximal prefix.
pub fn select(manifest: &Manifest, policy: &SelectionPolicy) -> Result<Manifest, FilterError> {
    policy.validate()?;
    let utterances = match policy.mode {
        SelectionMode::Threshold => {
            let threshold = policy.threshold.expect("validated");
            let mut kept = Vec::new();
            for utt in &manifest.utterances {
                let value = metric_of(utt, &policy.metric_name)?;
                let pass = match policy.direction {
                    Direction::Ascending => value <= threshold,
                    Direction::Descending => value >= threshold,
                };
                if pass {
                    kept.push(utt.clone());
                }
            }
            kept
        }
        SelectionMode::Budget => {
            let mut ranked: Vec<(f64, &crate::corpus::Utterance)> = Vec::new();
            for utt in &manifest.utterances {
                ranked.push((metric_of(utt, &policy.metric_name)?, utt));
            }
            ranked.sort_by(|a, b| {
                let ord = a.0.partial_cmp(&b.0).expect("metrics must not be NaN");
                match policy.direction {
                    Direction::Ascending => ord.then_with(|| a.1.id.cmp(&b.1.id)),
                    Direction::Descending => ord.reverse().then_with(|| a.1.id.cmp(&b.1.id)),
                }
            });
            budget_prefix(ranked.into_iter().map(|(_, u)| u), policy.budget_hours.expect("validated"))
        }
        SelectionMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed.expect("validated"));
            let mut shuffled: Vec<&crate::corpus::Utterance> = manifest.utterances.iter().collect();
            shuffled.shuffle(&mut rng);
            budget_prefix(shuffled.into_iter(), policy.budget_hours.expect("validated"))
        }
    };
    Ok(Manifest { utterances, source_tag: manifest.source_tag.clone() })
}

/// Maximal prefix of `candidates` whose total duration stays within the
/// budget. Warns when not even the first candidate fits.
fn budget_prefix<'a>(
    candidates: impl Iterator<Item = &'a crate::corpus::Utterance>,
    budget_hours: f64,
) -> Vec<crate::corpus::Utterance> {
    let budget_s = budget_hours * 3600.0;
    let mut total = 0.0;
    let mut kept = Vec::new();
    for utt in candidates {
        if total + utt.duration_s > budget_s {
            if kept.is_empty() {
                log::warn!(
                    "selection budget of {budget_hours} h is smaller than the first candidate ({} s); selecting nothing",
                    utt.duration_s
                );
            }
            break;
        }
        total += utt.duration_s;
        kept.push(utt.clone());
    }
    kept
}

/// How the ≥1-supervised guarantee is windowed: over a count of consecutive
/// utterances, or over any consecutive run spanning the given duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuxWindow {
    Utterances(usize),
    Seconds(f64),
}

/// One emitted schedule slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuxItem {
    pub source: String,
    pub id: String,
    /// True when this slot was force-injected to keep the window guarantee
    /// (rather than drawn from the weighted sampler).
    pub injected: bool,
}

/// A deterministic supervised/pseudo-label interleaving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuxSchedule {
    pub window: MuxWindow,
    pub weight_supervised: f64,
    pub weight_pl: f64,
    pub seed: u64,
    pub items: Vec<MuxItem>,
    /// Source tag that marks supervised slots in `items`.
    sup_tag: String,
}

impl MuxSchedule {
    /// Exhaustively verify the window guarantee at every offset:
    /// utterance windows — every `n` consecutive items contain a supervised
    /// one; duration windows — no supervised-free run spans more than the
    /// window duration.
    pub fn window_guarantee_holds(&self, durations: &BTreeMap<String, f64>) -> bool {
        match self.window {
            MuxWindow::Utterances(n) => {
                if n == 0 || self.items.len() < n {
                    return true;
                }
                self.items.windows(n).all(|w| w.iter().any(|item| item.source == self.supervised_tag()))
            }
            MuxWindow::Seconds(limit) => {
                let mut run = 0.0;
                for item in &self.items {
                    if item.source == self.supervised_tag() {
                        run = 0.0;
                    } else {
                        run += durations.get(&item.id).copied().unwrap_or(0.0);
                        if run > limit {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }

    /// The source tag that marks supervised slots (the supervised
    /// manifest's tag, or "supervised" when that was empty).
    pub fn supervised_tag(&self) -> &str {
        &self.sup_tag
    }
}

/// Weighted supervised/pseudo-label interleaving over utterance-count
/// windows (the common case).
pub fn mux(
    supervised: &Manifest,
    pl: &Manifest,
    batch_size_utts: usize,
    weights: (f64, f64),
    seed: u64,
) -> Result<MuxSchedule, FilterError> {
    mux_windowed(supervised, pl, MuxWindow::Utterances(batch_size_utts), weights, seed)
}

/// [`mux`] with an explicit window kind (utterance-count or duration-based).
pub fn mux_windowed(
    supervised: &Manifest,
    pl: &Manifest,
    window: MuxWindow,
    weights: (f64, f64),
    seed: u64,
) -> Result<MuxSchedule, FilterError> {
    let (w_sup, w_pl) = weights;
    if supervised.utterances.is_empty() {
        return Err(FilterError::EmptyManifest { which: "supervised".to_string() });
    }
    if pl.utterances.is_empty() {
        return Err(FilterError::EmptyManifest { which: "pseudo-label".to_string() });
    }
    if !(w_sup >= 0.0 && w_pl >= 0.0) {
        return Err(FilterError::BadWeights {
            what: format!("weights must be nonnegative, got ({w_sup}, {w_pl})"),
        });
    }
    if (w_sup + w_pl - 1.0).abs() > 1e-9 {
        return Err(FilterError::BadWeights {
            what: format!("weights must sum to 1, got {w_sup} + {w_pl} = {}", w_sup + w_pl),
        });
    }
    if w_sup == 0.0 {
        return Err(FilterError::BadWeights {
            what: "weight_supervised = 0 contradicts the ≥1-supervised-per-window guarantee"
                .to_string(),
        });
    }
    match window {
        MuxWindow::Utterances(n) if n < 1 => {
            return Err(FilterError::BadWeights {
                what: "window must cover ≥ 1 utterance".to_string(),
            });
        }
        MuxWindow::Seconds(s) if !(s > 0.0) => {
            return Err(FilterError::BadWeights {
                what: format!("duration window must be > 0 s, got {s}"),
            });
        }
        _ => {}
    }

    let sup_tag =
        if supervised.source_tag.is_empty() { "supervised".to_string() } else { supervised.source_tag.clone() };
    let pl_tag = if pl.source_tag.is_empty() { "pl".to_string() } else { pl.source_tag.clone() };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = supervised.utterances.len() + pl.utterances.len();
    let mut sup_next = 0usize;
    let mut pl_next = 0usize;
    let mut items = Vec::with_capacity(total);

    // State for the window guarantee.
    let mut pl_run_items = 0usize;
    let mut pl_run_seconds = 0.0f64;

    for _ in 0..total {
        // Would emitting another PL item break the guarantee?
        let must_inject = match window {
            MuxWindow::Utterances(n) => pl_run_items + 1 >= n,
            MuxWindow::Seconds(limit) => {
                let next_pl_dur = pl.utterances[pl_next % pl.utterances.len()].duration_s;
                pl_run_seconds + next_pl_dur > limit
            }
        };
        let pick_supervised = must_inject || rng.gen_bool(w_sup);
        if pick_supervised {
            let utt = &supervised.utterances[sup_next % supervised.utterances.len()];
            sup_next += 1;
            items.push(MuxItem { source: sup_tag.clone(), id: utt.id.clone(), injected: must_inject });
            pl_run_items = 0;
            pl_run_seconds = 0.0;
        } else {
            let utt = &pl.utterances[pl_next % pl.utterances.len()];
            pl_next += 1;
            items.push(MuxItem { source: pl_tag.clone(), id: utt.id.clone(), injected: false });
            pl_run_items += 1;
            pl_run_seconds += utt.duration_s;
        }
    }

    Ok(MuxSchedule {
        window,
        weight_supervised: w_sup,
        weight_pl: w_pl,
        seed,
        items,
        sup_tag,
    })
}
