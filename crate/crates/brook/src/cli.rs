//! Command-line interface: one reproducible binary over the library
//! pipelines.
//!
//! `run(argv)` takes the full argument vector (including the program name,
//! as in [`std::env::args`]) and returns the process exit code:
//!
//! * `0` — success (also `--help` / `--version`);
//! * `1` — a pipeline failed at runtime (bad file contents, decode errors);
//! * `2` — usage error: unknown flag or subcommand, conflicting flags
//!   (e.g. `--threshold` with `--mode budget`), malformed inline values.
//!
//! Every failure prints a machine-readable error object on stderr:
//! `{"error":{"code":"...","message":"..."}}`. All randomness derives from
//! the global `--seed`; `--threads` bounds the rayon pool (work is
//! partitioned order-preservingly, so thread count never changes bytes);
//! outputs are byte-identical across runs with fixed inputs and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::context_graph::{
    build_graph_with_options, curate_bias_list, parse_bias_lines, train_subwords, ContextGraph,
    FusionCosts, GraphOptions, SubwordVocab,
};
use crate::corpus::{load_manifest, save_manifest, wer, NormalizationRules, WerBreakdown};
use crate::decode::{beam_search, fuse_configs, streaming_decode, sweep};
use crate::lm::{read_arpa, write_arpa, Smoothing, TrainConfig};
use crate::pl_filter::{apply_filters, mux, select, Direction, FilterConfig, SelectionPolicy};
use crate::transducer::{combined_loss, LossConfig, TableTransducer};

/// Desk-scale streaming-ASR prototyping pipelines.
#[derive(Debug, Parser)]
#[command(
    name = "brook",
    version,
    about = "Pseudo-label filtering, n-gram LMs, contextual fusion, and chunk-wise transducer decoding",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for all randomness.
    #[arg(long, global = true, default_value_t = 17)]
    seed: u64,
    /// Worker threads (default: machine parallelism). Never changes output
    /// bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level: off, error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply the H1–H3 pseudo-label heuristics (plus normalization).
    Filter(FilterArgs),
    /// Select utterances by a manifest metric (budget or threshold mode).
    Select(SelectArgs),
    /// Interleave supervised and pseudo-labeled manifests into batches.
    Mux(MuxArgs),
    /// Train a backoff n-gram language model and write it as ARPA.
    TrainLm(TrainLmArgs),
    /// Train a byte-pair subword vocabulary.
    Tokenizer(TokenizerArgs),
    /// Context-graph operations.
    Graph(GraphArgs),
    /// Evaluate the interpolated transducer loss on one instance.
    Loss(LossArgs),
    /// Decode a manifest offline, streaming, or as a 13-configuration sweep.
    Decode(DecodeArgs),
    /// Score decode output against manifest references (corpus WER).
    Eval(EvalArgs),
    /// Run the end-to-end synthetic-grammar demo pipeline.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Filter configuration (JSON; carries the per-language H2 table).
    #[arg(long)]
    config: PathBuf,
    /// Pseudo-label tag to filter (e.g. "pl_weak").
    #[arg(long)]
    model_tag: String,
    /// Input manifest (JSONL).
    #[arg(long = "in")]
    input: PathBuf,
    /// Kept-utterance manifest (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Rejection report (JSON).
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Budget,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Asc,
    Desc,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Manifest metric to rank by (e.g. "pseudo_wer").
    #[arg(long)]
    metric: String,
    /// budget: best-first until the duration budget is full;
    /// threshold: keep rows passing the cut, order preserved.
    #[arg(long)]
    mode: ModeArg,
    /// Duration budget in hours (budget mode only).
    #[arg(long)]
    budget_hours: Option<f64>,
    /// Metric cut (threshold mode only; inclusive).
    #[arg(long)]
    threshold: Option<f64>,
    /// asc: smaller is better; desc: larger is better.
    #[arg(long)]
    direction: DirectionArg,
    /// Input manifest (JSONL).
    #[arg(long = "in")]
    input: PathBuf,
    /// Selected manifest (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MuxArgs {
    /// Supervised manifest (JSONL).
    #[arg(long)]
    sup: PathBuf,
    /// Pseudo-labeled manifest (JSONL).
    #[arg(long)]
    pl: PathBuf,
    /// Batch size in utterances.
    #[arg(long)]
    batch: usize,
    /// Sampling weight for the supervised source.
    #[arg(long)]
    w_sup: f64,
    /// Sampling weight for the pseudo-labeled source.
    #[arg(long)]
    w_pl: f64,
    /// Mux schedule (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SmoothingArg {
    WittenBell,
    AddK,
}

#[derive(Debug, Args)]
struct TrainLmArgs {
    /// Training text: one pre-normalized sentence per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Maximum n-gram order.
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Smoothing method.
    #[arg(long, value_enum, default_value_t = SmoothingArg::WittenBell)]
    smoothing: SmoothingArg,
    /// Add-k constant (add-k smoothing only).
    #[arg(long)]
    k: Option<f64>,
    /// Drop n-grams seen fewer times than this before estimation.
    #[arg(long, default_value_t = 1)]
    prune_min_count: u64,
    /// Output model (ARPA text).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TokenizerArgs {
    /// Training text: one sentence per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Target vocabulary size (pieces, including markers and characters).
    #[arg(long)]
    vocab_size: usize,
    /// Output vocabulary (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GraphArgs {
    #[command(subcommand)]
    action: GraphAction,
}

#[derive(Debug, Subcommand)]
enum GraphAction {
    /// Build the Aho-Corasick fusion graph from an ARPA LM and/or bias list.
    Build(GraphBuildArgs),
}

#[derive(Debug, Args)]
struct GraphBuildArgs {
    /// Word n-gram LM (ARPA text).
    #[arg(long)]
    arpa: Option<PathBuf>,
    /// Bias phrases: one per line, optional tab-separated source tag.
    #[arg(long)]
    bias: Option<PathBuf>,
    /// Subword vocabulary (JSON).
    #[arg(long)]
    vocab: PathBuf,
    /// Bonus for a bias phrase outside the LM.
    #[arg(long, default_value_t = 0.7)]
    bias_cost: f64,
    /// Extra bonus for a bias phrase the LM already knows.
    #[arg(long, default_value_t = 0.5)]
    alpha_in: f64,
    /// Bonus for a bias phrase missing from the LM.
    #[arg(long, default_value_t = 1.5)]
    alpha_out: f64,
    /// Scale on de-logged LM weights.
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    /// Score only the longest match ending at each position.
    #[arg(long)]
    longest_match_only: bool,
    /// Output graph (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LossArgs {
    /// Transducer model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Frame symbols, comma-separated (e.g. "0,3,3,1").
    #[arg(long)]
    frames: String,
    /// Target token ids, comma-separated; empty string for an empty target.
    #[arg(long)]
    target: String,
    /// λ in L = (1−λ)·L_RNNT + λ·L_CTC.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Transducer model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Manifest with frame sequences (JSONL).
    #[arg(long)]
    manifest: PathBuf,
    /// Beam width.
    #[arg(long, default_value_t = 4)]
    beam: usize,
    /// Optional fusion graph (JSON).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Subword vocabulary (JSON).
    #[arg(long)]
    vocab: PathBuf,
    /// Streaming configuration label, e.g. "cs=320ms;lf=2.56s" or
    /// "cs=640ms;lf=inf". Omitted: offline decode.
    #[arg(long, conflicts_with = "sweep")]
    config: Option<String>,
    /// Run the 13-configuration latency sweep (requires references).
    #[arg(long)]
    sweep: bool,
    /// Output report (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Reference manifest (JSONL with ref_text).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Decode output (JSON array of {id, text, ...}).
    #[arg(long)]
    hyp: PathBuf,
    /// Output WER report (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    /// Directory for pipeline artifacts; created if missing.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// An error ready for printing: a stable code, a human message, and whether
/// it is a usage error (exit 2) or a runtime failure (exit 1).
struct CliError {
    code: &'static str,
    message: String,
    usage: bool,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: "usage", message: message.into(), usage: true }
    }

    fn runtime(code: &'static str, err: impl std::fmt::Display) -> Self {
        CliError { code, message: err.to_string(), usage: false }
    }
}

fn emit_error(err: &CliError) -> i32 {
    let obj = serde_json::json!({ "error": { "code": err.code, "message": err.message } });
    eprintln!("{obj}");
    if err.usage {
        2
    } else {
        1
    }
}

/// Entry point behind the binary: parse, dispatch, and map errors to exit
/// codes. `argv` includes the program name.
pub fn run<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    0
                }
                _ => emit_error(&CliError::usage(err.to_string().trim_end())),
            };
        }
    };

    let _ = env_logger::Builder::new().filter_level(cli.global.log_level).try_init();
    if let Some(threads) = cli.global.threads {
        if threads == 0 {
            return emit_error(&CliError::usage("--threads must be at least 1"));
        }
        // The pool is process-global; repeat initialization (tests, library
        // callers) keeps the first configuration.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    let result = match &cli.command {
        Command::Filter(args) => cmd_filter(args),
        Command::Select(args) => cmd_select(args),
        Command::Mux(args) => cmd_mux(args, cli.global.seed),
        Command::TrainLm(args) => cmd_train_lm(args),
        Command::Tokenizer(args) => cmd_tokenizer(args),
        Command::Graph(args) => match &args.action {
            GraphAction::Build(build) => cmd_graph_build(build),
        },
        Command::Loss(args) => cmd_loss(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Demo(args) => cmd_demo(args, cli.global.seed),
    };
    match result {
        Ok(()) => 0,
        Err(err) => emit_error(&err),
    }
}

fn read_text(path: &Path, what: &'static str) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime("io", format!("reading {what} {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8], what: &'static str) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::runtime("io", format!("writing {what} {}: {e}", path.display())))
}

fn write_json_value(path: &Path, value: &serde_json::Value, what: &'static str) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_bytes(path, text.as_bytes(), what)
}

fn to_json<T: serde::Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("reports serialize")
}

fn cmd_filter(args: &FilterArgs) -> Result<(), CliError> {
    let config_text = read_text(&args.config, "filter config")?;
    let config: FilterConfig = serde_json::from_str(&config_text)
        .map_err(|e| CliError::runtime("config", format!("parsing {}: {e}", args.config.display())))?;
    let manifest =
        load_manifest(&args.input, "input").map_err(|e| CliError::runtime("manifest", e))?;
    let (kept, report) =
        apply_filters(&manifest, &config, &args.model_tag).map_err(|e| CliError::runtime("filter", e))?;
    save_manifest(&kept, &args.out).map_err(|e| CliError::runtime("io", e))?;
    write_json_value(&args.report, &to_json(&report), "filter report")?;
    log::info!(
        "filter: kept {}/{} utterances (h1 {}, h2 {}, h3 {})",
        report.kept,
        report.input,
        report.rejected_h1,
        report.rejected_h2,
        report.rejected_h3
    );
    Ok(())
}

fn cmd_select(args: &SelectArgs) -> Result<(), CliError> {
    let direction = match args.direction {
        DirectionArg::Asc => Direction::Ascending,
        DirectionArg::Desc => Direction::Descending,
    };
    let policy = match args.mode {
        ModeArg::Budget => {
            if args.threshold.is_some() {
                return Err(CliError::usage("--threshold conflicts with --mode budget"));
            }
            let budget = args
                .budget_hours
                .ok_or_else(|| CliError::usage("--mode budget requires --budget-hours"))?;
            SelectionPolicy::budget(&args.metric, direction, budget)
        }
        ModeArg::Threshold => {
            if args.budget_hours.is_some() {
                return Err(CliError::usage("--budget-hours conflicts with --mode threshold"));
            }
            let threshold = args
                .threshold
                .ok_or_else(|| CliError::usage("--mode threshold requires --threshold"))?;
            SelectionPolicy::threshold(&args.metric, direction, threshold)
        }
    };
    let manifest =
        load_manifest(&args.input, "input").map_err(|e| CliError::runtime("manifest", e))?;
    let selected = select(&manifest, &policy).map_err(|e| CliError::runtime("select", e))?;
    save_manifest(&selected, &args.out).map_err(|e| CliError::runtime("io", e))?;
    log::info!("select: kept {}/{} utterances", selected.len(), manifest.len());
    Ok(())
}

fn cmd_mux(args: &MuxArgs, seed: u64) -> Result<(), CliError> {
    let sup = load_manifest(&args.sup, "supervised").map_err(|e| CliError::runtime("manifest", e))?;
    let pl = load_manifest(&args.pl, "pl").map_err(|e| CliError::runtime("manifest", e))?;
    let schedule = mux(&sup, &pl, args.batch, (args.w_sup, args.w_pl), seed)
        .map_err(|e| CliError::runtime("mux", e))?;
    write_json_value(&args.out, &to_json(&schedule), "mux schedule")?;
    log::info!("mux: scheduled {} items", schedule.items.len());
    Ok(())
}

fn cmd_train_lm(args: &TrainLmArgs) -> Result<(), CliError> {
    let smoothing = match args.smoothing {
        SmoothingArg::WittenBell => {
            if args.k.is_some() {
                return Err(CliError::usage("--k requires --smoothing add-k"));
            }
            Smoothing::WittenBell
        }
        SmoothingArg::AddK => {
            let k = args.k.ok_or_else(|| CliError::usage("--smoothing add-k requires --k"))?;
            Smoothing::AddK { k }
        }
    };
    let text = read_text(&args.input, "training text")?;
    let sentences: Vec<&str> =
        text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let config =
        TrainConfig { order: args.order, smoothing, prune_min_count: args.prune_min_count };
    let model = crate::lm::train(&sentences, &config).map_err(|e| CliError::runtime("lm", e))?;
    write_arpa(&model, &args.out).map_err(|e| CliError::runtime("arpa", e))?;
    log::info!("train-lm: {} unigrams at order {}", model.ngram_count(1), model.order());
    Ok(())
}

fn cmd_tokenizer(args: &TokenizerArgs) -> Result<(), CliError> {
    let text = read_text(&args.input, "training text")?;
    let sentences: Vec<&str> =
        text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let vocab = train_subwords(&sentences, args.vocab_size)
        .map_err(|e| CliError::runtime("subword", e))?;
    vocab.save(&args.out).map_err(|e| CliError::runtime("subword", e))?;
    log::info!("tokenizer: {} pieces", vocab.size());
    Ok(())
}

fn cmd_graph_build(args: &GraphBuildArgs) -> Result<(), CliError> {
    if args.arpa.is_none() && args.bias.is_none() {
        return Err(CliError::usage("graph build needs --arpa and/or --bias"));
    }
    let lm = match &args.arpa {
        Some(path) => Some(read_arpa(path).map_err(|e| CliError::runtime("arpa", e))?),
        None => None,
    };
    let bias = match &args.bias {
        Some(path) => {
            let raw = parse_bias_lines(&read_text(path, "bias list")?);
            curate_bias_list(&raw, &NormalizationRules::default())
                .map_err(|e| CliError::runtime("normalize", e))?
        }
        None => Vec::new(),
    };
    let vocab = SubwordVocab::load(&args.vocab).map_err(|e| CliError::runtime("subword", e))?;
    let costs = FusionCosts {
        plain_bias: args.bias_cost,
        alpha_in_lm: args.alpha_in,
        alpha_out_lm: args.alpha_out,
        lm_scale: args.lm_scale,
    };
    let options = GraphOptions { longest_match_only: args.longest_match_only };
    let graph = build_graph_with_options(lm.as_ref(), &bias, &vocab, &costs, &options)
        .map_err(|e| CliError::runtime("graph", e))?;
    graph.save(&args.out).map_err(|e| CliError::runtime("graph", e))?;
    log::info!(
        "graph build: {} patterns over {} nodes (digest {})",
        graph.pattern_count(),
        graph.node_count(),
        graph.digest()
    );
    Ok(())
}

fn parse_csv_u32(raw: &str, flag: &str) -> Result<Vec<u32>, CliError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<u32>()
                .map_err(|e| CliError::usage(format!("{flag}: bad value {part:?}: {e}")))
        })
        .collect()
}

fn cmd_loss(args: &LossArgs) -> Result<(), CliError> {
    let model = TableTransducer::load(&args.model).map_err(|e| CliError::runtime("model", e))?;
    let frames = parse_csv_u32(&args.frames, "--frames")?;
    let target = parse_csv_u32(&args.target, "--target")?;
    let cfg = LossConfig { lambda: args.lambda };
    let loss =
        combined_loss(&model, &frames, &target, &cfg).map_err(|e| CliError::runtime("loss", e))?;
    let report = serde_json::json!({
        "lambda": args.lambda,
        "loss": loss,
        "frames": frames.len(),
        "target": target.len(),
    });
    println!("{report}");
    Ok(())
}

fn cmd_decode(args: &DecodeArgs) -> Result<(), CliError> {
    let model = TableTransducer::load(&args.model).map_err(|e| CliError::runtime("model", e))?;
    let vocab = SubwordVocab::load(&args.vocab).map_err(|e| CliError::runtime("subword", e))?;
    let graph = match &args.graph {
        Some(path) => Some(ContextGraph::load(path).map_err(|e| CliError::runtime("graph", e))?),
        None => None,
    };
    let manifest =
        load_manifest(&args.manifest, "decode").map_err(|e| CliError::runtime("manifest", e))?;

    if args.sweep {
        let report = sweep(&model, &manifest, args.beam, graph.as_ref(), &vocab)
            .map_err(|e| CliError::runtime("decode", e))?;
        // The wire format is the row array itself.
        return write_json_value(&args.out, &to_json(&report.rows), "sweep report");
    }

    let config = match &args.config {
        Some(label) => Some(fuse_configs(label).map_err(|e| CliError::usage(e.to_string()))?),
        None => None,
    };
    let mut rows = Vec::with_capacity(manifest.len());
    for utt in &manifest.utterances {
        let frames = utt.frames.as_ref().filter(|f| !f.is_empty()).ok_or_else(|| {
            CliError::runtime("decode", format!("utterance {:?} carries no frames", utt.id))
        })?;
        let result = match &config {
            Some(cfg) => streaming_decode(&model, frames, cfg, args.beam, graph.as_ref(), &vocab),
            None => beam_search(&model, frames, args.beam, graph.as_ref(), &vocab),
        }
        .map_err(|e| CliError::runtime("decode", e))?;
        rows.push(serde_json::json!({
            "id": utt.id,
            "text": result.best_text,
            "score": result.best_score,
            "tokens": result.best_tokens,
        }));
    }
    write_json_value(&args.out, &serde_json::Value::Array(rows), "decode report")
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let reference =
        load_manifest(&args.reference, "reference").map_err(|e| CliError::runtime("manifest", e))?;
    let hyp_text = read_text(&args.hyp, "decode output")?;
    let hyp_rows: Vec<serde_json::Value> = serde_json::from_str(&hyp_text)
        .map_err(|e| CliError::runtime("eval", format!("parsing {}: {e}", args.hyp.display())))?;
    let mut hyps: BTreeMap<String, String> = BTreeMap::new();
    for row in &hyp_rows {
        let id = row
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| CliError::runtime("eval", "hypothesis row without string \"id\""))?;
        let text = row
            .get("text")
            .and_then(|v| v.as_str())
            .ok_or_else(|| CliError::runtime("eval", "hypothesis row without string \"text\""))?;
        if hyps.insert(id.to_string(), text.to_string()).is_some() {
            return Err(CliError::runtime("eval", format!("duplicate hypothesis id {id:?}")));
        }
    }

    let rules = NormalizationRules::default();
    let mut total: Option<WerBreakdown> = None;
    let mut scored = 0usize;
    for utt in &reference.utterances {
        let Some(ref_text) = utt.ref_text.as_deref() else { continue };
        let hyp = hyps.remove(&utt.id).ok_or_else(|| {
            CliError::runtime("eval", format!("no hypothesis for utterance {:?}", utt.id))
        })?;
        let breakdown = wer(ref_text, &hyp, &rules).map_err(|e| CliError::runtime("wer", e))?;
        match &mut total {
            Some(t) => t.accumulate(&breakdown),
            None => total = Some(breakdown),
        }
        scored += 1;
    }
    if let Some(extra) = hyps.keys().next() {
        return Err(CliError::runtime(
            "eval",
            format!("hypothesis id {extra:?} is not in the reference manifest"),
        ));
    }
    let total = total.ok_or_else(|| {
        CliError::runtime("eval", "reference manifest has no utterances with ref_text")
    })?;
    log::info!("eval: scored {scored} utterances");
    let value = to_json(&total);
    match &args.out {
        Some(path) => write_json_value(path, &value, "WER report"),
        None => {
            println!("{value}");
            Ok(())
        }
    }
}

fn cmd_demo(args: &DemoArgs, seed: u64) -> Result<(), CliError> {
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime("io", format!("creating {}: {e}", dir.display())))?;
    }
    let report = crate::demo::run_demo(seed, args.out_dir.as_deref())
        .map_err(|e| CliError::runtime("demo", e))?;
    println!("{}", serde_json::to_string_pretty(&to_json(&report)).expect("reports serialize"));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{normalize_text, Manifest, Utterance};
    use std::fs;

    fn run_vec(args: &[&str]) -> i32 {
        run(args.iter().map(|s| s.to_string()))
    }

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("temp dir")
    }

    /// A tiny manifest with pseudo-labels, metrics, and durations.
    fn write_pool(path: &Path) {
        let mut manifest = Manifest::new("pool");
        for (i, (text, wer)) in [
            ("visit dorin", 0.0),
            ("meet meet meet meet toman", 0.1),
            ("visit the port", 0.2),
            ("meet sorel", 0.5),
        ]
        .iter()
        .enumerate()
        {
            let mut utt = Utterance::new(format!("u{i}"), 2.0);
            utt.pl.insert("pl_weak".to_string(), text.to_string());
            utt.metrics.insert("pseudo_wer".to_string(), *wer);
            manifest.utterances.push(utt);
        }
        save_manifest(&manifest, path).expect("write pool");
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run_vec(&["brook", "--help"]), 0);
        assert_eq!(run_vec(&["brook", "--version"]), 0);
        assert_eq!(run_vec(&["brook", "decode", "--help"]), 0);
    }

    #[test]
    fn unknown_subcommand_and_flags_exit_two() {
        assert_eq!(run_vec(&["brook", "transmogrify"]), 2);
        assert_eq!(run_vec(&["brook", "--bogus-flag"]), 2);
        assert_eq!(run_vec(&["brook"]), 2);
        assert_eq!(run_vec(&["brook", "demo", "--threads", "0"]), 2);
    }

    #[test]
    fn select_flag_conflicts_are_usage_errors() {
        let dir = tmp();
        let pool = dir.path().join("pool.jsonl");
        let out = dir.path().join("out.jsonl");
        write_pool(&pool);
        let base = ["brook", "select", "--metric", "pseudo_wer", "--direction", "asc"];
        let with = |extra: &[&str]| {
            let mut v: Vec<&str> = base.to_vec();
            v.extend_from_slice(extra);
            let pool_s = pool.to_str().unwrap().to_string();
            let out_s = out.to_str().unwrap().to_string();
            v.extend_from_slice(&["--in", &pool_s, "--out", &out_s]);
            run_vec(&v)
        };
        // --threshold with --mode budget: usage error.
        assert_eq!(with(&["--mode", "budget", "--budget-hours", "1", "--threshold", "0.3"]), 2);
        // --budget-hours with --mode threshold: usage error.
        assert_eq!(with(&["--mode", "threshold", "--threshold", "0.3", "--budget-hours", "1"]), 2);
        // Missing the mode's own value: usage error.
        assert_eq!(with(&["--mode", "budget"]), 2);
        assert_eq!(with(&["--mode", "threshold"]), 2);
        // Well-formed runs succeed.
        assert_eq!(with(&["--mode", "threshold", "--threshold", "0.25"]), 0);
        let selected = load_manifest(&out, "t").unwrap();
        assert_eq!(
            selected.utterances.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(),
            ["u0", "u1", "u2"],
            "threshold keeps rows ≤ 0.25 in order"
        );
        assert_eq!(with(&["--mode", "budget", "--budget-hours", "0.001"]), 0);
        let selected = load_manifest(&out, "t").unwrap();
        assert_eq!(
            selected.utterances.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(),
            ["u0"],
            "a 3.6-second budget fits one 2-second row"
        );
    }

    #[test]
    fn filter_writes_manifest_and_report_idempotently() {
        let dir = tmp();
        let pool = dir.path().join("pool.jsonl");
        let config = dir.path().join("filter.json");
        let out = dir.path().join("kept.jsonl");
        let report = dir.path().join("report.json");
        write_pool(&pool);
        fs::write(&config, serde_json::to_string(&FilterConfig::default()).unwrap()).unwrap();
        let args = [
            "brook", "filter",
            "--config", config.to_str().unwrap(),
            "--model-tag", "pl_weak",
            "--in", pool.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
            "--report", report.to_str().unwrap(),
        ];
        assert_eq!(run_vec(&args), 0);
        let first_out = fs::read(&out).unwrap();
        let first_report = fs::read(&report).unwrap();
        let kept = load_manifest(&out, "t").unwrap();
        assert_eq!(
            kept.utterances.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(),
            ["u0", "u2", "u3"],
            "the repeated-unigram row is rejected"
        );
        let report_value: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(report_value["rejected_h1"], 1);
        assert_eq!(report_value["rejections"][0]["reason"], "h1_repeated_unigram");
        // Same inputs, same bytes.
        assert_eq!(run_vec(&args), 0);
        assert_eq!(fs::read(&out).unwrap(), first_out);
        assert_eq!(fs::read(&report).unwrap(), first_report);
        // Missing pseudo-label tag is a runtime error.
        let mut bad = args;
        bad[5] = "pl_missing";
        assert_eq!(run_vec(&bad), 1);
    }

    #[test]
    fn train_lm_tokenizer_graph_loss_decode_eval_pipeline() {
        let dir = tmp();
        let text = dir.path().join("train.txt");
        fs::write(&text, "VISIT DORIN\nMEET TOMAN\nVISIT THE PORT\nMEET DORIN\n").unwrap();

        // train-lm: conflicting smoothing flags are usage errors.
        let arpa = dir.path().join("lm.arpa");
        assert_eq!(
            run_vec(&[
                "brook", "train-lm",
                "--in", text.to_str().unwrap(),
                "--out", arpa.to_str().unwrap(),
                "--k", "0.5",
            ]),
            2,
            "--k without --smoothing add-k"
        );
        assert_eq!(
            run_vec(&[
                "brook", "train-lm",
                "--in", text.to_str().unwrap(),
                "--order", "2",
                "--out", arpa.to_str().unwrap(),
            ]),
            0
        );
        let arpa_first = fs::read(&arpa).unwrap();
        assert!(String::from_utf8_lossy(&arpa_first).starts_with("\\data\\"));

        // tokenizer trains and saves a vocabulary.
        let vocab = dir.path().join("vocab.json");
        assert_eq!(
            run_vec(&[
                "brook", "tokenizer",
                "--in", text.to_str().unwrap(),
                "--vocab-size", "64",
                "--out", vocab.to_str().unwrap(),
            ]),
            0
        );

        // graph build wants at least one pattern source.
        let graph = dir.path().join("graph.json");
        assert_eq!(
            run_vec(&["brook", "graph", "build", "--vocab", vocab.to_str().unwrap(), "--out", graph.to_str().unwrap()]),
            2
        );
        let bias = dir.path().join("bias.txt");
        fs::write(&bias, "# named entities\nDORIN\nTOMAN\tregistry\n").unwrap();
        assert_eq!(
            run_vec(&[
                "brook", "graph", "build",
                "--arpa", arpa.to_str().unwrap(),
                "--bias", bias.to_str().unwrap(),
                "--vocab", vocab.to_str().unwrap(),
                "--out", graph.to_str().unwrap(),
            ]),
            0
        );
        let graph_first = fs::read(&graph).unwrap();

        // A tiny decodable manifest over the demo model; the vocabulary is
        // trained the same way the demo pipeline trains its own.
        let rules = NormalizationRules::default();
        let sup = crate::demo::supervised_corpus(120, 17);
        let mut sup_texts: Vec<String> = sup
            .utterances
            .iter()
            .map(|u| normalize_text(u.ref_text.as_deref().unwrap(), &rules).unwrap())
            .collect();
        // The supervised text alone never mentions the confusable name
        // variants, so add every demo word often enough to become a piece.
        for word in crate::demo::demo_words() {
            for _ in 0..3 {
                sup_texts.push(word.to_ascii_uppercase());
            }
        }
        let demo_vocab_obj = train_subwords(&sup_texts, 512).unwrap();
        let (model, map) = crate::demo::build_demo_model(&demo_vocab_obj).expect("demo model");
        let model_path = dir.path().join("model.json");
        model.save(&model_path).expect("save model");
        let demo_vocab = dir.path().join("demo_vocab.json");
        demo_vocab_obj.save(&demo_vocab).unwrap();
        let mut manifest = Manifest::new("eval");
        for (i, (verb, second)) in [("visit", "port"), ("meet", "lake")].iter().enumerate() {
            let mut utt = Utterance::new(format!("e{i}"), 1.0);
            utt.ref_text = Some(format!("{verb} {second}"));
            utt.frames = Some(
                crate::demo::render_frames(&map, verb, second, crate::demo::FrameStyle::Clean)
                    .expect("render"),
            );
            manifest.utterances.push(utt);
        }
        let manifest_path = dir.path().join("eval.jsonl");
        save_manifest(&manifest, &manifest_path).unwrap();

        // decode: --config together with --sweep is a usage error.
        let hyp = dir.path().join("hyp.json");
        let decode_base = [
            "brook", "decode",
            "--model", model_path.to_str().unwrap(),
            "--manifest", manifest_path.to_str().unwrap(),
            "--vocab", demo_vocab.to_str().unwrap(),
            "--out", hyp.to_str().unwrap(),
        ];
        let decode_with = |extra: &[&str]| {
            let mut v = decode_base.to_vec();
            v.extend_from_slice(extra);
            run_vec(&v)
        };
        assert_eq!(decode_with(&["--config", "cs=320ms;lf=inf", "--sweep"]), 2);
        assert_eq!(decode_with(&["--config", "offline"]), 2, "offline is not a label");
        assert_eq!(decode_with(&[]), 0);
        let rows: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&hyp).unwrap()).unwrap();
        assert_eq!(rows[0]["text"], "VISIT PORT");
        assert_eq!(rows[1]["text"], "MEET LAKE");

        // loss evaluates on inline CSV instances.
        assert_eq!(
            run_vec(&[
                "brook", "loss",
                "--model", model_path.to_str().unwrap(),
                "--frames", "0,1,1,0",
                "--target", "",
                "--lambda", "0.1",
            ]),
            0
        );
        assert_eq!(
            run_vec(&["brook", "loss", "--model", model_path.to_str().unwrap(), "--frames", "0,x", "--target", ""]),
            2,
            "malformed CSV is a usage error"
        );

        // eval scores the decode output against the manifest references.
        let report = dir.path().join("wer.json");
        assert_eq!(
            run_vec(&[
                "brook", "eval",
                "--ref", manifest_path.to_str().unwrap(),
                "--hyp", hyp.to_str().unwrap(),
                "--out", report.to_str().unwrap(),
            ]),
            0
        );
        let wer_report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(wer_report["wer"], 0.0);
        assert_eq!(wer_report["ref_words"], 4);

        // Re-running the generative steps leaves bytes unchanged.
        assert_eq!(
            run_vec(&[
                "brook", "train-lm",
                "--in", text.to_str().unwrap(),
                "--order", "2",
                "--out", arpa.to_str().unwrap(),
            ]),
            0
        );
        assert_eq!(fs::read(&arpa).unwrap(), arpa_first);
        assert_eq!(
            run_vec(&[
                "brook", "graph", "build",
                "--arpa", arpa.to_str().unwrap(),
                "--bias", bias.to_str().unwrap(),
                "--vocab", vocab.to_str().unwrap(),
                "--out", graph.to_str().unwrap(),
            ]),
            0
        );
        assert_eq!(fs::read(&graph).unwrap(), graph_first);
    }

    #[test]
    fn mux_subcommand_writes_schedule() {
        let dir = tmp();
        let sup = dir.path().join("sup.jsonl");
        let pl = dir.path().join("pl.jsonl");
        let mut sup_manifest = Manifest::new("sup");
        let mut pl_manifest = Manifest::new("pl");
        for i in 0..4 {
            let mut utt = Utterance::new(format!("s{i}"), 1.0);
            utt.ref_text = Some("visit dorin".to_string());
            sup_manifest.utterances.push(utt);
            let mut utt = Utterance::new(format!("p{i}"), 1.0);
            utt.pl.insert("pl_weak".to_string(), "meet toman".to_string());
            pl_manifest.utterances.push(utt);
        }
        save_manifest(&sup_manifest, &sup).unwrap();
        save_manifest(&pl_manifest, &pl).unwrap();
        let out = dir.path().join("mux.json");
        let args = [
            "brook", "mux",
            "--sup", sup.to_str().unwrap(),
            "--pl", pl.to_str().unwrap(),
            "--batch", "4",
            "--w-sup", "0.5",
            "--w-pl", "0.5",
            "--seed", "11",
            "--out", out.to_str().unwrap(),
        ];
        assert_eq!(run_vec(&args), 0);
        let first = fs::read(&out).unwrap();
        let schedule: serde_json::Value = serde_json::from_slice(&first).unwrap();
        assert_eq!(schedule["items"].as_array().unwrap().len(), 8);
        // Seeded: identical bytes on rerun.
        assert_eq!(run_vec(&args), 0);
        assert_eq!(fs::read(&out).unwrap(), first);
    }
}
