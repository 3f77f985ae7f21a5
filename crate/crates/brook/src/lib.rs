//! Desk-scale prototyping for streaming speech recognition with pseudo-labels.
//!
//! `brook` packages the text/label side of a streaming ASR experiment loop so
//! that the moving parts can be exercised end to end on a laptop, without
//! audio, GPUs, or external toolkits:
//!
//! - [`corpus`] — JSONL manifests, text normalization, and word error rate.
//! - [`pl_filter`] — pseudo-label filtering heuristics, metric-based data
//!   selection, and supervised/pseudo-label batch multiplexing.
//! - [`lm`] — backoff n-gram language models with ARPA round-tripping.
//! - [`context_graph`] — subword tokenization, bias-list curation, and an
//!   Aho-Corasick context graph that fuses n-gram weights with bias bonuses.
//! - [`transducer`] — a tiny table-driven transducer with reference
//!   RNN-T/CTC losses and gradient checking.
//! - [`decode`] — beam search with shallow fusion, chunk-wise streaming
//!   simulation, and the latency/quality sweep.
//! - [`demo`] — a seeded synthetic corpus plus the full pipeline wired
//!   together, as used by the `brook demo` subcommand.
//!
//! Everything is deterministic given a seed: decoding, training, selection,
//! and the demo pipeline all produce byte-identical artifacts across runs.
//!
//! The `examples/` directory contains one runnable walk-through per module;
//! `cargo run --example streaming_decode` is a good place to start.

pub mod cli;
pub mod context_graph;
pub mod corpus;
pub mod decode;
pub mod demo;
pub mod lm;
pub mod pl_filter;
pub mod transducer;
