//! The whole loop, end to end, on synthetic data: generate a corpus, filter
//! and select pseudo-labels, train the LM and tokenizer, build fusion
//! graphs, decode the evaluation set offline and across the streaming
//! sweep, and schedule a training mix — then write every artifact to disk.
//!
//! Everything derives from one seed; running this twice with the same seed
//! and output directory produces byte-identical files (the run prints each
//! artifact's SHA-256 so two runs are easy to compare).
//!
//! Run with: `cargo run --release -p brook --example full_pipeline [out_dir]`

use brook::demo::run_demo;

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("brook-full-pipeline"));
    std::fs::create_dir_all(&out_dir).expect("output directory");

    println!("running the demo pipeline (seed 17) into {} ...\n", out_dir.display());
    let started = std::time::Instant::now();
    let report = run_demo(17, Some(&out_dir)).expect("pipeline succeeds");
    let elapsed = started.elapsed();

    println!("corpus: {} supervised + {} pool utterances", report.supervised_utts, report.pool_utts);
    println!(
        "filter: kept {}/{} (H1 {}, H2 {}, H3 {})",
        report.filter.kept,
        report.filter.input,
        report.filter.rejected_h1,
        report.filter.rejected_h2,
        report.filter.rejected_h3
    );
    println!(
        "select: {} utterances / {:.2} h under pseudo_wer ≤ 0.25",
        report.selected_utts, report.selected_hours
    );
    let ngrams: Vec<String> = report.lm_ngrams.iter().map(|n| n.to_string()).collect();
    println!("lm    : order {}, stored n-grams {}", report.lm_order, ngrams.join("/"));
    println!("vocab : {} subword pieces; bias list {:?}", report.vocab_pieces, report.bias_phrases);

    println!("\noffline WER by fusion graph:");
    println!("  none     {:.4}", report.fusion.none.wer);
    println!("  lm       {:.4}", report.fusion.lm.wer);
    println!("  bias     {:.4}", report.fusion.bias.wer);
    println!("  combined {:.4}", report.fusion.combined.wer);

    println!("\nstreaming sweep ({}):", report.sweep.note);
    for row in &report.sweep.rows {
        println!("  {:18} wer {:.4}", row.label, row.wer);
    }

    println!(
        "\nmux   : {} scheduled items, window guarantee holds: {}",
        report.mux_items, report.mux_window_ok
    );

    println!("\nartifacts ({} files):", report.artifacts.len());
    for (name, sha) in &report.artifacts {
        println!("  {:24} sha256 {}", name, &sha[..16]);
    }
    println!("\ndone in {:.1} s", elapsed.as_secs_f64());
}
