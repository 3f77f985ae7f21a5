//! Choosing which pseudo-labeled utterances to train on, and in what order
//! they reach the trainer.
//!
//! Two labelers transcribe the same pool: a weak first-pass model and a
//! stronger (slower) teacher. Their disagreement rate (`pseudo_wer`) is a
//! label-quality proxy that needs no human reference. This example scores a
//! pool, applies the two selection modes, and interleaves the survivors with
//! a supervised set so every training window keeps some human-labeled data.
//!
//! Run with: `cargo run -p brook --example data_selection`

use std::collections::BTreeMap;

use brook::corpus::{Manifest, Utterance};
use brook::pl_filter::{cross_model_wer, mux, select, Direction, SelectionPolicy};

fn pool_utterance(id: &str, duration_s: f64, weak: &str, strong: &str) -> Utterance {
    let mut utt = Utterance::new(id, duration_s);
    utt.pl.insert("pl_weak".to_string(), weak.to_string());
    utt.pl.insert("pl_strong".to_string(), strong.to_string());
    utt
}

fn main() {
    let mut pool = Manifest::new("pool");
    pool.utterances.extend([
        pool_utterance("p0", 30.0, "meet near the port", "meet near the port"),
        pool_utterance("p1", 60.0, "visit the old town", "visit the old town"),
        pool_utterance("p2", 45.0, "visit the lake", "visit the old lake"),
        pool_utterance("p3", 50.0, "meet from mount", "visit the mount"),
        pool_utterance("p4", 40.0, "the port the port", "meet near the port"),
    ]);

    // Score weak against strong: utterance-level WER stored as a metric.
    let scored = cross_model_wer(&pool, "pl_weak", "pl_strong").expect("scoring succeeds");
    println!("cross-model disagreement (pseudo_wer):");
    for utt in &scored.utterances {
        println!("  {}  {:.3}", utt.id, utt.metrics["pseudo_wer"]);
    }

    // Threshold mode: keep rows at or under the cut, input order preserved.
    let threshold = SelectionPolicy::threshold("pseudo_wer", Direction::Ascending, 0.25);
    let kept = select(&scored, &threshold).expect("threshold select");
    println!("\nthreshold ≤ 0.25 keeps: {:?}", ids(&kept));
    assert_eq!(ids(&kept), ["p0", "p1", "p2"]);

    // Budget mode: best metric first until the duration budget is spent.
    // 0.03 h = 108 s: p0 (30 s) and p1 (60 s) fit; the next candidate would
    // overflow, and with it the scan ends (maximal prefix, not knapsack).
    let budget = SelectionPolicy::budget("pseudo_wer", Direction::Ascending, 0.03);
    let cheap = select(&scored, &budget).expect("budget select");
    println!("budget 0.03 h keeps:    {:?} ({:.1} s)", ids(&cheap), cheap.total_hours() * 3600.0);
    assert_eq!(ids(&cheap), ["p0", "p1"]);

    // Interleave with a supervised set: weighted sampling, but every window
    // of `batch` consecutive items is guaranteed a supervised utterance.
    let mut supervised = Manifest::new("supervised");
    for i in 0..3 {
        let mut utt = Utterance::new(format!("s{i}"), 30.0);
        utt.ref_text = Some("meet near the old town".to_string());
        supervised.utterances.push(utt);
    }
    let schedule = mux(&supervised, &kept, 3, (0.2, 0.8), 7).expect("mux succeeds");
    println!("\nmux schedule (batch 3, weights 0.2/0.8, seed 7):");
    for item in &schedule.items {
        let marker = if item.injected { "  [injected for the window guarantee]" } else { "" };
        println!("  {:10} {}{}", item.source, item.id, marker);
    }

    let durations: BTreeMap<String, f64> = supervised
        .utterances
        .iter()
        .chain(&kept.utterances)
        .map(|u| (u.id.clone(), u.duration_s))
        .collect();
    assert!(schedule.window_guarantee_holds(&durations));
    println!("\nevery 3-item window contains a supervised utterance: true");
}

fn ids(manifest: &Manifest) -> Vec<&str> {
    manifest.utterances.iter().map(|u| u.id.as_str()).collect()
}
