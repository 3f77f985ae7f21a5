//! Train a backoff trigram language model and round-trip it through the
//! ARPA text format.
//!
//! The trainer consumes pre-normalized text (one sentence per line — the
//! corpus module's normalizer is the upstream step, deliberately not
//! repeated here) and estimates Witten-Bell discounted probabilities with
//! backoff weights. The resulting model answers `p(word | context)` for any
//! context, backing off to shorter histories for unseen ones.
//!
//! Run with: `cargo run -p brook --example train_lm`

use brook::lm::{arpa_to_string, read_arpa_str, train, Smoothing, TrainConfig};

fn main() {
    let sentences = [
        "MEET ME NEAR THE OLD PORT",
        "MEET ME NEAR THE LAKE",
        "VISIT THE OLD TOWN",
        "VISIT THE PORT",
        "MEET DORIN NEAR THE PORT",
        "VISIT DORIN FROM THE OLD TOWN",
    ];
    let config = TrainConfig { order: 3, smoothing: Smoothing::WittenBell, prune_min_count: 1 };
    let lm = train(&sentences, &config).expect("training succeeds");

    println!("order {} model:", lm.order());
    for n in 1..=lm.order() {
        println!("  {}-grams stored: {}", n, lm.ngram_count(n));
    }

    // Seen trigram context vs one that forces backoff to the bigram.
    println!("\nconditional log10 probabilities:");
    for (context, word) in [
        (vec!["NEAR", "THE"], "PORT"),  // seen trigram
        (vec!["NEAR", "THE"], "TOWN"),  // unseen trigram, backs off
        (vec!["FROM", "THE"], "LAKE"),  // unseen, double backoff
        (vec![], "MEET"),               // unigram
    ] {
        let lp = lm.logprob(&context, word);
        println!("  p({word:5} | {joined:10}) = 10^{lp:8.4}", joined = context.join(" "));
    }

    // The distribution sums to one over the prediction vocabulary for any
    // context — that is what makes the backoff weights consistent.
    let vocab = lm.prediction_vocab();
    let mass: f64 =
        vocab.iter().map(|w| 10f64.powf(lm.logprob(&["NEAR", "THE"], w))).sum();
    println!("\nΣ_w p(w | NEAR THE) = {mass:.12}");
    assert!((mass - 1.0).abs() < 1e-6);

    let ppl = lm.perplexity("MEET ME NEAR THE PORT");
    println!("perplexity of \"MEET ME NEAR THE PORT\": {ppl:.3}");

    // ARPA round-trip: serialize, parse, serialize again. The second write
    // reproduces the first byte for byte, so the format is a fixpoint.
    let first = arpa_to_string(&lm);
    let reread = read_arpa_str(&first).expect("parsing our own output succeeds");
    let second = arpa_to_string(&reread);
    assert_eq!(first, second, "ARPA write → read → write is byte-stable");
    println!("\nARPA round-trip is byte-identical ({} bytes):", first.len());
    for line in first.lines().take(8) {
        println!("  {line}");
    }
    println!("  ...");
}
