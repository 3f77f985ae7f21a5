//! Build the contextual-biasing graph: rare phrases worth boosting during
//! decoding, compiled into an Aho-Corasick automaton over subword tokens.
//!
//! Three ingredients meet here:
//! * a byte-pair subword vocabulary (the decoder's token space),
//! * a curated bias list (names the user cares about *today*),
//! * an optional word n-gram LM (what the system already believes).
//!
//! Each pattern carries a bonus that depends on where it came from: LM
//! n-grams score `lm_scale · 10^logprob`, bias phrases the LM already knows
//! score that plus `alpha_in_lm`, bias phrases the LM has never seen score
//! `alpha_out_lm`. During beam search the automaton advances one token per
//! emission and adds the bonus of every pattern that just completed.
//!
//! Run with: `cargo run -p brook --example context_fusion`

use brook::context_graph::{
    build_graph, curate_bias_list, parse_bias_lines, train_subwords, FusionCosts,
};
use brook::corpus::NormalizationRules;
use brook::lm::{train, TrainConfig};

fn main() {
    // The LM knows common phrases; "VELKA" is out-of-vocabulary for it.
    let sentences = [
        "MEET DORIN NEAR THE PORT",
        "MEET DORIN NEAR THE LAKE",
        "VISIT THE OLD TOWN",
        "VISIT TOMAN FROM THE PORT",
    ];
    let lm = train(&sentences, &TrainConfig::default()).expect("LM trains");
    let vocab = train_subwords(&sentences, 64).expect("BPE trains");
    println!("subword vocabulary: {} pieces (blank reserved as id {})", vocab.size(), vocab.blank_id());
    println!("\"DORIN\" tokenizes to {:?}", pieces(&vocab, "DORIN"));

    // A bias list as it arrives from the outside world: messy, tagged,
    // commented. Curation normalizes, enforces the 1–4 word / ≥5 char
    // rules, and deduplicates while keeping first occurrences.
    let raw = parse_bias_lines(
        "# today's contact list\n\
         Dorin\tcontacts\n\
         velka\tcontacts\n\
         the old town\tplaces\n\
         ox\tnoise\n\
         Dorin\tduplicate\n",
    );
    let entries = curate_bias_list(&raw, &NormalizationRules::default()).expect("curation succeeds");
    println!("\ncurated bias entries:");
    for entry in &entries {
        println!("  {:14} (source {})", entry.phrase, entry.source);
    }
    assert_eq!(entries.len(), 3, "the two-letter word and the duplicate are dropped");

    let costs = FusionCosts::default();
    let graph = build_graph(Some(&lm), &entries, &vocab, &costs).expect("graph builds");
    println!(
        "\ngraph: {} patterns over {} automaton nodes, digest {}",
        graph.pattern_count(),
        graph.node_count(),
        &graph.digest()[..16],
    );

    // Scan a token stream as the decoder would: a running automaton state
    // and a bonus collected at each step.
    let stream = vocab.tokenize("MEET DORIN NEAR THE OLD TOWN");
    let mut state = graph.start();
    let mut running = 0.0;
    println!("\nscanning \"MEET DORIN NEAR THE OLD TOWN\":");
    for &token in &stream {
        let (next, bonus) = graph.advance(state, token);
        state = next;
        running += bonus;
        if bonus != 0.0 {
            println!("  after {:8?} bonus {bonus:+.6}", vocab.piece(token).unwrap_or("?"));
        }
    }
    let total = graph.scan_total(&stream);
    println!("total bonus: {total:.6}");
    assert!((running - total).abs() < 1e-12);

    // The three cost classes, pinned: an in-LM bias phrase earns its scaled
    // probability plus alpha_in, an out-of-LM one earns alpha_out, and in a
    // bias-only graph every phrase earns the flat plain-bias bonus.
    let dorin = vocab.tokenize("DORIN");
    let velka = vocab.tokenize("VELKA");
    let p_dorin = 10f64.powf(lm.logprob(&[], "DORIN"));
    let in_lm = graph.scan_total(&dorin);
    let out_lm = graph.scan_total(&velka);
    println!("\nDORIN (in the LM):  {in_lm:.6} = {:.6}·{} + {}", p_dorin, costs.lm_scale, costs.alpha_in_lm);
    println!("VELKA (not in LM):  {out_lm:.6} = alpha_out");
    assert!((in_lm - (costs.lm_scale * p_dorin + costs.alpha_in_lm)).abs() < 1e-9);
    assert!((out_lm - costs.alpha_out_lm).abs() < 1e-9);

    let bias_only = build_graph(None, &entries, &vocab, &costs).expect("bias-only graph");
    let plain = bias_only.scan_total(&dorin);
    println!("DORIN (bias-only):  {plain:.6} = plain_bias");
    assert!((plain - costs.plain_bias).abs() < 1e-9);
}

fn pieces<'v>(vocab: &'v brook::context_graph::SubwordVocab, word: &str) -> Vec<&'v str> {
    vocab.tokenize(word).iter().filter_map(|&id| vocab.piece(id)).collect()
}
