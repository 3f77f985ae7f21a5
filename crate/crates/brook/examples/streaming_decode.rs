//! Beam-search decoding: offline vs chunk-wise streaming, with and without
//! contextual shallow fusion.
//!
//! The model here is the synthetic-grammar demo transducer. Its evaluation
//! set plants two phenomena worth watching a decoder handle:
//!
//! * **ambiguous names** — the audio evidence slightly favors the *wrong*
//!   member of a confusable name pair (dorin/doran, ...), so the plain
//!   decoder substitutes it; a bias graph over the canonical names pays for
//!   the correction;
//! * **registered names** — the name is spoken clearly early on and mumbled
//!   later; an offline decoder (or one with a long left-context window)
//!   resolves the mumble from the early mention, while a short window
//!   cannot see back far enough and flips to the wrong variant.
//!
//! Run with: `cargo run -p brook --example streaming_decode`

use brook::context_graph::{build_graph, curate_bias_list, train_subwords, FusionCosts};
use brook::corpus::{normalize_text, NormalizationRules};
use brook::decode::{beam_search, fuse_configs, streaming_decode};
use brook::demo::{
    build_demo_model, demo_words, ne_pairs, render_frames, supervised_corpus, FrameStyle,
    DEMO_BEAM,
};

fn main() {
    // The demo vocabulary: byte pairs trained on the supervised corpus text
    // plus every grammar word (so the confusable variants are pieces too).
    let rules = NormalizationRules::default();
    let mut text: Vec<String> = supervised_corpus(120, 17)
        .utterances
        .iter()
        .map(|u| normalize_text(u.ref_text.as_deref().unwrap(), &rules).unwrap())
        .collect();
    for word in demo_words() {
        for _ in 0..3 {
            text.push(word.to_ascii_uppercase());
        }
    }
    let vocab = train_subwords(&text, 512).expect("BPE trains");
    let (model, frame_map) = build_demo_model(&vocab).expect("demo model builds");

    // A clean utterance decodes correctly with no help at all.
    let clean = render_frames(&frame_map, "visit", "port", FrameStyle::Clean).unwrap();
    let result = beam_search(&model, &clean, DEMO_BEAM, None, &vocab).unwrap();
    println!("clean audio          : {:24} (score {:.4})", result.best_text, result.best_score);
    assert_eq!(result.best_text, "VISIT PORT");

    // -- ambiguity + fusion --------------------------------------------
    let (correct, confusable) = ne_pairs()[0]; // ("dorin", "doran")
    let ambiguous = render_frames(&frame_map, "meet", correct, FrameStyle::Ambiguous).unwrap();

    let plain = beam_search(&model, &ambiguous, DEMO_BEAM, None, &vocab).unwrap();
    println!("mumbled name, no help: {:24} <- wrong variant wins", plain.best_text);
    assert_eq!(plain.best_text, format!("MEET {}", confusable.to_ascii_uppercase()));

    // Bias the canonical names. The bonus a completed pattern earns is
    // enough to outweigh the acoustic tilt toward the confusable spelling.
    let names: Vec<(&str, &str)> = ne_pairs().iter().map(|&(c, _)| (c, "contacts")).collect();
    let bias = curate_bias_list(&names, &rules).expect("curation succeeds");
    let graph = build_graph(None, &bias, &vocab, &FusionCosts::default()).expect("graph builds");
    let fused = beam_search(&model, &ambiguous, DEMO_BEAM, Some(&graph), &vocab).unwrap();
    println!("mumbled name, biased : {:24} <- corrected", fused.best_text);
    assert_eq!(fused.best_text, format!("MEET {}", correct.to_ascii_uppercase()));

    // n-best shows how close the call was.
    println!("\nn-best under fusion:");
    for entry in fused.nbest.iter().take(3) {
        println!("  {:10.4}  {}", entry.score, entry.text);
    }

    // -- latency vs earlier context ------------------------------------
    // Registered style: the name is clear at the start, mumbled at the end.
    let registered = render_frames(&frame_map, "visit", correct, FrameStyle::Registered).unwrap();
    let offline = beam_search(&model, &registered, DEMO_BEAM, None, &vocab).unwrap();

    println!("\nregistered name (\"{correct}\" spoken clearly early, mumbled late):");
    println!("  offline                    : {}", offline.best_text);
    for label in ["cs=320ms;lf=2.56s", "cs=320ms;lf=5.12s", "cs=320ms;lf=inf"] {
        let config = fuse_configs(label).expect("label parses");
        let streamed =
            streaming_decode(&model, &registered, &config, DEMO_BEAM, None, &vocab).unwrap();
        println!("  streaming {label:<17}: {}", streamed.best_text);
    }
    // 2.56 s of left context = 64 frames: when the decoder reaches the
    // mumbled mention it can no longer see the clear one, and the wrong
    // variant wins. Doubling the window restores the offline answer.
    let short = fuse_configs("cs=320ms;lf=2.56s").unwrap();
    let narrow = streaming_decode(&model, &registered, &short, DEMO_BEAM, None, &vocab).unwrap();
    assert_eq!(narrow.best_text, format!("VISIT {}", confusable.to_ascii_uppercase()));
    assert_eq!(offline.best_text, format!("VISIT {}", correct.to_ascii_uppercase()));

    // Full-chunk/full-context streaming is the offline decode, bit for bit.
    let full = fuse_configs(&format!("cs={}ms;lf=inf", registered.len() * 40)).unwrap();
    let same = streaming_decode(&model, &registered, &full, DEMO_BEAM, None, &vocab).unwrap();
    assert_eq!(same.best_text, offline.best_text);
    assert_eq!(same.best_score.to_bits(), offline.best_score.to_bits());
    println!("\nfull-chunk, unlimited-context streaming ≡ offline (scores bit-identical)");

    // The chunk trace shows when each word was committed.
    println!("\nper-chunk emissions at cs=1280ms;lf=inf:");
    let chunky = fuse_configs("cs=1280ms;lf=inf").unwrap();
    let traced = streaming_decode(&model, &registered, &chunky, DEMO_BEAM, None, &vocab).unwrap();
    for chunk in traced.chunk_trace.iter().filter(|c| !c.tokens.is_empty()) {
        println!(
            "  chunk {:2} (frames {:3}..{:3}): {:?}",
            chunk.chunk_index, chunk.start_frame, chunk.end_frame, chunk.text
        );
    }
}
