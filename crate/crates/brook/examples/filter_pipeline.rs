//! Pseudo-label hygiene: run the three cheap text heuristics over a small
//! manifest and inspect the rejection report.
//!
//! * H1 rejects looping decodes (the same unigram repeated k times in a row);
//! * H2 rejects over-long words, with a per-language length table (agglutinative
//!   languages tolerate much longer words than English);
//! * H3 rejects utterances whose words-per-second ratio is implausible for
//!   real speech (streams of noise, or a single word stretched over a minute).
//!
//! Run with: `cargo run -p brook --example filter_pipeline`

use brook::corpus::{LanguageCode, Manifest, Utterance};
use brook::pl_filter::{apply_filters, FilterConfig};

fn utterance(id: &str, duration_s: f64, pl: &str) -> Utterance {
    let mut utt = Utterance::new(id, duration_s);
    utt.pl.insert("pl_weak".to_string(), pl.to_string());
    utt
}

fn main() {
    let mut pool = Manifest::new("pool");
    pool.utterances.extend([
        // Kept: ordinary sentence, sane ratio.
        utterance("clean-0", 2.0, "meet me near the old port"),
        // H1: a decoder loop ("the the the ...").
        utterance("loop-0", 3.0, "visit the the the the lake"),
        // H2: a token far beyond the English word-length cap.
        utterance("glue-0", 4.0, "visit the portmountlaketownharborline"),
        // H3 (too fast): 14 words crammed into 2 seconds.
        utterance("fast-0", 2.0, "meet meet visit visit near from the old port mount lake town port lake"),
        // H3 (too slow): one word over twelve seconds.
        utterance("slow-0", 12.0, "port"),
        // Kept: numbers are spelled out by normalization first, so the
        // ratio check sees four words, not one digit blob.
        utterance("num-0", 3.0, "meet 25 sailors"),
    ]);

    let config = FilterConfig { language: LanguageCode::En, ..FilterConfig::default() };
    let (kept, report) = apply_filters(&pool, &config, "pl_weak").expect("filtering succeeds");

    println!("input utterances : {}", report.input);
    println!("kept             : {}", report.kept);
    println!("rejected by H1   : {}", report.rejected_h1);
    println!("rejected by H2   : {}", report.rejected_h2);
    println!("rejected by H3   : {}", report.rejected_h3);
    println!();
    for rejection in &report.rejections {
        println!("  {:8} rejected: {:?}", rejection.id, rejection.reason);
    }
    println!();
    for utt in &kept.utterances {
        // The filter normalizes kept labels in place (case folding,
        // punctuation stripping, numbers spelled out).
        println!("  {:8} kept as {:?}", utt.id, utt.pl["pl_weak"]);
    }

    assert_eq!(report.kept + report.rejections.len(), report.input);
    assert_eq!(
        kept.utterances.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(),
        ["clean-0", "num-0"],
    );
}
