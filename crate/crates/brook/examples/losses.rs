//! The training objective: an interpolation of the transducer (RNN-T) loss
//! with an auxiliary CTC loss over the same encoder,
//!
//! ```text
//! L = (1 − λ) · L_RNNT + λ · L_CTC
//! ```
//!
//! computed exactly on a small table-driven transducer. The λ endpoints
//! recover the pure losses, and the analytic joint-matrix gradient matches
//! central finite differences to high precision.
//!
//! Run with: `cargo run -p brook --example losses`

use brook::transducer::{
    combined_loss, ctc_loss, grad_check, rnnt_loss, LossConfig, TableTransducer,
};

fn main() {
    // A tiny model: 3 real tokens (+ blank), 4 frame symbols, hidden 5.
    // `seeded` is a named deterministic procedure, so these numbers are
    // stable anywhere.
    let model = TableTransducer::seeded(3, 4, 5, 7).expect("valid shape");
    let frames: Vec<u32> = vec![0, 2, 1, 3, 2];
    let target: Vec<u32> = vec![1, 0, 2];

    let lattice = model.lattice_offline(&frames, &target).expect("lattice");
    let l_rnnt = rnnt_loss(&lattice, &target);
    let frame_lp = model.frame_logprobs(&frames).expect("frame posteriors");
    let l_ctc = ctc_loss(&frame_lp, &target);
    println!("T = {}, U = {}, V = {} (+ blank)", frames.len(), target.len(), model.vocab_size());
    println!("L_RNNT = {l_rnnt:.9}");
    println!("L_CTC  = {l_ctc:.9}");

    println!("\ninterpolated losses:");
    for lambda in [0.0, 0.1, 0.5, 1.0] {
        let cfg = LossConfig { lambda };
        let combined = combined_loss(&model, &frames, &target, &cfg).expect("loss");
        println!("  λ = {lambda:3}:  L = {combined:.9}");
    }

    // Endpoint identities (exact: each endpoint skips the other loss
    // entirely rather than multiplying it by zero).
    let at0 = combined_loss(&model, &frames, &target, &LossConfig { lambda: 0.0 }).unwrap();
    let at1 = combined_loss(&model, &frames, &target, &LossConfig { lambda: 1.0 }).unwrap();
    assert_eq!(at0, l_rnnt);
    assert_eq!(at1, l_ctc);

    // An impossible instance: more target tokens than frames leaves CTC
    // with no alignment, so the loss is +∞ rather than an error.
    let impossible = combined_loss(&model, &frames[..2], &target, &LossConfig { lambda: 1.0 });
    println!("\nCTC with T=2 < U=3: {:?}", impossible.unwrap());

    // Gradient check: analytic dL/dJoint vs central finite differences over
    // every joint entry, reported as the worst relative deviation.
    println!("\ngradient check (joint matrix, ε = 1e-5):");
    for lambda in [0.1, 0.0, 1.0] {
        let cfg = LossConfig { lambda };
        let worst = grad_check(&model, &frames, &target, &cfg, 1e-5).expect("grad check");
        println!("  λ = {lambda:3}:  max rel deviation {worst:.3e}");
        assert!(worst <= 1e-4);
    }
}
