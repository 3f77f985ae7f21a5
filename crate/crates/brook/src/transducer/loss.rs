//! Reference RNN-T and CTC losses, their interpolation
//! `L = (1−λ)·L_RNNT + λ·L_CTC`, and analytic gradients with a
//! finite-difference checker.
//!
//! Both losses are exact log-domain dynamic programs over normalized
//! log-probabilities; infeasible instances (no valid alignment) return the
//! `+∞` sentinel rather than an error. Gradients require a finite loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lse2, Lattice, ModelError, TableTransducer};

/// Interpolation weight for the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// λ in `L = (1−λ)·L_RNNT + λ·L_CTC`; must lie in [0, 1].
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ModelError::BadLambda { lambda: self.lambda });
        }
        Ok(())
    }
}

/// RNN-T forward loss: −log of the summed probability of every monotone
/// blank/emit path through the lattice.
///
/// Path semantics: from cell (t, u), emitting token `target[u]` moves to
/// (t, u+1) at probability `lattice[t][u][target[u]]`; a blank consumes
/// frame t and moves to (t+1, u). Every path ends with the blank at
/// (T−1, U). With T = 0 there is no final frame, so the loss is `+∞` (for
/// U > 0 there is additionally no valid path at all).
///
/// Panics if the lattice shape does not match the target (caller contract).
pub fn rnnt_loss(lattice: &Lattice, target: &[u32]) -> f64 {
    assert_eq!(
        lattice.u_len(),
        target.len(),
        "lattice was built for U={} but target has {} tokens",
        lattice.u_len(),
        target.len()
    );
    for &y in target {
        assert!(
            (y as usize) < lattice.vocab_size(),
            "target token {y} out of range for V={}",
            lattice.vocab_size()
        );
    }
    let t_len = lattice.t_len();
    if t_len == 0 {
        return f64::INFINITY;
    }
    let alpha = rnnt_alpha(lattice, target);
    let u_len = target.len() + 1;
    -(alpha[(t_len - 1) * u_len + (u_len - 1)] + lattice.get(t_len - 1, u_len - 1, lattice.blank()))
}

/// Forward table α(t, u) = log P(consuming frames < t as blanks/emits and
/// the first u tokens), row-major (t × (U+1)).
fn rnnt_alpha(lattice: &Lattice, target: &[u32]) -> Vec<f64> {
    let t_len = lattice.t_len();
    let u_len = target.len() + 1;
    let blank = lattice.blank();
    let mut alpha = vec![f64::NEG_INFINITY; t_len * u_len];
    alpha[0] = 0.0;
    for t in 0..t_len {
        for u in 0..u_len {
            if t == 0 && u == 0 {
                continue;
            }
            let mut v = f64::NEG_INFINITY;
            if u > 0 {
                v = lse2(v, alpha[t * u_len + u - 1] + lattice.get(t, u - 1, target[u - 1]));
            }
            if t > 0 {
                v = lse2(v, alpha[(t - 1) * u_len + u] + lattice.get(t - 1, u, blank));
            }
            alpha[t * u_len + u] = v;
        }
    }
    alpha
}

/// Backward table β(t, u) = log P(completing the target from cell (t, u)),
/// including the final blank at (T−1, U).
fn rnnt_beta(lattice: &Lattice, target: &[u32]) -> Vec<f64> {
    let t_len = lattice.t_len();
    let u_len = target.len() + 1;
    let blank = lattice.blank();
    let mut beta = vec![f64::NEG_INFINITY; t_len * u_len];
    for t in (0..t_len).rev() {
        for u in (0..u_len).rev() {
            if t == t_len - 1 && u == u_len - 1 {
                beta[t * u_len + u] = lattice.get(t, u, blank);
                continue;
            }
            let mut v = f64::NEG_INFINITY;
            if u + 1 < u_len {
                v = lse2(v, lattice.get(t, u, target[u]) + beta[t * u_len + u + 1]);
            }
            if t + 1 < t_len {
                v = lse2(v, lattice.get(t, u, blank) + beta[(t + 1) * u_len + u]);
            }
            beta[t * u_len + u] = v;
        }
    }
    beta
}

/// Gradient of [`rnnt_loss`] with respect to every lattice entry, treating
/// the stored log-probabilities as free variables (no re-normalization).
/// Shape matches the lattice, row-major (t × (U+1) × (V+1)). Entries that
/// no path reads have exactly zero gradient.
///
/// Panics if the loss is infinite (T = 0).
pub fn rnnt_grad_logprobs(lattice: &Lattice, target: &[u32]) -> Vec<f64> {
    let t_len = lattice.t_len();
    assert!(t_len > 0, "gradient undefined for an infinite loss (T = 0)");
    let u_len = target.len() + 1;
    let v1 = lattice.vocab_size() + 1;
    let blank = lattice.blank();
    let alpha = rnnt_alpha(lattice, target);
    let beta = rnnt_beta(lattice, target);
    let ll = beta[0];
    assert!(ll.is_finite(), "gradient undefined for an infinite loss");

    let mut grad = vec![0.0; t_len * u_len * v1];
    for t in 0..t_len {
        for u in 0..u_len {
            let a = alpha[t * u_len + u];
            // Token edge (t,u) → (t,u+1).
            if u + 1 < u_len {
                let y = target[u];
                let gamma =
                    (a + lattice.get(t, u, y) + beta[t * u_len + u + 1] - ll).exp();
                grad[(t * u_len + u) * v1 + y as usize] -= gamma;
            }
            // Blank edge (t,u) → (t+1,u).
            if t + 1 < t_len {
                let gamma =
                    (a + lattice.get(t, u, blank) + beta[(t + 1) * u_len + u] - ll).exp();
                grad[(t * u_len + u) * v1 + blank as usize] -= gamma;
            }
        }
    }
    // Final blank at (T−1, U): posterior exactly 1.
    grad[((t_len - 1) * u_len + (u_len - 1)) * v1 + blank as usize] -= 1.0;
    grad
}

/// CTC loss over per-frame label log-probabilities (`frame_logprobs[t]` has
/// V+1 entries; blank is the last index). Standard 2U+1 extended-label
/// forward recursion; targets whose required alignment cannot fit in T
/// frames (including any T = 0) return `+∞`.
pub fn ctc_loss(frame_logprobs: &[Vec<f64>], target: &[u32]) -> f64 {
    let t_len = frame_logprobs.len();
    if t_len == 0 {
        return f64::INFINITY;
    }
    let v1 = frame_logprobs[0].len();
    assert!(v1 >= 1, "frame rows must cover blank");
    for row in frame_logprobs {
        assert_eq!(row.len(), v1, "ragged frame logprobs");
    }
    for &y in target {
        assert!((y as usize) < v1 - 1, "target token {y} out of range for V={}", v1 - 1);
    }
    let alpha = ctc_alpha(frame_logprobs, target);
    let s_len = 2 * target.len() + 1;
    let last = &alpha[(t_len - 1) * s_len..t_len * s_len];
    let end = if s_len > 1 { lse2(last[s_len - 1], last[s_len - 2]) } else { last[0] };
    -end
}

fn ctc_label(target: &[u32], blank: u32, s: usize) -> u32 {
    if s % 2 == 0 {
        blank
    } else {
        target[s / 2]
    }
}

/// Forward table over extended labels, row-major (T × (2U+1)); α includes
/// the emission at its own frame.
fn ctc_alpha(frame_logprobs: &[Vec<f64>], target: &[u32]) -> Vec<f64> {
    let t_len = frame_logprobs.len();
    let v1 = frame_logprobs[0].len();
    let blank = (v1 - 1) as u32;
    let s_len = 2 * target.len() + 1;
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = frame_logprobs[0][blank as usize];
    if s_len > 1 {
        alpha[1] = frame_logprobs[0][ctc_label(target, blank, 1) as usize];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let lab = ctc_label(target, blank, s);
            let mut v = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                v = lse2(v, alpha[(t - 1) * s_len + s - 1]);
            }
            if s >= 2 && lab != blank && lab != ctc_label(target, blank, s - 2) {
                v = lse2(v, alpha[(t - 1) * s_len + s - 2]);
            }
            if v != f64::NEG_INFINITY {
                v += frame_logprobs[t][lab as usize];
            }
            alpha[t * s_len + s] = v;
        }
    }
    alpha
}

/// Backward table β(t, s) = log P(completing from state s after frame t),
/// excluding the emission at frame t itself.
fn ctc_beta(frame_logprobs: &[Vec<f64>], target: &[u32]) -> Vec<f64> {
    let t_len = frame_logprobs.len();
    let v1 = frame_logprobs[0].len();
    let blank = (v1 - 1) as u32;
    let s_len = 2 * target.len() + 1;
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut v = f64::NEG_INFINITY;
            for s_next in s..=(s + 2).min(s_len - 1) {
                if s_next == s + 2 {
                    let lab = ctc_label(target, blank, s_next);
                    if lab == blank || lab == ctc_label(target, blank, s) {
                        continue;
                    }
                }
                let lab_next = ctc_label(target, blank, s_next);
                v = lse2(
                    v,
                    frame_logprobs[t + 1][lab_next as usize] + beta[(t + 1) * s_len + s_next],
                );
            }
            beta[t * s_len + s] = v;
        }
    }
    beta
}

/// Gradient of [`ctc_loss`] with respect to every frame log-probability,
/// treating them as free variables. Shape T × (V+1). Labels only reachable
/// through impossible alignments get exactly zero gradient.
///
/// Panics if the loss is infinite (infeasible target).
pub fn ctc_grad_logprobs(frame_logprobs: &[Vec<f64>], target: &[u32]) -> Vec<Vec<f64>> {
    let t_len = frame_logprobs.len();
    assert!(t_len > 0, "gradient undefined for an infinite loss (T = 0)");
    let v1 = frame_logprobs[0].len();
    let blank = (v1 - 1) as u32;
    let s_len = 2 * target.len() + 1;
    let alpha = ctc_alpha(frame_logprobs, target);
    let beta = ctc_beta(frame_logprobs, target);
    let last = &alpha[(t_len - 1) * s_len..t_len * s_len];
    let ll = if s_len > 1 { lse2(last[s_len - 1], last[s_len - 2]) } else { last[0] };
    assert!(ll.is_finite(), "gradient undefined for an infinite loss (infeasible target)");

    let mut grad = vec![vec![0.0; v1]; t_len];
    for t in 0..t_len {
        for s in 0..s_len {
            let joint = alpha[t * s_len + s] + beta[t * s_len + s];
            if joint == f64::NEG_INFINITY {
                continue;
            }
            let gamma = (joint - ll).exp();
            grad[t][ctc_label(target, blank, s) as usize] -= gamma;
        }
    }
    grad
}

/// `L = (1−λ)·L_RNNT + λ·L_CTC` on the offline (full-visibility) encoder.
/// At the λ = 0 and λ = 1 endpoints the other loss is not evaluated at all,
/// so an infeasible CTC target cannot poison a pure-RNN-T value.
pub fn combined_loss(
    model: &TableTransducer,
    frames: &[u32],
    target: &[u32],
    cfg: &LossConfig,
) -> Result<f64, ModelError> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    if lambda == 0.0 {
        let lattice = model.lattice_offline(frames, target)?;
        return Ok(rnnt_loss(&lattice, target));
    }
    if lambda == 1.0 {
        for &token in target {
            if token as usize >= model.vocab_size() {
                return Err(ModelError::TokenOutOfRange { token, vocab_size: model.vocab_size() });
            }
        }
        let fl = model.frame_logprobs(frames)?;
        return Ok(ctc_loss(&fl, target));
    }
    let lattice = model.lattice_offline(frames, target)?;
    let rnnt = rnnt_loss(&lattice, target);
    let fl = model.frame_logprobs(frames)?;
    let ctc = ctc_loss(&fl, target);
    Ok((1.0 - lambda) * rnnt + lambda * ctc)
}

/// [`combined_loss`] over many (frames, target) pairs in parallel,
/// preserving input order.
pub fn combined_loss_batch(
    model: &TableTransducer,
    pairs: &[(Vec<u32>, Vec<u32>)],
    cfg: &LossConfig,
) -> Result<Vec<f64>, ModelError> {
    pairs
        .par_iter()
        .map(|(frames, target)| combined_loss(model, frames, target, cfg))
        .collect()
}

/// Analytic gradient of [`combined_loss`] with respect to every joint-matrix
/// entry, row-major (V+1) × H. Requires a finite loss.
pub fn combined_grad_joint(
    model: &TableTransducer,
    frames: &[u32],
    target: &[u32],
    cfg: &LossConfig,
) -> Result<Vec<f64>, ModelError> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    let v1 = model.vocab_size() + 1;
    let h_len = model.hidden();
    let enc = model.encode_offline(frames)?;
    let mut grad = vec![0.0; v1 * h_len];

    // Shared chain rule: given dLoss/d(logprob row) `g` for a row produced
    // by log-softmax(z) with probabilities p, dLoss/dz_j = g_j − p_j·Σg,
    // and dLoss/dJ[j][i] += dz_j · h[i].
    let accumulate = |grad: &mut [f64], g: &[f64], logprobs_row: &dyn Fn(usize) -> f64, h: &[f64], weight: f64| {
        let total: f64 = g.iter().sum();
        for j in 0..v1 {
            let p = logprobs_row(j).exp();
            let dz = g[j] - p * total;
            for i in 0..h_len {
                grad[j * h_len + i] += weight * dz * h[i];
            }
        }
    };

    if lambda < 1.0 {
        let lattice = model.lattice_offline(frames, target)?;
        let gl = rnnt_grad_logprobs(&lattice, target);
        let u_len = target.len() + 1;
        for t in 0..lattice.t_len() {
            for u in 0..u_len {
                let ctx = model.pred_context(&target[..u]);
                let h = model.hidden_vec(&enc[t], ctx);
                let g = &gl[(t * u_len + u) * v1..(t * u_len + u + 1) * v1];
                accumulate(&mut grad, g, &|j| lattice.get(t, u, j as u32), &h, 1.0 - lambda);
            }
        }
    }
    if lambda > 0.0 {
        for &token in target {
            if token as usize >= model.vocab_size() {
                return Err(ModelError::TokenOutOfRange { token, vocab_size: model.vocab_size() });
            }
        }
        let fl = model.frame_logprobs(frames)?;
        let gf = ctc_grad_logprobs(&fl, target);
        let ctx = model.pred_context(&[]);
        for (t, g) in gf.iter().enumerate() {
            let h = model.hidden_vec(&enc[t], ctx);
            accumulate(&mut grad, g, &|j| fl[t][j], &h, lambda);
        }
    }
    Ok(grad)
}

/// Compare [`combined_grad_joint`] against central finite differences of
/// [`combined_loss`] over every joint-matrix entry and return the maximum
/// relative deviation, where the denominator is
/// `max(|analytic|, |fd|, 1e−8)`.
///
/// `epsilon` must lie in [1e−6, 1e−3] (panics otherwise — caller contract).
pub fn grad_check(
    model: &TableTransducer,
    frames: &[u32],
    target: &[u32],
    cfg: &LossConfig,
    epsilon: f64,
) -> Result<f64, ModelError> {
    assert!(
        (1e-6..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside [1e-6, 1e-3]"
    );
    let analytic = combined_grad_joint(model, frames, target, cfg)?;
    let v1 = model.vocab_size() + 1;
    let h_len = model.hidden();
    let mut worst: f64 = 0.0;
    for j in 0..v1 {
        for i in 0..h_len {
            let plus = combined_loss(&model.perturb_joint(j, i, epsilon), frames, target, cfg)?;
            let minus = combined_loss(&model.perturb_joint(j, i, -epsilon), frames, target, cfg)?;
            let fd = (plus - minus) / (2.0 * epsilon);
            let a = analytic[j * h_len + i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
