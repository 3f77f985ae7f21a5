//! Deterministic toy transducer: a table-driven acoustic model small enough
//! to verify exhaustively, yet shaped like the real thing — a causal
//! mean-pooling encoder with per-frame visibility, a stateless two-token
//! predictor, and a log-softmax joint over `V` tokens plus blank.
//!
//! The blank label id is `vocab_size` (one past the last real token), which
//! matches the reserved blank of [`crate::context_graph::SubwordVocab`].
//!
//! Reference RNN-T and CTC losses, their interpolation, and analytic
//! gradients live in [`loss`].

pub mod loss;

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    combined_grad_joint, combined_loss, combined_loss_batch, ctc_grad_logprobs, ctc_loss,
    grad_check, rnnt_grad_logprobs, rnnt_loss, LossConfig,
};

const MODEL_VERSION: &str = "tt-params-v1";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model dimensions must be ≥ 1 (vocab {vocab_size}, frame alphabet {frame_alphabet}, hidden {hidden})")]
    BadShape { vocab_size: usize, frame_alphabet: usize, hidden: usize },
    #[error("frame symbol {symbol} at position {t} out of range (alphabet size {alphabet})")]
    FrameOutOfRange { t: usize, symbol: u32, alphabet: usize },
    #[error("token {token} out of range (vocab size {vocab_size})")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("visibility at frame {t} must be ≥ 1")]
    BadVisibility { t: usize },
    #[error("lambda {lambda} outside [0, 1]")]
    BadLambda { lambda: f64 },
    #[error("visibility sequence length {visibility} does not match frame count {frames}")]
    VisibilityLength { visibility: usize, frames: usize },
    #[error("table {table} has {found} entries, expected {expected}")]
    TableSize { table: &'static str, expected: usize, found: usize },
    #[error("table {table} contains a non-finite value")]
    NonFinite { table: &'static str },
    #[error("failed to read/write model: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported model version {found:?} (expected {MODEL_VERSION:?})")]
    Version { found: String },
}

/// Table-driven transducer model. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTransducer {
    version: String,
    /// Number of real tokens V; the blank id is `V`.
    vocab_size: usize,
    /// Number of distinct input frame symbols F.
    frame_alphabet: usize,
    /// Hidden width H shared by encoder, predictor, and joint.
    hidden: usize,
    /// Seed the tables were generated from (recorded for provenance even
    /// when the model is loaded from file).
    seed: u64,
    /// F×H row-major frame embeddings.
    embed: Vec<f64>,
    /// (V+1)²×H row-major predictor table over (prev2, prev1) contexts,
    /// where index V is the start-pad symbol.
    predictor: Vec<f64>,
    /// (V+1)×H row-major joint matrix.
    joint: Vec<f64>,
}

impl TableTransducer {
    /// Generate a model from the named procedure `tt-params-v1`: one
    /// ChaCha8 stream seeded with `seed` fills embed, then predictor, then
    /// joint, row-major, with uniform values in [−1, 1).
    pub fn seeded(
        vocab_size: usize,
        frame_alphabet: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if vocab_size == 0 || frame_alphabet == 0 || hidden == 0 {
            return Err(ModelError::BadShape { vocab_size, frame_alphabet, hidden });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let embed = fill(frame_alphabet * hidden);
        let predictor = fill((vocab_size + 1) * (vocab_size + 1) * hidden);
        let joint = fill((vocab_size + 1) * hidden);
        let model = TableTransducer {
            version: MODEL_VERSION.to_string(),
            vocab_size,
            frame_alphabet,
            hidden,
            seed,
            embed,
            predictor,
            joint,
        };
        model.validate()?;
        Ok(model)
    }

    /// Build from explicit tables (row-major, shapes as documented on the
    /// fields). The seed is recorded verbatim.
    pub fn from_tables(
        vocab_size: usize,
        frame_alphabet: usize,
        hidden: usize,
        seed: u64,
        embed: Vec<f64>,
        predictor: Vec<f64>,
        joint: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if vocab_size == 0 || frame_alphabet == 0 || hidden == 0 {
            return Err(ModelError::BadShape { vocab_size, frame_alphabet, hidden });
        }
        let model = TableTransducer {
            version: MODEL_VERSION.to_string(),
            vocab_size,
            frame_alphabet,
            hidden,
            seed,
            embed,
            predictor,
            joint,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let v1 = self.vocab_size + 1;
        let checks = [
            ("embed", self.frame_alphabet * self.hidden, self.embed.len()),
            ("predictor", v1 * v1 * self.hidden, self.predictor.len()),
            ("joint", v1 * self.hidden, self.joint.len()),
        ];
        for (table, expected, found) in checks {
            if expected != found {
                return Err(ModelError::TableSize { table, expected, found });
            }
        }
        for (table, data) in
            [("embed", &self.embed), ("predictor", &self.predictor), ("joint", &self.joint)]
        {
            if data.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite { table });
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// The blank label id (`vocab_size`).
    pub fn blank(&self) -> u32 {
        self.vocab_size as u32
    }

    pub fn frame_alphabet(&self) -> usize {
        self.frame_alphabet
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn embed_row(&self, symbol: u32) -> &[f64] {
        let s = symbol as usize * self.hidden;
        &self.embed[s..s + self.hidden]
    }

    /// Causal mean encoder: `out(t)` is the arithmetic mean of the
    /// embeddings of `frames[max(0, t+1−visibility[t]) ..= t]`.
    pub fn encode(&self, frames: &[u32], visibility: &[usize]) -> Result<Vec<Vec<f64>>, ModelError> {
        if visibility.len() != frames.len() {
            return Err(ModelError::VisibilityLength {
                visibility: visibility.len(),
                frames: frames.len(),
            });
        }
        for (t, &f) in frames.iter().enumerate() {
            if f as usize >= self.frame_alphabet {
                return Err(ModelError::FrameOutOfRange {
                    t,
                    symbol: f,
                    alphabet: self.frame_alphabet,
                });
            }
            if visibility[t] == 0 {
                return Err(ModelError::BadVisibility { t });
            }
        }
        let mut out = Vec::with_capacity(frames.len());
        for t in 0..frames.len() {
            let start = (t + 1).saturating_sub(visibility[t]);
            let mut acc = vec![0.0; self.hidden];
            for &f in &frames[start..=t] {
                for (a, e) in acc.iter_mut().zip(self.embed_row(f)) {
                    *a += e;
                }
            }
            let n = (t + 1 - start) as f64;
            for a in &mut acc {
                *a /= n;
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// [`encode`](Self::encode) with unlimited visibility (full prefix).
    pub fn encode_offline(&self, frames: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
        let visibility: Vec<usize> = (0..frames.len()).map(|t| t + 1).collect();
        self.encode(frames, &visibility)
    }

    /// The stateless predictor context for a prefix: its last two tokens,
    /// start-padded with the blank-position symbol `V`.
    pub fn pred_context(&self, prefix: &[u32]) -> (u32, u32) {
        let pad = self.vocab_size as u32;
        match prefix {
            [] => (pad, pad),
            [a] => (pad, *a),
            [.., a, b] => (*a, *b),
        }
    }

    fn predictor_row(&self, ctx: (u32, u32)) -> &[f64] {
        let v1 = self.vocab_size + 1;
        let idx = (ctx.0 as usize * v1 + ctx.1 as usize) * self.hidden;
        &self.predictor[idx..idx + self.hidden]
    }

    fn check_ctx(&self, ctx: (u32, u32)) -> Result<(), ModelError> {
        for token in [ctx.0, ctx.1] {
            if token as usize > self.vocab_size {
                return Err(ModelError::TokenOutOfRange { token, vocab_size: self.vocab_size });
            }
        }
        Ok(())
    }

    /// Log-softmax-normalized output distribution over V+1 labels for one
    /// (encoder vector, predictor context) pair.
    pub fn joint_logits_context(
        &self,
        enc_vec: &[f64],
        ctx: (u32, u32),
    ) -> Result<Vec<f64>, ModelError> {
        self.check_ctx(ctx)?;
        let pred = self.predictor_row(ctx);
        let h: Vec<f64> = enc_vec.iter().zip(pred).map(|(e, p)| e + p).collect();
        Ok(log_softmax(&self.joint_z(&h)))
    }

    /// [`joint_logits_context`](Self::joint_logits_context) addressed by a
    /// full target prefix (only its last two tokens matter).
    pub fn joint_logits(&self, enc_vec: &[f64], prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        for &token in prefix {
            if token as usize >= self.vocab_size {
                return Err(ModelError::TokenOutOfRange { token, vocab_size: self.vocab_size });
            }
        }
        self.joint_logits_context(enc_vec, self.pred_context(prefix))
    }

    /// Pre-softmax joint outputs for a combined hidden vector.
    fn joint_z(&self, h: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.vocab_size + 1);
        for j in 0..=self.vocab_size {
            let row = &self.joint[j * self.hidden..(j + 1) * self.hidden];
            z.push(row.iter().zip(h).map(|(w, x)| w * x).sum());
        }
        z
    }

    /// Combined hidden vector `enc(t) + predictor(ctx)` — the joint input.
    fn hidden_vec(&self, enc_vec: &[f64], ctx: (u32, u32)) -> Vec<f64> {
        enc_vec.iter().zip(self.predictor_row(ctx)).map(|(e, p)| e + p).collect()
    }

    /// Full RNN-T lattice for (frames, target) with per-frame visibility.
    pub fn lattice(
        &self,
        frames: &[u32],
        visibility: &[usize],
        target: &[u32],
    ) -> Result<Lattice, ModelError> {
        let enc = self.encode(frames, visibility)?;
        for &token in target {
            if token as usize >= self.vocab_size {
                return Err(ModelError::TokenOutOfRange { token, vocab_size: self.vocab_size });
            }
        }
        let t_len = frames.len();
        let u_len = target.len() + 1;
        let v1 = self.vocab_size + 1;
        let mut data = Vec::with_capacity(t_len * u_len * v1);
        for enc_t in &enc {
            for u in 0..u_len {
                let ctx = self.pred_context(&target[..u]);
                data.extend(self.joint_logits_context(enc_t, ctx)?);
            }
        }
        Ok(Lattice { t_len, u_len, v1, data })
    }

    /// Offline lattice (unlimited visibility).
    pub fn lattice_offline(&self, frames: &[u32], target: &[u32]) -> Result<Lattice, ModelError> {
        let visibility: Vec<usize> = (0..frames.len()).map(|t| t + 1).collect();
        self.lattice(frames, &visibility, target)
    }

    /// Per-frame label log-probabilities at the empty predictor context
    /// (the CTC head), offline encoder.
    pub fn frame_logprobs(&self, frames: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
        let enc = self.encode_offline(frames)?;
        let ctx = self.pred_context(&[]);
        enc.iter().map(|e| self.joint_logits_context(e, ctx)).collect()
    }

    /// Copy of the model with one joint entry shifted (finite-difference
    /// probes in [`loss::grad_check`]).
    pub(crate) fn perturb_joint(&self, j: usize, i: usize, delta: f64) -> TableTransducer {
        let mut m = self.clone();
        m.joint[j * m.hidden + i] += delta;
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path.as_ref(), self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let model: TableTransducer = serde_json::from_str(&text)?;
        if model.version != MODEL_VERSION {
            return Err(ModelError::Version { found: model.version });
        }
        model.validate()?;
        Ok(model)
    }
}

/// Dense RNN-T lattice: `get(t, u, k)` is the normalized log-probability of
/// label `k` after seeing frames `0..=t` with `u` target tokens consumed.
/// `t` ranges over `0..T`, `u` over `0..=U`, `k` over `0..=V` (blank = V).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    t_len: usize,
    u_len: usize, // U + 1
    v1: usize,    // V + 1
    data: Vec<f64>,
}

impl Lattice {
    /// Build from raw (unnormalized) per-cell logit rows; each (t, u) row is
    /// log-softmax-normalized. `rows[t][u]` must have V+1 entries.
    pub fn from_rows(rows: Vec<Vec<Vec<f64>>>) -> Lattice {
        let t_len = rows.len();
        let u_len = rows.first().map_or(1, Vec::len);
        let v1 = rows.first().and_then(|r| r.first()).map_or(1, Vec::len);
        let mut data = Vec::with_capacity(t_len * u_len * v1);
        for row_t in &rows {
            assert_eq!(row_t.len(), u_len, "ragged lattice rows");
            for row_u in row_t {
                assert_eq!(row_u.len(), v1, "ragged lattice cells");
                data.extend(log_softmax(row_u));
            }
        }
        Lattice { t_len, u_len, v1, data }
    }

    /// Frame count T.
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Target length U this lattice was built for.
    pub fn u_len(&self) -> usize {
        self.u_len - 1
    }

    /// Vocabulary size V (blank = V).
    pub fn vocab_size(&self) -> usize {
        self.v1 - 1
    }

    pub fn blank(&self) -> u32 {
        (self.v1 - 1) as u32
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, k: u32) -> f64 {
        debug_assert!(t < self.t_len && u < self.u_len && (k as usize) < self.v1);
        self.data[(t * self.u_len + u) * self.v1 + k as usize]
    }

    /// Max deviation of Σ exp(logit) from 1 over all (t, u) cells.
    pub fn normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for cell in self.data.chunks(self.v1) {
            let sum: f64 = cell.iter().map(|x| x.exp()).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }
}

/// Log-sum-exp of two log-domain values.
pub(crate) fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-sum-exp of a slice.
pub(crate) fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let norm = lse(z);
    z.iter().map(|x| x - norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TableTransducer {
        TableTransducer::seeded(3, 5, 4, 42).unwrap()
    }

    #[test]
    fn seeded_generation_is_deterministic_and_versioned() {
        let a = TableTransducer::seeded(3, 5, 4, 42).unwrap();
        let b = TableTransducer::seeded(3, 5, 4, 42).unwrap();
        assert_eq!(a, b);
        let c = TableTransducer::seeded(3, 5, 4, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.blank(), 3);
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(matches!(
            TableTransducer::seeded(0, 5, 4, 1),
            Err(ModelError::BadShape { .. })
        ));
        assert!(matches!(
            TableTransducer::from_tables(2, 2, 2, 0, vec![0.0; 3], vec![0.0; 18], vec![0.0; 6]),
            Err(ModelError::TableSize { table: "embed", .. })
        ));
        assert!(matches!(
            TableTransducer::from_tables(
                2,
                2,
                2,
                0,
                vec![f64::NAN; 4],
                vec![0.0; 18],
                vec![0.0; 6]
            ),
            Err(ModelError::NonFinite { table: "embed" })
        ));
    }

    #[test]
    fn encode_visibility_one_is_per_frame_embedding() {
        let m = tiny();
        let frames = [0u32, 1, 2, 3];
        let enc = m.encode(&frames, &[1, 1, 1, 1]).unwrap();
        for (t, &f) in frames.iter().enumerate() {
            assert_eq!(enc[t], m.embed_row(f));
        }
    }

    #[test]
    fn encode_visibility_two_hand_average() {
        let m = tiny();
        let frames = [0u32, 1, 2, 3]; // a b c d
        let enc = m.encode(&frames, &[2, 2, 2, 2]).unwrap();
        let want: Vec<f64> = m
            .embed_row(2)
            .iter()
            .zip(m.embed_row(3))
            .map(|(c, d)| (c + d) / 2.0)
            .collect();
        for (got, want) in enc[3].iter().zip(&want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_unlimited_constant_frames_constant_output() {
        let m = tiny();
        let frames = [2u32; 6];
        let enc = m.encode_offline(&frames).unwrap();
        for e in &enc {
            for (a, b) in e.iter().zip(&enc[0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_offline_is_prefix_function() {
        // Unlimited visibility means output(t) depends only on frames[..=t]:
        // computing on any prefix gives identical vectors (bitwise).
        let m = tiny();
        let frames = [0u32, 3, 1, 4, 2, 0, 1];
        let full = m.encode_offline(&frames).unwrap();
        for cut in 1..=frames.len() {
            let part = m.encode_offline(&frames[..cut]).unwrap();
            for t in 0..cut {
                assert_eq!(part[t], full[t], "prefix mismatch at cut {cut} t {t}");
            }
        }
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let m = tiny();
        assert!(matches!(
            m.encode(&[9], &[1]),
            Err(ModelError::FrameOutOfRange { t: 0, symbol: 9, .. })
        ));
        assert!(matches!(m.encode(&[1], &[0]), Err(ModelError::BadVisibility { t: 0 })));
        assert!(matches!(m.encode(&[1, 2], &[1]), Err(ModelError::VisibilityLength { .. })));
    }

    #[test]
    fn joint_is_normalized_and_deterministic() {
        let m = tiny();
        let enc = m.encode_offline(&[0, 1, 2]).unwrap();
        for prefix in [&[][..], &[0][..], &[1, 2][..]] {
            let a = m.joint_logits(&enc[1], prefix).unwrap();
            let b = m.joint_logits(&enc[1], prefix).unwrap();
            assert_eq!(a, b);
            let sum: f64 = a.iter().map(|x| x.exp()).sum();
            assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
            assert_eq!(a.len(), 4);
        }
    }

    #[test]
    fn predictor_is_stateless_beyond_two_tokens() {
        let m = tiny();
        let enc = m.encode_offline(&[0, 1]).unwrap();
        let long = m.joint_logits(&enc[0], &[2, 0, 1, 2]).unwrap();
        let short = m.joint_logits(&enc[0], &[1, 2]).unwrap();
        assert_eq!(long, short);
        let different = m.joint_logits(&enc[0], &[0, 2]).unwrap();
        assert_ne!(long, different);
    }

    #[test]
    fn joint_rejects_out_of_range_tokens() {
        let m = tiny();
        let enc = m.encode_offline(&[0]).unwrap();
        assert!(matches!(
            m.joint_logits(&enc[0], &[3]),
            Err(ModelError::TokenOutOfRange { token: 3, .. })
        ));
    }

    #[test]
    fn lattice_is_normalized_per_cell() {
        let m = tiny();
        let lat = m.lattice_offline(&[0, 1, 2, 3], &[1, 2]).unwrap();
        assert_eq!((lat.t_len(), lat.u_len(), lat.vocab_size()), (4, 2, 3));
        assert!(lat.normalization_error() <= 1e-6);
    }

    #[test]
    fn save_load_round_trip() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let loaded = TableTransducer::load(&path).unwrap();
        assert_eq!(m, loaded);
        assert_eq!(loaded.seed(), 42);
    }

    #[test]
    fn rejects_wrong_version() {
        let m = tiny();
        let mut json: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        json["version"] = serde_json::Value::String("tt-params-v9".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
        assert!(matches!(TableTransducer::load(&path).unwrap_err(), ModelError::Version { .. }));
    }

    #[test]
    fn lse_helpers_handle_neg_infinity() {
        assert_eq!(lse2(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!((lse2(f64::NEG_INFINITY, -1.0) - -1.0).abs() < 1e-15);
        assert_eq!(lse(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = lse(&[(0.3f64).ln(), (0.7f64).ln()]);
        assert!(v.abs() < 1e-12);
    }
}
