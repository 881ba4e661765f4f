//! Attention variants and the latent position distribution.
//!
//! Four context mechanisms share one interface: the global soft baseline
//! attends over all encoder frames, while the three latent variants (hard,
//! local windowed, segmental) attend on a window decided by a discrete
//! position `t_i`. The distribution over `t_i` comes from the same attention
//! energies, masked to respect monotonicity and an optional maximum step.
//!
//! Frame positions are 1-based throughout (`t = 1..=enc_len`); `t_prev = 0`
//! denotes the begin-of-sequence state before the first position is chosen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    /// t_i > t_{i-1}
    Strict,
    /// t_i >= t_{i-1}
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VariantKind {
    GlobalSoft,
    Hard,
    LocalWindow { d_left: usize, d_right: usize },
    Segmental,
}

/// An attention variant plus its monotonicity rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub kind: VariantKind,
    pub monotonicity: Monotonicity,
    /// Largest allowed step `t_i - t_{i-1}`; `None` is unlimited.
    pub max_step: Option<usize>,
}

impl Variant {
    pub fn global_soft() -> Variant {
        Variant {
            kind: VariantKind::GlobalSoft,
            monotonicity: Monotonicity::Strict,
            max_step: None,
        }
    }

    pub fn hard() -> Variant {
        Variant {
            kind: VariantKind::Hard,
            monotonicity: Monotonicity::Strict,
            max_step: None,
        }
    }

    /// Local windowed attention; weak by default so the window may re-center
    /// on the same frame.
    pub fn local(d_left: usize, d_right: usize) -> Variant {
        Variant {
            kind: VariantKind::LocalWindow { d_left, d_right },
            monotonicity: Monotonicity::Weak,
            max_step: None,
        }
    }

    pub fn segmental() -> Variant {
        Variant {
            kind: VariantKind::Segmental,
            monotonicity: Monotonicity::Strict,
            max_step: None,
        }
    }

    pub fn with_monotonicity(mut self, m: Monotonicity) -> Variant {
        self.monotonicity = m;
        self
    }

    pub fn with_max_step(mut self, s: Option<usize>) -> Variant {
        self.max_step = s;
        self
    }

    pub fn is_latent(&self) -> bool {
        self.kind != VariantKind::GlobalSoft
    }

    pub fn is_strict(&self) -> bool {
        self.monotonicity == Monotonicity::Strict
    }

    /// Segments must be nonempty, so the segmental variant requires strict
    /// monotonicity. Max step of 0 would forbid every move.
    pub fn validate(&self) -> Result<()> {
        if self.kind == VariantKind::Segmental && self.monotonicity != Monotonicity::Strict {
            return Err(Error::Config(
                "segmental attention requires strict monotonicity".into(),
            ));
        }
        if self.max_step == Some(0) {
            return Err(Error::Config("max_step must be >= 1 (or unset)".into()));
        }
        Ok(())
    }
}

/// Distribution of the next position, zero outside its support interval.
pub struct LatentDistribution {
    /// Probabilities over all `enc_len` frames (index 0 ↔ frame 1).
    pub probs: Tensor,
    /// Inclusive 1-based support bounds.
    pub support: (usize, usize),
}

impl LatentDistribution {
    /// Probability of frame `t` (1-based).
    pub fn prob(&self, t: usize) -> f64 {
        self.probs.values_ref()[t - 1]
    }

    /// Support frame with the highest probability, smallest frame on ties.
    pub fn argmax(&self) -> usize {
        let v = self.probs.values_ref();
        let mut best = self.support.0;
        for t in self.support.0..=self.support.1 {
            if v[t - 1] > v[best - 1] {
                best = t;
            }
        }
        best
    }
}

/// Valid next-position interval given the previous position.
///
/// Returns `EmptySupport` when no move is possible (e.g. strict monotonicity
/// with `t_prev == enc_len`); callers treat that as a dead hypothesis.
pub fn support_interval(enc_len: usize, t_prev: usize, variant: &Variant) -> Result<(usize, usize)> {
    if t_prev > enc_len {
        return Err(Error::bounds(
            "support-interval",
            format!("t_prev {t_prev} beyond enc_len {enc_len}"),
        ));
    }
    let lo = match variant.monotonicity {
        Monotonicity::Strict => t_prev + 1,
        Monotonicity::Weak => t_prev.max(1),
    };
    let hi = match variant.max_step {
        Some(d) => enc_len.min(t_prev + d),
        None => enc_len,
    };
    if lo > hi {
        return Err(Error::EmptySupport(format!(
            "no next position from t_prev={t_prev} (enc_len={enc_len}, {:?}, max_step={:?})",
            variant.monotonicity, variant.max_step
        )));
    }
    Ok((lo, hi))
}

/// p(t_i | ...) as renormalized masked attention weights.
pub fn latent_distribution(
    tape: &Tape,
    energies: &Tensor,
    t_prev: usize,
    variant: &Variant,
    temperature: f64,
) -> Result<LatentDistribution> {
    let enc_len = energies.numel();
    let (lo, hi) = support_interval(enc_len, t_prev, variant)?;
    let mask: Vec<bool> = (1..=enc_len).map(|t| t >= lo && t <= hi).collect();
    let probs = tape.masked_softmax(energies, &mask, temperature)?;
    Ok(LatentDistribution {
        probs,
        support: (lo, hi),
    })
}

/// Global soft context: convex combination of encoder rows.
pub fn context_global(tape: &Tape, weights: &Tensor, h: &Tensor) -> Result<Tensor> {
    tape.vecmat(weights, h)
}

/// Context for the latent variants, given the chosen position `t_i`.
///
/// * Hard: exactly the encoder row at `t_i`.
/// * Local window: shared energies renormalized on
///   `[t_i - d_left, t_i + d_right]` clipped to the sequence.
/// * Segmental: pass the dedicated segment energies as `energies`; they are
///   renormalized on `[t_prev + 1, t_i]`.
pub fn context_windowed(
    tape: &Tape,
    t_i: usize,
    variant: &Variant,
    energies: &Tensor,
    h: &Tensor,
    t_prev: usize,
) -> Result<Tensor> {
    let enc_len = h.dim(0);
    if t_i < 1 || t_i > enc_len {
        return Err(Error::bounds("context", format!("t_i {t_i} of {enc_len}")));
    }
    match variant.kind {
        VariantKind::GlobalSoft => Err(Error::Contract(
            "context_windowed called for the global soft variant".into(),
        )),
        VariantKind::Hard => tape.gather_row(h, t_i - 1),
        VariantKind::LocalWindow { d_left, d_right } => {
            let lo = t_i.saturating_sub(d_left).max(1);
            let hi = (t_i + d_right).min(enc_len);
            let mask: Vec<bool> = (1..=enc_len).map(|t| t >= lo && t <= hi).collect();
            let w = tape.masked_softmax(energies, &mask, 1.0)?;
            tape.vecmat(&w, h)
        }
        VariantKind::Segmental => {
            let lo = t_prev + 1;
            if lo > t_i {
                return Err(Error::EmptySupport(format!(
                    "empty segment [{lo}, {t_i}]"
                )));
            }
            let mask: Vec<bool> = (1..=enc_len).map(|t| t >= lo && t <= t_i).collect();
            let w = tape.masked_softmax(energies, &mask, 1.0)?;
            tape.vecmat(&w, h)
        }
    }
}

/// How a step updates the accumulated attention-weight feedback.
pub enum FeedbackUpdate<'a> {
    /// Soft accumulation of the attention weights (global soft baseline).
    Soft(&'a Tensor),
    /// One-hot position (hard and local windowed variants).
    Position(usize),
    /// Uniform mass over the segment `[start, end]`, 1-based inclusive.
    Segment { start: usize, end: usize },
}

/// feedback' = feedback + update. Soft updates stay differentiable; the hard
/// and segment forms add a constant indicator.
pub fn update_weight_feedback(
    tape: &Tape,
    feedback: &Tensor,
    update: FeedbackUpdate,
) -> Result<Tensor> {
    let enc_len = feedback.numel();
    match update {
        FeedbackUpdate::Soft(weights) => tape.add(feedback, weights),
        FeedbackUpdate::Position(t) => {
            if t < 1 || t > enc_len {
                return Err(Error::bounds("feedback", format!("position {t} of {enc_len}")));
            }
            let mut one_hot = vec![0.0; enc_len];
            one_hot[t - 1] = 1.0;
            tape.add(feedback, &Tensor::vector(one_hot))
        }
        FeedbackUpdate::Segment { start, end } => {
            if start < 1 || end > enc_len || start > end {
                return Err(Error::bounds(
                    "feedback",
                    format!("segment [{start}, {end}] of {enc_len}"),
                ));
            }
            let mass = 1.0 / (end - start + 1) as f64;
            let mut ind = vec![0.0; enc_len];
            for v in &mut ind[start - 1..end] {
                *v = mass;
            }
            tape.add(feedback, &Tensor::vector(ind))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_energies(n: usize) -> Tensor {
        Tensor::vector(vec![0.0; n])
    }

    #[test]
    fn strict_support_after_two() {
        let tape = Tape::inference();
        let v = Variant::hard();
        let d = latent_distribution(&tape, &uniform_energies(4), 2, &v, 1.0).unwrap();
        assert_eq!(d.support, (3, 4));
        assert_eq!(d.probs.values(), vec![0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn strict_with_max_step_one() {
        let tape = Tape::inference();
        let v = Variant::hard().with_max_step(Some(1));
        let d = latent_distribution(&tape, &uniform_energies(4), 2, &v, 1.0).unwrap();
        assert_eq!(d.support, (3, 3));
        assert_eq!(d.probs.values(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn strict_exhausted_support() {
        let tape = Tape::inference();
        let v = Variant::hard();
        assert!(matches!(
            latent_distribution(&tape, &uniform_energies(4), 4, &v, 1.0),
            Err(Error::EmptySupport(_))
        ));
    }

    #[test]
    fn bos_support_starts_at_one() {
        let tape = Tape::inference();
        for v in [
            Variant::hard(),
            Variant::local(1, 1),
            Variant::hard().with_monotonicity(Monotonicity::Weak),
        ] {
            let d = latent_distribution(&tape, &uniform_energies(3), 0, &v, 1.0).unwrap();
            assert_eq!(d.support.0, 1);
            assert_eq!(d.support.1, 3);
        }
    }

    #[test]
    fn weak_support_includes_current() {
        let tape = Tape::inference();
        let v = Variant::hard().with_monotonicity(Monotonicity::Weak);
        let d = latent_distribution(&tape, &uniform_energies(4), 4, &v, 1.0).unwrap();
        assert_eq!(d.support, (4, 4));
    }

    #[test]
    fn context_global_one_hot_and_uniform() {
        let tape = Tape::inference();
        let h = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let one_hot = Tensor::vector(vec![0.0, 1.0]);
        assert_eq!(context_global(&tape, &one_hot, &h).unwrap().values(), vec![3.0, 4.0]);
        let uniform = Tensor::vector(vec![0.5, 0.5]);
        assert_eq!(context_global(&tape, &uniform, &h).unwrap().values(), vec![2.0, 3.0]);
    }

    #[test]
    fn context_global_matches_direct_sum() {
        let tape = Tape::inference();
        let h = Tensor::matrix(3, 2, vec![1.0, -1.0, 2.0, 0.5, -3.0, 4.0]).unwrap();
        let w = Tensor::vector(vec![0.2, 0.5, 0.3]);
        let c = context_global(&tape, &w, &h).unwrap().values();
        let hv = h.values();
        let wv = w.values();
        for j in 0..2 {
            let direct: f64 = (0..3).map(|t| wv[t] * hv[t * 2 + j]).sum();
            assert_eq!(c[j], direct);
        }
    }

    #[test]
    fn hard_context_is_exact_row() {
        let tape = Tape::inference();
        let h = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let e = Tensor::vector(vec![0.3, -0.2, 0.9]);
        let c = context_windowed(&tape, 3, &Variant::hard(), &e, &h, 1).unwrap();
        assert_eq!(c.values(), vec![5.0, 6.0]);
    }

    #[test]
    fn local_zero_window_equals_hard() {
        let tape = Tape::inference();
        let h = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let e = Tensor::vector(vec![0.7, -1.2, 0.4]);
        let hard = context_windowed(&tape, 2, &Variant::hard(), &e, &h, 1).unwrap();
        let local = context_windowed(&tape, 2, &Variant::local(0, 0), &e, &h, 1).unwrap();
        assert_eq!(hard.values(), local.values());
    }

    #[test]
    fn segmental_uniform_averages_segment() {
        let tape = Tape::inference();
        let h = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let e = uniform_energies(3);
        let c = context_windowed(&tape, 3, &Variant::segmental(), &e, &h, 1).unwrap();
        assert_eq!(c.values(), vec![4.0, 5.0]);
    }

    #[test]
    fn feedback_updates() {
        let tape = Tape::inference();
        let zero = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let f = update_weight_feedback(&tape, &zero, FeedbackUpdate::Position(2)).unwrap();
        assert_eq!(f.values(), vec![0.0, 1.0, 0.0]);

        let alpha = Tensor::vector(vec![0.5, 0.5, 0.0]);
        let f1 = update_weight_feedback(&tape, &zero, FeedbackUpdate::Soft(&alpha)).unwrap();
        let f2 = update_weight_feedback(&tape, &f1, FeedbackUpdate::Soft(&alpha)).unwrap();
        assert_eq!(f2.values(), vec![1.0, 1.0, 0.0]);

        let f3 =
            update_weight_feedback(&tape, &zero, FeedbackUpdate::Segment { start: 2, end: 3 }).unwrap();
        assert_eq!(f3.values(), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn segmental_requires_strict() {
        let v = Variant::segmental().with_monotonicity(Monotonicity::Weak);
        assert!(v.validate().is_err());
        assert!(Variant::segmental().validate().is_ok());
    }

    #[test]
    fn argmax_invariant_to_temperature() {
        let tape = Tape::inference();
        let e = Tensor::vector(vec![0.3, 1.7, -0.5, 1.1]);
        let v = Variant::hard();
        let base = latent_distribution(&tape, &e, 0, &v, 1.0).unwrap().argmax();
        for temp in [0.25, 0.5, 2.0, 10.0] {
            let d = latent_distribution(&tape, &e, 0, &v, temp).unwrap();
            assert_eq!(d.argmax(), base);
        }
    }
}
