//! Teacher-forced replay of a label sequence (and, for latent variants, a
//! fixed alignment) through the decoder.
//!
//! One driver serves four consumers: the training loss builds its terms from
//! the returned step tensors, hypothesis scoring reads their values, frame
//! error rates take the label argmax per step, and the attention plot reads
//! the per-step weights.

use crate::attention::{
    self, context_global, context_windowed, latent_distribution, update_weight_feedback,
    FeedbackUpdate, Variant, VariantKind,
};
use crate::error::{Error, Result};
use crate::nnet::{DecoderState, Encoded, Model};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Attention pattern of one decoder step, as plain data.
pub struct StepWeights {
    /// Weights over encoder frames: soft attention weights, the window/segment
    /// weights, or a one-hot position for hard attention.
    pub weights: Vec<f64>,
    /// 1-based inclusive interval where the distribution may be nonzero.
    pub support: (usize, usize),
    /// Chosen position, absent in global-soft mode.
    pub chosen: Option<usize>,
}

/// Tensors produced for one output position.
pub struct ReplayStep {
    /// log p(· | history) over all labels incl. EOS, shape [V+1].
    pub label_log_probs: Tensor,
    /// log p(t_i | history), scalar; absent in global-soft mode.
    pub latent_log_prob: Option<Tensor>,
    /// Context attention pattern for diagnostics.
    pub context_weights: StepWeights,
    /// Latent distribution over positions (diagnostics), latent mode only.
    pub latent_weights: Option<StepWeights>,
}

/// Run the decoder over `labels` + EOS with ground-truth history.
///
/// `times`: `None` replays in global-soft-attention mode (the baseline, and
/// the warmup phase of latent training). `Some` replays a latent variant
/// along the given alignment of `labels.len() + 1` positions (EOS included);
/// the model's variant decides masking and context. `temperature` applies to
/// the latent distribution only.
pub fn replay(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    labels: &[usize],
    times: Option<&[usize]>,
    temperature: f64,
) -> Result<Vec<ReplayStep>> {
    let eos = model.config.eos_id();
    for &y in labels {
        if y >= eos {
            return Err(Error::bounds("replay", format!("label id {y} >= eos {eos}")));
        }
    }
    match times {
        None => replay_soft(model, tape, enc, labels),
        Some(times) => replay_latent(model, tape, enc, labels, times, temperature),
    }
}

fn replay_soft(model: &Model, tape: &Tape, enc: &Encoded, labels: &[usize]) -> Result<Vec<ReplayStep>> {
    let enc_len = enc.enc_len();
    let eos = model.config.eos_id();
    let mut state = model.init_state(enc_len);
    let mut steps = Vec::with_capacity(labels.len() + 1);
    for i in 0..=labels.len() {
        let y_prev = if i == 0 { eos } else { labels[i - 1] };
        let energies = model.attention_energies(tape, enc, &state)?;
        let weights = tape.softmax(&energies, 1.0)?;
        let context = context_global(tape, &weights, &enc.h)?;
        let (next, logits) = model.decoder_step(tape, &state, y_prev, &context)?;
        let label_log_probs = model.label_log_probs(tape, &logits)?;
        let feedback = update_weight_feedback(tape, &state.feedback, FeedbackUpdate::Soft(&weights))?;
        state = next.with_feedback(feedback);
        steps.push(ReplayStep {
            label_log_probs,
            latent_log_prob: None,
            context_weights: StepWeights {
                weights: weights.values(),
                support: (1, enc_len),
                chosen: None,
            },
            latent_weights: None,
        });
    }
    Ok(steps)
}

fn replay_latent(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    labels: &[usize],
    times: &[usize],
    temperature: f64,
) -> Result<Vec<ReplayStep>> {
    let variant = model.config.variant;
    if !variant.is_latent() {
        return Err(Error::Contract(
            "alignment replay on the global soft attention model".into(),
        ));
    }
    if times.len() != labels.len() + 1 {
        return Err(Error::Contract(format!(
            "alignment has {} positions for {} labels (+ EOS)",
            times.len(),
            labels.len()
        )));
    }
    let enc_len = enc.enc_len();
    let eos = model.config.eos_id();
    let mut state = model.init_state(enc_len);
    let mut t_prev = 0usize;
    let mut steps = Vec::with_capacity(times.len());
    for (i, &t_i) in times.iter().enumerate() {
        let y_prev = if i == 0 { eos } else { labels[i - 1] };
        let y_i = if i == labels.len() { eos } else { labels[i] };
        let _ = y_i;
        let energies = model.attention_energies(tape, enc, &state)?;
        let latent = latent_distribution(tape, &energies, t_prev, &variant, temperature)?;
        if t_i < latent.support.0 || t_i > latent.support.1 {
            return Err(Error::Infeasible(format!(
                "t_{}={} outside support [{}, {}]",
                i + 1,
                t_i,
                latent.support.0,
                latent.support.1
            )));
        }
        let latent_log_prob = tape.log(&tape.slice_vec(&latent.probs, t_i - 1, 1)?);

        let (context, context_weights) =
            latent_context(model, tape, enc, &state, &energies, t_i, t_prev)?;
        let (next, logits) = model.decoder_step(tape, &state, y_prev, &context)?;
        let label_log_probs = model.label_log_probs(tape, &logits)?;
        let feedback = update_weight_feedback(
            tape,
            &state.feedback,
            feedback_update_for(&variant, t_i, t_prev),
        )?;
        state = next.with_feedback(feedback);
        steps.push(ReplayStep {
            label_log_probs,
            latent_log_prob: Some(latent_log_prob),
            context_weights,
            latent_weights: Some(StepWeights {
                weights: latent.probs.values(),
                support: latent.support,
                chosen: Some(t_i),
            }),
        });
        t_prev = t_i;
    }
    Ok(steps)
}

/// Context vector plus its diagnostic weights for a chosen position.
pub(crate) fn latent_context(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    state: &DecoderState,
    energies: &Tensor,
    t_i: usize,
    t_prev: usize,
) -> Result<(Tensor, StepWeights)> {
    let variant = model.config.variant;
    let enc_len = enc.enc_len();
    match variant.kind {
        VariantKind::GlobalSoft => Err(Error::Contract("latent context on the baseline".into())),
        VariantKind::Hard => {
            let c = context_windowed(tape, t_i, &variant, energies, &enc.h, t_prev)?;
            let mut w = vec![0.0; enc_len];
            w[t_i - 1] = 1.0;
            Ok((
                c,
                StepWeights {
                    weights: w,
                    support: (t_i, t_i),
                    chosen: Some(t_i),
                },
            ))
        }
        VariantKind::LocalWindow { d_left, d_right } => {
            let lo = t_i.saturating_sub(d_left).max(1);
            let hi = (t_i + d_right).min(enc_len);
            let c = context_windowed(tape, t_i, &variant, energies, &enc.h, t_prev)?;
            let w = window_weights(tape, energies, lo, hi)?;
            Ok((
                c,
                StepWeights {
                    weights: w,
                    support: (lo, hi),
                    chosen: Some(t_i),
                },
            ))
        }
        VariantKind::Segmental => {
            let seg_energies = model.segment_energies(tape, enc, state)?;
            let lo = t_prev + 1;
            let c = context_windowed(tape, t_i, &variant, &seg_energies, &enc.h, t_prev)?;
            let w = window_weights(tape, &seg_energies, lo, t_i)?;
            Ok((
                c,
                StepWeights {
                    weights: w,
                    support: (lo, t_i),
                    chosen: Some(t_i),
                },
            ))
        }
    }
}

fn window_weights(tape: &Tape, energies: &Tensor, lo: usize, hi: usize) -> Result<Vec<f64>> {
    let n = energies.numel();
    let mask: Vec<bool> = (1..=n).map(|t| t >= lo && t <= hi).collect();
    Ok(tape.masked_softmax(energies, &mask, 1.0)?.values())
}

pub(crate) fn feedback_update_for(variant: &Variant, t_i: usize, t_prev: usize) -> FeedbackUpdate<'static> {
    match variant.kind {
        VariantKind::GlobalSoft => unreachable!("soft feedback handled separately"),
        VariantKind::Hard | VariantKind::LocalWindow { .. } => FeedbackUpdate::Position(t_i),
        VariantKind::Segmental => FeedbackUpdate::Segment {
            start: t_prev + 1,
            end: t_i,
        },
    }
}

/// Monotonicity/feasibility check for an alignment against a variant.
pub fn alignment_feasible(variant: &Variant, enc_len: usize, times: &[usize]) -> Result<()> {
    let mut t_prev = 0usize;
    for (i, &t) in times.iter().enumerate() {
        let (lo, hi) = attention::support_interval(enc_len, t_prev, variant).map_err(|_| {
            Error::Infeasible(format!("no support at position {} (t_prev={t_prev})", i + 1))
        })?;
        if t < lo || t > hi {
            return Err(Error::Infeasible(format!(
                "t_{}={t} outside [{lo}, {hi}]",
                i + 1
            )));
        }
        t_prev = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Monotonicity;
    use crate::nnet::{EncoderConfig, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(variant: Variant) -> Model {
        let cfg = ModelConfig {
            vocab_size: 2,
            feat_dim: 2,
            encoder: EncoderConfig {
                num_layers: 1,
                hidden_per_direction: 2,
                pool_factors: vec![],
            },
            dec_hidden: 3,
            embed_dim: 2,
            att_dim: 3,
            variant,
            dropout: 0.0,
            segmental_feedback: false,
        };
        Model::new(cfg, 11).unwrap()
    }

    fn random_x(seed: u64, frames: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..frames * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![frames, 2], vals).unwrap()
    }

    #[test]
    fn soft_replay_produces_distributions() {
        let model = tiny_model(Variant::global_soft());
        let tape = Tape::inference();
        let x = random_x(3, 5);
        let enc = model.encode(&tape, &x).unwrap();
        let steps = replay(&model, &tape, &enc, &[0, 1], None, 1.0).unwrap();
        assert_eq!(steps.len(), 3);
        for s in &steps {
            let total: f64 = s.label_log_probs.values().iter().map(|lp| lp.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
            let wsum: f64 = s.context_weights.weights.iter().sum();
            assert!((wsum - 1.0).abs() < 1e-9);
            assert!(s.latent_log_prob.is_none());
        }
    }

    #[test]
    fn latent_replay_respects_alignment() {
        let model = tiny_model(Variant::hard());
        let tape = Tape::inference();
        let x = random_x(5, 5);
        let enc = model.encode(&tape, &x).unwrap();
        let steps = replay(&model, &tape, &enc, &[0, 1], Some(&[1, 3, 5]), 1.0).unwrap();
        assert_eq!(steps.len(), 3);
        for (s, &t) in steps.iter().zip(&[1usize, 3, 5]) {
            assert_eq!(s.context_weights.chosen, Some(t));
            assert_eq!(s.context_weights.weights[t - 1], 1.0);
            let lp = s.latent_log_prob.as_ref().unwrap().value();
            assert!(lp <= 0.0 && lp.is_finite());
        }
    }

    #[test]
    fn infeasible_alignment_rejected() {
        let model = tiny_model(Variant::hard());
        let tape = Tape::inference();
        let x = random_x(7, 4);
        let enc = model.encode(&tape, &x).unwrap();
        // not strictly increasing
        assert!(matches!(
            replay(&model, &tape, &enc, &[0, 1], Some(&[2, 2, 3]), 1.0),
            Err(Error::Infeasible(_))
        ));
        // wrong length
        assert!(replay(&model, &tape, &enc, &[0, 1], Some(&[1, 2]), 1.0).is_err());
    }

    #[test]
    fn alignment_feasibility_checks_max_step() {
        let v = Variant::hard().with_max_step(Some(2));
        assert!(alignment_feasible(&v, 10, &[2, 4, 6]).is_ok());
        assert!(alignment_feasible(&v, 10, &[2, 5]).is_err());
        let w = Variant::hard().with_monotonicity(Monotonicity::Weak);
        assert!(alignment_feasible(&w, 3, &[1, 1, 2]).is_ok());
        assert!(alignment_feasible(&Variant::hard(), 3, &[1, 1]).is_err());
    }

    #[test]
    fn segmental_replay_uses_segments() {
        let model = tiny_model(Variant::segmental());
        let tape = Tape::inference();
        let x = random_x(9, 6);
        let enc = model.encode(&tape, &x).unwrap();
        let steps = replay(&model, &tape, &enc, &[1], Some(&[3, 6]), 1.0).unwrap();
        assert_eq!(steps[0].context_weights.support, (1, 3));
        assert_eq!(steps[1].context_weights.support, (4, 6));
        let w = &steps[1].context_weights.weights;
        assert_eq!(w[0..3], [0.0, 0.0, 0.0]);
        let wsum: f64 = w.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }
}
