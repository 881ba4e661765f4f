//! Maximum-approximation training: linear-alignment bootstrap, on-the-fly
//! forced alignment with best-alignment caching, the joint label/latent
//! loss, and the staged schedule (soft attention → frozen linear alignment →
//! realignment).

pub mod cache;
pub mod optim;
mod run;

pub use cache::{AlignmentCache, AlignmentCacheEntry};
pub use optim::RmsProp;
pub use run::{train, EpochRecord, TrainOptions, TrainReport};

use serde::{Deserialize, Serialize};

use crate::attention::Variant;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::Model;
use crate::replay::ReplayStep;
use crate::search::{self, ScoreParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Hyperparameters of the training loop. Phase lengths are epochs; the three
/// phases run in order (global soft attention, frozen linear alignment,
/// on-the-fly realignment) and the remainder of `max_epochs` is realignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// λ on the latent negative log likelihood.
    pub latent_loss_scale: f64,
    pub label_smoothing: f64,
    /// Beam size of the forced alignment during realignment.
    pub align_beam: usize,
    /// Recombine alignment hypotheses sharing the current position.
    pub align_recombine: bool,
    /// Whether the cache keeps the λ-weighted joint score (default) or the
    /// label score only when comparing alignments.
    pub cache_score_uses_latent: bool,
    pub soft_epochs: usize,
    pub frozen_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear learning-rate warmup over this many optimizer steps.
    pub warmup_steps: usize,
    /// Halve the learning rate after this many epochs without dev-loss
    /// improvement.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub grad_clip: f64,
    /// Stop early once greedy dev WER reaches this value (percent).
    pub stop_dev_wer: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_loss_scale: 0.1,
            label_smoothing: 0.1,
            align_beam: 8,
            align_recombine: true,
            cache_score_uses_latent: true,
            soft_epochs: 2,
            frozen_epochs: 1,
            max_epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 250,
            plateau_patience: 2,
            plateau_factor: 0.5,
            grad_clip: 5.0,
            stop_dev_wer: None,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_loss_scale < 0.0 {
            return Err(Error::Config("latent_loss_scale must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must be in [0, 1)".into()));
        }
        if self.align_beam == 0 || self.batch_size == 0 {
            return Err(Error::Config("align_beam and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("learning_rate and grad_clip must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.plateau_factor) {
            return Err(Error::Config("plateau_factor must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn align_params(&self) -> AlignParams {
        AlignParams {
            beam: self.align_beam,
            latent_scale: self.latent_loss_scale,
            temperature: 1.0,
            recombine: self.align_recombine,
        }
    }
}

/// Training phase of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Global soft attention, no latent machinery.
    Soft,
    /// Latent loss on the frozen (linear) alignments.
    FrozenAlignment,
    /// Latent loss with on-the-fly forced alignment and caching.
    Realign,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Soft => "soft",
            Phase::FrozenAlignment => "frozen",
            Phase::Realign => "realign",
        }
    }
}

pub fn phase_for_epoch(cfg: &TrainConfig, variant: &Variant, epoch: usize) -> Phase {
    if !variant.is_latent() {
        return Phase::Soft;
    }
    if epoch < cfg.soft_epochs {
        Phase::Soft
    } else if epoch < cfg.soft_epochs + cfg.frozen_epochs {
        Phase::FrozenAlignment
    } else {
        Phase::Realign
    }
}

/// The bootstrap alignment: position i of `n_positions` lands on frame
/// ceil(i · enc_len / n_positions).
pub fn linear_alignment(n_positions: usize, enc_len: usize, strict: bool) -> Result<Vec<usize>> {
    if n_positions == 0 || enc_len == 0 {
        return Err(Error::Contract("linear alignment over empty range".into()));
    }
    if strict && n_positions > enc_len {
        return Err(Error::Infeasible(format!(
            "{n_positions} positions cannot fit strictly monotone in {enc_len} frames"
        )));
    }
    Ok((1..=n_positions)
        .map(|i| (i * enc_len).div_ceil(n_positions))
        .collect())
}

/// Forced-alignment settings.
#[derive(Debug, Clone, Copy)]
pub struct AlignParams {
    pub beam: usize,
    /// λ weighting of the latent term inside the search score.
    pub latent_scale: f64,
    pub temperature: f64,
    pub recombine: bool,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            beam: 8,
            latent_scale: 0.1,
            temperature: 1.0,
            recombine: true,
        }
    }
}

/// Viterbi alignment: beam search over positions with `labels` fixed (EOS is
/// appended and gets the final position). Returns the alignment of
/// `labels.len() + 1` positions and its joint score.
pub fn forced_align(model: &Model, x: &Tensor, labels: &[usize], params: &AlignParams) -> Result<(Vec<usize>, f64)> {
    let tape = Tape::inference();
    let enc = model.encode(&tape, x)?;
    search::forced_align_beam(
        model,
        &tape,
        &enc,
        labels,
        params.beam,
        &ScoreParams {
            latent_scale: params.latent_scale,
            temperature: params.temperature,
        },
        params.recombine,
    )
}

/// Loss terms of one utterance, as plain numbers for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossStats {
    pub loss: f64,
    pub label_ce: f64,
    pub latent_nll: f64,
    pub utterances: usize,
}

impl LossStats {
    pub fn merge(&mut self, other: LossStats) {
        self.loss += other.loss;
        self.label_ce += other.label_ce;
        self.latent_nll += other.latent_nll;
        self.utterances += other.utterances;
    }

    pub fn mean_loss(&self) -> f64 {
        self.loss / self.utterances.max(1) as f64
    }
}

/// Assemble the joint loss
///   Σ_i −[(1−ε)·log p(y_i) + ε/C·Σ_j log p(j)] − λ·log p(t_i)
/// from replay steps, on the same tape that produced them.
pub fn build_loss(
    tape: &Tape,
    steps: &[ReplayStep],
    labels: &[usize],
    eos: usize,
    num_classes: usize,
    latent_scale: f64,
    label_smoothing: f64,
) -> Result<(Tensor, LossStats)> {
    let mut total: Option<Tensor> = None;
    let mut stats = LossStats {
        utterances: 1,
        ..LossStats::default()
    };
    for (i, step) in steps.iter().enumerate() {
        let y_i = if i == labels.len() { eos } else { labels[i] };
        let picked = tape.slice_vec(&step.label_log_probs, y_i, 1)?;
        let mut term = tape.scale(&picked, -(1.0 - label_smoothing));
        if label_smoothing > 0.0 {
            let sum_all = tape.reduce_sum(&step.label_log_probs);
            term = tape.add(&term, &tape.scale(&sum_all, -label_smoothing / num_classes as f64))?;
        }
        stats.label_ce += term.value();
        if let Some(lp_t) = &step.latent_log_prob {
            stats.latent_nll += -lp_t.value();
            if latent_scale > 0.0 {
                term = tape.add(&term, &tape.scale(lp_t, -latent_scale))?;
            }
        }
        total = Some(match total {
            None => term,
            Some(t) => tape.add(&t, &term)?,
        });
    }
    let loss = total.ok_or_else(|| Error::Contract("loss over zero steps".into()))?;
    stats.loss = loss.value();
    Ok((loss, stats))
}

/// Reject data the model cannot train on: wrong dims, out-of-range labels,
/// or (for strict variants) more positions than encoder frames.
pub fn validate_dataset_for_model(model: &Model, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    if dataset.feat_dim != model.config.feat_dim {
        return Err(Error::Config(format!(
            "dataset feat_dim {} vs model {}",
            dataset.feat_dim, model.config.feat_dim
        )));
    }
    if dataset.vocab_size > model.config.vocab_size {
        return Err(Error::Config(format!(
            "dataset vocab {} exceeds model vocab {}",
            dataset.vocab_size, model.config.vocab_size
        )));
    }
    let variant = model.config.variant;
    if variant.is_latent() && variant.is_strict() {
        for r in &dataset.records {
            let enc_len = model.config.encoder.output_len(r.frames(dataset.feat_dim));
            if r.labels.len() + 1 > enc_len {
                return Err(Error::Infeasible(format!(
                    "record {}: {} labels (+EOS) need more than {} encoder frames under strict monotonicity",
                    r.id,
                    r.labels.len(),
                    enc_len
                )));
            }
            if let Some(d) = variant.max_step {
                // EOS must be reachable within N+1 capped steps
                if (r.labels.len() + 1) * d < enc_len {
                    return Err(Error::Infeasible(format!(
                        "record {}: max_step {d} cannot span {} frames in {} steps",
                        r.id,
                        enc_len,
                        r.labels.len() + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_alignment_formula_cases() {
        assert_eq!(linear_alignment(2, 4, true).unwrap(), vec![2, 4]);
        assert_eq!(linear_alignment(4, 4, true).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(linear_alignment(3, 10, true).unwrap(), vec![4, 7, 10]);
    }

    #[test]
    fn linear_alignment_strictness() {
        assert!(matches!(
            linear_alignment(5, 4, true),
            Err(Error::Infeasible(_))
        ));
        // weak monotonicity tolerates repeats
        let a = linear_alignment(5, 4, false).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*a.last().unwrap(), 4);
    }

    #[test]
    fn linear_alignment_is_monotone() {
        for n in 1..=12 {
            for t in n..=20 {
                let a = linear_alignment(n, t, true).unwrap();
                assert!(a.windows(2).all(|w| w[0] < w[1]), "n={n} t={t}: {a:?}");
                assert_eq!(*a.last().unwrap(), t);
            }
        }
    }

    #[test]
    fn phase_schedule() {
        let cfg = TrainConfig {
            soft_epochs: 2,
            frozen_epochs: 1,
            max_epochs: 6,
            ..TrainConfig::default()
        };
        let hard = Variant::hard();
        assert_eq!(phase_for_epoch(&cfg, &hard, 0), Phase::Soft);
        assert_eq!(phase_for_epoch(&cfg, &hard, 1), Phase::Soft);
        assert_eq!(phase_for_epoch(&cfg, &hard, 2), Phase::FrozenAlignment);
        assert_eq!(phase_for_epoch(&cfg, &hard, 3), Phase::Realign);
        let soft = Variant::global_soft();
        assert_eq!(phase_for_epoch(&cfg, &soft, 5), Phase::Soft);
    }
}
