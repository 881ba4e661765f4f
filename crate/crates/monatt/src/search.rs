//! Label-synchronous beam search.
//!
//! The baseline searches over labels only. Latent variants alternate two
//! stages per output position: a time expansion hypothesizing the next
//! position `t_i` (with either global top-K_t pruning or per-hypothesis
//! expand pruning), then a label expansion pruned to the best K_y. Scores are
//! accumulated log probabilities; the latent term enters as
//! `latent_exponent · log p̃(t)` where `p̃` uses the configured softmax
//! temperature.
//!
//! Forced alignment reuses the same stepping with the label sequence fixed,
//! searching over positions only; see [`crate::training::forced_align`].

use crate::attention::{latent_distribution, LatentDistribution};
use crate::error::{Error, Result};
use crate::nnet::{DecoderState, Encoded, Model};
use crate::replay::{self, latent_context};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Partial decode state: labels and positions so far, accumulated log score,
/// and the decoder state to expand from.
pub struct Hypothesis {
    pub labels: Vec<usize>,
    pub times: Vec<usize>,
    pub score: f64,
    pub state: DecoderState,
    pub finished: bool,
}

impl Clone for Hypothesis {
    fn clone(&self) -> Self {
        Hypothesis {
            labels: self.labels.clone(),
            times: self.times.clone(),
            score: self.score,
            state: self.state.clone(),
            finished: self.finished,
        }
    }
}

/// Beam sizes and score shaping for decoding.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// K_y: beam after the label choice.
    pub label_beam: usize,
    /// K_t: beam after the time choice in global pruning mode.
    pub time_beam: usize,
    /// Expand pruning: keep the best `per_label_time_beam` positions per
    /// hypothesis instead of the overall best `time_beam`.
    pub expand: bool,
    /// K'_t for expand pruning; `expand` with 1 is the deterministic
    /// argmax-position approach.
    pub per_label_time_beam: usize,
    /// Exponent α on p(t|...), applied in the log domain.
    pub latent_exponent: f64,
    /// Softmax temperature inside p(t|...).
    pub temperature: f64,
    /// Cap on output length incl. EOS. Default: T' under strict
    /// monotonicity, ceil(1.5 T') otherwise.
    pub max_output_len: Option<usize>,
    /// Rank finished hypotheses by score / length instead of raw score.
    pub length_normalize: bool,
    /// Merge hypotheses sharing labels and current position (off by default
    /// for decoding; forced alignment uses its own flag).
    pub recombine: bool,
    pub nbest: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            label_beam: 12,
            time_beam: 48,
            expand: true,
            per_label_time_beam: 4,
            latent_exponent: 1.0,
            temperature: 1.0,
            max_output_len: None,
            length_normalize: false,
            recombine: false,
            nbest: 1,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.label_beam == 0 || self.time_beam == 0 {
            return Err(Error::Config("beam sizes must be >= 1".into()));
        }
        if self.expand && self.per_label_time_beam == 0 {
            return Err(Error::Config("per_label_time_beam must be >= 1".into()));
        }
        if !(self.latent_exponent > 0.0) {
            return Err(Error::Config("latent_exponent must be > 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.nbest == 0 {
            return Err(Error::Config("nbest must be >= 1".into()));
        }
        Ok(())
    }
}

/// Final decode result. `labels` excludes EOS; `times` covers every emitted
/// position including the EOS step (empty for the baseline).
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub labels: Vec<usize>,
    pub times: Vec<usize>,
    pub score: f64,
    /// False when the search hit the length cap without finishing; the
    /// best unfinished hypothesis is returned.
    pub finished: bool,
}

/// Score shaping shared by hypothesis scoring and forced alignment.
#[derive(Debug, Clone, Copy)]
pub struct ScoreParams {
    /// Multiplier on log p(t): the exponent α at decode time, the latent
    /// loss scale λ during training alignment.
    pub latent_scale: f64,
    pub temperature: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams {
            latent_scale: 1.0,
            temperature: 1.0,
        }
    }
}

// ── time expansion ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TimeCand {
    pub parent: usize,
    pub t: usize,
    pub score: f64,
}

fn cand_order(a: &TimeCand, b: &TimeCand) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.parent.cmp(&b.parent))
        .then(a.t.cmp(&b.t))
}

/// Prune time candidates: global top-k, or top-k per parent hypothesis
/// (the expand variant that never drops parents at this stage).
pub(crate) fn prune_time(mut cands: Vec<TimeCand>, expand: bool, k: usize) -> Vec<TimeCand> {
    cands.sort_by(cand_order);
    if expand {
        let max_parent = cands.iter().map(|c| c.parent).max().unwrap_or(0);
        let mut taken = vec![0usize; max_parent + 1];
        cands
            .into_iter()
            .filter(|c| {
                if taken[c.parent] < k {
                    taken[c.parent] += 1;
                    true
                } else {
                    false
                }
            })
            .collect()
    } else {
        cands.truncate(k);
        cands
    }
}

/// Keep the best candidate per (label history, new position); the §6-style
/// recombination used for forced alignment, optional at decode time.
pub(crate) fn recombine_time(beam: &[Hypothesis], cands: Vec<TimeCand>) -> Vec<TimeCand> {
    use std::collections::BTreeMap;
    let mut best: BTreeMap<(&[usize], usize), TimeCand> = BTreeMap::new();
    for c in cands {
        let key = (beam[c.parent].labels.as_slice(), c.t);
        match best.get(&key) {
            None => {
                best.insert(key, c);
            }
            Some(prev) => {
                let replace = c.score > prev.score
                    || (c.score == prev.score && beam[c.parent].times < beam[prev.parent].times);
                if replace {
                    best.insert(key, c);
                }
            }
        }
    }
    let mut out: Vec<TimeCand> = best.into_values().collect();
    out.sort_by(cand_order);
    out
}

struct ParentExpansion {
    energies: Tensor,
    latent: Option<LatentDistribution>,
}

fn expand_parents(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    beam: &[Hypothesis],
    temperature: f64,
) -> Result<Vec<ParentExpansion>> {
    let variant = model.config.variant;
    beam.iter()
        .map(|hyp| {
            let energies = model.attention_energies(tape, enc, &hyp.state)?;
            let t_prev = hyp.times.last().copied().unwrap_or(0);
            let latent = match latent_distribution(tape, &energies, t_prev, &variant, temperature) {
                Ok(d) => Some(d),
                Err(Error::EmptySupport(_)) => None, // dead hypothesis
                Err(e) => return Err(e),
            };
            Ok(ParentExpansion { energies, latent })
        })
        .collect()
}

fn time_candidates(beam: &[Hypothesis], parents: &[ParentExpansion], latent_scale: f64) -> Vec<TimeCand> {
    let mut cands = Vec::new();
    for (pi, (hyp, exp)) in beam.iter().zip(parents).enumerate() {
        let Some(latent) = &exp.latent else { continue };
        let probs = latent.probs.values_ref();
        for t in latent.support.0..=latent.support.1 {
            cands.push(TimeCand {
                parent: pi,
                t,
                score: hyp.score + latent_scale * probs[t - 1].ln(),
            });
        }
    }
    cands
}

/// A time-expanded hypothesis: position chosen, labels not yet.
struct Child {
    parent: usize,
    t: Option<usize>,
    score: f64,
    state: DecoderState,
    label_log_probs: Vec<f64>,
}

fn materialize_child(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    beam: &[Hypothesis],
    parents: &[ParentExpansion],
    cand: TimeCand,
) -> Result<Child> {
    let hyp = &beam[cand.parent];
    let t_prev = hyp.times.last().copied().unwrap_or(0);
    let y_prev = hyp.labels.last().copied().unwrap_or(model.config.eos_id());
    let (context, _) = latent_context(
        model,
        tape,
        enc,
        &hyp.state,
        &parents[cand.parent].energies,
        cand.t,
        t_prev,
    )?;
    let (next, logits) = model.decoder_step(tape, &hyp.state, y_prev, &context)?;
    let lp = model.label_log_probs(tape, &logits)?.values();
    let feedback = crate::attention::update_weight_feedback(
        tape,
        &hyp.state.feedback,
        replay::feedback_update_for(&model.config.variant, cand.t, t_prev),
    )?;
    Ok(Child {
        parent: cand.parent,
        t: Some(cand.t),
        score: cand.score,
        state: next.with_feedback(feedback),
        label_log_probs: lp,
    })
}

fn materialize_soft_children(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    beam: &[Hypothesis],
) -> Result<Vec<Child>> {
    beam.iter()
        .enumerate()
        .map(|(pi, hyp)| {
            let energies = model.attention_energies(tape, enc, &hyp.state)?;
            let weights = tape.softmax(&energies, 1.0)?;
            let context = crate::attention::context_global(tape, &weights, &enc.h)?;
            let y_prev = hyp.labels.last().copied().unwrap_or(model.config.eos_id());
            let (next, logits) = model.decoder_step(tape, &hyp.state, y_prev, &context)?;
            let lp = model.label_log_probs(tape, &logits)?.values();
            let feedback = crate::attention::update_weight_feedback(
                tape,
                &hyp.state.feedback,
                crate::attention::FeedbackUpdate::Soft(&weights),
            )?;
            Ok(Child {
                parent: pi,
                t: None,
                score: hyp.score,
                state: next.with_feedback(feedback),
                label_log_probs: lp,
            })
        })
        .collect()
}

/// Full label expansion over vocabulary + EOS, pruned to the global best
/// `label_beam`. Finished hypotheses compete in this selection, then retire.
fn expand_labels(
    beam: &[Hypothesis],
    children: Vec<Child>,
    label_beam: usize,
    eos: usize,
) -> (Vec<Hypothesis>, Vec<Hypothesis>) {
    struct LabelCand {
        child: usize,
        label: usize,
        score: f64,
    }
    let mut cands = Vec::with_capacity(children.len() * (eos + 1));
    for (ci, child) in children.iter().enumerate() {
        for (label, lp) in child.label_log_probs.iter().enumerate() {
            cands.push(LabelCand {
                child: ci,
                label,
                score: child.score + lp,
            });
        }
    }
    cands.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.child.cmp(&b.child))
            .then(a.label.cmp(&b.label))
    });
    cands.truncate(label_beam);

    let mut next = Vec::new();
    let mut finished = Vec::new();
    for cand in cands {
        let child = &children[cand.child];
        let parent = &beam[child.parent];
        let mut labels = parent.labels.clone();
        labels.push(cand.label);
        let mut times = parent.times.clone();
        if let Some(t) = child.t {
            times.push(t);
        }
        let hyp = Hypothesis {
            labels,
            times,
            score: cand.score,
            state: child.state.clone(),
            finished: cand.label == eos,
        };
        if hyp.finished {
            finished.push(hyp);
        } else {
            next.push(hyp);
        }
    }
    (next, finished)
}

fn canonical_hyp_order(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.times.cmp(&b.times))
        .then(a.labels.cmp(&b.labels))
}

fn final_rank(cfg: &DecodeConfig) -> impl Fn(&Hypothesis, &Hypothesis) -> std::cmp::Ordering + '_ {
    move |a: &Hypothesis, b: &Hypothesis| {
        let norm = |h: &Hypothesis| {
            if cfg.length_normalize {
                h.score / h.labels.len().max(1) as f64
            } else {
                h.score
            }
        };
        norm(b)
            .total_cmp(&norm(a))
            .then(a.times.cmp(&b.times))
            .then(a.labels.cmp(&b.labels))
    }
}

/// Search `argmax over (N, y, t)` of the joint score with label-synchronous
/// beam search; the baseline model searches over labels only.
pub fn decode(model: &Model, x: &Tensor, cfg: &DecodeConfig) -> Result<DecodeOutput> {
    let all = decode_nbest(model, x, cfg)?;
    Ok(all.into_iter().next().expect("nbest >= 1"))
}

pub fn decode_nbest(model: &Model, x: &Tensor, cfg: &DecodeConfig) -> Result<Vec<DecodeOutput>> {
    cfg.validate()?;
    let tape = Tape::inference();
    let enc = model.encode(&tape, x)?;
    let enc_len = enc.enc_len();
    let variant = model.config.variant;
    let max_len = cfg.max_output_len.unwrap_or_else(|| {
        if variant.is_latent() && variant.is_strict() {
            enc_len
        } else {
            (3 * enc_len).div_ceil(2)
        }
    });

    let mut beam = vec![Hypothesis {
        labels: Vec::new(),
        times: Vec::new(),
        score: 0.0,
        state: model.init_state(enc_len),
        finished: false,
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();

    for _step in 0..max_len {
        if beam.is_empty() {
            break;
        }
        let children = if variant.is_latent() {
            let parents = expand_parents(model, &tape, &enc, &beam, cfg.temperature)?;
            let cands = time_candidates(&beam, &parents, cfg.latent_exponent);
            if cands.is_empty() {
                break; // every live hypothesis exhausted its support
            }
            let cands = if cfg.recombine {
                recombine_time(&beam, cands)
            } else {
                cands
            };
            let k = if cfg.expand { cfg.per_label_time_beam } else { cfg.time_beam };
            let cands = prune_time(cands, cfg.expand, k);
            cands
                .into_iter()
                .map(|c| materialize_child(model, &tape, &enc, &beam, &parents, c))
                .collect::<Result<Vec<_>>>()?
        } else {
            materialize_soft_children(model, &tape, &enc, &beam)?
        };
        let (next, finished) = expand_labels(&beam, children, cfg.label_beam, model.config.eos_id());
        completed.extend(finished);
        beam = next;
        beam.sort_by(canonical_hyp_order);
    }

    if completed.is_empty() {
        if beam.is_empty() {
            return Err(Error::EmptyBeam(format!(
                "no hypothesis survived or finished (enc_len {enc_len}, max_len {max_len})"
            )));
        }
        beam.sort_by(final_rank(cfg));
        let mut best = beam;
        best.truncate(cfg.nbest);
        return Ok(best.into_iter().map(|h| output_from(h, false, model)).collect());
    }

    completed.sort_by(final_rank(cfg));
    completed.truncate(cfg.nbest);
    Ok(completed.into_iter().map(|h| output_from(h, true, model)).collect())
}

fn output_from(hyp: Hypothesis, finished: bool, model: &Model) -> DecodeOutput {
    let mut labels = hyp.labels;
    if finished {
        debug_assert_eq!(labels.last().copied(), Some(model.config.eos_id()));
        labels.pop();
    }
    DecodeOutput {
        labels,
        times: hyp.times,
        score: hyp.score,
        finished,
    }
}

/// Teacher-forced joint score of a fixed (y, t) pair: exactly the sum the
/// beam search accumulates under the same score shaping.
///
/// `times` must hold `labels.len() + 1` positions for latent models and be
/// empty for the baseline.
pub fn score_hypothesis(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    times: &[usize],
    params: &ScoreParams,
) -> Result<f64> {
    let tape = Tape::inference();
    let enc = model.encode(&tape, x)?;
    score_hypothesis_encoded(model, &tape, &enc, labels, times, params)
}

pub(crate) fn score_hypothesis_encoded(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    labels: &[usize],
    times: &[usize],
    params: &ScoreParams,
) -> Result<f64> {
    let steps = if model.config.variant.is_latent() {
        replay::replay(model, tape, enc, labels, Some(times), params.temperature)?
    } else {
        if !times.is_empty() {
            return Err(Error::Contract("baseline hypothesis carries positions".into()));
        }
        replay::replay(model, tape, enc, labels, None, params.temperature)?
    };
    let eos = model.config.eos_id();
    let mut score = 0.0;
    for (i, step) in steps.iter().enumerate() {
        let y_i = if i == labels.len() { eos } else { labels[i] };
        if let Some(lp_t) = &step.latent_log_prob {
            score += params.latent_scale * lp_t.value();
        }
        score += step.label_log_probs.values_ref()[y_i];
    }
    Ok(score)
}

/// Beam search over positions with the labels fixed: the Viterbi-style
/// forced alignment. `labels` excludes EOS; the returned alignment has
/// `labels.len() + 1` entries (EOS takes the last position).
pub(crate) fn forced_align_beam(
    model: &Model,
    tape: &Tape,
    enc: &Encoded,
    labels: &[usize],
    beam_size: usize,
    params: &ScoreParams,
    recombine: bool,
) -> Result<(Vec<usize>, f64)> {
    if !model.config.variant.is_latent() {
        return Err(Error::Contract("forced alignment on the baseline model".into()));
    }
    if beam_size == 0 {
        return Err(Error::Config("alignment beam must be >= 1".into()));
    }
    let enc_len = enc.enc_len();
    let eos = model.config.eos_id();
    let positions = labels.len() + 1;

    let mut beam = vec![Hypothesis {
        labels: Vec::new(),
        times: Vec::new(),
        score: 0.0,
        state: model.init_state(enc_len),
        finished: false,
    }];

    for i in 0..positions {
        let y_i = if i == labels.len() { eos } else { labels[i] };
        let parents = expand_parents(model, tape, enc, &beam, params.temperature)?;
        let cands = time_candidates(&beam, &parents, params.latent_scale);
        if cands.is_empty() {
            return Err(Error::Infeasible(format!(
                "no feasible alignment at position {} of {positions} (enc_len {enc_len})",
                i + 1
            )));
        }
        let cands = if recombine {
            recombine_time(&beam, cands)
        } else {
            cands
        };
        let cands = prune_time(cands, false, beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for cand in cands {
            let child = materialize_child(model, tape, enc, &beam, &parents, cand)?;
            let parent = &beam[child.parent];
            let mut new_labels = parent.labels.clone();
            new_labels.push(y_i);
            let mut new_times = parent.times.clone();
            new_times.push(child.t.expect("latent child has a position"));
            next.push(Hypothesis {
                labels: new_labels,
                times: new_times,
                score: child.score + child.label_log_probs[y_i],
                state: child.state,
                finished: i == labels.len(),
            });
        }
        next.sort_by(canonical_hyp_order);
        beam = next;
    }
    let best = beam.into_iter().next().expect("nonempty beam");
    Ok((best.times, best.score))
}
