//! Label error rate, frame error rate, and alignment step statistics.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::Model;
use crate::replay;
use crate::tape::Tape;
use crate::training::{forced_align, AlignParams};

/// Minimal edit operation counts between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn wer_percent(&self, ref_len: usize) -> f64 {
        100.0 * self.total() as f64 / ref_len.max(1) as f64
    }
}

/// Unit-cost Levenshtein alignment. Among minimal-cost alignments the one
/// with the fewest insertions+deletions (most substitutions) is reported, so
/// the decomposition is symmetric: swapping the arguments swaps I and D.
pub fn edit_distance(reference: &[usize], hypothesis: &[usize]) -> EditCounts {
    let m = reference.len();
    let n = hypothesis.len();
    // (cost, ins+del) minimized lexicographically
    let mut dp = vec![(0usize, 0usize); (m + 1) * (n + 1)];
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    for i in 1..=m {
        dp[idx(i, 0)] = (i, i);
    }
    for j in 1..=n {
        dp[idx(0, j)] = (j, j);
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = dp[idx(i - 1, j - 1)];
            let diag = (diag.0 + sub_cost, diag.1);
            let del = dp[idx(i - 1, j)];
            let del = (del.0 + 1, del.1 + 1);
            let ins = dp[idx(i, j - 1)];
            let ins = (ins.0 + 1, ins.1 + 1);
            dp[idx(i, j)] = diag.min(del).min(ins);
        }
    }
    // backtrace, preferring substitution/match, then deletion, then insertion
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = dp[idx(i, j)];
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = dp[idx(i - 1, j - 1)];
            if (diag.0 + sub_cost, diag.1) == here {
                counts.substitutions += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 {
            let del = dp[idx(i - 1, j)];
            if (del.0 + 1, del.1 + 1) == here {
                counts.deletions += 1;
                i -= 1;
                continue;
            }
        }
        counts.insertions += 1;
        j -= 1;
    }
    counts
}

/// Corpus-level WER accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct WerAccumulator {
    pub counts: EditCounts,
    pub ref_len: usize,
    pub utterances: usize,
}

impl WerAccumulator {
    pub fn add(&mut self, reference: &[usize], hypothesis: &[usize]) {
        let c = edit_distance(reference, hypothesis);
        self.counts.substitutions += c.substitutions;
        self.counts.insertions += c.insertions;
        self.counts.deletions += c.deletions;
        self.ref_len += reference.len();
        self.utterances += 1;
    }

    pub fn wer_percent(&self) -> f64 {
        self.counts.wer_percent(self.ref_len)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Frame (label position) error rate, teacher-forced on the ground truth
/// history. Latent models additionally condition on their best forced
/// alignment under the current parameters.
#[derive(Debug, Clone, Copy)]
pub struct FerReport {
    pub percent: f64,
    pub positions: usize,
    pub errors: usize,
    /// Utterances skipped because no feasible alignment exists.
    pub skipped: usize,
}

pub fn frame_error_rate(model: &Model, dataset: &Dataset, align: &AlignParams) -> Result<FerReport> {
    let mut positions = 0usize;
    let mut errors = 0usize;
    let mut skipped = 0usize;
    let eos = model.config.eos_id();
    for record in &dataset.records {
        let x = dataset.features(record);
        let tape = Tape::inference();
        let enc = model.encode(&tape, &x)?;
        let steps = if model.config.variant.is_latent() {
            match forced_align(model, &x, &record.labels, align) {
                Ok((times, _)) => replay::replay(model, &tape, &enc, &record.labels, Some(&times), 1.0)?,
                Err(Error::Infeasible(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            replay::replay(model, &tape, &enc, &record.labels, None, 1.0)?
        };
        for (i, step) in steps.iter().enumerate() {
            let y_i = if i == record.labels.len() { eos } else { record.labels[i] };
            let predicted = argmax(&step.label_log_probs.values_ref());
            positions += 1;
            if predicted != y_i {
                errors += 1;
            }
        }
    }
    Ok(FerReport {
        percent: 100.0 * errors as f64 / positions.max(1) as f64,
        positions,
        errors,
        skipped,
    })
}

/// Statistics over alignment step sizes t_i − t_{i−1}, including t_1 − 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub mean: f64,
    pub stddev: f64,
    pub max: usize,
    pub count: usize,
    /// histogram[k] = number of steps of size k
    pub histogram: Vec<usize>,
}

pub fn step_stats<S: AsRef<[usize]>>(alignments: &[S]) -> StepStats {
    let mut steps = Vec::new();
    for a in alignments {
        let mut prev = 0usize;
        for &t in a.as_ref() {
            steps.push(t - prev);
            prev = t;
        }
    }
    let count = steps.len();
    if count == 0 {
        return StepStats {
            mean: 0.0,
            stddev: 0.0,
            max: 0,
            count: 0,
            histogram: Vec::new(),
        };
    }
    let mean = steps.iter().sum::<usize>() as f64 / count as f64;
    let var = steps.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / count as f64;
    let max = *steps.iter().max().unwrap();
    let mut histogram = vec![0usize; max + 1];
    for &s in &steps {
        histogram[s] += 1;
    }
    StepStats {
        mean,
        stddev: var.sqrt(),
        max,
        count,
        histogram,
    }
}

/// Evaluation summary written by `eval`.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub wer_percent: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
    pub utterances: usize,
    pub fer_percent: Option<f64>,
    pub step_mean: Option<f64>,
    pub step_stddev: Option<f64>,
}

impl EvalReport {
    pub fn from_wer(acc: &WerAccumulator) -> EvalReport {
        EvalReport {
            wer_percent: acc.wer_percent(),
            substitutions: acc.counts.substitutions,
            insertions: acc.counts.insertions,
            deletions: acc.counts.deletions,
            ref_len: acc.ref_len,
            utterances: acc.utterances,
            fer_percent: None,
            step_mean: None,
            step_stddev: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "utterances {}", self.utterances);
        let _ = writeln!(out, "reference-labels {}", self.ref_len);
        let _ = writeln!(out, "wer-percent {:.4}", self.wer_percent);
        let _ = writeln!(out, "substitutions {}", self.substitutions);
        let _ = writeln!(out, "insertions {}", self.insertions);
        let _ = writeln!(out, "deletions {}", self.deletions);
        if let Some(f) = self.fer_percent {
            let _ = writeln!(out, "fer-percent {f:.4}");
        }
        if let (Some(m), Some(s)) = (self.step_mean, self.step_stddev) {
            let _ = writeln!(out, "step-mean {m:.4}");
            let _ = writeln!(out, "step-stddev {s:.4}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "utterances,ref_labels,wer_percent,substitutions,insertions,deletions,fer_percent,step_mean,step_stddev\n{},{},{:.4},{},{},{},{},{},{}\n",
            self.utterances,
            self.ref_len,
            self.wer_percent,
            self.substitutions,
            self.insertions,
            self.deletions,
            opt(self.fer_percent),
            opt(self.step_mean),
            opt(self.step_stddev),
        )
    }
}
