//! Shared fixtures for the integration and acceptance suites.

#![allow(dead_code)]

use monatt::attention::{Monotonicity, Variant};
use monatt::nnet::{EncoderConfig, Model, ModelConfig};
use monatt::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random model for oracle checks; dimensions stay tiny so exhaustive
/// enumeration is cheap.
pub fn tiny_model(variant: Variant, vocab: usize, feat: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        vocab_size: vocab,
        feat_dim: feat,
        encoder: EncoderConfig {
            num_layers: 1,
            hidden_per_direction: 3,
            pool_factors: vec![],
        },
        dec_hidden: 4,
        embed_dim: 2,
        att_dim: 3,
        variant,
        dropout: 0.0,
        segmental_feedback: false,
    };
    Model::new(cfg, seed).unwrap()
}

pub fn random_x(rng: &mut ChaCha8Rng, frames: usize, feat: usize) -> Tensor {
    let vals = (0..frames * feat).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![frames, feat], vals).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

/// Every monotone position sequence of the given length, independently of
/// the library's support computation.
pub fn enumerate_alignments(enc_len: usize, positions: usize, variant: &Variant) -> Vec<Vec<usize>> {
    let strict = variant.monotonicity == Monotonicity::Strict;
    let max_step = variant.max_step;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(positions);
    fn rec(
        t_prev: usize,
        remaining: usize,
        enc_len: usize,
        strict: bool,
        max_step: Option<usize>,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if remaining == 0 {
            out.push(cur.clone());
            return;
        }
        let lo = if strict { t_prev + 1 } else { t_prev.max(1) };
        let hi = match max_step {
            Some(d) => enc_len.min(t_prev + d),
            None => enc_len,
        };
        for t in lo..=hi {
            cur.push(t);
            rec(t, remaining - 1, enc_len, strict, max_step, cur, out);
            cur.pop();
        }
    }
    rec(0, positions, enc_len, strict, max_step, &mut cur, &mut out);
    out
}

/// All label sequences up to `max_len` over the vocabulary (EOS excluded).
pub fn enumerate_label_sequences(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for y in 0..vocab {
                let mut s = seq.clone();
                s.push(y);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn variant_matrix() -> Vec<Variant> {
    vec![
        Variant::hard(),
        Variant::hard().with_monotonicity(Monotonicity::Weak),
        Variant::local(1, 1),
        Variant::local(1, 1).with_monotonicity(Monotonicity::Strict),
        Variant::segmental(),
    ]
}

// ── oracle cells shared by tests/oracles.rs and tests/acceptance.rs ──────

use monatt::search::{decode, score_hypothesis, DecodeConfig, ScoreParams};
use monatt::training::{forced_align, AlignParams};

pub struct AlignOracleStats {
    pub trials: usize,
    /// exhaustive-mode forced alignment: must match the enumeration optimum
    pub exact_matches: usize,
    /// recombined K = T' mode: matches of the enumeration optimum
    pub recombined_matches: usize,
    /// recombined score may never exceed the optimum
    pub bound_violations: usize,
}

/// Compare forced alignment against exhaustive enumeration on random tiny
/// instances. Exhaustive mode (no recombination, beam covering every path)
/// must match the optimum exactly; the recombined beam (K = T') is also
/// scored for diagnostics.
pub fn align_oracle_cell(
    variant: Variant,
    trials: usize,
    latent_scale: f64,
    seed: u64,
) -> AlignOracleStats {
    let mut stats = AlignOracleStats {
        trials,
        exact_matches: 0,
        recombined_matches: 0,
        bound_violations: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let model = tiny_model(variant, 2, 2, seed.wrapping_add(1000 + trial as u64));
        let enc_len = rng.random_range(2..=6usize);
        let max_n = if variant.monotonicity == Monotonicity::Strict {
            (enc_len - 1).min(4)
        } else {
            4
        };
        let n = rng.random_range(1..=max_n.max(1));
        let x = random_x(&mut rng, enc_len, 2);
        let labels = random_labels(&mut rng, n, 2);

        let params = ScoreParams {
            latent_scale,
            temperature: 1.0,
        };
        let mut best = f64::NEG_INFINITY;
        for times in enumerate_alignments(enc_len, n + 1, &variant) {
            let s = score_hypothesis(&model, &x, &labels, &times, &params).unwrap();
            if s > best {
                best = s;
            }
        }

        let (_, exact) = forced_align(
            &model,
            &x,
            &labels,
            &AlignParams {
                beam: 100_000,
                latent_scale,
                temperature: 1.0,
                recombine: false,
            },
        )
        .unwrap();
        if exact == best {
            stats.exact_matches += 1;
        }

        let (_, rec) = forced_align(
            &model,
            &x,
            &labels,
            &AlignParams {
                beam: enc_len,
                latent_scale,
                temperature: 1.0,
                recombine: true,
            },
        )
        .unwrap();
        if rec == best {
            stats.recombined_matches += 1;
        }
        if rec > best {
            stats.bound_violations += 1;
        }
    }
    stats
}

pub struct DecodeOracleStats {
    pub trials: usize,
    pub exact_matches: usize,
}

/// Compare decode with exhaustive beams against brute force over all (y, t).
pub fn decode_oracle_cell(variant: Variant, expand: bool, trials: usize, seed: u64) -> DecodeOracleStats {
    let mut stats = DecodeOracleStats {
        trials,
        exact_matches: 0,
    };
    let vocab = 2usize;
    let max_labels = 3usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let model = tiny_model(variant, vocab, 2, seed.wrapping_add(5000 + trial as u64));
        let enc_len = rng.random_range(2..=5usize);
        let x = random_x(&mut rng, enc_len, 2);

        let params = ScoreParams {
            latent_scale: 1.0,
            temperature: 1.0,
        };
        // brute force over every label sequence and every feasible alignment
        let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
        for labels in enumerate_label_sequences(vocab, max_labels) {
            for times in enumerate_alignments(enc_len, labels.len() + 1, &variant) {
                let s = score_hypothesis(&model, &x, &labels, &times, &params).unwrap();
                let better = match &best {
                    None => true,
                    Some((bs, bt, bl)) => {
                        s > *bs || (s == *bs && (times.as_slice(), labels.as_slice()) < (bt.as_slice(), bl.as_slice()))
                    }
                };
                if better {
                    best = Some((s, times.clone(), labels.clone()));
                }
            }
        }
        let (best_score, best_times, best_labels) = best.expect("at least EOS-only path");

        let cfg = DecodeConfig {
            label_beam: 100_000,
            time_beam: 100_000,
            expand,
            per_label_time_beam: 100_000,
            latent_exponent: 1.0,
            temperature: 1.0,
            max_output_len: Some(max_labels + 1),
            ..DecodeConfig::default()
        };
        let out = decode(&model, &x, &cfg).unwrap();
        if out.finished && out.score == best_score && out.labels == best_labels && out.times == best_times {
            stats.exact_matches += 1;
        }
    }
    stats
}
