//! Search oracles: forced alignment against exhaustive enumeration, and
//! decoding against brute force over every (label sequence, alignment) pair.

mod common;

use monatt::attention::{Monotonicity, Variant};
use monatt::search::{decode, score_hypothesis, DecodeConfig, ScoreParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn align_cell(variant: Variant, seed: u64) {
    let stats = common::align_oracle_cell(variant, 40, 0.1, seed);
    assert_eq!(
        stats.exact_matches, stats.trials,
        "{variant:?}: exhaustive forced alignment must match enumeration"
    );
    assert_eq!(stats.bound_violations, 0, "{variant:?}: recombined score exceeded the optimum");
    // recombination is an approximation; on tiny random models it finds the
    // optimum in the vast majority of instances
    assert!(
        stats.recombined_matches * 10 >= stats.trials * 9,
        "{variant:?}: recombined matches only {}/{}",
        stats.recombined_matches,
        stats.trials
    );
}

#[test]
fn align_oracle_hard_strict() {
    align_cell(Variant::hard(), 101);
}

#[test]
fn align_oracle_hard_weak() {
    align_cell(Variant::hard().with_monotonicity(Monotonicity::Weak), 102);
}

#[test]
fn align_oracle_local_weak() {
    align_cell(Variant::local(1, 1), 103);
}

#[test]
fn align_oracle_local_strict() {
    align_cell(Variant::local(1, 1).with_monotonicity(Monotonicity::Strict), 104);
}

#[test]
fn align_oracle_segmental() {
    align_cell(Variant::segmental(), 105);
}

fn decode_cell(variant: Variant, seed: u64) {
    for expand in [true, false] {
        let stats = common::decode_oracle_cell(variant, expand, 30, seed);
        assert_eq!(
            stats.exact_matches, stats.trials,
            "{variant:?} expand={expand}: decode with exhaustive beams must equal brute force"
        );
    }
}

#[test]
fn decode_oracle_hard_strict() {
    decode_cell(Variant::hard(), 201);
}

#[test]
fn decode_oracle_hard_weak() {
    decode_cell(Variant::hard().with_monotonicity(Monotonicity::Weak), 202);
}

#[test]
fn decode_oracle_local_weak() {
    decode_cell(Variant::local(1, 1), 203);
}

#[test]
fn decode_oracle_segmental() {
    decode_cell(Variant::segmental(), 204);
}

#[test]
fn decode_oracle_baseline_labels_only() {
    // brute force over label sequences for the global soft baseline
    let vocab = 2usize;
    let max_labels = 3usize;
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    for trial in 0..30 {
        let model = common::tiny_model(Variant::global_soft(), vocab, 2, 9000 + trial);
        let enc_len = rng.random_range(2..=5usize);
        let x = common::random_x(&mut rng, enc_len, 2);
        let params = ScoreParams::default();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for labels in common::enumerate_label_sequences(vocab, max_labels) {
            let s = score_hypothesis(&model, &x, &labels, &[], &params).unwrap();
            let better = match &best {
                None => true,
                Some((bs, bl)) => s > *bs || (s == *bs && labels < *bl),
            };
            if better {
                best = Some((s, labels.clone()));
            }
        }
        let (best_score, best_labels) = best.unwrap();
        let cfg = DecodeConfig {
            label_beam: 100_000,
            max_output_len: Some(max_labels + 1),
            ..DecodeConfig::default()
        };
        let out = decode(&model, &x, &cfg).unwrap();
        assert!(out.finished);
        assert_eq!(out.score, best_score);
        assert_eq!(out.labels, best_labels);
    }
}

#[test]
fn pruned_decode_never_exceeds_exhaustive_optimum() {
    let vocab = 2usize;
    let max_labels = 3usize;
    let mut rng = ChaCha8Rng::seed_from_u64(206);
    for trial in 0..25 {
        let variant = Variant::hard();
        let model = common::tiny_model(variant, vocab, 2, 11_000 + trial);
        let enc_len = rng.random_range(3..=5usize);
        let x = common::random_x(&mut rng, enc_len, 2);
        let params = ScoreParams {
            latent_scale: 1.0,
            temperature: 1.0,
        };
        let mut best = f64::NEG_INFINITY;
        for labels in common::enumerate_label_sequences(vocab, max_labels) {
            for times in common::enumerate_alignments(enc_len, labels.len() + 1, &variant) {
                let s = score_hypothesis(&model, &x, &labels, &times, &params).unwrap();
                best = best.max(s);
            }
        }
        for (label_beam, time_beam, expand, k_t) in
            [(2, 4, false, 1), (2, 48, false, 1), (2, 1, true, 1), (4, 1, true, 2)]
        {
            let cfg = DecodeConfig {
                label_beam,
                time_beam,
                expand,
                per_label_time_beam: k_t,
                latent_exponent: 1.0,
                temperature: 1.0,
                max_output_len: Some(max_labels + 1),
                ..DecodeConfig::default()
            };
            match decode(&model, &x, &cfg) {
                // the bound applies to completed hypotheses; an unfinished
                // fallback lacks the EOS term and is not comparable
                Ok(out) if out.finished => assert!(
                    out.score <= best,
                    "pruned decode returned {} above the optimum {best}",
                    out.score
                ),
                Ok(_) => {}
                Err(monatt::Error::EmptyBeam(_)) => {} // legal under tiny beams
                Err(e) => panic!("decode failed: {e}"),
            }
        }
    }
}
