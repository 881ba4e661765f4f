//! Finite-difference gradient checking.
//!
//! The checker is deliberately independent of the tape's backward pass: it
//! only re-runs the forward computation at perturbed inputs, so it can serve
//! as an oracle for every differentiable operation and composition.

use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Central-difference step used throughout the test suite.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with a floor so near-zero gradients compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Worst relative error between backward gradients and central finite
/// differences, over every component of every leaf.
///
/// `forward` must build a scalar loss on the given tape from the (captured)
/// leaves; it is re-evaluated ~2·numel times on non-recording tapes.
pub fn max_rel_err<F>(leaves: &[Tensor], forward: F, h: f64) -> Result<f64>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    let picks: Vec<(usize, usize)> = leaves
        .iter()
        .enumerate()
        .flat_map(|(li, t)| (0..t.numel()).map(move |ci| (li, ci)))
        .collect();
    max_rel_err_at(leaves, forward, h, &picks)
}

/// Same as [`max_rel_err`] but only for the listed `(leaf, component)`
/// coordinates, for compositions too large to probe exhaustively.
pub fn max_rel_err_at<F>(
    leaves: &[Tensor],
    forward: F,
    h: f64,
    picks: &[(usize, usize)],
) -> Result<f64>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    for leaf in leaves {
        leaf.zero_grad();
    }
    let tape = Tape::new();
    let loss = forward(&tape)?;
    tape.backward(&loss)?;
    let grads: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut worst = 0.0f64;
    for &(li, ci) in picks {
        let leaf = &leaves[li];
        let mut vals = leaf.values();
        let orig = vals[ci];

        vals[ci] = orig + h;
        leaf.set_values(&vals)?;
        let plus = forward(&Tape::inference())?.value();

        vals[ci] = orig - h;
        leaf.set_values(&vals)?;
        let minus = forward(&Tape::inference())?.value();

        vals[ci] = orig;
        leaf.set_values(&vals)?;

        let fd = (plus - minus) / (2.0 * h);
        let err = relative_error(grads[li][ci], fd);
        if err > worst {
            worst = err;
        }
    }
    for leaf in leaves {
        leaf.zero_grad();
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn tanh_gradient_matches_fd() {
        // tanh'(0.3) against central differences
        let x = Tensor::param(vec![1], vec![0.3]).unwrap();
        let leaves = [x.clone()];
        let err = max_rel_err(&leaves, |tape| Ok(tape.reduce_sum(&tape.tanh(&x))), DEFAULT_STEP).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn matmul_gradient_matches_fd() {
        let a = Tensor::param(vec![3, 4], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
        let b = Tensor::param(vec![4, 2], (0..8).map(|i| 0.3 - 0.07 * i as f64).collect()).unwrap();
        let leaves = [a.clone(), b.clone()];
        let err = max_rel_err(
            &leaves,
            |tape| {
                let c = tape.matmul(&a, &b)?;
                Ok(tape.reduce_sum(&c))
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }
}
