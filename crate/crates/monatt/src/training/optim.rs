//! RMSProp with gradient clipping by global norm.

use crate::tensor::Tensor;

pub struct RmsProp {
    accum: Vec<Vec<f64>>,
    pub decay: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(params: &[Tensor]) -> RmsProp {
        RmsProp {
            accum: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
            decay: 0.9,
            eps: 1e-8,
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    /// Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &[Tensor], lr: f64, clip: f64) -> f64 {
        assert_eq!(params.len(), self.accum.len(), "optimizer/parameter mismatch");
        let mut sq_norm = 0.0;
        let grads: Vec<Option<Vec<f64>>> = params.iter().map(|p| p.grad()).collect();
        for g in grads.iter().flatten() {
            sq_norm += g.iter().map(|v| v * v).sum::<f64>();
        }
        let norm = sq_norm.sqrt();
        let scale = if norm > clip { clip / norm } else { 1.0 };
        for ((param, grad), acc) in params.iter().zip(&grads).zip(&mut self.accum) {
            let Some(grad) = grad else { continue };
            let mut values = param.values();
            for ((v, &g), a) in values.iter_mut().zip(grad).zip(acc.iter_mut()) {
                let g = g * scale;
                *a = self.decay * *a + (1.0 - self.decay) * g * g;
                *v -= lr * g / (a.sqrt() + self.eps);
            }
            param.set_values(&values).expect("same shape");
            param.zero_grad();
        }
        norm
    }
}

/// Linear warmup factor for step `step` (0-based) of `warmup_steps`.
pub fn warmup_scale(step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        1.0
    } else {
        (step + 1) as f64 / warmup_steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_moves_against_gradient_and_clears() {
        let p = Tensor::param(vec![2], vec![1.0, -1.0]).unwrap();
        p.accumulate_grad(&[0.5, -0.5]);
        let mut opt = RmsProp::new(&[p.clone()]);
        let norm = opt.step(&[p.clone()], 0.1, 100.0);
        assert!((norm - (0.5f64 * 0.5 + 0.25).sqrt()).abs() < 1e-12);
        let v = p.values();
        assert!(v[0] < 1.0);
        assert!(v[1] > -1.0);
        assert!(p.grad().is_none());
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let p = Tensor::param(vec![2], vec![1.0, -1.0]).unwrap();
        p.accumulate_grad(&[3.0, 4.0]);
        let mut opt = RmsProp::new(&[p.clone()]);
        opt.step(&[p.clone()], 0.0, 1.0);
        assert_eq!(p.values(), vec![1.0, -1.0]);
    }

    #[test]
    fn clipping_bounds_effective_norm() {
        let p = Tensor::param(vec![1], vec![0.0]).unwrap();
        p.accumulate_grad(&[100.0]);
        let mut opt = RmsProp::new(&[p.clone()]);
        let norm = opt.step(&[p.clone()], 1.0, 1.0);
        assert_eq!(norm, 100.0);
        // after clipping the RMS-normalized step magnitude is about lr
        let moved = p.values()[0].abs();
        assert!(moved < 4.0, "moved {moved}");
    }

    #[test]
    fn warmup_ramps_linearly() {
        assert_eq!(warmup_scale(0, 4), 0.25);
        assert_eq!(warmup_scale(3, 4), 1.0);
        assert_eq!(warmup_scale(10, 4), 1.0);
        assert_eq!(warmup_scale(0, 0), 1.0);
    }
}
