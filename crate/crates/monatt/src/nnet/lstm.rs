//! LSTM cell with stacked gate parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Parameters of one LSTM cell. The four gates (input, forget, cell, output)
/// are stacked along the first axis in that order.
pub struct LstmParams {
    /// [4H × D]
    pub w_input: Tensor,
    /// [4H × H]
    pub w_recurrent: Tensor,
    /// [4H]
    pub bias: Tensor,
}

impl LstmParams {
    pub fn hidden_size(&self) -> usize {
        self.w_recurrent.dim(1)
    }

    pub fn input_size(&self) -> usize {
        self.w_input.dim(1)
    }

    /// Glorot-uniform weights, zero bias except a forget-gate bias of 1.
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> LstmParams {
        let w_input = glorot(rng, 4 * hidden, input);
        let w_recurrent = glorot(rng, 4 * hidden, hidden);
        let mut b = vec![0.0; 4 * hidden];
        for v in &mut b[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmParams {
            w_input,
            w_recurrent,
            bias: Tensor::param(vec![4 * hidden], b).expect("bias shape"),
        }
    }

    pub fn zero_state(&self) -> (Tensor, Tensor) {
        let h = self.hidden_size();
        (Tensor::zeros(vec![h]), Tensor::zeros(vec![h]))
    }
}

pub(crate) fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::param(vec![rows, cols], values).expect("glorot shape")
}

/// One step of the standard LSTM recurrence.
pub fn lstm_step(
    tape: &Tape,
    params: &LstmParams,
    x: &Tensor,
    state: (&Tensor, &Tensor),
) -> Result<(Tensor, Tensor)> {
    let hidden = params.hidden_size();
    if x.rank() != 1 || x.numel() != params.input_size() {
        return Err(Error::shape(
            "lstm-step",
            format!("input {:?}, expected [{}]", x.shape(), params.input_size()),
        ));
    }
    let (h_prev, c_prev) = state;
    let from_input = tape.matvec(&params.w_input, x)?;
    let from_state = tape.matvec(&params.w_recurrent, h_prev)?;
    let gates = tape.add(&tape.add(&from_input, &from_state)?, &params.bias)?;

    let i = tape.sigmoid(&tape.slice_vec(&gates, 0, hidden)?);
    let f = tape.sigmoid(&tape.slice_vec(&gates, hidden, hidden)?);
    let g = tape.tanh(&tape.slice_vec(&gates, 2 * hidden, hidden)?);
    let o = tape.sigmoid(&tape.slice_vec(&gates, 3 * hidden, hidden)?);

    let c = tape.add(&tape.mul(&f, c_prev)?, &tape.mul(&i, &g)?)?;
    let h = tape.mul(&o, &tape.tanh(&c))?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(input: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_input: Tensor::zeros(vec![4 * hidden, input]),
            w_recurrent: Tensor::zeros(vec![4 * hidden, hidden]),
            bias: Tensor::zeros(vec![4 * hidden]),
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let tape = Tape::inference();
        let p = zero_params(3, 2);
        let (h0, c0) = p.zero_state();
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let (h, c) = lstm_step(&tape, &p, &x, (&h0, &c0)).unwrap();
        assert_eq!(h.values(), vec![0.0, 0.0]);
        assert_eq!(c.values(), vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        let tape = Tape::inference();
        let hidden = 2;
        let p = zero_params(1, hidden);
        {
            let mut b = p.bias.values();
            for v in &mut b[hidden..2 * hidden] {
                *v = 10.0;
            }
            p.bias.set_values(&b).unwrap();
        }
        let c0 = Tensor::vector(vec![1.0, 1.0]);
        let h0 = Tensor::zeros(vec![hidden]);
        let x = Tensor::vector(vec![3.0]);
        let (_, c) = lstm_step(&tape, &p, &x, (&h0, &c0)).unwrap();
        for v in c.values() {
            assert!((v - 1.0).abs() < 1e-4, "cell drifted to {v}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::inference();
        let p = zero_params(3, 2);
        let (h0, c0) = p.zero_state();
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert!(lstm_step(&tape, &p, &x, (&h0, &c0)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = LstmParams::init(&mut rng, 3, 2);
        let x = Tensor::param(vec![3], vec![0.4, -0.7, 0.2]).unwrap();
        let h0 = Tensor::param(vec![2], vec![0.1, -0.3]).unwrap();
        let c0 = Tensor::param(vec![2], vec![0.5, 0.2]).unwrap();
        let leaves = [
            p.w_input.clone(),
            p.w_recurrent.clone(),
            p.bias.clone(),
            x.clone(),
            h0.clone(),
            c0.clone(),
        ];
        let err = gradcheck::max_rel_err(
            &leaves,
            |tape| {
                let (h, c) = lstm_step(tape, &p, &x, (&h0, &c0))?;
                // weight the outputs so both h and c contribute unevenly
                let w = Tensor::vector(vec![1.0, -2.0]);
                let a = tape.mul(&h, &w)?;
                let b = tape.mul(&c, &w)?;
                Ok(tape.reduce_sum(&tape.add(&a, &tape.scale(&b, 0.5))?))
            },
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }
}
