use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam optimizer state for one flat parameter vector.
///
/// Weight decay is applied as an additive `weight_decay * param` term on the
/// gradient before the moment updates (L2-style, not decoupled); set it to
/// zero to turn it off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdamState<S: Scalar> {
    step_count: u64,
    first_moment: Vec<S>,
    second_moment: Vec<S>,
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    pub weight_decay: S,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(
        param_len: usize,
        learning_rate: S,
        beta1: S,
        beta2: S,
        epsilon: S,
        weight_decay: S,
    ) -> Result<Self> {
        if learning_rate <= S::zero() || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if b < S::zero() || b >= S::one() {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1)")));
            }
        }
        if epsilon <= S::zero() {
            return Err(Error::InvalidArgument("epsilon must be > 0".into()));
        }
        if weight_decay < S::zero() {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(Self {
            step_count: 0,
            first_moment: vec![S::zero(); param_len],
            second_moment: vec![S::zero(); param_len],
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        })
    }

    /// Common default hyperparameters with the given learning rate and decay.
    pub fn with_defaults(param_len: usize, learning_rate: S, weight_decay: S) -> Result<Self> {
        Self::new(
            param_len,
            learning_rate,
            S::from_f64(0.9),
            S::from_f64(0.999),
            S::from_f64(1e-8),
            weight_decay,
        )
    }

    #[inline]
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    #[inline]
    pub fn param_len(&self) -> usize {
        self.first_moment.len()
    }

    /// First and second moment buffers (checkpointing).
    pub fn moments(&self) -> (&[S], &[S]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Rebuild a state from checkpointed buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw(
        step_count: u64,
        first_moment: Vec<S>,
        second_moment: Vec<S>,
        learning_rate: S,
        beta1: S,
        beta2: S,
        epsilon: S,
        weight_decay: S,
    ) -> Result<Self> {
        if first_moment.len() != second_moment.len() {
            return Err(Error::DimensionMismatch("moment buffer lengths".into()));
        }
        let mut state = Self::new(
            first_moment.len(),
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        )?;
        state.step_count = step_count;
        state.first_moment = first_moment;
        state.second_moment = second_moment;
        Ok(state)
    }
}

/// One Adam update with bias correction, in place on `params`.
///
/// Non-finite gradients abort the step with the state untouched.
pub fn adam_step<S: Scalar>(state: &mut AdamState<S>, params: &mut [S], grads: &[S]) -> Result<()> {
    adam_apply(state, params, grads, false)
}

/// Adam descent on the *negative* of `ascent`: saves materializing the
/// negated gradient for large parameter vectors.
pub fn adam_step_from_ascent<S: Scalar>(state: &mut AdamState<S>, params: &mut [S], ascent: &[S]) -> Result<()> {
    adam_apply(state, params, ascent, true)
}

fn adam_apply<S: Scalar>(state: &mut AdamState<S>, params: &mut [S], grads: &[S], negate: bool) -> Result<()> {
    use rayon::prelude::*;
    if grads.len() != params.len() || params.len() != state.param_len() {
        return Err(Error::DimensionMismatch(format!(
            "params {} / grads {} / state {}",
            params.len(),
            grads.len(),
            state.param_len()
        )));
    }
    if !crate::scalar::all_finite(grads) {
        return Err(Error::NonFinite("adam gradients".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let one = S::one();
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bias1 = one - b1.powi(t);
    let bias2 = one - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    let wd = state.weight_decay;
    let sign = if negate { -S::one() } else { S::one() };
    // Per-coordinate updates are independent; chunked parallelism is exact.
    const CHUNK: usize = 1 << 16;
    params
        .par_chunks_mut(CHUNK)
        .zip(grads.par_chunks(CHUNK))
        .zip(state.first_moment.par_chunks_mut(CHUNK))
        .zip(state.second_moment.par_chunks_mut(CHUNK))
        .for_each(|(((ps, gs), ms), vs)| {
            for (((p, g), m), v) in ps.iter_mut().zip(gs).zip(ms.iter_mut()).zip(vs.iter_mut()) {
                let g = sign * *g + wd * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(lr: f64, wd: f64, len: usize) -> AdamState<f64> {
        AdamState::new(len, lr, 0.9, 0.999, 1e-8, wd).unwrap()
    }

    #[test]
    fn zero_gradient_and_zero_decay_is_identity() {
        let mut st = state(0.1, 0.0, 3);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        adam_step(&mut st, &mut params, &[0.0, 0.0, 0.0]).unwrap();
        adam_step(&mut st, &mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn two_constant_gradient_steps_match_hand_computation() {
        // Straight-line transcription of the Adam recurrence for a scalar
        // parameter: p = 1, g = 1, lr = 0.1, betas (0.9, 0.999), eps = 1e-8.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let g = 1.0;
        let mut p_oracle: f64 = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        let mut expect = Vec::new();
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            p_oracle -= lr * m_hat / (v_hat.sqrt() + eps);
            expect.push(p_oracle);
        }

        let mut st = state(lr, 0.0, 1);
        let mut params = vec![1.0];
        adam_step(&mut st, &mut params, &[g]).unwrap();
        assert!((params[0] - expect[0]).abs() < 1e-15);
        // Bias-corrected first step moves by almost exactly lr.
        assert!((params[0] - 0.900000001).abs() < 1e-9);
        adam_step(&mut st, &mut params, &[g]).unwrap();
        assert!((params[0] - expect[1]).abs() < 1e-15);
        assert!((params[0] - 0.800000002).abs() < 1e-9);
    }

    #[test]
    fn weight_decay_alone_shrinks_parameters() {
        let mut st = state(0.01, 0.1, 2);
        let mut params = vec![2.0, -3.0];
        let before = params.clone();
        adam_step(&mut st, &mut params, &[0.0, 0.0]).unwrap();
        for (p, b) in params.iter().zip(&before) {
            assert!(p.abs() < b.abs(), "magnitude must strictly decrease");
            assert_eq!(p.signum(), b.signum());
        }
    }

    #[test]
    fn non_finite_gradient_leaves_state_unchanged() {
        let mut st = state(0.1, 0.0, 2);
        let mut params = vec![1.0, 2.0];
        adam_step(&mut st, &mut params, &[0.1, 0.2]).unwrap();
        let snapshot = st.clone();
        let params_snapshot = params.clone();
        let err = adam_step(&mut st, &mut params, &[f64::NAN, 0.0]);
        assert!(err.is_err());
        assert_eq!(st, snapshot);
        assert_eq!(params, params_snapshot);
    }

    #[test]
    fn hyperparameters_are_validated() {
        assert!(AdamState::new(1, 0.0f64, 0.9, 0.999, 1e-8, 0.0).is_err());
        assert!(AdamState::new(1, 0.1f64, 1.0, 0.999, 1e-8, 0.0).is_err());
        assert!(AdamState::new(1, 0.1f64, 0.9, -0.1, 1e-8, 0.0).is_err());
        assert!(AdamState::new(1, 0.1f64, 0.9, 0.999, 0.0, 0.0).is_err());
        assert!(AdamState::new(1, 0.1f64, 0.9, 0.999, 1e-8, -1.0).is_err());
    }
}
