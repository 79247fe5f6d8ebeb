//! Bias-corrected Adam.

use crate::autodiff::ParameterSet;
use crate::error::{Error, Result};
use crate::numeric::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring the parameter layout.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    m: ParameterSet<F>,
    v: ParameterSet<F>,
    step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(like: &ParameterSet<F>) -> Self {
        OptimizerState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update: `theta -= lr * m_hat / (sqrt(v_hat) + eps)` with
/// `m_hat = m/(1-beta1^t)` and `v_hat = v/(1-beta2^t)`.
pub fn adam_step<F: Real>(
    params: &mut ParameterSet<F>,
    grads: &ParameterSet<F>,
    state: &mut OptimizerState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let lr = F::from_f64(cfg.lr);
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let eps = F::from_f64(cfg.eps);
    let bc1 = F::ONE - b1.powi(t);
    let bc2 = F::ONE - b2.powi(t);

    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient in `{name}` at step {t}"
            )));
        }
        let m = state.m.get_mut(name)?;
        let v = state.v.get_mut(name)?;
        for ((pi, &gi), (mi, vi)) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()))
        {
            *mi = b1 * *mi + (F::ONE - b1) * gi;
            *vi = b2 * *vi + (F::ONE - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn scalar_params(v: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with g = 1 the bias-corrected moments are both exactly 1, so the
        // step is lr/(1 + eps)
        let mut params = scalar_params(1.0);
        let mut grads = params.zeros_like();
        grads.get_mut("x").unwrap().fill(1.0);
        let mut state = OptimizerState::new(&params);
        let cfg = AdamConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let moved = 1.0 - params.get("x").unwrap().item();
        assert!((moved - 0.001).abs() < 1e-8);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = scalar_params(0.7);
        let grads = params.zeros_like();
        let mut state = OptimizerState::new(&params);
        let cfg = AdamConfig::default();
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        assert_eq!(params.get("x").unwrap().item(), 0.7);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut params = ParameterSet::new();
            params.insert("w", Tensor::vector(vec![0.5f64, -0.25, 0.125]));
            let mut state = OptimizerState::new(&params);
            let cfg = AdamConfig::default();
            for i in 0..20 {
                let mut grads = params.zeros_like();
                let g = grads.get_mut("w").unwrap();
                for (j, x) in g.as_mut_slice().iter_mut().enumerate() {
                    *x = ((i * 3 + j) as f64 * 0.01).sin();
                }
                adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
            }
            params
        };
        assert!(run().bits_eq(&run()));
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut params = scalar_params(1.0);
        let mut grads = params.zeros_like();
        grads.get_mut("x").unwrap().fill(f64::NAN);
        let mut state = OptimizerState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("`x`")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
