//! Adam optimizer state and update step, plus the exponential learning-rate
//! schedule used by the training loop.

use crate::error::{Result, TsatError};
use crate::tensor::Tensor;

/// Adam moments for one parameter tensor. Defaults: beta1 0.9, beta2 0.999,
/// epsilon 1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(shape: Vec<usize>, learning_rate: f64) -> Self {
        AdamState {
            first_moment: Tensor::zeros(shape.clone()),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// Standard Adam update with bias correction. Mutates `params` in place and
/// advances the state by one step.
pub fn adam_step(state: &mut AdamState, params: &mut Tensor, grads: &Tensor) -> Result<()> {
    if params.shape() != grads.shape() || params.shape() != state.first_moment.shape() {
        return Err(TsatError::dimension(
            "adam_step",
            format!(
                "params {:?}, grads {:?}, moments {:?}",
                params.shape(),
                grads.shape(),
                state.first_moment.shape()
            ),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    let p = params.data_mut();
    let g = grads.data();
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Learning rate after `epoch` epochs of exponential decay:
/// `lr0 * exp(-gamma * epoch)`.
pub fn decay_learning_rate(initial_lr: f64, decay_gamma: f64, epoch: u64) -> f64 {
    initial_lr * (-decay_gamma * epoch as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(vec![3], 0.1);
        let mut params = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let before = params.clone();
        adam_step(&mut state, &mut params, &Tensor::zeros(vec![3])).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let lr = 1e-2;
        let mut state = AdamState::new(vec![2], lr);
        let mut params = Tensor::from_vec(vec![0.0, 0.0]);
        let grads = Tensor::from_vec(vec![3.0, -0.7]);
        adam_step(&mut state, &mut params, &grads).unwrap();
        // Bias-corrected first step is -lr * g/(|g| + eps) ≈ -lr * sign(g).
        assert!((params.data()[0] + lr).abs() < 1e-6);
        assert!((params.data()[1] - lr).abs() < 1e-6);
    }

    #[test]
    fn constant_gradient_update_magnitude_non_increasing() {
        let mut state = AdamState::new(vec![1], 1e-3);
        let mut params = Tensor::from_vec(vec![0.0]);
        let grads = Tensor::from_vec(vec![2.0]);
        adam_step(&mut state, &mut params, &grads).unwrap();
        let first = params.data()[0].abs();
        let before_second = params.data()[0];
        adam_step(&mut state, &mut params, &grads).unwrap();
        let second = (params.data()[0] - before_second).abs();
        assert!(second <= first + 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut state = AdamState::new(vec![2], 0.1);
        let mut params = Tensor::from_vec(vec![1.0, 2.0]);
        let err = adam_step(&mut state, &mut params, &Tensor::zeros(vec![3])).unwrap_err();
        assert!(matches!(err, TsatError::Dimension { .. }));
    }

    #[test]
    fn decay_schedule_values() {
        assert_eq!(decay_learning_rate(1e-4, 5e-3, 0), 1e-4);
        assert!((decay_learning_rate(1e-4, 5e-3, 1) - 9.9501e-5).abs() < 1e-9);
        assert!((decay_learning_rate(1e-4, 5e-3, 200) - 3.6788e-5).abs() < 1e-9);
    }
}
