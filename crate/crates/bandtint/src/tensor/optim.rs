//! Adaptive-moment gradient descent.

use super::{Scalar, Tensor, TensorError};

/// Optimizer state: one first/second moment buffer per parameter, in the
/// order the parameters were handed to [`OptimState::new`].
#[derive(Debug, Clone)]
pub struct OptimState<S: Scalar = f32> {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step_count: u64,
}

impl<S: Scalar> OptimState<S> {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(learning_rate: f64, params: &[&Tensor<S>]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: params.iter().map(|p| vec![S::ZERO; p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::ZERO; p.numel()]).collect(),
            step_count: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all parameters; gradients must be populated and are
    /// cleared afterwards.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<S>)]) -> Result<(), TensorError> {
        if params.len() != self.m.len() {
            return Err(TensorError::OptimParamCount { expected: self.m.len(), actual: params.len() });
        }
        for (i, (name, p)) in params.iter().enumerate() {
            if self.m[i].len() != p.numel() {
                return Err(TensorError::OptimShapeMismatch { name: name.clone() });
            }
            if p.grad().is_none() {
                return Err(TensorError::MissingGrad(name.clone()));
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let grad: Vec<f64> = p.grad().unwrap().iter().map(|g| g.to_f64()).collect();
            let data = p.data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                let m = self.beta1 * self.m[i][j].to_f64() + (1.0 - self.beta1) * g;
                let v = self.beta2 * self.v[i][j].to_f64() + (1.0 - self.beta2) * g * g;
                self.m[i][j] = S::from_f64(m);
                self.v[i][j] = S::from_f64(v);
                let update = self.learning_rate * (m / bc1) / ((v / bc2).sqrt() + self.epsilon);
                data[j] = S::from_f64(data[j].to_f64() - update);
            }
            p.clear_grad();
        }
        Ok(())
    }
}
