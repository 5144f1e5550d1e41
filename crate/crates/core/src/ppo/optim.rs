use super::PpoError;
use crate::nn::{ActorCritic, GradientSet, TensorKind};

/// Adaptive-moment gradient descent over the trainable tensors of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &ActorCritic, learning_rate: f64) -> Self {
        let zeros = GradientSet::zeros_like(net).buffers;
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut ActorCritic, grads: &GradientSet) -> Result<(), PpoError> {
        if !grads.matches(net) || grads.buffers.len() != self.m.len() {
            return Err(PpoError::InvalidConfig(
                "gradient set does not match the optimizer".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let params = net.tensors_mut().into_iter().filter(|p| p.kind == TensorKind::Param);
        for (((param, g), m), v) in params.zip(&grads.buffers).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
