use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Moment estimates and hyper-parameters for the Adam update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments for parameters of the given lengths, β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(lr: f64, lengths: &[usize]) -> Self {
        Self {
            step: 0,
            m: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_params(lr: f64, params: &[&Tensor]) -> Self {
        let lengths: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(lr, &lengths)
    }
}

/// Applies one bias-corrected Adam update, then zeroes the gradients.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(TensorError::Contract(format!(
            "optimizer tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(TensorError::Contract(format!("parameter {i} has no gradient")));
        }
        if p.len() != state.m[i].len() {
            return Err(TensorError::Contract(format!(
                "parameter {i} has {} values, optimizer state {}",
                p.len(),
                state.m[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = p.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let vals = p.values_mut();
        for j in 0..vals.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            vals[j] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        p.zero_grad();
    }
    Ok(())
}
