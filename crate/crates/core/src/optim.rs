//! First-order update rules applied to a flat gradient.

use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    /// `θ ← θ − γ·g`
    Sgd,
    /// Bias-corrected Adam moments over `g`, scaled by `γ`.
    Adam(AdamState),
}

impl Optimizer {
    pub fn adam(num_params: usize) -> Self {
        Optimizer::Adam(AdamState::new(num_params))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam(_) => "adam",
        }
    }

    /// Applies one update of `grad` (flat, in parameter order) to `params`.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.iter().map(|p| p.numel()).sum::<usize>(), grad.len());
        match self {
            Optimizer::Sgd => {
                let mut offset = 0;
                for p in params.iter_mut() {
                    for (w, g) in p.data_mut().iter_mut().zip(&grad[offset..]) {
                        *w -= lr * g;
                    }
                    offset += p.numel();
                }
            }
            Optimizer::Adam(st) => {
                st.t += 1;
                let bc1 = 1.0 - st.beta1.powi(st.t as i32);
                let bc2 = 1.0 - st.beta2.powi(st.t as i32);
                let mut offset = 0;
                for p in params.iter_mut() {
                    for (j, w) in p.data_mut().iter_mut().enumerate() {
                        let i = offset + j;
                        let g = grad[i];
                        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
                        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
                        let m_hat = st.m[i] / bc1;
                        let v_hat = st.v[i] / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + st.eps);
                    }
                    offset += p.numel();
                }
            }
        }
    }
}
