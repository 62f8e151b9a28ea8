use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return shape_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        );
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return shape_err(
                "adam_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            );
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
