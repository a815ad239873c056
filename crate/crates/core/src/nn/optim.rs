use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn check_len(params: usize, grads: usize) -> Result<()> {
    if params != grads {
        return Err(Error::domain(format!(
            "gradient length {grads} does not match parameter length {params}"
        )));
    }
    Ok(())
}

/// Plain gradient descent in place.
pub fn sgd_update(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_len(params.len(), grads.len())?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

pub fn sgd_step(mlp: &Mlp, grads: &[f64], lr: f64) -> Result<Mlp> {
    let mut next = mlp.clone();
    sgd_update(next.params_mut(), grads, lr)?;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn for_mlp(mlp: &Mlp) -> Self {
        Self::new(mlp.num_params())
    }

    /// Bias-corrected Adam update in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        check_len(params.len(), grads.len())?;
        check_len(self.first_moment.len(), grads.len())?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(mlp: &Mlp, grads: &[f64], state: &AdamState, lr: f64) -> Result<(Mlp, AdamState)> {
    let mut next = mlp.clone();
    let mut st = state.clone();
    st.update(next.params_mut(), grads, lr)?;
    Ok((next, st))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Optimizer bound to one parameter vector.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(n)),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_update(params, grads, lr),
            Optimizer::Adam(st) => st.update(params, grads, lr),
        }
    }
}
