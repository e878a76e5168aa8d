use serde::{Deserialize, Serialize};

use super::{GradientSet, Model, NnError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: u32,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 0.0001,
            batch_size: 64,
            local_epochs: 1,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad(format!(
                "adam betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            ));
        }
        if !(self.eps > 0.0) {
            return bad(format!("adam eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// Adam moments for one model; unused by SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One update with L2 weight decay folded into the gradient.
pub fn optimizer_step(
    model: &mut Model,
    grads: &GradientSet,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.grads.len() != model.num_tensors() || state.m.len() != model.num_tensors() {
        return Err(NnError::Shape(
            "gradient/state do not match the model".into(),
        ));
    }
    for (i, g) in grads.grads.iter().enumerate() {
        if g.shape() != model.params()[i].shape() || state.m[i].len() != g.len() {
            return Err(NnError::Shape(format!("tensor {i} shape mismatch")));
        }
    }
    state.t += 1;
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, g) in grads.grads.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let theta = model.param_mut(i);
        for (k, &gk) in g.data().iter().enumerate() {
            let gk = gk + wd * theta[k];
            match cfg.optimizer {
                OptimizerKind::Sgd => theta[k] -= lr * gk,
                OptimizerKind::Adam => {
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    theta[k] -= lr * mhat / (vhat.sqrt() + cfg.eps);
                }
            }
        }
    }
    Ok(())
}
