//! Adam with coupled L2: `l2·θ` is added to the gradient of each penalized
//! parameter before the moment updates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{ParamRole, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Which parameters the L2 penalty applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Scope {
    #[default]
    WeightsAndEmbeddings,
    Weights,
    All,
}

impl L2Scope {
    pub fn applies_to(self, role: ParamRole) -> bool {
        match self {
            L2Scope::All => true,
            L2Scope::WeightsAndEmbeddings => role != ParamRole::Bias,
            L2Scope::Weights => role == ParamRole::Weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
    pub l2_scope: L2Scope,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 0.01,
            l2_scope: L2Scope::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    /// First and second moment of one parameter, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, grad) in grads {
        let theta = params
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter `{name}`")))?;
        if theta.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "`{name}`: parameter {:?} vs gradient {:?}",
                theta.shape(),
                grad.shape()
            )));
        }
        let decay = if cfg.l2_scope.applies_to(ParamRole::of(name)) {
            cfg.l2
        } else {
            0.0
        };
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
        for (((th, &g), mi), vi) in theta
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let g = g + decay * *th;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *th -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
