use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// SGD or bias-corrected Adam over a fixed parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &[Tensor]) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {learning_rate} must be > 0")));
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Ok(Optimizer {
            kind,
            learning_rate,
            first_moment: zeros.clone(),
            second_moment: zeros,
            steps: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Usage("optimizer used with a different parameter set".into()));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let (v, g) = p.values_and_grad_mut();
                    v.iter_mut().zip(g.iter()).for_each(|(v, g)| *v -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for ((p, m), s) in params
                    .iter_mut()
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    let (v, g) = p.values_and_grad_mut();
                    for i in 0..v.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        s[i] = BETA2 * s[i] + (1.0 - BETA2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let shat = s[i] / c2;
                        v[i] -= lr * mhat / (shat.sqrt() + EPS);
                    }
                }
            }
        }
        for p in params.iter_mut() {
            if !p.values().iter().all(|v| v.is_finite()) {
                return Err(Error::numeric("optimizer produced a non-finite parameter"));
            }
            p.zero_grad();
        }
        Ok(())
    }

    /// Step counter followed by the flattened first and second moments.
    pub fn state(&self) -> Vec<f64> {
        let mut out = vec![self.steps as f64];
        out.extend(self.first_moment.iter().flatten());
        out.extend(self.second_moment.iter().flatten());
        out
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        let n: usize = self.first_moment.iter().map(Vec::len).sum();
        if state.len() != 1 + 2 * n {
            return Err(Error::Format(format!(
                "optimizer state has {} values, expected {}",
                state.len(),
                1 + 2 * n
            )));
        }
        self.steps = state[0] as u64;
        let mut off = 1;
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            let k = m.len();
            m.copy_from_slice(&state[off..off + k]);
            off += k;
        }
        Ok(())
    }
}
