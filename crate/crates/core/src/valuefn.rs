//! State-value function trained by one-step temporal-difference regression.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Mode, Network, Optimizer, OptimizerKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mbae::StateValue;
use crate::trainer::replay::{self, Experience};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig {
            hidden: vec![128, 64],
            learning_rate: 1e-3,
            gamma: 0.9,
        }
    }
}

impl ValueConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("value.gamma must lie in [0, 1]"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("value.learning_rate must be positive"));
        }
        Ok(())
    }
}

/// `V(x)`: an MLP with a single linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    net: Network,
    opt: Optimizer,
    gamma: f64,
}

impl ValueNet {
    pub fn new(obs_width: usize, cfg: &ValueConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let net = Network::mlp(obs_width, &cfg.hidden, 1, Activation::Relu, rng)?;
        Self::from_network(net, OptimizerKind::Adam, cfg.learning_rate, cfg.gamma)
    }

    pub fn from_network(net: Network, kind: OptimizerKind, lr: f64, gamma: f64) -> Result<Self> {
        if net.output_width() != 1 {
            return Err(Error::config("value network must have exactly one output"));
        }
        let opt = Optimizer::new(kind, lr, net.params())?;
        Ok(ValueNet { net, opt, gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    pub fn optimizer_mut(&mut self) -> &mut Optimizer {
        &mut self.opt
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.predict(&Tensor::row(state.to_vec())?)?.values()[0])
    }

    pub fn values(&self, states: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.predict(states)?.into_values())
    }

    /// `r + γ·V(s')`, with `V(s') = 0` on terminal transitions.
    pub fn td_targets(&self, batch: &[Experience]) -> Result<Vec<f64>> {
        let next = self.values(&replay::next_states(batch)?)?;
        Ok(batch
            .iter()
            .zip(next)
            .map(|(e, v)| if e.terminal { e.reward } else { e.reward + self.gamma * v })
            .collect())
    }

    /// One optimizer step on the mean squared TD error with a detached
    /// bootstrap target. Returns the pre-step loss.
    pub fn td_update(&mut self, batch: &[Experience]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("td_update needs a non-empty batch".into()));
        }
        let targets = self.td_targets(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(&replay::states(batch)?)?;
        let fwd = self.net.forward(&mut tape, x, &mut Mode::Eval)?;
        let t = tape.constant_rows(batch.len(), 1, targets)?;
        let diff = tape.sub(fwd.output, t)?;
        let sq = tape.square(diff)?;
        let loss = tape.mean(sq)?;
        let value = tape.value(loss)[0];
        tape.backward(loss, &[1.0])?;
        self.net.accumulate_grads(&tape, &fwd);
        self.opt.step(self.net.params_mut())?;
        Ok(value)
    }

    /// One-step advantage estimate `r + γ·V(s') - V(s)`.
    pub fn advantage(&self, e: &Experience) -> Result<f64> {
        Ok(self.advantages(std::slice::from_ref(e))?[0])
    }

    pub fn advantages(&self, batch: &[Experience]) -> Result<Vec<f64>> {
        let targets = self.td_targets(batch)?;
        let v = self.values(&replay::states(batch)?)?;
        Ok(targets.iter().zip(v).map(|(t, v)| t - v).collect())
    }

    /// `∂V/∂state`.
    pub fn state_gradient(&self, state: &[f64]) -> Result<Vec<f64>> {
        let g = self
            .net
            .grad_wrt_input(&Tensor::row(state.to_vec())?, &Tensor::scalar(1.0))?;
        Ok(g.into_values())
    }
}

impl StateValue for ValueNet {
    fn value_on_tape(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        Ok(self.net.forward(tape, states, &mut Mode::Eval)?.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(s: f64, r: f64, s2: f64, terminal: bool) -> Experience {
        Experience {
            state: vec![s],
            action: vec![0.0],
            reward: r,
            next_state: vec![s2],
            terminal,
        }
    }

    fn small(gamma: f64, lr: f64) -> ValueNet {
        let cfg = ValueConfig {
            hidden: vec![16, 16],
            learning_rate: lr,
            gamma,
        };
        ValueNet::new(1, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn zero_output_layer_gives_zero_value() {
        let mut v = small(0.9, 1e-3);
        v.network_mut().zero_output_layer();
        for s in [-3.0, 0.0, 2.5] {
            assert_eq!(v.value(&[s]).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_baseline_advantage_is_reward() {
        let mut v = small(0.9, 1e-3);
        v.network_mut().zero_output_layer();
        assert_eq!(v.advantage(&exp(0.3, 0.7, 0.1, false)).unwrap(), 0.7);
    }

    #[test]
    fn undiscounted_regression_with_zero_gamma() {
        let mut v = small(0.0, 3e-3);
        let batch = [exp(-0.5, 1.0, 0.0, false), exp(0.5, -1.0, 0.0, false)];
        for _ in 0..2000 {
            v.td_update(&batch).unwrap();
        }
        assert!((v.value(&[-0.5]).unwrap() - 1.0).abs() < 1e-2);
        assert!((v.value(&[0.5]).unwrap() + 1.0).abs() < 1e-2);
    }

    #[test]
    fn terminal_batch_regresses_onto_reward() {
        let mut v = small(0.9, 3e-3);
        let batch = [exp(0.2, 0.4, 0.9, true)];
        for _ in 0..1000 {
            v.td_update(&batch).unwrap();
        }
        assert!((v.value(&[0.2]).unwrap() - 0.4).abs() < 1e-3);
    }

    #[test]
    fn loss_decreases_over_a_window() {
        let mut v = small(0.9, 1e-3);
        let batch: Vec<_> = (0..8)
            .map(|i| exp(i as f64 / 8.0, (i % 3) as f64 - 1.0, (i + 1) as f64 / 8.0, i == 7))
            .collect();
        let mut window = Vec::new();
        for _ in 0..300 {
            window.push(v.td_update(&batch).unwrap());
        }
        let first: f64 = window[..100].iter().sum();
        let last: f64 = window[200..].iter().sum();
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut v = small(0.9, 1e-3);
        assert!(v.td_update(&[]).is_err());
    }
}
