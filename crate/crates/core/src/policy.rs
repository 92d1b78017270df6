//! Gaussian policy with an MLP mean and a state-independent, annealed
//! exploration deviation, trained with the CACLA rule.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Forward, Mode, Network, Optimizer, OptimizerKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::schedule::Anneal;
use crate::trainer::replay::Experience;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Episodes over which σ anneals; defaults to the run length.
    pub sigma_horizon: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![128, 64],
            learning_rate: 1e-3,
            sigma_start: 0.4,
            sigma_end: 0.1,
            sigma_horizon: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_start > 0.0 && self.sigma_end > 0.0) {
            return Err(Error::config("policy sigma must stay positive"));
        }
        if self.sigma_end > self.sigma_start {
            return Err(Error::config("policy.sigma_end must not exceed sigma_start"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("policy.learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    net: Network,
    opt: Optimizer,
    sigma: Vec<f64>,
    schedule: Anneal,
}

impl GaussianPolicy {
    pub fn new(
        obs_width: usize,
        action_width: usize,
        cfg: &PolicyConfig,
        horizon: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        cfg.validate()?;
        let net = Network::mlp(obs_width, &cfg.hidden, action_width, Activation::Relu, rng)?;
        let schedule = Anneal::new(cfg.sigma_start, cfg.sigma_end, cfg.sigma_horizon.unwrap_or(horizon));
        Self::from_network(net, OptimizerKind::Adam, cfg.learning_rate, schedule)
    }

    /// The mean is `tanh(net(x))`; `net` must end in a dense layer.
    pub fn from_network(net: Network, kind: OptimizerKind, lr: f64, schedule: Anneal) -> Result<Self> {
        if !(schedule.start > 0.0 && schedule.end > 0.0) {
            return Err(Error::config("policy sigma must stay positive"));
        }
        let opt = Optimizer::new(kind, lr, net.params())?;
        let sigma = vec![schedule.value_at(0); net.output_width()];
        Ok(GaussianPolicy { net, opt, sigma, schedule })
    }

    pub fn action_width(&self) -> usize {
        self.net.output_width()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_norm(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn schedule(&self) -> Anneal {
        self.schedule
    }

    /// Moves σ to its annealed value for `episode`.
    pub fn set_episode(&mut self, episode: usize) {
        let s = self.schedule.value_at(episode);
        self.sigma.iter_mut().for_each(|v| *v = s);
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

    fn mean_on_tape(&self, tape: &mut Tape, states: Var) -> Result<Forward> {
        let mut fwd = self.net.forward(tape, states, &mut Mode::Eval)?;
        fwd.output = tape.tanh(fwd.output)?;
        Ok(fwd)
    }

    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::row(state.to_vec())?)?;
        let fwd = self.mean_on_tape(&mut tape, x)?;
        Ok(tape.value(fwd.output).to_vec())
    }

    /// `mean + σ·ξ` with `ξ ~ N(0, I)`, before clipping.
    pub fn sample_unclipped(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut u = self.mean_action(state)?;
        for (u, s) in u.iter_mut().zip(&self.sigma) {
            let xi: f64 = StandardNormal.sample(rng);
            *u += s * xi;
        }
        Ok(u)
    }

    pub fn sample_action(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut u = self.sample_unclipped(state, rng)?;
        clip_action(&mut u);
        Ok(u)
    }

    /// CACLA actor step: regress the mean toward the executed action on
    /// samples whose advantage is positive. Returns the masked loss; with no
    /// positive sample nothing is touched and 0 is returned.
    pub fn cacla_update(&mut self, batch: &[Experience], advantages: &[f64]) -> Result<f64> {
        if batch.len() != advantages.len() {
            return Err(Error::Usage("one advantage per experience is required".into()));
        }
        let positive: Vec<&Experience> = batch
            .iter()
            .zip(advantages)
            .filter(|(_, &a)| a > 0.0)
            .map(|(e, _)| e)
            .collect();
        if positive.is_empty() {
            return Ok(0.0);
        }
        let states = Tensor::from_rows(&positive.iter().map(|e| &e.state[..]).collect::<Vec<_>>())?;
        let actions = Tensor::from_rows(&positive.iter().map(|e| &e.action[..]).collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let x = tape.constant(&states)?;
        let fwd = self.mean_on_tape(&mut tape, x)?;
        let target = tape.constant(&actions)?;
        let diff = tape.sub(fwd.output, target)?;
        let sq = tape.square(diff)?;
        let per_sample = tape.row_sum(sq)?;
        let loss = tape.mean(per_sample)?;
        let value = tape.value(loss)[0];
        tape.backward(loss, &[1.0])?;
        self.net.accumulate_grads(&tape, &fwd);
        self.opt.step(self.net.params_mut())?;
        Ok(value)
    }
}

pub fn clip_action(u: &mut [f64]) {
    u.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn policy(sigma: f64) -> GaussianPolicy {
        let cfg = PolicyConfig {
            hidden: vec![32, 16],
            learning_rate: 1e-3,
            sigma_start: sigma,
            sigma_end: sigma,
            sigma_horizon: Some(0),
        };
        GaussianPolicy::new(4, 2, &cfg, 100, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    fn exp(state: Vec<f64>, action: Vec<f64>) -> Experience {
        Experience {
            state,
            action,
            reward: 0.0,
            next_state: vec![0.0; 4],
            terminal: false,
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_action() {
        let mut p = policy(0.3);
        p.network_mut().zero_output_layer();
        assert_eq!(p.mean_action(&[0.3, -1.0, 2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mean_is_bounded_and_deterministic() {
        let p = policy(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-50.0..50.0)).collect();
            let a = p.mean_action(&s).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(a, p.mean_action(&s).unwrap());
        }
    }

    #[test]
    fn tiny_sigma_sample_equals_mean() {
        let p = policy(1e-300);
        let s = [0.1, 0.2, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(p.sample_action(&s, &mut rng).unwrap(), p.mean_action(&s).unwrap());
    }

    #[test]
    fn empirical_std_matches_sigma() {
        let sigma = 0.25;
        let p = policy(sigma);
        let s = [0.1, -0.2, 0.3, 0.0];
        let mean = p.mean_action(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let u = p.sample_unclipped(&s, &mut rng).unwrap();
            sum_sq += (u[0] - mean[0]).powi(2);
        }
        let std = (sum_sq / n as f64).sqrt();
        assert!((std - sigma).abs() / sigma < 0.02, "std {std}");
    }

    #[test]
    fn seeded_samples_reproduce() {
        let p = policy(0.3);
        let s = [0.5; 4];
        let a = p.sample_action(&s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = p.sample_action(&s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_positive_advantages_leave_parameters_untouched() {
        let mut p = policy(0.3);
        let before = p.clone();
        let batch = vec![exp(vec![0.1; 4], vec![0.5, 0.5]), exp(vec![0.2; 4], vec![-0.5, 0.1])];
        let loss = p.cacla_update(&batch, &[0.0, -1.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn positive_sample_pulls_mean_to_action() {
        let mut p = policy(0.3);
        let s = vec![0.3, -0.1, 0.2, 0.9];
        let target = vec![0.6, -0.4];
        let batch = vec![exp(s.clone(), target.clone())];
        for _ in 0..1500 {
            p.cacla_update(&batch, &[1.0]).unwrap();
        }
        let mu = p.mean_action(&s).unwrap();
        for (m, t) in mu.iter().zip(&target) {
            assert!((m - t).abs() < 1e-2, "{mu:?}");
        }
    }

    #[test]
    fn negative_duplicates_are_masked_out() {
        let s = vec![0.3, -0.1, 0.2, 0.9];
        let good = exp(s.clone(), vec![0.6, -0.4]);
        let bad = exp(s.clone(), vec![-0.9, 0.9]);
        let mut a = policy(0.3);
        let mut b = a.clone();
        for _ in 0..300 {
            a.cacla_update(&[good.clone()], &[1.0]).unwrap();
            b.cacla_update(&[good.clone(), bad.clone(), bad.clone()], &[1.0, -0.5, 0.0]).unwrap();
        }
        assert_eq!(a.mean_action(&s).unwrap(), b.mean_action(&s).unwrap());
    }

    #[test]
    fn sigma_anneals_monotonically_to_final() {
        let cfg = PolicyConfig::default();
        let mut p = GaussianPolicy::new(4, 2, &cfg, 40, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut prev = f64::INFINITY;
        for e in 0..=50 {
            p.set_episode(e);
            assert!(p.sigma()[0] > 0.0 && p.sigma()[0] <= prev);
            prev = p.sigma()[0];
        }
        assert_eq!(prev, cfg.sigma_end);
    }
}
