//! Model-based action exploration: exploratory actions are nudged along the
//! gradient of the predicted successor's value with respect to the action.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::dynamics::sample_noise;
use crate::error::{Error, Result};
use crate::policy::{clip_action, GaussianPolicy};
use crate::schedule::Anneal;

/// A differentiable state-value function.
pub trait StateValue {
    /// Records `V(states)` on `tape` (eval mode), one row per state.
    fn value_on_tape(&self, tape: &mut Tape, states: Var) -> Result<Var>;
}

/// A differentiable, noise-conditioned successor model `G(s, u, η)`.
pub trait SuccessorModel {
    fn noise_width(&self) -> usize;

    /// Records `G(states, actions, noise)` on `tape` (eval mode).
    fn successor_on_tape(&self, tape: &mut Tape, states: Var, actions: Var, noise: Var) -> Result<Var>;
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Rescale the gradient to unit L2 norm.
    Unit,
    /// Rescale the gradient to the L2 norm of the policy's σ.
    PolicyStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbaeConfig {
    /// Probability of perturbing an exploratory step.
    pub p: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Episodes over which α anneals; defaults to the run length.
    pub alpha_horizon: Option<usize>,
    /// Scale of the half-normal jitter on the delta length.
    pub length_noise: f64,
    pub normalization: Normalization,
    /// Iterations of greedy action optimization.
    pub optimize_iters: usize,
}

impl Default for MbaeConfig {
    fn default() -> Self {
        MbaeConfig {
            p: 0.25,
            alpha_start: 1.0,
            alpha_end: 0.1,
            alpha_horizon: None,
            length_noise: 0.25,
            normalization: Normalization::PolicyStd,
            optimize_iters: 1,
        }
    }
}

impl MbaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config("mbae.p must lie in [0, 1]"));
        }
        for a in [self.alpha_start, self.alpha_end] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::config("mbae alpha must lie in (0, 1]"));
            }
        }
        if self.alpha_end > self.alpha_start {
            return Err(Error::config("mbae.alpha_end must not exceed alpha_start"));
        }
        if !(self.length_noise >= 0.0 && self.length_noise.is_finite()) {
            return Err(Error::config("mbae.length_noise must be non-negative"));
        }
        if self.optimize_iters == 0 {
            return Err(Error::config("mbae.optimize_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of one exploratory step.
#[derive(Clone, Debug, PartialEq)]
pub struct Exploration {
    pub action: Vec<f64>,
    /// `‖Δu‖` when the coin selected a model-based perturbation.
    pub delta_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explorer {
    cfg: MbaeConfig,
    schedule: Anneal,
    alpha: f64,
}

/// `∂V(G(s, u, η))/∂u` for a single state, action and noise vector.
pub fn raw_action_gradient(
    state: &[f64],
    action: &[f64],
    noise: &[f64],
    value: &dyn StateValue,
    model: &dyn SuccessorModel,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let s = tape.constant(&Tensor::row(state.to_vec())?)?;
    let u = tape.leaf(&Tensor::row(action.to_vec())?)?;
    let eta = tape.constant(&Tensor::row(noise.to_vec())?)?;
    let next = model.successor_on_tape(&mut tape, s, u, eta)?;
    let v = value.value_on_tape(&mut tape, next)?;
    if tape.shape(v) != (1, 1) {
        return Err(Error::Usage("value model must return one scalar per state".into()));
    }
    tape.backward(v, &[1.0])?;
    Ok(tape.grad(u).to_vec())
}

/// `V(G(s, u, η))` for a single state, action and noise vector.
pub fn predicted_value(
    state: &[f64],
    action: &[f64],
    noise: &[f64],
    value: &dyn StateValue,
    model: &dyn SuccessorModel,
) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(&Tensor::row(state.to_vec())?)?;
    let u = tape.constant(&Tensor::row(action.to_vec())?)?;
    let eta = tape.constant(&Tensor::row(noise.to_vec())?)?;
    let next = model.successor_on_tape(&mut tape, s, u, eta)?;
    let v = value.value_on_tape(&mut tape, next)?;
    Ok(tape.value(v)[0])
}

impl Explorer {
    pub fn new(cfg: MbaeConfig, horizon: usize) -> Result<Self> {
        cfg.validate()?;
        let schedule = Anneal::new(cfg.alpha_start, cfg.alpha_end, cfg.alpha_horizon.unwrap_or(horizon));
        Ok(Explorer {
            alpha: schedule.value_at(0),
            cfg,
            schedule,
        })
    }

    pub fn config(&self) -> &MbaeConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn schedule(&self) -> Anneal {
        self.schedule
    }

    /// Moves α to its annealed value for `episode`.
    pub fn set_episode(&mut self, episode: usize) {
        self.alpha = self.schedule.value_at(episode);
    }

    /// Scales `gradient` to the configured length, times `α·(1 + jitter)`.
    /// A zero gradient yields a zero delta.
    pub fn scale_gradient(&self, gradient: &[f64], sigma_norm: f64, jitter: f64) -> Result<Vec<f64>> {
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite action gradient"));
        }
        let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(vec![0.0; gradient.len()]);
        }
        let target = match self.cfg.normalization {
            Normalization::Unit => 1.0,
            Normalization::PolicyStd => sigma_norm,
        };
        let k = self.alpha * (1.0 + jitter.abs()) * target / norm;
        Ok(gradient.iter().map(|g| k * g).collect())
    }

    /// Delta around a given action with a given noise vector, drawing only
    /// the length jitter from `rng`.
    pub fn action_delta_at(
        &self,
        state: &[f64],
        action: &[f64],
        noise: &[f64],
        sigma_norm: f64,
        value: &dyn StateValue,
        model: &dyn SuccessorModel,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let g = raw_action_gradient(state, action, noise, value, model)?;
        let xi: f64 = StandardNormal.sample(rng);
        self.scale_gradient(&g, sigma_norm, self.cfg.length_noise * xi)
    }

    /// Samples `û` from the policy and `η ~ N(0, I)`, then returns the
    /// scaled value-through-model gradient at `(s, û, η)`.
    pub fn get_action_delta(
        &self,
        state: &[f64],
        policy: &GaussianPolicy,
        value: &dyn StateValue,
        model: &dyn SuccessorModel,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let u_hat = policy.sample_action(state, rng)?;
        let noise = sample_noise(1, model.noise_width(), rng)?.into_values();
        self.action_delta_at(state, &u_hat, &noise, policy.sigma_norm(), value, model, rng)
    }

    /// Gaussian exploration, perturbed with probability `p` by a
    /// model-based delta. The coin is drawn on every call.
    pub fn exploratory_action(
        &self,
        state: &[f64],
        policy: &GaussianPolicy,
        value: &dyn StateValue,
        model: &dyn SuccessorModel,
        rng: &mut dyn RngCore,
    ) -> Result<Exploration> {
        let mut action = policy.sample_action(state, rng)?;
        let coin: f64 = rng.random();
        if coin >= self.cfg.p {
            return Ok(Exploration { action, delta_norm: None });
        }
        let delta = self.get_action_delta(state, policy, value, model, rng)?;
        action.iter_mut().zip(&delta).for_each(|(u, d)| *u += d);
        clip_action(&mut action);
        Ok(Exploration {
            action,
            delta_norm: Some(delta.iter().map(|d| d * d).sum::<f64>().sqrt()),
        })
    }

    /// Greedy improvement: start at the policy mean and add
    /// `optimize_iters` deltas, each with fresh noise, clipping after each.
    pub fn optimize_action(
        &self,
        state: &[f64],
        policy: &GaussianPolicy,
        value: &dyn StateValue,
        model: &dyn SuccessorModel,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let start = policy.mean_action(state)?;
        let path = self.optimize_path(state, start, policy.sigma_norm(), value, model, rng)?;
        Ok(path.into_iter().last().unwrap_or_default())
    }

    /// Every iterate of the optimization, starting point included.
    pub fn optimize_path(
        &self,
        state: &[f64],
        start: Vec<f64>,
        sigma_norm: f64,
        value: &dyn StateValue,
        model: &dyn SuccessorModel,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>> {
        let mut path = vec![start];
        for _ in 0..self.cfg.optimize_iters {
            let u = path.last().expect("path starts non-empty");
            let noise = sample_noise(1, model.noise_width(), rng)?.into_values();
            let delta = self.action_delta_at(state, u, &noise, sigma_norm, value, model, rng)?;
            let mut next: Vec<f64> = u.iter().zip(&delta).map(|(u, d)| u + d).collect();
            clip_action(&mut next);
            path.push(next);
        }
        Ok(path)
    }
}
