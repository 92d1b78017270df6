//! Extra value-function updates on transitions whose successors are
//! synthesized by the learned dynamics model.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dynamics::{sample_noise, DynamicsModel};
use crate::error::{Error, Result};
use crate::trainer::replay::{self, Experience};
use crate::valuefn::ValueNet;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardSource {
    /// Rewards predicted by the learned reward model.
    Learned,
    /// The rewards stored with the real transitions.
    Replayed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynaConfig {
    pub enabled: bool,
    pub synthetic_updates_per_real_update: usize,
    pub reward_source: RewardSource,
}

impl Default for DynaConfig {
    fn default() -> Self {
        DynaConfig {
            enabled: true,
            synthetic_updates_per_real_update: 1,
            reward_source: RewardSource::Learned,
        }
    }
}

impl DynaConfig {
    /// Synthetic updates to run after each real one.
    pub fn updates(&self) -> usize {
        if self.enabled {
            self.synthetic_updates_per_real_update
        } else {
            0
        }
    }
}

/// Copies `batch` with each successor replaced by `G(s, u, η)` (fresh `η`
/// per row) and, for [`RewardSource::Learned`], each reward by `R̂(s, u)`.
pub fn synthesize(
    model: &DynamicsModel,
    batch: &[Experience],
    source: RewardSource,
    rng: &mut dyn RngCore,
) -> Result<Vec<Experience>> {
    let states = replay::states(batch)?;
    let actions = replay::actions(batch)?;
    let noise = sample_noise(batch.len(), crate::mbae::SuccessorModel::noise_width(model), rng)?;
    let next = model.predict_successors(&states, &actions, &noise)?;
    let rewards = match source {
        RewardSource::Learned => model.predict_rewards(&states, &actions)?,
        RewardSource::Replayed => batch.iter().map(|e| e.reward).collect(),
    };
    Ok(batch
        .iter()
        .zip(rewards)
        .enumerate()
        .map(|(i, (e, reward))| Experience {
            state: e.state.clone(),
            action: e.action.clone(),
            reward,
            next_state: next.row_slice(i).to_vec(),
            terminal: e.terminal,
        })
        .collect())
}

/// One TD step on a synthetic copy of `batch`. Returns the pre-step loss.
pub fn dyna_update(
    value: &mut ValueNet,
    model: &DynamicsModel,
    batch: &[Experience],
    source: RewardSource,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("dyna_update needs a non-empty batch".into()));
    }
    let synthetic = synthesize(model, batch, source, rng)?;
    value.td_update(&synthetic)
}

/// Runs the configured number of synthetic updates and returns their mean
/// loss, or 0 when none ran.
pub fn dyna_phase(
    value: &mut ValueNet,
    model: &DynamicsModel,
    batch: &[Experience],
    cfg: &DynaConfig,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let n = cfg.updates();
    let mut total = 0.0;
    for _ in 0..n {
        total += dyna_update(value, model, batch, cfg.reward_source, rng)?;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
