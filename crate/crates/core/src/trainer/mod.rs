//! The outer training loop: episode simulation, experience replay and the
//! interleaved value, policy, dynamics and DYNA updates.

mod checkpoint;
pub mod replay;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyna::{self, DynaConfig};
use crate::dynamics::{DynamicsConfig, DynamicsLosses, DynamicsModel};
use crate::envs::{EnvConfig, ParticleEnv};
use crate::error::{Error, Result};
use crate::mbae::{Explorer, MbaeConfig};
use crate::policy::{GaussianPolicy, PolicyConfig};
use crate::valuefn::{ValueConfig, ValueNet};
pub use replay::{Experience, ReplayBuffer};

/// Stream of the training generator (env resets, exploration, sampling).
pub const TRAIN_STREAM: u64 = 0;
/// Stream of the greedy-evaluation generator.
pub const EVAL_STREAM: u64 = 1;
/// Stream of the model generator (dynamics init, GAN noise, DYNA noise).
pub const MODEL_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub episodes: usize,
    pub batch_size: usize,
    pub updates_per_episode: usize,
    pub buffer_capacity: usize,
    /// Greedy evaluation runs after every `eval_every` episodes.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Greedy evaluation refines the policy mean by action optimization.
    pub optimize_eval: bool,
    /// Forces dynamics training on or off; by default it runs whenever a
    /// consumer (MBAE, DYNA or optimized evaluation) is active.
    pub train_dynamics: Option<bool>,
    /// Dynamics steps on the buffer after the first episode.
    pub pretrain_dynamics_steps: usize,
    pub env: EnvConfig,
    pub value: ValueConfig,
    pub policy: PolicyConfig,
    pub dynamics: DynamicsConfig,
    pub mbae: MbaeConfig,
    pub dyna: DynaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            episodes: 1000,
            batch_size: 64,
            updates_per_episode: 32,
            buffer_capacity: 1 << 16,
            eval_every: 10,
            eval_episodes: 5,
            optimize_eval: false,
            train_dynamics: None,
            pretrain_dynamics_steps: 0,
            env: EnvConfig::default(),
            value: ValueConfig::default(),
            policy: PolicyConfig::default(),
            dynamics: DynamicsConfig::default(),
            mbae: MbaeConfig::default(),
            dyna: DynaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("buffer_capacity must be at least 1"));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::config("eval_every and eval_episodes must be at least 1"));
        }
        self.env.validate()?;
        self.value.validate()?;
        self.policy.validate()?;
        self.dynamics.validate()?;
        self.mbae.validate()
    }

    pub fn trains_dynamics(&self) -> bool {
        self.train_dynamics
            .unwrap_or(self.mbae.p > 0.0 || self.dyna.updates() > 0 || self.optimize_eval)
    }
}

/// One point of a learning curve, emitted after each evaluation. Losses,
/// MBAE counts and delta norms summarize the episodes since the previous
/// record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub episode: usize,
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub reward_loss: f64,
    pub mbae_steps: u64,
    pub mean_delta_norm: f64,
    pub dyna_loss: f64,
}

impl RunRecord {
    pub const FIELDS: [&'static str; 12] = [
        "episode",
        "env_steps",
        "mean_return",
        "std_return",
        "value_loss",
        "policy_loss",
        "gen_loss",
        "disc_loss",
        "reward_loss",
        "mbae_steps",
        "mean_delta_norm",
        "dyna_loss",
    ];

    pub(crate) fn to_array(&self) -> [f64; 12] {
        [
            self.episode as f64,
            self.env_steps as f64,
            self.mean_return,
            self.std_return,
            self.value_loss,
            self.policy_loss,
            self.gen_loss,
            self.disc_loss,
            self.reward_loss,
            self.mbae_steps as f64,
            self.mean_delta_norm,
            self.dyna_loss,
        ]
    }

    pub(crate) fn from_array(a: &[f64]) -> Self {
        RunRecord {
            episode: a[0] as usize,
            env_steps: a[1] as u64,
            mean_return: a[2],
            std_return: a[3],
            value_loss: a[4],
            policy_loss: a[5],
            gen_loss: a[6],
            disc_loss: a[7],
            reward_loss: a[8],
            mbae_steps: a[9] as u64,
            mean_delta_norm: a[10],
            dyna_loss: a[11],
        }
    }
}

/// How actions are chosen during an episode.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum EpisodeMode {
    Explore,
    Greedy,
    /// Greedy mean refined by action optimization.
    Optimize,
}

/// Per-episode MBAE statistics.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub mbae_steps: u64,
    pub delta_norm_sum: f64,
}

/// Steps an already-reset env until it terminates. Returns the trajectory,
/// its undiscounted return and MBAE statistics.
pub fn run_episode(
    env: &mut ParticleEnv,
    policy: &GaussianPolicy,
    value: &ValueNet,
    model: &DynamicsModel,
    explorer: &Explorer,
    mode: EpisodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Experience>, f64, EpisodeStats)> {
    let mut trajectory = Vec::with_capacity(env.config().max_steps);
    let mut stats = EpisodeStats::default();
    let mut total = 0.0;
    let mut state = env.observation();
    loop {
        let action = match mode {
            EpisodeMode::Greedy => policy.mean_action(&state)?,
            EpisodeMode::Optimize => explorer.optimize_action(&state, policy, value, model, rng)?,
            EpisodeMode::Explore => {
                let x = explorer.exploratory_action(&state, policy, value, model, rng)?;
                if let Some(n) = x.delta_norm {
                    stats.mbae_steps += 1;
                    stats.delta_norm_sum += n;
                }
                x.action
            }
        };
        let step = env.step(&action)?;
        total += step.reward;
        let next = step.next_state.clone();
        trajectory.push(Experience {
            state,
            action,
            reward: step.reward,
            next_state: step.next_state,
            terminal: step.terminal,
        });
        if step.terminal {
            break;
        }
        state = next;
    }
    Ok((trajectory, total, stats))
}

/// Loss and MBAE sums over the episodes since the last record.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Window {
    pub updates: u64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub reward_loss: f64,
    pub dyna_loss: f64,
    pub mbae_steps: u64,
    pub delta_norm_sum: f64,
}

impl Window {
    pub(crate) const LEN: usize = 9;

    pub(crate) fn to_array(&self) -> [f64; Self::LEN] {
        [
            self.updates as f64,
            self.value_loss,
            self.policy_loss,
            self.gen_loss,
            self.disc_loss,
            self.reward_loss,
            self.dyna_loss,
            self.mbae_steps as f64,
            self.delta_norm_sum,
        ]
    }

    pub(crate) fn from_array(a: &[f64]) -> Self {
        Window {
            updates: a[0] as u64,
            value_loss: a[1],
            policy_loss: a[2],
            gen_loss: a[3],
            disc_loss: a[4],
            reward_loss: a[5],
            dyna_loss: a[6],
            mbae_steps: a[7] as u64,
            delta_norm_sum: a[8],
        }
    }
}

/// Complete state of one seeded training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    env: ParticleEnv,
    eval_env: ParticleEnv,
    policy: GaussianPolicy,
    value: ValueNet,
    dynamics: DynamicsModel,
    explorer: Explorer,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    model_rng: ChaCha8Rng,
    episode: usize,
    env_steps: u64,
    window: Window,
    max_abs_value: f64,
    records: Vec<RunRecord>,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, TRAIN_STREAM);
        let mut model_rng = stream(cfg.seed, MODEL_STREAM);
        let obs = cfg.env.observation_width();
        let act = cfg.env.dim;
        let value = ValueNet::new(obs, &cfg.value, &mut rng)?;
        let policy = GaussianPolicy::new(obs, act, &cfg.policy, cfg.episodes, &mut rng)?;
        let dynamics = DynamicsModel::new(obs, act, &cfg.dynamics, &mut model_rng)?;
        let explorer = Explorer::new(cfg.mbae.clone(), cfg.episodes)?;
        Ok(Trainer {
            env: ParticleEnv::new(cfg.env.clone())?,
            eval_env: ParticleEnv::new(cfg.env.clone())?,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            eval_rng: stream(cfg.seed, EVAL_STREAM),
            policy,
            value,
            dynamics,
            explorer,
            rng,
            model_rng,
            episode: 0,
            env_steps: 0,
            window: Window::default(),
            max_abs_value: 0.0,
            records: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn is_done(&self) -> bool {
        self.episode >= self.cfg.episodes
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn value(&self) -> &ValueNet {
        &self.value
    }

    pub fn dynamics(&self) -> &DynamicsModel {
        &self.dynamics
    }

    pub fn explorer(&self) -> &Explorer {
        &self.explorer
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Largest `|V(s)|` seen on sampled batch states so far.
    pub fn max_abs_value(&self) -> f64 {
        self.max_abs_value
    }

    /// Trains until the configured episode count and returns the curve.
    pub fn train(&mut self) -> Result<Vec<RunRecord>> {
        while !self.is_done() {
            self.train_episode()?;
        }
        Ok(self.records.clone())
    }

    /// Runs up to `n` more episodes.
    pub fn train_for(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.is_done() {
                break;
            }
            self.train_episode()?;
        }
        Ok(())
    }

    /// One exploratory episode, its update rounds and, on schedule, a
    /// greedy evaluation. Failures are tagged with the episode index.
    pub fn train_episode(&mut self) -> Result<()> {
        let episode = self.episode;
        self.train_episode_inner().map_err(|e| Error::Aborted {
            episode,
            source: Box::new(e),
        })
    }

    fn train_episode_inner(&mut self) -> Result<()> {
        self.policy.set_episode(self.episode);
        self.explorer.set_episode(self.episode);
        self.env.reset(&mut self.rng)?;
        let (trajectory, _, stats) = run_episode(
            &mut self.env,
            &self.policy,
            &self.value,
            &self.dynamics,
            &self.explorer,
            EpisodeMode::Explore,
            &mut self.rng,
        )?;
        self.env_steps += trajectory.len() as u64;
        self.window.mbae_steps += stats.mbae_steps;
        self.window.delta_norm_sum += stats.delta_norm_sum;
        for e in trajectory {
            self.buffer.push(e);
        }
        if self.episode == 0 && self.cfg.trains_dynamics() {
            for _ in 0..self.cfg.pretrain_dynamics_steps {
                let batch = self.buffer.sample(self.cfg.batch_size, &mut self.model_rng);
                self.dynamics.train_step(&batch, &mut self.model_rng)?;
            }
        }
        if self.buffer.len() >= self.cfg.batch_size {
            for _ in 0..self.cfg.updates_per_episode {
                self.update_round()?;
            }
        }
        self.episode += 1;
        if self.episode % self.cfg.eval_every == 0 {
            self.record()?;
        }
        Ok(())
    }

    /// Samples a batch and applies, in order: TD update, CACLA update on the
    /// post-update advantages, dynamics step and DYNA updates.
    fn update_round(&mut self) -> Result<()> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng);
        self.window.value_loss += self.value.td_update(&batch)?;
        let targets = self.value.td_targets(&batch)?;
        let values = self.value.values(&replay::states(&batch)?)?;
        for v in &values {
            self.max_abs_value = self.max_abs_value.max(v.abs());
        }
        let advantages: Vec<f64> = targets.iter().zip(&values).map(|(t, v)| t - v).collect();
        self.window.policy_loss += self.policy.cacla_update(&batch, &advantages)?;
        if self.cfg.trains_dynamics() {
            let DynamicsLosses {
                generator,
                discriminator,
                reward,
            } = self.dynamics.train_step(&batch, &mut self.model_rng)?;
            self.window.gen_loss += generator;
            self.window.disc_loss += discriminator;
            self.window.reward_loss += reward;
        }
        self.window.dyna_loss +=
            dyna::dyna_phase(&mut self.value, &self.dynamics, &batch, &self.cfg.dyna, &mut self.model_rng)?;
        self.window.updates += 1;
        Ok(())
    }

    /// Mean and population std of greedy returns over the configured number
    /// of evaluation episodes, drawn from the evaluation stream.
    pub fn evaluate(&mut self) -> Result<(f64, f64)> {
        self.evaluate_episodes(self.cfg.eval_episodes, self.cfg.optimize_eval)
    }

    /// Like [`Trainer::evaluate`] with an explicit episode count and mode.
    pub fn evaluate_episodes(&mut self, episodes: usize, optimize: bool) -> Result<(f64, f64)> {
        let mode = if optimize {
            EpisodeMode::Optimize
        } else {
            EpisodeMode::Greedy
        };
        let mut returns = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            self.eval_env.reset(&mut self.eval_rng)?;
            let (_, ret, _) = run_episode(
                &mut self.eval_env,
                &self.policy,
                &self.value,
                &self.dynamics,
                &self.explorer,
                mode,
                &mut self.eval_rng,
            )?;
            returns.push(ret);
        }
        Ok(mean_std(&returns))
    }

    fn record(&mut self) -> Result<()> {
        let (mean_return, std_return) = self.evaluate()?;
        let w = std::mem::take(&mut self.window);
        let per_update = |x: f64| if w.updates == 0 { 0.0 } else { x / w.updates as f64 };
        self.records.push(RunRecord {
            episode: self.episode,
            env_steps: self.env_steps,
            mean_return,
            std_return,
            value_loss: per_update(w.value_loss),
            policy_loss: per_update(w.policy_loss),
            gen_loss: per_update(w.gen_loss),
            disc_loss: per_update(w.disc_loss),
            reward_loss: per_update(w.reward_loss),
            mbae_steps: w.mbae_steps,
            mean_delta_norm: if w.mbae_steps == 0 {
                0.0
            } else {
                w.delta_norm_sum / w.mbae_steps as f64
            },
            dyna_loss: per_update(w.dyna_loss),
        });
        Ok(())
    }
}

/// Mean and population standard deviation; `(0, 0)` for no samples.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Builds a trainer and runs it to completion.
pub fn train(cfg: TrainConfig) -> Result<Vec<RunRecord>> {
    Trainer::new(cfg)?.train()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            episodes: 6,
            batch_size: 16,
            updates_per_episode: 2,
            eval_every: 2,
            eval_episodes: 2,
            env: EnvConfig {
                max_steps: 12,
                ..EnvConfig::with_dim(2)
            },
            value: ValueConfig {
                hidden: vec![16],
                ..ValueConfig::default()
            },
            policy: PolicyConfig {
                hidden: vec![16],
                ..PolicyConfig::default()
            },
            dynamics: DynamicsConfig {
                block_width: 16,
                discriminator_hidden: vec![16],
                reward_hidden: vec![16],
                ..DynamicsConfig::default()
            },
            mbae: MbaeConfig { p: 0.5, ..MbaeConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_episodes_give_empty_curve() {
        let cfg = TrainConfig { episodes: 0, ..tiny(0) };
        let mut t = Trainer::new(cfg).unwrap();
        assert!(t.train().unwrap().is_empty());
        assert_eq!(t.buffer().len(), 0);
        assert_eq!(t.value().optimizer().steps(), 0);
    }

    #[test]
    fn records_follow_eval_cadence() {
        let recs = train(tiny(1)).unwrap();
        assert_eq!(recs.iter().map(|r| r.episode).collect::<Vec<_>>(), vec![2, 4, 6]);
        assert!(recs.windows(2).all(|w| w[0].env_steps <= w[1].env_steps));
        assert!(recs.iter().any(|r| r.mbae_steps > 0));
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        assert_eq!(train(tiny(7)).unwrap(), train(tiny(7)).unwrap());
        assert_ne!(train(tiny(7)).unwrap(), train(tiny(8)).unwrap());
    }

    #[test]
    fn trajectories_respect_horizon() {
        let mut t = Trainer::new(tiny(2)).unwrap();
        t.train().unwrap();
        assert!(t.env_steps() <= 6 * 12);
        assert!(t.buffer().iter().all(Experience::is_valid));
    }

    #[test]
    fn zero_policy_greedy_episode_returns_zero() {
        let mut t = Trainer::new(tiny(3)).unwrap();
        t.policy.network_mut().zero_output_layer();
        t.env.reset(&mut t.rng).unwrap();
        let (traj, ret, _) = run_episode(
            &mut t.env,
            &t.policy,
            &t.value,
            &t.dynamics,
            &t.explorer,
            EpisodeMode::Greedy,
            &mut t.rng,
        )
        .unwrap();
        assert_eq!(ret, 0.0);
        assert_eq!(traj.len(), 12);
    }

    #[test]
    fn dynamics_only_trained_when_consumed() {
        let mut cfg = tiny(4);
        cfg.mbae.p = 0.0;
        cfg.dyna.enabled = false;
        assert!(!cfg.trains_dynamics());
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.dynamics().clone();
        t.train().unwrap();
        assert_eq!(t.dynamics(), &before);
    }
}
