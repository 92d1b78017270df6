//! N-dimensional continuous grid world: a point agent moves toward a target
//! inside a box arena, optionally blocked by axis-aligned box obstacles.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxObstacle {
    pub center: Vec<f64>,
    pub half_extent: Vec<f64>,
}

impl BoxObstacle {
    /// Strict interior test; the boundary counts as free space.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.center)
            .zip(&self.half_extent)
            .all(|((x, c), h)| (x - c).abs() < *h)
    }
}

/// Per-step reward before the goal bonus.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// `d_before - d_after`: positive when moving closer.
    Progress,
    /// `-d_after`: the distance itself, negated.
    NegativeDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dim: usize,
    pub low: f64,
    pub high: f64,
    pub step_scale: f64,
    pub max_steps: usize,
    pub goal_radius: f64,
    pub goal_bonus: f64,
    pub reward: RewardKind,
    pub obstacles: Vec<BoxObstacle>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dim: 10,
            low: -1.0,
            high: 1.0,
            step_scale: 0.1,
            max_steps: 64,
            goal_radius: 0.1,
            goal_bonus: 1.0,
            reward: RewardKind::Progress,
            obstacles: Vec::new(),
        }
    }
}

impl EnvConfig {
    pub fn with_dim(dim: usize) -> Self {
        EnvConfig {
            dim,
            ..EnvConfig::default()
        }
    }

    /// The 2D arena with a pair of box obstacles used for visualization.
    pub fn obstacle_2d() -> Self {
        EnvConfig {
            dim: 2,
            obstacles: vec![
                BoxObstacle {
                    center: vec![-0.4, 0.3],
                    half_extent: vec![0.15, 0.3],
                },
                BoxObstacle {
                    center: vec![0.45, -0.35],
                    half_extent: vec![0.25, 0.12],
                },
            ],
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("env.dim must be positive"));
        }
        if !(self.low < self.high) {
            return Err(Error::config("env.low must be below env.high"));
        }
        if !(self.step_scale > 0.0) {
            return Err(Error::config("env.step_scale must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps must be positive"));
        }
        if self.goal_radius < 0.0 {
            return Err(Error::config("env.goal_radius must be non-negative"));
        }
        for o in &self.obstacles {
            if o.center.len() != self.dim || o.half_extent.len() != self.dim {
                return Err(Error::config("obstacle dimension does not match env.dim"));
            }
        }
        Ok(())
    }

    pub fn observation_width(&self) -> usize {
        2 * self.dim
    }

    fn blocked(&self, p: &[f64]) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    /// Candidate position after applying `action` from `pos`; unchanged when
    /// the candidate falls inside an obstacle.
    fn advance(&self, pos: &[f64], action: &[f64]) -> Vec<f64> {
        let cand: Vec<f64> = pos
            .iter()
            .zip(action)
            .map(|(p, a)| (p + self.step_scale * a.clamp(-1.0, 1.0)).clamp(self.low, self.high))
            .collect();
        if self.blocked(&cand) {
            pos.to_vec()
        } else {
            cand
        }
    }

    /// Observation `(agent - target, agent)`.
    pub fn observe(&self, agent: &[f64], target: &[f64]) -> Vec<f64> {
        agent
            .iter()
            .zip(target)
            .map(|(a, t)| a - t)
            .chain(agent.iter().copied())
            .collect()
    }

    /// Ground-truth successor observation, without reward or termination.
    pub fn true_dynamics(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let (rel, agent) = obs.split_at(n);
        let next = self.advance(agent, action);
        let mut out: Vec<f64> = rel
            .iter()
            .zip(agent.iter().zip(&next))
            .map(|(r, (a, b))| r + (b - a))
            .collect();
        out.extend_from_slice(&next);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The observation `(agent - target, agent)` is the canonical state; the
/// relative part is advanced by the agent's displacement so that
/// [`EnvConfig::true_dynamics`] reproduces [`ParticleEnv::step`] exactly.
#[derive(Clone, Debug)]
pub struct ParticleEnv {
    config: EnvConfig,
    obs: Vec<f64>,
    target: Vec<f64>,
    steps: usize,
}

impl ParticleEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let n = config.dim;
        Ok(ParticleEnv {
            obs: vec![0.0; 2 * n],
            target: vec![0.0; n],
            steps: 0,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn observation_width(&self) -> usize {
        self.config.observation_width()
    }

    pub fn agent(&self) -> &[f64] {
        &self.obs[self.config.dim..]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn observation(&self) -> Vec<f64> {
        self.obs.clone()
    }

    /// Distance between agent and target.
    pub fn distance(&self) -> f64 {
        norm(&self.obs[..self.config.dim])
    }

    fn sample_free(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let (lo, hi) = (self.config.low, self.config.high);
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p: Vec<f64> = (0..self.config.dim).map(|_| rng.random_range(lo..hi)).collect();
            if !self.config.blocked(&p) {
                return Ok(p);
            }
        }
        Err(Error::config(format!(
            "no free position found in {MAX_PLACEMENT_ATTEMPTS} attempts; arena is over-full"
        )))
    }

    /// Places agent and target uniformly in free space.
    pub fn reset(&mut self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let agent = self.sample_free(rng)?;
        self.target = self.sample_free(rng)?;
        self.obs = self.config.observe(&agent, &self.target);
        self.steps = 0;
        Ok(self.observation())
    }

    /// Puts agent and target at explicit positions and zeroes the step counter.
    pub fn place(&mut self, agent: Vec<f64>, target: Vec<f64>) -> Result<Vec<f64>> {
        let n = self.config.dim;
        if agent.len() != n || target.len() != n {
            return Err(Error::config("placement dimension does not match env.dim"));
        }
        let inside = |p: &[f64]| p.iter().all(|&x| x >= self.config.low && x <= self.config.high);
        if !inside(&agent) || !inside(&target) || self.config.blocked(&agent) || self.config.blocked(&target) {
            return Err(Error::config("placement outside free space"));
        }
        self.obs = self.config.observe(&agent, &target);
        self.target = target;
        self.steps = 0;
        Ok(self.observation())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if action.len() != self.config.dim {
            return Err(Error::config(format!(
                "action width {} does not match env.dim {}",
                action.len(),
                self.config.dim
            )));
        }
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::numeric("non-finite action"));
        }
        if self.steps >= self.config.max_steps {
            return Err(Error::Usage("episode already finished; call reset".into()));
        }
        let before = self.distance();
        self.obs = self.config.true_dynamics(&self.obs, action);
        self.steps += 1;
        let after = self.distance();
        let reached = after < self.config.goal_radius;
        let mut reward = match self.config.reward {
            RewardKind::Progress => before - after,
            RewardKind::NegativeDistance => -after,
        };
        if reached {
            reward += self.config.goal_bonus;
        }
        Ok(StepResult {
            next_state: self.observation(),
            reward,
            terminal: reached || self.steps >= self.config.max_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wide_2d() -> ParticleEnv {
        ParticleEnv::new(EnvConfig {
            dim: 2,
            low: -5.0,
            high: 5.0,
            ..EnvConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn reset_places_inside_bounds() {
        let mut env = ParticleEnv::new(EnvConfig::with_dim(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            env.reset(&mut rng).unwrap();
            assert!(env.agent().iter().chain(env.target()).all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn reset_avoids_obstacles() {
        let cfg = EnvConfig::obstacle_2d();
        let mut env = ParticleEnv::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            env.reset(&mut rng).unwrap();
            assert!(!cfg.blocked(env.agent()) && !cfg.blocked(env.target()));
        }
    }

    #[test]
    fn over_full_arena_is_config_error() {
        let mut cfg = EnvConfig::with_dim(2);
        cfg.obstacles.push(BoxObstacle {
            center: vec![0.0, 0.0],
            half_extent: vec![2.0, 2.0],
        });
        let mut env = ParticleEnv::new(cfg).unwrap();
        let err = env.reset(&mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let mut a = ParticleEnv::new(EnvConfig::with_dim(3)).unwrap();
        let mut b = a.clone();
        let oa = a.reset(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let ob = b.reset(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(oa, ob);
    }

    #[test]
    fn progress_along_ray_is_rewarded() {
        let mut env = wide_2d();
        env.place(vec![0.0, 0.0], vec![3.0, 4.0]).unwrap();
        let r = env.step(&[0.6, 0.8]).unwrap();
        assert!((r.reward - 0.1).abs() < 1e-12);
        assert!(!r.terminal);
    }

    #[test]
    fn negative_distance_reward() {
        let mut env = ParticleEnv::new(EnvConfig {
            reward: RewardKind::NegativeDistance,
            ..wide_2d().config().clone()
        })
        .unwrap();
        env.place(vec![0.0, 0.0], vec![3.0, 4.0]).unwrap();
        let r = env.step(&[0.6, 0.8]).unwrap();
        assert!((r.reward + 4.9).abs() < 1e-12);
        env.place(vec![0.0, 0.0], vec![0.1, 0.0]).unwrap();
        let r = env.step(&[1.0, 0.0]).unwrap();
        assert!(r.terminal && r.reward == 1.0);
    }

    #[test]
    fn zero_action_does_nothing() {
        let mut env = wide_2d();
        let obs = env.place(vec![1.0, -1.0], vec![3.0, 4.0]).unwrap();
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.next_state, obs);
    }

    #[test]
    fn blocked_move_leaves_agent_in_place() {
        let mut cfg = EnvConfig::with_dim(2);
        cfg.obstacles.push(BoxObstacle {
            center: vec![0.3, 0.0],
            half_extent: vec![0.2, 0.2],
        });
        let mut env = ParticleEnv::new(cfg).unwrap();
        env.place(vec![0.05, 0.0], vec![0.9, 0.0]).unwrap();
        let r = env.step(&[1.0, 0.0]).unwrap();
        assert_eq!(env.agent(), &[0.05, 0.0]);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn actions_are_clipped_and_positions_bounded() {
        let mut env = ParticleEnv::new(EnvConfig::with_dim(2)).unwrap();
        env.place(vec![0.95, 0.0], vec![-0.5, 0.0]).unwrap();
        env.step(&[30.0, -4.0]).unwrap();
        assert_eq!(env.agent(), &[1.0, -0.1]);
    }

    #[test]
    fn non_finite_action_is_numeric_error() {
        let mut env = ParticleEnv::new(EnvConfig::with_dim(2)).unwrap();
        env.reset(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(env.step(&[f64::NAN, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn reaching_target_terminates_with_bonus() {
        let mut env = ParticleEnv::new(EnvConfig::with_dim(2)).unwrap();
        env.place(vec![0.0, 0.0], vec![0.1, 0.0]).unwrap();
        let r = env.step(&[1.0, 0.0]).unwrap();
        assert!(r.terminal);
        assert!((r.reward - 1.1).abs() < 1e-12);
    }

    #[test]
    fn horizon_terminates() {
        let mut cfg = EnvConfig::with_dim(2);
        cfg.max_steps = 3;
        let mut env = ParticleEnv::new(cfg).unwrap();
        env.place(vec![-0.9, -0.9], vec![0.9, 0.9]).unwrap();
        let flags: Vec<bool> = (0..3).map(|_| env.step(&[0.0, 0.0]).unwrap().terminal).collect();
        assert_eq!(flags, [false, false, true]);
        assert!(env.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn true_dynamics_free_space_and_clipping() {
        let cfg = EnvConfig::with_dim(2);
        let obs = cfg.observe(&[0.2, 0.3], &[-0.5, 0.5]);
        let next = cfg.true_dynamics(&obs, &[0.5, -1.0]);
        let expected = cfg.observe(&[0.25, 0.2], &[-0.5, 0.5]);
        for (a, b) in next.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let edge = cfg.observe(&[0.98, 0.0], &[0.0, 0.0]);
        let next = cfg.true_dynamics(&edge, &[1.0, 0.0]);
        assert_eq!(next[2], 1.0);
    }

    #[test]
    fn true_dynamics_matches_step() {
        let mut env = ParticleEnv::new(EnvConfig::obstacle_2d()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 1000 {
            let obs = env.reset(&mut rng).unwrap();
            let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
            let predicted = env.config().true_dynamics(&obs, &a);
            let r = env.step(&a).unwrap();
            assert_eq!(predicted, r.next_state);
            checked += 1;
        }
    }
}
