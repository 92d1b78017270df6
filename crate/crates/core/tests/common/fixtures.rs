//! Hand-set models, random instances and data collection for the
//! integration tests.

use mbae_core::diffcore::{Network, Tape, Var};
use mbae_core::envs::{EnvConfig, ParticleEnv};
use mbae_core::mbae::{StateValue, SuccessorModel};
use mbae_core::trainer::Experience;
use mbae_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `G(s, u, η) = s + u`.
pub struct Shift {
    pub noise_width: usize,
}

impl SuccessorModel for Shift {
    fn noise_width(&self) -> usize {
        self.noise_width
    }

    fn successor_on_tape(&self, tape: &mut Tape, s: Var, u: Var, _noise: Var) -> Result<Var> {
        tape.add(s, u)
    }
}

/// `V(x) = -‖x - g‖²`.
pub struct Bowl(pub Vec<f64>);

impl StateValue for Bowl {
    fn value_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (rows, _) = tape.shape(x);
        let g = tape.constant_rows(rows, self.0.len(), self.0.repeat(rows))?;
        let d = tape.sub(x, g)?;
        let sq = tape.square(d)?;
        let s = tape.row_sum(sq)?;
        tape.scale(s, -1.0)
    }
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Adds uniform noise to every parameter, biases included, so random
/// instances do not sit on the zero-bias initialisation.
pub fn jitter_params(net: &mut Network, rng: &mut ChaCha8Rng, scale: f64) {
    let p: Vec<f64> = net
        .flat_params()
        .into_iter()
        .map(|v| v + rng.random_range(-scale..scale))
        .collect();
    net.set_flat_params(&p).unwrap();
}

pub fn random_hidden(rng: &mut ChaCha8Rng, max_layers: usize, max_width: usize) -> Vec<usize> {
    let layers = rng.random_range(1..=max_layers);
    (0..layers).map(|_| rng.random_range(2..=max_width)).collect()
}

/// Random experiences of the given widths; roughly one in five is terminal.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, obs: usize, act: usize) -> Vec<Experience> {
    (0..n)
        .map(|_| Experience {
            state: uniform_vec(rng, obs, -1.0, 1.0),
            action: uniform_vec(rng, act, -1.0, 1.0),
            reward: rng.random_range(-1.0..1.0),
            next_state: uniform_vec(rng, obs, -1.0, 1.0),
            terminal: rng.random_bool(0.2),
        })
        .collect()
}

/// Transitions of uniformly random actions, split into `episodes` rollouts.
pub fn random_rollouts(env_cfg: &EnvConfig, episodes: usize, rng: &mut ChaCha8Rng) -> Vec<Experience> {
    let mut env = ParticleEnv::new(env_cfg.clone()).unwrap();
    let mut out = Vec::new();
    for _ in 0..episodes {
        let mut s = env.reset(rng).unwrap();
        loop {
            let u = uniform_vec(rng, env_cfg.dim, -1.0, 1.0);
            let st = env.step(&u).unwrap();
            out.push(Experience {
                state: s,
                action: u,
                reward: st.reward,
                next_state: st.next_state.clone(),
                terminal: st.terminal,
            });
            if st.terminal {
                break;
            }
            s = st.next_state;
        }
    }
    out
}

/// Expected return of the do-nothing policy, estimated over `episodes`
/// random placements.
pub fn zero_policy_return(env_cfg: &EnvConfig, episodes: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut env = ParticleEnv::new(env_cfg.clone()).unwrap();
    let zero = vec![0.0; env_cfg.dim];
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(rng).unwrap();
        loop {
            let st = env.step(&zero).unwrap();
            total += st.reward;
            if st.terminal {
                break;
            }
        }
    }
    total / episodes as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
