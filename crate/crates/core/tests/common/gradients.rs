//! Random-instance gradient checks. Each function builds one instance from
//! `rng` and returns the worst violation ratio of the analytic gradient
//! against central differences (≤ 1 passes).
//!
//! Parameter gradients of the training steps are read back from the
//! parameter change of a plain SGD step with learning rate 1, so the checked
//! quantity is exactly what the update consumed.

use mbae_core::diffcore::{Activation, LayerSpec, Mode, Network, OptimizerKind, Tensor};
use mbae_core::dynamics::{sample_noise, DynamicsConfig, DynamicsModel};
use mbae_core::mbae::{predicted_value, raw_action_gradient, SuccessorModel};
use mbae_core::policy::GaussianPolicy;
use mbae_core::schedule::Anneal;
use mbae_core::trainer::Experience;
use mbae_core::valuefn::{ValueConfig, ValueNet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::fixtures::{jitter_params, normal_vec, random_batch, random_hidden, uniform_vec};
use super::{central_diff, worst_violation};

pub const INSTANCES: usize = 20;

fn rows(batch: &[Experience], f: impl Fn(&Experience) -> Vec<f64>) -> Tensor {
    Tensor::from_rows(&batch.iter().map(f).collect::<Vec<_>>()).unwrap()
}

fn param_delta(before: &Network, after: &Network) -> Vec<f64> {
    before
        .flat_params()
        .iter()
        .zip(after.flat_params())
        .map(|(a, b)| a - b)
        .collect()
}

/// Central differences of `loss` over the flattened parameters of `net`.
fn param_fd(net: &Network, mut loss: impl FnMut(&Network) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    central_diff(&net.flat_params(), |p| {
        probe.set_flat_params(p).unwrap();
        loss(&probe)
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// A random concat-skip generator body followed by a dense output layer.
pub fn random_generator(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Network {
    let blocks = rng.random_range(1..=3);
    let mut specs: Vec<LayerSpec> = (0..blocks)
        .map(|_| LayerSpec::ConcatSkip {
            width: rng.random_range(2..=6),
            activation: if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh },
            dropout: 0.0,
        })
        .collect();
    specs.push(LayerSpec::Dense { width: output });
    let mut net = Network::new(input, &specs, rng).unwrap();
    jitter_params(&mut net, rng, 0.2);
    net
}

fn random_mlp(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Network {
    let hidden = random_hidden(rng, 3, 8);
    let act = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let mut net = Network::mlp(input, &hidden, output, act, rng).unwrap();
    jitter_params(&mut net, rng, 0.2);
    net
}

/// TD-regression parameter gradient of the value network.
pub fn value_params(rng: &mut ChaCha8Rng) -> f64 {
    let obs = rng.random_range(2..=6);
    let net = random_mlp(rng, obs, 1);
    let gamma = rng.random_range(0.0..1.0);
    let v = ValueNet::from_network(net.clone(), OptimizerKind::Sgd, 1.0, gamma).unwrap();
    let batch = random_batch(rng, 6, obs, 2);
    let targets = v.td_targets(&batch).unwrap();
    let mut stepped = v.clone();
    stepped.td_update(&batch).unwrap();
    let analytic = param_delta(v.network(), stepped.network());
    let states = rows(&batch, |e| e.state.clone());
    let numeric = param_fd(&net, |n| mse(n.predict(&states).unwrap().values(), &targets));
    worst_violation(&analytic, &numeric)
}

/// `∂V/∂s` of the value network.
pub fn value_input(rng: &mut ChaCha8Rng) -> f64 {
    let obs = rng.random_range(2..=6);
    let net = random_mlp(rng, obs, 1);
    let v = ValueNet::from_network(net, OptimizerKind::Adam, 1e-3, 0.9).unwrap();
    let x = uniform_vec(rng, obs, -1.0, 1.0);
    let analytic = v.state_gradient(&x).unwrap();
    let numeric = central_diff(&x, |x| v.value(x).unwrap());
    worst_violation(&analytic, &numeric)
}

/// Masked CACLA loss gradient of the policy mean network.
pub fn policy_params(rng: &mut ChaCha8Rng) -> f64 {
    let obs = rng.random_range(2..=6);
    let act = rng.random_range(1..=4);
    let net = random_mlp(rng, obs, act);
    let policy = GaussianPolicy::from_network(net.clone(), OptimizerKind::Sgd, 1.0, Anneal::new(0.3, 0.3, 1)).unwrap();
    let batch = random_batch(rng, 8, obs, act);
    let mut adv: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    adv[0] = adv[0].abs() + 0.1;
    let mut stepped = policy.clone();
    stepped.cacla_update(&batch, &adv).unwrap();
    let analytic = param_delta(policy.network(), stepped.network());
    let kept: Vec<&Experience> = batch.iter().zip(&adv).filter(|(_, &a)| a > 0.0).map(|(e, _)| e).collect();
    let states = Tensor::from_rows(&kept.iter().map(|e| e.state.clone()).collect::<Vec<_>>()).unwrap();
    let numeric = param_fd(&net, |n| {
        let out = n.predict(&states).unwrap();
        let total: f64 = kept
            .iter()
            .enumerate()
            .map(|(i, e)| {
                out.row_slice(i)
                    .iter()
                    .zip(&e.action)
                    .map(|(z, a)| (z.tanh() - a).powi(2))
                    .sum::<f64>()
            })
            .sum();
        total / kept.len() as f64
    });
    worst_violation(&analytic, &numeric)
}

/// Input gradient of `seedᵀ·f(x)` for a network of either family.
fn input_check(net: &Network, rng: &mut ChaCha8Rng) -> f64 {
    let n = 2;
    let x = uniform_vec(rng, n * net.input_width(), -1.0, 1.0);
    let seed_vals = normal_vec(rng, n * net.output_width());
    let seed = Tensor::new(vec![n, net.output_width()], seed_vals.clone()).unwrap();
    let input = Tensor::new(vec![n, net.input_width()], x.clone()).unwrap();
    let analytic = net.grad_wrt_input(&input, &seed).unwrap().into_values();
    let numeric = central_diff(&x, |x| {
        let t = Tensor::new(vec![n, net.input_width()], x.to_vec()).unwrap();
        net.predict(&t).unwrap().values().iter().zip(&seed_vals).map(|(a, b)| a * b).sum()
    });
    worst_violation(&analytic, &numeric)
}

/// Input gradient of the policy mean network.
pub fn policy_input(rng: &mut ChaCha8Rng) -> f64 {
    let obs = rng.random_range(2..=6);
    let act = rng.random_range(1..=4);
    let net = random_mlp(rng, obs, act);
    input_check(&net, rng)
}

/// Input gradient of a concat-skip generator.
pub fn generator_input(rng: &mut ChaCha8Rng) -> f64 {
    let input = rng.random_range(3..=8);
    let output = rng.random_range(1..=4);
    let net = random_generator(rng, input, output);
    input_check(&net, rng)
}

/// Parameter gradient of `seedᵀ·G(x)` for a concat-skip generator.
pub fn generator_params(rng: &mut ChaCha8Rng) -> f64 {
    let input = rng.random_range(3..=8);
    let output = rng.random_range(1..=4);
    let mut net = random_generator(rng, input, output);
    let n = 3;
    let x = Tensor::new(vec![n, input], uniform_vec(rng, n * input, -1.0, 1.0)).unwrap();
    let seed_vals = normal_vec(rng, n * output);
    let seed = Tensor::new(vec![n, output], seed_vals.clone()).unwrap();
    let frozen = net.clone();
    net.forward_backward(&x, &seed, &mut Mode::Eval).unwrap();
    let analytic = net.flat_grads();
    let numeric = param_fd(&frozen, |n| {
        n.predict(&x).unwrap().values().iter().zip(&seed_vals).map(|(a, b)| a * b).sum()
    });
    worst_violation(&analytic, &numeric)
}

struct ModelInstance {
    model: DynamicsModel,
    batch: Vec<Experience>,
    obs: usize,
    act: usize,
    noise: usize,
}

fn model_instance(rng: &mut ChaCha8Rng) -> ModelInstance {
    let obs = rng.random_range(2..=4);
    let act = rng.random_range(1..=3);
    let noise = rng.random_range(1..=3);
    let generator = random_generator(rng, obs + act + noise, obs);
    let discriminator = random_mlp(rng, 2 * obs + act, 1);
    let reward = random_mlp(rng, obs + act, 1);
    let blend = rng.random_range(0.0..=1.0);
    let model = DynamicsModel::from_parts(generator, discriminator, reward, noise, blend, OptimizerKind::Sgd, [1.0; 3]).unwrap();
    let batch = random_batch(rng, 5, obs, act);
    ModelInstance { model, batch, obs, act, noise }
}

/// Blended generator objective of one model-training step, taken against
/// the discriminator as it stands after its own step.
pub fn generator_train_step(rng: &mut ChaCha8Rng) -> f64 {
    let ModelInstance { model, batch, noise, .. } = model_instance(rng);
    let mut step_rng = rng.clone();
    let eta = sample_noise(batch.len(), noise, &mut rng.clone()).unwrap();
    let mut stepped = model.clone();
    stepped.train_step(&batch, &mut step_rng).unwrap();
    let analytic = param_delta(model.generator(), stepped.generator());
    let disc = stepped.discriminator().clone();
    let blend = model.blend();
    let inputs = Tensor::from_rows(
        &batch
            .iter()
            .enumerate()
            .map(|(i, e)| e.state.iter().chain(&e.action).chain(eta.row_slice(i)).copied().collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let next: Vec<f64> = batch.iter().flat_map(|e| e.next_state.clone()).collect();
    let numeric = param_fd(model.generator(), |g| {
        let pred = g.predict(&inputs).unwrap();
        let mut loss = blend * mse(pred.values(), &next);
        if blend < 1.0 {
            let d_in = Tensor::from_rows(
                &batch
                    .iter()
                    .enumerate()
                    .map(|(i, e)| e.state.iter().chain(&e.action).chain(pred.row_slice(i)).copied().collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let logits = disc.predict(&d_in).unwrap();
            let adv = logits.values().iter().map(|&z| softplus(-z)).sum::<f64>() / batch.len() as f64;
            loss += (1.0 - blend) * adv;
        }
        loss
    });
    worst_violation(&analytic, &numeric)
}

/// Binary cross-entropy gradient of the discriminator.
pub fn discriminator_params(rng: &mut ChaCha8Rng) -> f64 {
    let ModelInstance { mut model, obs, act, .. } = model_instance(rng);
    let w = 2 * obs + act;
    let real = Tensor::new(vec![4, w], uniform_vec(rng, 4 * w, -1.0, 1.0)).unwrap();
    let fake = Tensor::new(vec![3, w], uniform_vec(rng, 3 * w, -1.0, 1.0)).unwrap();
    let before = model.discriminator().clone();
    model.train_discriminator(&real, &fake).unwrap();
    let analytic = param_delta(&before, model.discriminator());
    let numeric = param_fd(&before, |d| {
        let r = d.predict(&real).unwrap();
        let f = d.predict(&fake).unwrap();
        let total: f64 = r.values().iter().map(|&z| softplus(-z)).sum::<f64>()
            + f.values().iter().map(|&z| softplus(z)).sum::<f64>();
        total / 7.0
    });
    worst_violation(&analytic, &numeric)
}

/// Reward-regression gradient of the reward network.
pub fn reward_params(rng: &mut ChaCha8Rng) -> f64 {
    let ModelInstance { model, batch, .. } = model_instance(rng);
    let mut stepped = model.clone();
    stepped.train_step(&batch, &mut rng.clone()).unwrap();
    let analytic = param_delta(model.reward_net(), stepped.reward_net());
    let inputs = rows(&batch, |e| e.state.iter().chain(&e.action).copied().collect());
    let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();
    let numeric = param_fd(model.reward_net(), |r| mse(r.predict(&inputs).unwrap().values(), &rewards));
    worst_violation(&analytic, &numeric)
}

fn small_dynamics() -> DynamicsConfig {
    DynamicsConfig {
        block_width: 6,
        discriminator_hidden: vec![6],
        reward_hidden: vec![6],
        ..DynamicsConfig::default()
    }
}

/// `∂V(G(s, u, η))/∂u` through a value network and a dynamics model built
/// the way the trainer builds them. Odd-numbered calls first train both
/// networks for a few steps on random data.
pub fn value_through_generator(rng: &mut ChaCha8Rng, trained: bool) -> f64 {
    let obs = 2 * rng.random_range(1..=3);
    let act = obs / 2;
    let vcfg = ValueConfig {
        hidden: random_hidden(rng, 2, 8),
        learning_rate: 1e-2,
        gamma: 0.9,
    };
    let mut value = ValueNet::new(obs, &vcfg, rng).unwrap();
    let mut model = DynamicsModel::new(obs, act, &small_dynamics(), rng).unwrap();
    jitter_params(value.network_mut(), rng, 0.2);
    jitter_params(model.generator_mut(), rng, 0.2);
    if trained {
        for _ in 0..10 {
            let batch = random_batch(rng, 8, obs, act);
            model.train_step(&batch, rng).unwrap();
            value.td_update(&batch).unwrap();
        }
    }
    let s = uniform_vec(rng, obs, -1.0, 1.0);
    let u = uniform_vec(rng, act, -1.0, 1.0);
    let eta = normal_vec(rng, model.noise_width());
    let analytic = raw_action_gradient(&s, &u, &eta, &value, &model).unwrap();
    let numeric = central_diff(&u, |u| predicted_value(&s, u, &eta, &value, &model).unwrap());
    worst_violation(&analytic, &numeric)
}

/// Every gradient family with its instance generator.
pub fn families() -> Vec<(&'static str, fn(&mut ChaCha8Rng) -> f64)> {
    vec![
        ("value params (TD loss)", value_params),
        ("value input", value_input),
        ("policy params (CACLA loss)", policy_params),
        ("policy input", policy_input),
        ("generator params", generator_params),
        ("generator input", generator_input),
        ("generator params (blended step)", generator_train_step),
        ("discriminator params (BCE)", discriminator_params),
        ("reward params (MSE)", reward_params),
        ("value through generator, untrained", |r| value_through_generator(r, false)),
        ("value through generator, trained", |r| value_through_generator(r, true)),
    ]
}

/// Worst violation ratio of each family over `instances` random instances.
pub fn run_suite(seed: u64, instances: usize) -> Vec<(&'static str, f64)> {
    use rand::SeedableRng;
    families()
        .into_iter()
        .enumerate()
        .map(|(k, (name, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let worst = (0..instances).map(|_| f(&mut rng)).fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
