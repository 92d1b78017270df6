mod common;

use common::gradients::{self, INSTANCES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(name: &str, f: fn(&mut ChaCha8Rng) -> f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..INSTANCES {
        let v = f(&mut rng);
        assert!(v <= 1.0, "{name}: instance {i} violation ratio {v:.3}");
    }
}

#[test]
fn value_td_parameter_gradients() {
    check("value params", gradients::value_params, 11);
}

#[test]
fn value_state_gradients() {
    check("value input", gradients::value_input, 12);
}

#[test]
fn cacla_masked_loss_gradients() {
    check("policy params", gradients::policy_params, 13);
}

#[test]
fn policy_input_gradients() {
    check("policy input", gradients::policy_input, 14);
}

#[test]
fn concat_skip_parameter_gradients() {
    check("generator params", gradients::generator_params, 15);
}

#[test]
fn concat_skip_input_gradients() {
    check("generator input", gradients::generator_input, 16);
}

#[test]
fn blended_generator_step_gradients() {
    check("generator step", gradients::generator_train_step, 17);
}

#[test]
fn discriminator_bce_gradients() {
    check("discriminator", gradients::discriminator_params, 18);
}

#[test]
fn reward_regression_gradients() {
    check("reward", gradients::reward_params, 19);
}

#[test]
fn value_through_generator_chain() {
    check("chain untrained", |r| gradients::value_through_generator(r, false), 20);
    check("chain trained", |r| gradients::value_through_generator(r, true), 21);
}
