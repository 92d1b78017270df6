//! Learned environment models: a reward regressor and a noise-conditioned
//! successor generator trained as a conditional GAN with a blended MSE term.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, LayerSpec, Mode, Network, Optimizer, OptimizerKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mbae::SuccessorModel;
use crate::trainer::replay::{self, Experience};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Width of each concat-skip block of the generator.
    pub block_width: usize,
    pub blocks: usize,
    /// Defaults to the action width.
    pub noise_width: Option<usize>,
    /// Dropout on the first block's features.
    pub dropout_input: f64,
    /// Dropout on the blocks between the first and the last.
    pub dropout_hidden: f64,
    /// Dropout on the features feeding the output layer.
    pub dropout_output: f64,
    /// Weight of the MSE term; `1 - blend` weighs the adversarial term.
    pub blend: f64,
    pub discriminator_hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_reward: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            block_width: 128,
            blocks: 2,
            noise_width: None,
            dropout_input: 0.1,
            dropout_hidden: 0.1,
            dropout_output: 0.1,
            blend: 0.9,
            discriminator_hidden: vec![128, 64],
            reward_hidden: vec![128, 64],
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            lr_reward: 1e-3,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::config("dynamics.blend must lie in [0, 1]"));
        }
        if self.blocks == 0 || self.block_width == 0 {
            return Err(Error::config("dynamics generator needs at least one non-empty block"));
        }
        for lr in [self.lr_generator, self.lr_discriminator, self.lr_reward] {
            if !(lr > 0.0) {
                return Err(Error::config("dynamics learning rates must be positive"));
            }
        }
        Ok(())
    }

    /// Generator description: concat-skip blocks over `(s, u, η)`, then a
    /// dense layer to the observation width.
    pub fn generator_specs(&self, obs_width: usize) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = (0..self.blocks)
            .map(|i| {
                let dropout = if i + 1 == self.blocks {
                    self.dropout_output
                } else if i == 0 {
                    self.dropout_input
                } else {
                    self.dropout_hidden
                };
                LayerSpec::ConcatSkip {
                    width: self.block_width,
                    activation: Activation::Relu,
                    dropout,
                }
            })
            .collect();
        if self.blocks == 1 {
            if let Some(LayerSpec::ConcatSkip { dropout, .. }) = specs.first_mut() {
                *dropout = self.dropout_input.max(self.dropout_output);
            }
        }
        specs.push(LayerSpec::Dense { width: obs_width });
        specs
    }
}

/// Pre-step losses of one [`DynamicsModel::train_step`].
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct DynamicsLosses {
    pub generator: f64,
    pub discriminator: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    generator: Network,
    discriminator: Network,
    reward_net: Network,
    gen_opt: Optimizer,
    disc_opt: Optimizer,
    reward_opt: Optimizer,
    obs_width: usize,
    action_width: usize,
    noise_width: usize,
    blend: f64,
}

/// Stacked standard-normal draws, one row per sample.
pub fn sample_noise(rows: usize, width: usize, rng: &mut dyn RngCore) -> Result<Tensor> {
    let values = (0..rows * width).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, width], values)
}

impl DynamicsModel {
    pub fn new(obs_width: usize, action_width: usize, cfg: &DynamicsConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let noise_width = cfg.noise_width.unwrap_or(action_width);
        let gen_in = obs_width + action_width + noise_width;
        let generator = Network::new(gen_in, &cfg.generator_specs(obs_width), rng)?;
        let discriminator = Network::mlp(
            2 * obs_width + action_width,
            &cfg.discriminator_hidden,
            1,
            Activation::Relu,
            rng,
        )?;
        let reward_net = Network::mlp(obs_width + action_width, &cfg.reward_hidden, 1, Activation::Relu, rng)?;
        let lrs = [cfg.lr_generator, cfg.lr_discriminator, cfg.lr_reward];
        Self::from_parts(generator, discriminator, reward_net, noise_width, cfg.blend, OptimizerKind::Adam, lrs)
    }

    /// Assembles a model from explicit networks. The generator maps
    /// `(s, u, η)` to `s'`, the discriminator `(s, u, s')` to a logit and the
    /// reward network `(s, u)` to a scalar.
    pub fn from_parts(
        generator: Network,
        discriminator: Network,
        reward_net: Network,
        noise_width: usize,
        blend: f64,
        kind: OptimizerKind,
        learning_rates: [f64; 3],
    ) -> Result<Self> {
        let obs_width = generator.output_width();
        let action_width = generator
            .input_width()
            .checked_sub(obs_width + noise_width)
            .filter(|&w| w > 0)
            .ok_or_else(|| Error::config("generator input must hold state, action and noise"))?;
        if discriminator.input_width() != 2 * obs_width + action_width || discriminator.output_width() != 1 {
            return Err(Error::config("discriminator must map (s, u, s') to one logit"));
        }
        if reward_net.input_width() != obs_width + action_width || reward_net.output_width() != 1 {
            return Err(Error::config("reward network must map (s, u) to one value"));
        }
        if !(0.0..=1.0).contains(&blend) {
            return Err(Error::config("blend must lie in [0, 1]"));
        }
        Ok(DynamicsModel {
            gen_opt: Optimizer::new(kind, learning_rates[0], generator.params())?,
            disc_opt: Optimizer::new(kind, learning_rates[1], discriminator.params())?,
            reward_opt: Optimizer::new(kind, learning_rates[2], reward_net.params())?,
            generator,
            discriminator,
            reward_net,
            obs_width,
            action_width,
            noise_width,
            blend,
        })
    }

    pub fn obs_width(&self) -> usize {
        self.obs_width
    }

    pub fn action_width(&self) -> usize {
        self.action_width
    }

    pub fn blend(&self) -> f64 {
        self.blend
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Network {
        &mut self.generator
    }

    pub fn discriminator(&self) -> &Network {
        &self.discriminator
    }

    pub fn discriminator_mut(&mut self) -> &mut Network {
        &mut self.discriminator
    }

    pub fn reward_net(&self) -> &Network {
        &self.reward_net
    }

    pub fn reward_net_mut(&mut self) -> &mut Network {
        &mut self.reward_net
    }

    /// Generator, discriminator and reward optimizers, in that order.
    pub fn optimizers(&self) -> [&Optimizer; 3] {
        [&self.gen_opt, &self.disc_opt, &self.reward_opt]
    }

    pub fn optimizers_mut(&mut self) -> [&mut Optimizer; 3] {
        [&mut self.gen_opt, &mut self.disc_opt, &mut self.reward_opt]
    }

    fn check_batch(&self, states: &Tensor, actions: &Tensor) -> Result<()> {
        if states.cols() != self.obs_width || actions.cols() != self.action_width || states.rows() != actions.rows() {
            return Err(Error::config("state/action batch does not match the model widths"));
        }
        Ok(())
    }

    /// Generator forward in eval mode; a pure function of its arguments.
    pub fn predict_successor(&self, state: &[f64], action: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let out = self.predict_successors(
            &Tensor::row(state.to_vec())?,
            &Tensor::row(action.to_vec())?,
            &Tensor::row(noise.to_vec())?,
        )?;
        Ok(out.into_values())
    }

    pub fn predict_successors(&self, states: &Tensor, actions: &Tensor, noise: &Tensor) -> Result<Tensor> {
        self.check_batch(states, actions)?;
        let mut tape = Tape::new();
        let s = tape.constant(states)?;
        let u = tape.constant(actions)?;
        let eta = tape.constant(noise)?;
        let out = self.successor_on_tape(&mut tape, s, u, eta)?;
        Ok(tape.tensor(out))
    }

    pub fn predict_reward(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let r = self.predict_rewards(&Tensor::row(state.to_vec())?, &Tensor::row(action.to_vec())?)?;
        Ok(r[0])
    }

    pub fn predict_rewards(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(states, actions)?;
        let mut tape = Tape::new();
        let s = tape.constant(states)?;
        let u = tape.constant(actions)?;
        let x = tape.concat(s, u)?;
        let fwd = self.reward_net.forward(&mut tape, x, &mut Mode::Eval)?;
        Ok(tape.value(fwd.output).to_vec())
    }

    /// Discriminator logits for rows of `(s, u, s')`.
    pub fn discriminate(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.discriminator.predict(inputs)?.into_values())
    }

    /// One discriminator step on binary cross-entropy with real rows
    /// labelled 1 and fake rows labelled 0. Returns the pre-step loss.
    pub fn train_discriminator(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let mut stacked = real.values().to_vec();
        stacked.extend_from_slice(fake.values());
        let rows = real.rows() + fake.rows();
        let mut labels = vec![1.0; real.rows()];
        labels.resize(rows, 0.0);
        let mut tape = Tape::new();
        let x = tape.constant_rows(rows, real.cols(), stacked)?;
        let fwd = self.discriminator.forward(&mut tape, x, &mut Mode::Eval)?;
        let bce = tape.bce_with_logits(fwd.output, labels)?;
        let loss = tape.mean(bce)?;
        let value = tape.value(loss)[0];
        tape.backward(loss, &[1.0])?;
        self.discriminator.accumulate_grads(&tape, &fwd);
        self.disc_opt.step(self.discriminator.params_mut())?;
        Ok(value)
    }

    /// One round of model learning on `batch`: a discriminator step on real
    /// versus generated successors, a generator step on
    /// `blend·MSE + (1 - blend)·non-saturating adversarial loss`, and a
    /// reward-regression step. Returns the pre-step losses.
    pub fn train_step(&mut self, batch: &[Experience], rng: &mut dyn RngCore) -> Result<DynamicsLosses> {
        if batch.is_empty() {
            return Err(Error::Usage("dynamics train_step needs a non-empty batch".into()));
        }
        let n = batch.len();
        let states = replay::states(batch)?;
        let actions = replay::actions(batch)?;
        let next = replay::next_states(batch)?;
        self.check_batch(&states, &actions)?;
        let noise = sample_noise(n, self.noise_width, rng)?;

        // Generator forward (train mode) is recorded once and reused for the
        // generator step after the discriminator has moved.
        let mut gtape = Tape::new();
        let s = gtape.constant(&states)?;
        let u = gtape.constant(&actions)?;
        let eta = gtape.constant(&noise)?;
        let gin = gtape.concat(s, u)?;
        let gin = gtape.concat(gin, eta)?;
        let gfwd = self.generator.forward(&mut gtape, gin, &mut Mode::Train(rng))?;
        let fake_next = gtape.tensor(gfwd.output);

        let su: Vec<Vec<f64>> = batch
            .iter()
            .map(|e| e.state.iter().chain(&e.action).copied().collect())
            .collect();
        let join = |succ: &Tensor| -> Result<Tensor> {
            let rows: Vec<Vec<f64>> = su
                .iter()
                .enumerate()
                .map(|(i, p)| p.iter().chain(succ.row_slice(i)).copied().collect())
                .collect();
            Tensor::from_rows(&rows)
        };
        let disc_loss = self.train_discriminator(&join(&next)?, &join(&fake_next)?)?;

        let target = gtape.constant(&next)?;
        let diff = gtape.sub(gfwd.output, target)?;
        let sq = gtape.square(diff)?;
        let mse = gtape.mean(sq)?;
        let gen_loss_var = if self.blend < 1.0 {
            let su_var = gtape.concat(s, u)?;
            let din = gtape.concat(su_var, gfwd.output)?;
            let dfwd = self.discriminator.forward(&mut gtape, din, &mut Mode::Eval)?;
            let adv = gtape.bce_with_logits(dfwd.output, vec![1.0; n])?;
            let adv = gtape.mean(adv)?;
            let a = gtape.scale(mse, self.blend)?;
            let b = gtape.scale(adv, 1.0 - self.blend)?;
            gtape.add(a, b)?
        } else {
            mse
        };
        let gen_loss = gtape.value(gen_loss_var)[0];
        gtape.backward(gen_loss_var, &[1.0])?;
        self.generator.accumulate_grads(&gtape, &gfwd);
        self.gen_opt.step(self.generator.params_mut())?;

        let reward_loss = self.reward_step(&states, &actions, batch)?;
        Ok(DynamicsLosses {
            generator: gen_loss,
            discriminator: disc_loss,
            reward: reward_loss,
        })
    }

    fn reward_step(&mut self, states: &Tensor, actions: &Tensor, batch: &[Experience]) -> Result<f64> {
        let mut tape = Tape::new();
        let s = tape.constant(states)?;
        let u = tape.constant(actions)?;
        let x = tape.concat(s, u)?;
        let fwd = self.reward_net.forward(&mut tape, x, &mut Mode::Eval)?;
        let r = tape.constant_rows(batch.len(), 1, batch.iter().map(|e| e.reward).collect())?;
        let diff = tape.sub(fwd.output, r)?;
        let sq = tape.square(diff)?;
        let loss = tape.mean(sq)?;
        let value = tape.value(loss)[0];
        tape.backward(loss, &[1.0])?;
        self.reward_net.accumulate_grads(&tape, &fwd);
        self.reward_opt.step(self.reward_net.params_mut())?;
        Ok(value)
    }
}

impl SuccessorModel for DynamicsModel {
    fn noise_width(&self) -> usize {
        self.noise_width
    }

    fn successor_on_tape(&self, tape: &mut Tape, states: Var, actions: Var, noise: Var) -> Result<Var> {
        let x = tape.concat(states, actions)?;
        let x = tape.concat(x, noise)?;
        Ok(self.generator.forward(tape, x, &mut Mode::Eval)?.output)
    }
}
