use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

/// One entry of a network description.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense { width: usize },
    Relu,
    Tanh,
    Dropout { rate: f64 },
    /// `concat(x, dropout(act(dense(x))))`: the output is `width` columns
    /// wider than the input. Dropout applies to the new features only; the
    /// carried-through input is never dropped.
    ConcatSkip {
        width: usize,
        activation: Activation,
        #[serde(default)]
        dropout: f64,
    },
}

/// Whether a forward pass samples dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Dense { w: usize, b: usize },
    Relu,
    Tanh,
    Dropout(f64),
    ConcatSkip { w: usize, b: usize, activation: Activation, dropout: f64 },
}

/// Feed-forward network assembled from [`LayerSpec`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_width: usize,
    output_width: usize,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    params: Vec<Tensor>,
}

/// Result of recording a forward pass: the output node plus the tape nodes
/// holding this network's parameters, in [`Network::params`] order.
#[derive(Debug)]
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], values)
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(input_width: usize, specs: &[LayerSpec], rng: &mut dyn RngCore) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::config("network input width must be positive"));
        }
        match specs.last() {
            None => return Err(Error::config("network description is empty")),
            Some(LayerSpec::Dense { .. }) => {}
            Some(other) => {
                return Err(Error::config(format!(
                    "network description must end in a dense layer, found {other:?}"
                )))
            }
        }
        let mut width = input_width;
        let mut layers = Vec::with_capacity(specs.len());
        let mut params = Vec::new();
        for spec in specs {
            match *spec {
                LayerSpec::Dense { width: out } | LayerSpec::ConcatSkip { width: out, .. } => {
                    if out == 0 {
                        return Err(Error::config("layer width must be positive"));
                    }
                    params.push(glorot(width, out, rng)?);
                    params.push(Tensor::zeros(vec![1, out])?);
                    let (w, b) = (params.len() - 2, params.len() - 1);
                    if let LayerSpec::ConcatSkip { activation, dropout, .. } = *spec {
                        if !(0.0..1.0).contains(&dropout) {
                            return Err(Error::config(format!("dropout rate {dropout} outside [0, 1)")));
                        }
                        layers.push(Layer::ConcatSkip { w, b, activation, dropout });
                        width += out;
                    } else {
                        layers.push(Layer::Dense { w, b });
                        width = out;
                    }
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::Tanh => layers.push(Layer::Tanh),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    layers.push(Layer::Dropout(rate));
                }
            }
        }
        Ok(Network {
            input_width,
            output_width: width,
            specs: specs.to_vec(),
            layers,
            params,
        })
    }

    /// A multilayer perceptron: `hidden` dense layers each followed by
    /// `activation`, then a linear output layer.
    pub fn mlp(
        input_width: usize,
        hidden: &[usize],
        output_width: usize,
        activation: Activation,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut specs = Vec::new();
        for &h in hidden {
            specs.push(LayerSpec::Dense { width: h });
            match activation {
                Activation::Relu => specs.push(LayerSpec::Relu),
                Activation::Tanh => specs.push(LayerSpec::Tanh),
                Activation::Identity => {}
            }
        }
        specs.push(LayerSpec::Dense { width: output_width });
        Network::new(input_width, &specs, rng)
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Weight and bias of the `k`-th parametric (dense or concat-skip) layer.
    pub fn dense_params_mut(&mut self, k: usize) -> Option<(&mut Tensor, &mut Tensor)> {
        let (w, rest) = self.params.get_mut(2 * k..2 * k + 2)?.split_at_mut(1);
        Some((&mut w[0], &mut rest[0]))
    }

    /// Zeroes the final layer so the network outputs zero everywhere.
    pub fn zero_output_layer(&mut self) {
        let k = self.params.len() / 2 - 1;
        let (w, b) = self.dense_params_mut(k).expect("network has a dense output");
        w.values_mut().iter_mut().for_each(|v| *v = 0.0);
        b.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.values().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.values_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad().iter().copied()).collect()
    }

    /// Records the forward pass of `input` on `tape`.
    pub fn forward(&self, tape: &mut Tape, input: Var, mode: &mut Mode<'_>) -> Result<Forward> {
        let (_, cols) = tape.shape(input);
        if cols != self.input_width {
            return Err(Error::config(format!(
                "network expects input width {}, got {cols}",
                self.input_width
            )));
        }
        let params = self
            .params
            .iter()
            .map(|p| tape.leaf(p))
            .collect::<Result<Vec<_>>>()?;
        let mut x = input;
        for layer in &self.layers {
            x = match *layer {
                Layer::Dense { w, b } => {
                    let h = tape.matmul(x, params[w])?;
                    tape.add_bias(h, params[b])?
                }
                Layer::Relu => tape.relu(x)?,
                Layer::Tanh => tape.tanh(x)?,
                Layer::Dropout(rate) => match mode {
                    Mode::Eval => x,
                    Mode::Train(rng) => tape.dropout(x, rate, &mut **rng)?,
                },
                Layer::ConcatSkip { w, b, activation, dropout } => {
                    let h = tape.matmul(x, params[w])?;
                    let h = tape.add_bias(h, params[b])?;
                    let h = match activation {
                        Activation::Identity => h,
                        Activation::Relu => tape.relu(h)?,
                        Activation::Tanh => tape.tanh(h)?,
                    };
                    let h = match mode {
                        Mode::Eval => h,
                        Mode::Train(rng) => tape.dropout(h, dropout, &mut **rng)?,
                    };
                    tape.concat(x, h)?
                }
            };
        }
        Ok(Forward { output: x, params })
    }

    /// Adds the parameter gradients held on `tape` into this network.
    pub fn accumulate_grads(&mut self, tape: &Tape, fwd: &Forward) {
        for (p, &v) in self.params.iter_mut().zip(&fwd.params) {
            p.grad_mut()
                .iter_mut()
                .zip(tape.grad(v))
                .for_each(|(d, s)| *d += s);
        }
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input)?;
        let fwd = self.forward(&mut tape, x, &mut Mode::Eval)?;
        let out = tape.tensor(fwd.output);
        Ok(out)
    }

    /// Gradient of `seedᵀ · f(input)` with respect to `input`, in eval mode.
    /// Parameters are left untouched.
    pub fn grad_wrt_input(&self, input: &Tensor, seed: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(input)?;
        let fwd = self.forward(&mut tape, x, &mut Mode::Eval)?;
        if tape.shape(fwd.output) != (seed.rows(), seed.cols()) {
            return Err(Error::config("seed shape does not match network output"));
        }
        tape.backward(fwd.output, seed.values())?;
        let mut g = input.clone();
        g.zero_grad();
        let grad = tape.grad(x).to_vec();
        g.values_mut().copy_from_slice(&grad);
        Ok(g)
    }

    /// Runs forward and backward for `seedᵀ · f(input)` and accumulates the
    /// parameter gradients. Returns the output.
    pub fn forward_backward(
        &mut self,
        input: &Tensor,
        seed: &Tensor,
        mode: &mut Mode<'_>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input)?;
        let fwd = self.forward(&mut tape, x, mode)?;
        tape.backward(fwd.output, seed.values())?;
        self.accumulate_grads(&tape, &fwd);
        Ok(tape.tensor(fwd.output))
    }
}
