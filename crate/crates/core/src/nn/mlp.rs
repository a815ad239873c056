use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Architecture of an [`Mlp`], as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// Hidden layer widths only; input and output widths come from the task.
    pub hidden: Vec<usize>,
    #[serde(default = "default_hidden_activation")]
    pub activation: Activation,
    #[serde(default = "default_output_activation")]
    pub output_activation: Activation,
}

fn default_hidden_activation() -> Activation {
    Activation::Relu
}

fn default_output_activation() -> Activation {
    Activation::Identity
}

impl MlpConfig {
    pub fn new(hidden: Vec<usize>, activation: Activation) -> Self {
        MlpConfig {
            hidden,
            activation,
            output_activation: Activation::Identity,
        }
    }

    pub fn build(&self, input: usize, output: usize, seed: u64) -> Result<Mlp> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output);
        Mlp::new(
            sizes,
            vec![self.activation; self.hidden.len()],
            self.output_activation,
            seed,
        )
    }
}

/// Fully connected network with a flat parameter vector.
///
/// Parameters are stored layer by layer: the weight matrix (`out × in`,
/// row-major) followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    output_activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, drawn deterministically from `seed`.
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activations, output_activation)?;
        let mut rng = rng::rng_for(seed, Stream::Init, 0);
        let mut offset = 0;
        for w in net.layer_sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        output_activation: Activation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(
                "layer_sizes",
                "need at least an input and an output layer",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config(
                "layer_sizes",
                "layer widths must be positive",
            ));
        }
        if activations.len() != layer_sizes.len() - 2 {
            return Err(Error::config(
                "activations",
                format!(
                    "expected {} hidden activations, got {}",
                    layer_sizes.len() - 2,
                    activations.len()
                ),
            ));
        }
        let n = param_count(&layer_sizes);
        Ok(Mlp {
            layer_sizes,
            activations,
            output_activation,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        output_activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activations, output_activation)?;
        if params.len() != net.params.len() {
            return Err(Error::domain(format!(
                "parameter vector has length {}, architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.layer_sizes.len() {
            self.output_activation
        } else {
            self.activations[layer]
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "network input has length {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut offset = 0;
        for (layer, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let act = self.layer_activation(layer);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let next: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let z = row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>() + bias[o];
                    act.apply(z)
                })
                .collect();
            cur = next;
            offset += n_in * n_out + n_out;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let n_layers = self.layer_sizes.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for (layer, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let act = self.layer_activation(layer);
            let input = post.last().map(Vec::as_slice).unwrap_or(x);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(y);
            offset += n_in * n_out + n_out;
        }
        Ok(Trace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Reverse-mode pass for the scalar `upstream · output`. Parameter
    /// gradients are *added* into `grads`; the input gradient is returned.
    pub fn backward_trace(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::domain(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::domain(
                "gradient buffer does not match parameter count",
            ));
        }
        let n_layers = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta_out: Vec<f64> = upstream.to_vec();
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
            let act = self.layer_activation(layer);
            let z = &trace.pre[layer];
            let y = &trace.post[layer];
            let dz: Vec<f64> = (0..n_out)
                .map(|o| delta_out[o] * act.derivative(z[o], y[o]))
                .collect();
            let input: &[f64] = if layer == 0 {
                &trace.input
            } else {
                &trace.post[layer - 1]
            };
            let off = offsets[layer];
            for o in 0..n_out {
                if dz[o] == 0.0 {
                    continue;
                }
                let g_row = &mut grads[off + o * n_in..off + (o + 1) * n_in];
                for (g, &xi) in g_row.iter_mut().zip(input) {
                    *g += dz[o] * xi;
                }
                grads[off + n_in * n_out + o] += dz[o];
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                if dz[o] == 0.0 {
                    continue;
                }
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (d, &wv) in dx.iter_mut().zip(row) {
                    *d += dz[o] * wv;
                }
            }
            delta_out = dx;
        }
        Ok(delta_out)
    }

    /// Gradients of `upstream · forward(x)` with respect to the parameters
    /// and to the input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward_trace(&trace, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}
