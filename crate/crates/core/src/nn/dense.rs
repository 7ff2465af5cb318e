use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NET_FORMAT_VERSION: u32 = 1;

/// Scale of the uniform initialization of the output layer.
const OUTPUT_INIT: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected feed-forward network.
///
/// All parameters live in one flat vector: for each layer, an
/// `outputs × inputs` row-major weight block followed by `outputs` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetFile", into = "NetFile")]
pub struct DenseNet {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Per-layer outputs recorded by [`DenseNet::forward_trace`]; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

impl DenseNet {
    /// Zero-initialized network with layer widths `dims` (input first).
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network needs ≥2 non-zero widths and one activation per layer (dims {dims:?}, {} activations)",
                activations.len()
            )));
        }
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Hidden layers uniform in ±1/√fan_in, output layer uniform in ±3e-3.
    pub fn init<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        let n_layers = net.num_layers();
        for l in 0..n_layers {
            let (off, fan_in, fan_out) = net.layer_offset(l);
            let bound = if l + 1 == n_layers {
                OUTPUT_INIT
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            for p in &mut net.params[off..off + fan_in * fan_out + fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// (offset, fan_in, fan_out) of layer `l`.
    fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let off = self.dims[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (off, self.dims[l], self.dims[l + 1])
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let (off, i, o) = self.layer_offset(l);
        &self.params[off..off + i * o]
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        let (off, i, o) = self.layer_offset(l);
        &self.params[off + i * o..off + i * o + o]
    }

    pub fn layer_weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (off, i, o) = self.layer_offset(l);
        &mut self.params[off..off + i * o]
    }

    pub fn layer_bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (off, i, o) = self.layer_offset(l);
        &mut self.params[off + i * o..off + i * o + o]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut off = 0;
        for (l, act) in self.activations.iter().enumerate() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (w, b) =
                self.params[off..off + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            cur = (0..fan_out)
                .map(|j| {
                    let row = &w[j * fan_in..(j + 1) * fan_in];
                    act.apply(b[j] + row.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
                })
                .collect();
            off += fan_in * fan_out + fan_out;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.dims.len());
        values.push(x.to_vec());
        let mut off = 0;
        for (l, act) in self.activations.iter().enumerate() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (w, b) =
                self.params[off..off + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            let prev = &values[l];
            let next: Vec<f64> = (0..fan_out)
                .map(|j| {
                    let row = &w[j * fan_in..(j + 1) * fan_in];
                    act.apply(b[j] + row.iter().zip(prev).map(|(a, c)| a * c).sum::<f64>())
                })
                .collect();
            values.push(next);
            off += fan_in * fan_out + fan_out;
        }
        Ok(Trace { values })
    }

    /// Reverse pass. Adds dL/dθ into `grads` (same layout as [`params`](Self::params))
    /// and returns dL/dx. ReLU's subgradient at 0 is taken as 0.
    pub fn backward(&self, trace: &Trace, dl_dy: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if dl_dy.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                got: dl_dy.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        if trace.values.len() != self.dims.len() {
            return Err(Error::Shape {
                expected: self.dims.len(),
                got: trace.values.len(),
            });
        }
        let mut delta = dl_dy.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (off, fan_in, fan_out) = self.layer_offset(l);
            let out = &trace.values[l + 1];
            let input = &trace.values[l];
            let act = self.activations[l];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(*y);
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let (gw, gb) =
                grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let mut d_input = vec![0.0; fan_in];
            for j in 0..fan_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                gb[j] += dj;
                let row = j * fan_in;
                for i in 0..fan_in {
                    gw[row + i] += dj * input[i];
                    d_input[i] += dj * w[row + i];
                }
            }
            delta = d_input;
        }
        Ok(delta)
    }

    /// Parameter and input gradients of `L` at `x`, given `dL/dy`.
    pub fn gradients(&self, x: &[f64], dl_dy: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward(&trace, dl_dy, &mut grads)?;
        Ok((grads, dx))
    }

    /// θ ← τ·θ_source + (1 − τ)·θ.
    pub fn soft_update_from(&mut self, source: &DenseNet, tau: f64) {
        debug_assert_eq!(self.dims, source.dims);
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.dims == other.dims && self.activations == other.activations
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    /// Row-major, one row per output unit.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetFile {
    format_version: u32,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerFile>,
}

impl From<DenseNet> for NetFile {
    fn from(net: DenseNet) -> Self {
        let layers = (0..net.num_layers())
            .map(|l| LayerFile {
                inputs: net.dims[l],
                outputs: net.dims[l + 1],
                activation: net.activations[l],
                weights: net.layer_weights(l).to_vec(),
                bias: net.layer_bias(l).to_vec(),
            })
            .collect();
        NetFile {
            format_version: NET_FORMAT_VERSION,
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
            layers,
        }
    }
}

impl TryFrom<NetFile> for DenseNet {
    type Error = String;

    fn try_from(f: NetFile) -> std::result::Result<Self, String> {
        if f.format_version != NET_FORMAT_VERSION {
            return Err(format!(
                "unsupported network format version {}",
                f.format_version
            ));
        }
        let mut dims = vec![f.input_dim];
        let mut activations = Vec::new();
        let mut params = Vec::new();
        for (l, layer) in f.layers.into_iter().enumerate() {
            if layer.inputs != *dims.last().unwrap() {
                return Err(format!(
                    "layer {l} expects {} inputs, previous layer has {}",
                    layer.inputs,
                    dims.last().unwrap()
                ));
            }
            if layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(format!("layer {l} parameter arrays do not match its shape"));
            }
            if !layer
                .weights
                .iter()
                .chain(&layer.bias)
                .all(|x| x.is_finite())
            {
                return Err(format!("layer {l} has non-finite parameters"));
            }
            dims.push(layer.outputs);
            activations.push(layer.activation);
            params.extend(layer.weights);
            params.extend(layer.bias);
        }
        if *dims.last().unwrap() != f.output_dim || activations.is_empty() {
            return Err("output dimension does not match the last layer".into());
        }
        Ok(DenseNet {
            dims,
            activations,
            params,
        })
    }
}
