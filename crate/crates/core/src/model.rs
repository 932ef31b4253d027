//! Time-conditioned dense denoiser and its reverse-mode gradient.
//!
//! The network maps `(x_t, t)` to a noise prediction of the same dimension as
//! `x_t`. A sinusoidal embedding of `t` is concatenated to the input, then a
//! stack of dense layers with a smooth activation produces the output. The
//! backward pass is written out layer by layer over the flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::params::{dot, GradientVector, Layout, ParameterVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Argument("input_dim must be positive".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Argument("hidden_dims must be positive".into()));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Argument(
                "time_embed_dim must be a positive even number".into(),
            ));
        }
        Ok(())
    }

    /// Layer widths from the concatenated input to the output.
    fn widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim + self.time_embed_dim);
        widths.extend(&self.hidden_dims);
        widths.push(self.input_dim);
        widths
    }
}

/// Squared-error noise-prediction loss, optionally scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMetric {
    /// Mean over coordinates of `(pred - eps)^2`, times `weight`.
    L2 { weight: f64 },
}

impl Default for LossMetric {
    fn default() -> Self {
        LossMetric::L2 { weight: 1.0 }
    }
}

impl LossMetric {
    /// Loss value and its derivative with respect to the prediction.
    fn evaluate(self, pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        let LossMetric::L2 { weight } = self;
        let inv_d = 1.0 / pred.len() as f64;
        let residual: Vec<f64> = pred.iter().zip(target).map(|(p, e)| p - e).collect();
        let loss = weight * dot(&residual, &residual) * inv_d;
        let grad = residual.iter().map(|r| 2.0 * weight * inv_d * r).collect();
        (loss, grad)
    }
}

#[derive(Debug, Clone)]
struct Dense {
    weight: std::ops::Range<usize>,
    bias: std::ops::Range<usize>,
    inputs: usize,
    outputs: usize,
}

/// Intermediate values kept from the forward pass for backpropagation.
struct Trace {
    /// Layer inputs; `inputs[0]` is the concatenated `[x_t, embed(t)]`.
    inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pre_activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// A denoiser architecture bound to its parameter layout.
#[derive(Debug, Clone)]
pub struct Denoiser {
    spec: DenoiserSpec,
    layout: Layout,
    layers: Vec<Dense>,
    freqs: Vec<f64>,
}

impl Denoiser {
    pub fn new(spec: DenoiserSpec) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut parts = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            parts.push((format!("layer{l}.weight"), vec![pair[1], pair[0]]));
            parts.push((format!("layer{l}.bias"), vec![pair[1]]));
        }
        let layout = Layout::packed(parts);
        let layers = layout
            .segments()
            .chunks(2)
            .map(|pair| Dense {
                weight: pair[0].range(),
                bias: pair[1].range(),
                outputs: pair[0].shape[0],
                inputs: pair[0].shape[1],
            })
            .collect();
        let half = spec.time_embed_dim / 2;
        let freqs = (0..half)
            .map(|j| (-(10_000f64.ln()) * j as f64 / half as f64).exp())
            .collect();
        Ok(Denoiser {
            spec,
            layout,
            layers,
            freqs,
        })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total_len()
    }

    /// Uniform initialization in `±1/sqrt(fan_in)` per layer.
    pub fn init(&self, seed: u64) -> ParameterVector {
        let mut rng = rng::seeded(seed);
        let mut params = ParameterVector::zeros(self.layout.clone());
        for layer in &self.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            let values = params.values_mut();
            for v in &mut values[layer.weight.clone()] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut values[layer.bias.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    /// Sinusoidal embedding of the timestep.
    pub fn time_embedding(&self, t: usize) -> Vec<f64> {
        let t = t as f64;
        self.freqs
            .iter()
            .map(|f| (t * f).sin())
            .chain(self.freqs.iter().map(|f| (t * f).cos()))
            .collect()
    }

    fn check_params(&self, params: &ParameterVector) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("parameters", self.num_params(), params.len()));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64], t: usize) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::shape("denoiser input", self.spec.input_dim, x.len()));
        }
        if t == 0 {
            return Err(Error::Range {
                what: "timestep",
                value: t,
                min: 1,
                max: usize::MAX,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                segment: "input".into(),
            });
        }
        Ok(())
    }

    fn run(&self, params: &[f64], x: &[f64], t: usize) -> Result<Trace> {
        let act = self.spec.activation;
        let layers = &self.layers;
        let mut input: Vec<f64> = x.iter().copied().chain(self.time_embedding(t)).collect();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre_activations = Vec::with_capacity(layers.len() - 1);
        for (l, layer) in layers.iter().enumerate() {
            let w = &params[layer.weight.clone()];
            let b = &params[layer.bias.clone()];
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| b[o] + dot(&w[o * layer.inputs..(o + 1) * layer.inputs], &input))
                .collect();
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    segment: format!("layer{l}"),
                });
            }
            inputs.push(input);
            if l + 1 == layers.len() {
                return Ok(Trace {
                    inputs,
                    pre_activations,
                    output: z,
                });
            }
            input = z.iter().map(|&v| act.apply(v)).collect();
            pre_activations.push(z);
        }
        unreachable!("denoiser has at least one layer")
    }

    /// Predicted noise for `x_t` at timestep `t`.
    pub fn forward(&self, params: &ParameterVector, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(x_t, t)?;
        Ok(self.run(params.values(), x_t, t)?.output)
    }

    /// Backpropagates `grad_output` through a recorded forward pass.
    fn backward(&self, params: &[f64], trace: &Trace, grad_output: Vec<f64>) -> Vec<f64> {
        let act = self.spec.activation;
        let layers = &self.layers;
        let mut grad = vec![0.0; self.num_params()];
        let mut delta = grad_output;
        for (l, layer) in layers.iter().enumerate().rev() {
            let n = layer.inputs;
            let input = &trace.inputs[l][..n];
            grad[layer.bias.clone()].copy_from_slice(&delta);
            let gw = &mut grad[layer.weight.clone()];
            if l == 0 {
                for (o, &d) in delta.iter().enumerate() {
                    let grow = &mut gw[o * n..(o + 1) * n];
                    for i in 0..n {
                        grow[i] = d * input[i];
                    }
                }
                break;
            }
            let w = &params[layer.weight.clone()];
            let mut upstream = vec![0.0; n];
            for (o, &d) in delta.iter().enumerate() {
                let row = &w[o * n..(o + 1) * n];
                let grow = &mut gw[o * n..(o + 1) * n];
                let up = &mut upstream[..n];
                for i in 0..n {
                    grow[i] = d * input[i];
                    up[i] += row[i] * d;
                }
            }
            let z = &trace.pre_activations[l - 1];
            delta = upstream
                .iter()
                .zip(z)
                .map(|(u, &zv)| u * act.derivative(zv))
                .collect();
        }
        grad
    }

    /// Noise-prediction loss at `(x0, t, eps)` and its exact parameter gradient.
    pub fn loss_and_grad(
        &self,
        params: &ParameterVector,
        schedule: &NoiseSchedule,
        x0: &[f64],
        t: usize,
        eps: &[f64],
        metric: LossMetric,
    ) -> Result<(f64, GradientVector)> {
        self.check_params(params)?;
        if eps.len() != self.spec.input_dim {
            return Err(Error::shape("noise vector", self.spec.input_dim, eps.len()));
        }
        let x_t = schedule.q_sample(x0, t, eps)?;
        self.check_input(&x_t, t)?;
        let trace = self.run(params.values(), &x_t, t)?;
        let (loss, grad_output) = metric.evaluate(&trace.output, eps);
        if !loss.is_finite() {
            return Err(Error::Numeric {
                segment: "loss".into(),
            });
        }
        let grad = self.backward(params.values(), &trace, grad_output);
        if let Some(seg) = self
            .layout
            .segments()
            .iter()
            .find(|s| grad[s.range()].iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric {
                segment: seg.name.clone(),
            });
        }
        Ok((loss, GradientVector::new(grad)))
    }
}
