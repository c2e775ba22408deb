//! Three-layer perceptron with a Gaussian or categorical head.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dist::{CategoricalDist, GaussianHead};
use crate::nn::params::{Layout, ParamVector};
use crate::rng;

/// Parameter segments making up the final linear layer.
pub const OUTPUT_LAYER: [&str; 2] = ["out.weight", "out.bias"];

const LAYER_NAMES: [(&str, &str); 3] = [("l0.weight", "l0.bias"), ("l1.weight", "l1.bias"), ("out.weight", "out.bias")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    /// Two outputs: mean and raw log-std, the latter clamped to `[lo, hi]`.
    Gaussian {
        log_std_min: f64,
        log_std_max: f64,
    },
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub head: HeadKind,
}

impl MlpSpec {
    /// The toy-control policy: 3 inputs, two tanh layers of 60, Gaussian head
    /// with log-std clamped to `[-3, 1]`. 4022 parameters.
    pub fn toy_policy() -> Self {
        MlpSpec {
            input_dim: 3,
            hidden_dims: vec![60, 60],
            output_dim: 2,
            activation: Activation::Tanh,
            head: HeadKind::Gaussian { log_std_min: -3.0, log_std_max: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.len() != 2 {
            return Err(Error::Config(format!("expected two hidden layers, got {}", self.hidden_dims.len())));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if let HeadKind::Gaussian { log_std_min, log_std_max } = self.head {
            if self.output_dim != 2 {
                return Err(Error::Config("a Gaussian head needs exactly 2 outputs".into()));
            }
            if !(log_std_min < log_std_max) {
                return Err(Error::Config("empty log-std clamp interval".into()));
            }
        }
        Ok(())
    }

    fn widths(&self) -> [usize; 4] {
        [self.input_dim, self.hidden_dims[0], self.hidden_dims[1], self.output_dim]
    }

    pub fn layout(&self) -> Arc<Layout> {
        let w = self.widths();
        let mut parts = Vec::with_capacity(6);
        for (l, (wname, bname)) in LAYER_NAMES.iter().enumerate() {
            parts.push((*wname, vec![w[l + 1], w[l]]));
            parts.push((*bname, vec![w[l + 1]]));
        }
        Layout::new(parts)
    }
}

/// Intermediate values retained by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub hidden: [Vec<f64>; 2],
    pub output: Vec<f64>,
}

/// Any of the two heads, as returned by [`mlp_forward`].
#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    Gaussian(GaussianHead),
    Categorical(CategoricalDist),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl MlpModel {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = ParamVector::zeros(spec.layout());
        Ok(MlpModel { spec, params })
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng = rng::seeded(seed);
        let w = model.spec.widths();
        for (l, (wname, bname)) in LAYER_NAMES.iter().enumerate() {
            let bound = 1.0 / (w[l] as f64).sqrt();
            for name in [wname, bname] {
                for v in model.params.segment_mut(name).expect("layout segment") {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(model)
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        if params.layout().as_ref() != self.params.layout().as_ref() {
            return Err(Error::Layout("parameters do not match the model layout".into()));
        }
        Ok(MlpModel { spec: self.spec.clone(), params })
    }

    pub fn size(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        let (w, b) = LAYER_NAMES[index];
        (self.params.segment(w).expect("weight"), self.params.segment(b).expect("bias"))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.spec.input_dim {
            return Err(Error::Dimension { expected: self.spec.input_dim, got: input.len() });
        }
        let act = self.spec.activation;
        let h0 = affine(self.layer(0), input, |z| act.apply(z));
        let h1 = affine(self.layer(1), &h0, |z| act.apply(z));
        let output = affine(self.layer(2), &h1, |z| z);
        Ok(ForwardCache { input: input.to_vec(), hidden: [h0, h1], output })
    }

    pub fn head(&self, output: &[f64]) -> HeadOutput {
        match self.spec.head {
            HeadKind::Gaussian { log_std_min, log_std_max } => {
                HeadOutput::Gaussian(GaussianHead::from_raw(output[0], output[1], (log_std_min, log_std_max)))
            }
            HeadKind::Categorical => HeadOutput::Categorical(CategoricalDist::from_logits(output.to_vec())),
        }
    }

    pub fn gaussian(&self, input: &[f64]) -> Result<(GaussianHead, ForwardCache)> {
        let cache = self.forward(input)?;
        match self.head(&cache.output) {
            HeadOutput::Gaussian(h) => Ok((h, cache)),
            HeadOutput::Categorical(_) => Err(Error::Config("model has a categorical head".into())),
        }
    }

    /// Accumulate `scale * d(output)/d(params)^T d_output` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], scale: f64, grad: &mut ParamVector) {
        debug_assert_eq!(d_output.len(), self.spec.output_dim);
        let act = self.spec.activation;
        let d_out: Vec<f64> = d_output.iter().map(|d| d * scale).collect();
        let d_h1 = accumulate_layer(self, grad, 2, &d_out, &cache.hidden[1]);
        let d_z1: Vec<f64> =
            d_h1.iter().zip(&cache.hidden[1]).map(|(d, h)| d * act.derivative_from_output(*h)).collect();
        let d_h0 = accumulate_layer(self, grad, 1, &d_z1, &cache.hidden[0]);
        let d_z0: Vec<f64> =
            d_h0.iter().zip(&cache.hidden[0]).map(|(d, h)| d * act.derivative_from_output(*h)).collect();
        accumulate_layer(self, grad, 0, &d_z0, &cache.input);
    }
}

fn affine((w, b): (&[f64], &[f64]), x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            f(bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect()
}

/// Adds this layer's parameter gradient and returns the gradient wrt its input.
fn accumulate_layer(model: &MlpModel, grad: &mut ParamVector, index: usize, d_z: &[f64], input: &[f64]) -> Vec<f64> {
    let (wname, bname) = LAYER_NAMES[index];
    let n_in = input.len();
    {
        let gw = grad.segment_mut(wname).expect("weight grad");
        for (o, dz) in d_z.iter().enumerate() {
            if *dz == 0.0 {
                continue;
            }
            for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                *g += dz * x;
            }
        }
    }
    for (g, dz) in grad.segment_mut(bname).expect("bias grad").iter_mut().zip(d_z) {
        *g += dz;
    }
    if index == 0 {
        return Vec::new();
    }
    let w = model.params.segment(wname).expect("weight");
    let mut d_in = vec![0.0; n_in];
    for (o, dz) in d_z.iter().enumerate() {
        for (d, wv) in d_in.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
            *d += dz * wv;
        }
    }
    d_in
}

/// Evaluate the model's head at `input`.
pub fn mlp_forward(model: &MlpModel, input: &[f64]) -> Result<HeadOutput> {
    let cache = model.forward(input)?;
    Ok(model.head(&cache.output))
}

/// Gaussian log-density of `action` and its gradient wrt all parameters.
pub fn gaussian_logprob_grad(model: &MlpModel, input: &[f64], action: f64) -> Result<(f64, ParamVector, GaussianHead)> {
    let (head, cache) = model.gaussian(input)?;
    let mut grad = ParamVector::zeros(model.params.layout().clone());
    model.backward(&cache, &head.log_prob_output_grad(action), 1.0, &mut grad);
    Ok((head.log_prob(action), grad, head))
}

/// Categorical log-probability of `token` and its gradient wrt all parameters.
pub fn mlp_categorical_logprob_grad(model: &MlpModel, input: &[f64], token: u32) -> Result<(f64, ParamVector)> {
    let cache = model.forward(input)?;
    let dist = match model.head(&cache.output) {
        HeadOutput::Categorical(d) => d,
        HeadOutput::Gaussian(_) => return Err(Error::Config("model has a Gaussian head".into())),
    };
    let (lp, logit_grad) = crate::nn::dist::categorical_logprob_grad(&dist, token)?;
    let mut grad = ParamVector::zeros(model.params.layout().clone());
    model.backward(&cache, &logit_grad, 1.0, &mut grad);
    Ok((lp, grad))
}
