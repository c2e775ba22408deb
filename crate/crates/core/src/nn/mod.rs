//! Minimal differentiable models: a three-layer perceptron with Gaussian and
//! categorical heads, and tabular autoregressive token models.

pub mod dist;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tabular;

pub use dist::{categorical_logprob_grad, softmax, CategoricalDist, GaussianHead};
pub use mlp::{
    gaussian_logprob_grad, mlp_categorical_logprob_grad, mlp_forward, Activation, ForwardCache, HeadKind, HeadOutput,
    MlpModel, MlpSpec, OUTPUT_LAYER,
};
pub use optim::{sgd_step, Adam, Optimizer};
pub use params::{Layout, ParamVector, Segment};
pub use tabular::{TabularLm, TokenModel};
