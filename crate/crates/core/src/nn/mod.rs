//! Dense feed-forward networks with manual backpropagation, Adam, weight
//! clipping and batch normalization of gradient vectors.

mod adam;
mod matrix;
mod mlp;
mod ops;

pub use adam::{AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use matrix::Matrix;
pub use mlp::{
    sigmoid, Activation, ForwardCache, Gradients, Init, Layer, LayerGrad, MlpParams,
    DEFAULT_LEAKY_SLOPE,
};
pub use ops::{clip_weights, l2_norm, l2_normalize, NORMALIZE_TOLERANCE};
