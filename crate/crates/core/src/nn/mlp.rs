use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Negative-side slope used when none is configured.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Init {
    /// Weights `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`, zero biases.
    Glorot,
    /// Weights and biases `U(-b, b)` with `b = 1 / sqrt(fan_in)`.
    #[default]
    FanIn,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "glorot" | "xavier" => Ok(Init::Glorot),
            "fan_in" | "fanin" | "torch" => Ok(Init::FanIn),
            other => Err(Error::InvalidParameter(format!("unknown init scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(slope)
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and activation `a`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::LeakyRelu { slope } => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::lit(slope)
                }
            }
            Activation::Sigmoid => a * (T::one() - a),
            Activation::Identity => T::one(),
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// One dense layer. Weights are stored `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} outputs",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("layer bias".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Parameters of a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Layer<T>>,
}

/// Per-layer values saved by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input; `activations[k + 1]` is the output of layer `k`.
    activations: Vec<Matrix<T>>,
    pre_activations: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn input(&self) -> &Matrix<T> {
        &self.activations[0]
    }

    /// Layer inputs to the activation, one matrix per layer.
    pub fn pre_activations(&self) -> &[Matrix<T>] {
        &self.pre_activations
    }

    pub fn output(&self) -> &Matrix<T> {
        self.activations.last().expect("cache holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients, shaped like the [`MlpParams`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![T::zero(); l.out_dim()],
                })
                .collect(),
        }
    }

    /// Weight and bias buffers, in the same order as [`MlpParams::tensors_mut`].
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors().flatten().copied().collect()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.shape() != b.weights.shape() || a.bias.len() != b.bias.len() {
                return Err(Error::Shape("gradient tensor shape mismatch".into()));
            }
            for (x, &y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().flatten().all(|v| *v == T::zero())
    }
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `layers` lists `(width, activation)` per layer.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        layers: &[(usize, Activation)],
        rng: &mut R,
    ) -> Result<Self> {
        Self::init(input_dim, layers, Init::Glorot, rng)
    }

    /// Random parameters under `scheme`. Weights are drawn row by row, then biases, layer by layer.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        layers: &[(usize, Activation)],
        scheme: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let mut built = Vec::with_capacity(layers.len());
        let mut fan_in = input_dim;
        for &(fan_out, activation) in layers {
            let (w_lim, b_lim) = match scheme {
                Init::Glorot => ((6.0 / (fan_in + fan_out) as f64).sqrt(), 0.0),
                Init::FanIn => {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    (b, b)
                }
            };
            let weights =
                Matrix::from_fn(fan_out, fan_in, |_, _| T::lit(rng.gen_range(-w_lim..=w_lim)));
            let bias = (0..fan_out)
                .map(|_| {
                    if b_lim > 0.0 {
                        T::lit(rng.gen_range(-b_lim..=b_lim))
                    } else {
                        T::zero()
                    }
                })
                .collect();
            built.push(Layer::new(weights, bias, activation)?);
            fan_in = fan_out;
        }
        Self::new(built)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut it = values.iter();
        for t in self.tensors_mut() {
            for (dst, src) in t.iter_mut().zip(&mut it) {
                *dst = *src;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|v| v.is_finite())
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let z = affine(layer, activations.last().expect("nonempty"));
            let a = z.map(|v| layer.activation.apply(v));
            pre_activations.push(z);
            activations.push(a);
        }
        let output = activations.last().expect("nonempty").clone();
        Ok((
            output,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Forward pass that keeps no cache.
    pub fn predict(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let mut current = input.clone();
        for layer in &self.layers {
            let act = layer.activation;
            current = affine(layer, &current).map(|v| act.apply(v));
        }
        Ok(current)
    }

    /// Gradients of a loss whose derivative with respect to the network output is `upstream`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        upstream: &Matrix<T>,
    ) -> Result<(Gradients<T>, Matrix<T>)> {
        if cache.pre_activations.len() != self.layers.len() {
            return Err(Error::Shape("cache was produced by a different network".into()));
        }
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let batch = cache.batch_size();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[k];
            let a = &cache.activations[k + 1];
            for ((d, &zv), &av) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(a.as_slice())
            {
                *d *= layer.activation.derivative(zv, av);
            }
            let input = &cache.activations[k];
            let (out_dim, in_dim) = layer.weights.shape();
            let g = &mut grads.layers[k];
            for b in 0..batch {
                let drow = delta.row(b);
                let xrow = input.row(b);
                for o in 0..out_dim {
                    let dv = drow[o];
                    if dv == T::zero() {
                        continue;
                    }
                    g.bias[o] += dv;
                    for (gw, &x) in g.weights.row_mut(o).iter_mut().zip(xrow) {
                        *gw += dv * x;
                    }
                }
            }
            let mut next = Matrix::zeros(batch, in_dim);
            for b in 0..batch {
                let drow = delta.row(b);
                let nrow = next.row_mut(b);
                for (o, &dv) in drow.iter().enumerate().take(out_dim) {
                    if dv == T::zero() {
                        continue;
                    }
                    for (n, &w) in nrow.iter_mut().zip(layer.weights.row(o)) {
                        *n += dv * w;
                    }
                }
            }
            delta = next;
        }
        Ok((grads, delta))
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }
}

fn affine<T: Scalar>(layer: &Layer<T>, input: &Matrix<T>) -> Matrix<T> {
    let (out_dim, _) = layer.weights.shape();
    let mut z = Matrix::zeros(input.rows(), out_dim);
    for b in 0..input.rows() {
        let x = input.row(b);
        let zrow = z.row_mut(b);
        for (o, zv) in zrow.iter_mut().enumerate() {
            let w = layer.weights.row(o);
            let mut acc = layer.bias[o];
            for (&wi, &xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            *zv = acc;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Layer::new(Matrix::<f64>::identity(3), vec![0.0; 3], Activation::Identity)
            .unwrap();
        let net = MlpParams::new(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.0, 0.25, -7.0]]).unwrap();
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_sigmoid_layer_gives_one_half() {
        let layer =
            Layer::new(Matrix::<f64>::zeros(2, 4), vec![0.0; 2], Activation::Sigmoid).unwrap();
        let net = MlpParams::new(vec![layer]).unwrap();
        let x = Matrix::from_fn(5, 4, |i, j| (i * 7 + j) as f64 - 9.0);
        let (y, _) = net.forward(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn linear_input_grad_is_weight_column_sums() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 5.0, 0.5]]).unwrap();
        let net =
            MlpParams::new(vec![Layer::new(w, vec![0.0, 0.0], Activation::Identity).unwrap()])
                .unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -0.1, 2.0]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (_, gin) = net
            .backward(&cache, &Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap())
            .unwrap();
        assert_eq!(gin.as_slice(), &[-3.0, 7.0, 3.5]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let net = MlpParams::<f64>::glorot(
            3,
            &[(4, Activation::leaky_relu()), (1, Activation::Sigmoid)],
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let (_, cache) = net.forward(&x).unwrap();
        let (g, gin) = net.backward(&cache, &Matrix::zeros(6, 1)).unwrap();
        assert!(g.is_zero());
        assert!(gin.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let net = MlpParams::new(vec![Layer::new(
            Matrix::<f64>::zeros(1, 3),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        assert!(matches!(net.forward(&Matrix::zeros(2, 2)), Err(Error::Shape(_))));
        let (_, cache) = net.forward(&Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(
            net.backward(&cache, &Matrix::zeros(3, 1)),
            Err(Error::Shape(_))
        ));
        let bad = vec![
            Layer::new(Matrix::<f64>::zeros(2, 3), vec![0.0; 2], Activation::Identity).unwrap(),
            Layer::new(Matrix::<f64>::zeros(1, 3), vec![0.0], Activation::Identity).unwrap(),
        ];
        assert!(MlpParams::new(bad).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0f64), 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn works_in_single_precision() {
        let layer =
            Layer::new(Matrix::<f32>::identity(2), vec![0.5, -0.5], Activation::Identity).unwrap();
        let net = MlpParams::new(vec![layer]).unwrap();
        let y = net.predict(&Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[1.5f32, 0.5]);
    }
}
