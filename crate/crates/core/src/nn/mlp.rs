use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
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

    /// Derivative expressed through the activation output `y = f(z)`.
    #[inline]
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

/// Fully connected architecture: input, hidden widths, output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_layers,
            output_dim,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "network dims must be positive (input {}, output {})",
                self.input_dim, self.output_dim
            )));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden layer width 0".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden_layers {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_layers.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// True if the hidden shape lies on the sweep grid (3 or 4 layers of
    /// width 512 or 1024).
    pub fn on_sweep_grid(&self) -> bool {
        matches!(self.hidden_layers.len(), 3 | 4)
            && self.hidden_layers.iter().all(|&w| w == 512 || w == 1024)
    }
}

/// Where one layer lives inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Start of the `fan_in x fan_out` row-major weight block.
    pub weights: usize,
    /// Start of the `fan_out` bias block.
    pub bias: usize,
}

/// Flat buffer of all weights and biases plus the layer offset table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    values: Vec<f64>,
    layers: Vec<LayerOffsets>,
}

impl ParameterSet {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let mut layers = Vec::with_capacity(spec.num_layers());
        let mut cursor = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            let weights = cursor;
            let bias = weights + fan_in * fan_out;
            cursor = bias + fan_out;
            layers.push(LayerOffsets {
                fan_in,
                fan_out,
                weights,
                bias,
            });
        }
        ParameterSet {
            values: vec![0.0; cursor],
            layers,
        }
    }

    /// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut params = Self::zeros(spec);
        let mut rng = rng::root(seed);
        params.init_with(&mut rng);
        params
    }

    fn init_with(&mut self, rng: &mut Stream) {
        for layer in self.layers.clone() {
            let scale = (2.0 / layer.fan_in as f64).sqrt();
            for w in &mut self.values[layer.weights..layer.bias] {
                *w = scale * rng::standard_normal(rng);
            }
        }
    }

    /// Rebuilds a parameter set from a flat buffer laid out for `spec`.
    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(spec);
        if values.len() != params.values.len() {
            return Err(Error::InputShape(format!(
                "parameter buffer has {} entries, architecture needs {}",
                values.len(),
                params.values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("parameter {i} is not finite")));
        }
        params.values = values;
        Ok(params)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layers(&self) -> &[LayerOffsets] {
        &self.layers
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = self.layers[layer];
        &self.values[l.weights..l.bias]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layers[layer];
        &mut self.values[l.weights..l.bias]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = self.layers[layer];
        &self.values[l.bias..l.bias + l.fan_out]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layers[layer];
        &mut self.values[l.bias..l.bias + l.fan_out]
    }

    /// Layer index owning flat entry `index`.
    pub fn layer_of(&self, index: usize) -> usize {
        self.layers
            .iter()
            .position(|l| index < l.bias + l.fan_out)
            .unwrap_or(self.layers.len() - 1)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the bit patterns.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    fn matches(&self, spec: &MlpSpec) -> bool {
        let dims = spec.layer_dims();
        dims.len() == self.layers.len()
            && dims
                .iter()
                .zip(&self.layers)
                .all(|(&(i, o), l)| i == l.fan_in && o == l.fan_out)
    }
}

/// Activations saved by [`mlp_forward`] for the matching [`mlp_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    fingerprint: u64,
    /// `activations[0]` is the input; `activations[l]` the output of hidden
    /// layer `l`.
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

fn check_spec(spec: &MlpSpec, params: &ParameterSet) -> Result<()> {
    if !params.matches(spec) {
        return Err(Error::InputShape(
            "parameter set was built for a different architecture".into(),
        ));
    }
    Ok(())
}

/// Batched forward pass. Rows of `inputs` are samples.
pub fn mlp_forward(
    spec: &MlpSpec,
    params: &ParameterSet,
    inputs: &Matrix,
) -> Result<(Matrix, ForwardCache)> {
    let (out, activations) = forward_impl(spec, params, inputs, true)?;
    let cache = ForwardCache {
        batch: inputs.rows(),
        fingerprint: params.fingerprint(),
        activations,
    };
    Ok((out, cache))
}

/// Forward pass without keeping activations for a backward pass.
pub fn mlp_predict(spec: &MlpSpec, params: &ParameterSet, inputs: &Matrix) -> Result<Matrix> {
    forward_impl(spec, params, inputs, false).map(|(out, _)| out)
}

fn forward_impl(
    spec: &MlpSpec,
    params: &ParameterSet,
    inputs: &Matrix,
    keep: bool,
) -> Result<(Matrix, Vec<Matrix>)> {
    check_spec(spec, params)?;
    if inputs.cols() != spec.input_dim {
        return Err(Error::InputShape(format!(
            "expected input width {}, got {}",
            spec.input_dim,
            inputs.cols()
        )));
    }
    if let Some(i) = inputs.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!(
            "input row {} column {} is not finite",
            i / spec.input_dim,
            i % spec.input_dim
        )));
    }
    let batch = inputs.rows();
    let mut kept = Vec::with_capacity(if keep { spec.num_layers() } else { 0 });
    if keep {
        kept.push(inputs.clone());
    }
    let mut current: Option<Matrix> = None;
    let last = spec.num_layers() - 1;
    for (l, off) in params.layers().iter().enumerate() {
        let mut z = Matrix::zeros(batch, off.fan_out);
        let bias = params.bias(l);
        for r in 0..batch {
            z.row_mut(r).copy_from_slice(bias);
        }
        let prev = match (&current, keep) {
            (_, true) => kept.last().expect("input present"),
            (Some(m), false) => m,
            (None, false) => inputs,
        };
        gemm(
            batch,
            off.fan_in,
            off.fan_out,
            1.0,
            prev.as_slice(),
            false,
            params.weights(l),
            false,
            1.0,
            z.as_mut_slice(),
        );
        if l == last {
            return Ok((z, kept));
        }
        let act = spec.activation;
        for v in z.as_mut_slice() {
            *v = act.apply(*v);
        }
        if keep {
            kept.push(z);
        } else {
            current = Some(z);
        }
    }
    unreachable!("network has at least one layer")
}

/// Gradient of `sum_rows <output_gradients_row, output_row>` with respect to
/// every parameter, laid out like the [`ParameterSet`].
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &ParameterSet,
    cache: &ForwardCache,
    output_gradients: &Matrix,
) -> Result<Vec<f64>> {
    check_spec(spec, params)?;
    if cache.activations.len() != spec.num_layers() || cache.fingerprint != params.fingerprint() {
        return Err(Error::Cache(
            "cache was produced with different parameters".into(),
        ));
    }
    if output_gradients.rows() != cache.batch || output_gradients.cols() != spec.output_dim {
        return Err(Error::Cache(format!(
            "output gradient is {}x{}, cache holds a batch of {} with output width {}",
            output_gradients.rows(),
            output_gradients.cols(),
            cache.batch,
            spec.output_dim
        )));
    }
    let batch = cache.batch;
    let mut grads = vec![0.0; params.len()];
    let mut delta = output_gradients.clone();
    for l in (0..spec.num_layers()).rev() {
        let off = params.layers()[l];
        let input = &cache.activations[l];
        gemm(
            off.fan_in,
            batch,
            off.fan_out,
            1.0,
            input.as_slice(),
            true,
            delta.as_slice(),
            false,
            0.0,
            &mut grads[off.weights..off.bias],
        );
        let gb = &mut grads[off.bias..off.bias + off.fan_out];
        for r in 0..batch {
            for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                *g += d;
            }
        }
        if l == 0 {
            break;
        }
        let mut upstream = Matrix::zeros(batch, off.fan_in);
        gemm(
            batch,
            off.fan_out,
            off.fan_in,
            1.0,
            delta.as_slice(),
            false,
            params.weights(l),
            true,
            0.0,
            upstream.as_mut_slice(),
        );
        let act = spec.activation;
        for (u, y) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
            *u *= act.derivative_from_output(*y);
        }
        delta = upstream;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_layer_arithmetic() {
        let spec = MlpSpec::new(4, vec![8, 8], 2).unwrap();
        assert_eq!(spec.param_count(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(ParameterSet::zeros(&spec).len(), spec.param_count());
    }

    #[test]
    fn zero_weight_network_outputs_last_bias() {
        let spec = MlpSpec::new(3, vec![4, 4], 2).unwrap();
        let mut params = ParameterSet::zeros(&spec);
        params.bias_mut(2).copy_from_slice(&[0.25, -1.5]);
        params.bias_mut(0).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let x = Matrix::from_rows(&[vec![0.3, -7.0, 2.0], vec![1.0, 1.0, 1.0]]);
        let y = mlp_predict(&spec, &params, &x).unwrap();
        assert_eq!(y.row(0), &[0.25, -1.5]);
        assert_eq!(y.row(1), &[0.25, -1.5]);
    }

    #[test]
    fn identity_layer_passes_positive_input_through() {
        let spec = MlpSpec::new(3, vec![], 3).unwrap();
        let mut params = ParameterSet::zeros(&spec);
        for i in 0..3 {
            params.weights_mut(0)[i * 3 + i] = 1.0;
        }
        let x = Matrix::from_rows(&[vec![0.5, 1.5, 2.5]]);
        assert_eq!(mlp_predict(&spec, &params, &x).unwrap().row(0), x.row(0));
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let spec = MlpSpec::new(2, vec![3], 1).unwrap();
        let params = ParameterSet::init(&spec, 1);
        let bad = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            mlp_forward(&spec, &params, &bad),
            Err(Error::InputShape(_))
        ));
        let nan = Matrix::from_rows(&[vec![1.0, f64::NAN]]);
        assert!(matches!(
            mlp_forward(&spec, &params, &nan),
            Err(Error::NumericInput(_))
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let spec = MlpSpec::new(3, vec![5, 5], 2).unwrap();
        let params = ParameterSet::init(&spec, 3);
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]]);
        let (_, cache) = mlp_forward(&spec, &params, &x).unwrap();
        let g = mlp_backward(&spec, &params, &cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn final_bias_gradient_of_scalar_output_is_one() {
        let spec = MlpSpec::new(2, vec![4], 1).unwrap();
        let params = ParameterSet::init(&spec, 9);
        let x = Matrix::from_rows(&[vec![0.7, -0.2]]);
        let (_, cache) = mlp_forward(&spec, &params, &x).unwrap();
        let g = mlp_backward(&spec, &params, &cache, &Matrix::from_rows(&[vec![1.0]])).unwrap();
        let last = params.layers()[1];
        assert_eq!(g[last.bias], 1.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let spec = MlpSpec::new(2, vec![3], 1).unwrap();
        let mut params = ParameterSet::init(&spec, 2);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let (_, cache) = mlp_forward(&spec, &params, &x).unwrap();
        params.as_mut_slice()[0] += 1.0;
        let err = mlp_backward(&spec, &params, &cache, &Matrix::zeros(1, 1));
        assert!(matches!(err, Err(Error::Cache(_))));
        params.as_mut_slice()[0] -= 1.0;
        let err = mlp_backward(&spec, &params, &cache, &Matrix::zeros(2, 1));
        assert!(matches!(err, Err(Error::Cache(_))));
    }

    #[test]
    fn init_is_deterministic_and_he_scaled() {
        let spec = MlpSpec::new(200, vec![300], 1).unwrap();
        let a = ParameterSet::init(&spec, 42);
        let b = ParameterSet::init(&spec, 42);
        assert_eq!(a.as_slice(), b.as_slice());
        let w = a.weights(0);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 200.0).abs() < 0.1 * 2.0 / 200.0, "var {var}");
        assert!(a.bias(0).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn sweep_grid_shape() {
        assert!(MlpSpec::new(6, vec![512; 3], 12).unwrap().on_sweep_grid());
        assert!(!MlpSpec::new(6, vec![64; 3], 12).unwrap().on_sweep_grid());
    }
}
