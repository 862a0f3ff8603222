//! Small fully connected networks with reverse-mode differentiation.

pub mod graph;
pub mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::Matrix;
use crate::{Result, SganError};

pub use graph::{Gradients, Graph, MlpBinding, MlpTrace, NodeId};
pub use optim::{OptimizerKind, OptimizerState};

/// Output nonlinearity of the last layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Sigmoid,
    Linear,
}

/// Architecture of a multilayer perceptron: layer sizes (input dim first,
/// output dim last), LeakyReLU negative slope for the hidden activations,
/// and the output head applied to the last layer only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation_slope: f64,
    pub output_head: OutputHead,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation_slope: f64, output_head: OutputHead) -> Self {
        MlpSpec {
            layer_sizes,
            activation_slope,
            output_head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(SganError::Config(
                "layer_sizes must have at least an input and an output dim".into(),
            ));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(SganError::Config("layer sizes must be >= 1".into()));
        }
        if !(self.activation_slope > 0.0 && self.activation_slope < 1.0) {
            return Err(SganError::Config(format!(
                "activation_slope must lie in (0, 1), got {}",
                self.activation_slope
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers.
    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Weights and biases of one network, ordered to match its [`MlpSpec`].
/// Weight matrices are `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub layers: Vec<LayerParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ParamStore {
    /// Zero-filled store with the same shapes as `self`.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn add_assign(&mut self, other: &ParamStore) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            a.weight.add_assign(&b.weight);
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for l in self.layers.iter_mut() {
            l.weight.scale_assign(k);
            for b in l.bias.iter_mut() {
                *b *= k;
            }
        }
    }

    /// SHA-256 over the little-endian bytes of all entries, in layer order.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for l in &self.layers {
            for v in l.weight.data() {
                h.update(v.to_le_bytes());
            }
            for v in &l.bias {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }
}

/// LeakyReLU: `x` if `x >= 0`, else `slope * x`.
#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Initialize parameters for `spec`: weights uniform on
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, biases zero. Deterministic in
/// `(spec, seed)`.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layer_count());
    for k in 0..spec.layer_count() {
        let fan_in = spec.layer_sizes[k];
        let fan_out = spec.layer_sizes[k + 1];
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut weight = Matrix::zeros(fan_out, fan_in);
        for v in weight.data_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
        layers.push(LayerParams {
            weight,
            bias: vec![0.0; fan_out],
        });
    }
    Ok(ParamStore { layers })
}

/// Forward pass without recording a tape. Values match the taped forward
/// bit for bit; used for sampling, metrics and level-set grids.
pub fn forward_plain(params: &ParamStore, spec: &MlpSpec, input: &Matrix) -> Result<Matrix> {
    check_input(spec, input)?;
    let last = spec.layer_count() - 1;
    let mut h = input.clone();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = h.matmul_transpose(&layer.weight);
        for i in 0..z.rows() {
            for j in 0..z.cols() {
                let v = z.get(i, j) + layer.bias[j];
                z.set(i, j, v);
            }
        }
        h = if k < last {
            z.map(|x| leaky_relu(x, spec.activation_slope))
        } else {
            match spec.output_head {
                OutputHead::Linear => z,
                OutputHead::Sigmoid => z.map(sigmoid),
            }
        };
    }
    Ok(h)
}

pub(crate) fn check_input(spec: &MlpSpec, input: &Matrix) -> Result<()> {
    if input.cols() != spec.input_dim() {
        return Err(SganError::Shape {
            expected: format!("batch x {}", spec.input_dim()),
            got: format!("{} x {}", input.rows(), input.cols()),
            context: "mlp forward".into(),
        });
    }
    if !input.is_finite() {
        return Err(SganError::Config("non-finite network input".into()));
    }
    Ok(())
}

/// Taped forward pass: returns the output values plus the graph and
/// bindings needed to backpropagate to parameters and inputs.
pub fn forward(
    params: &ParamStore,
    spec: &MlpSpec,
    input: &Matrix,
) -> Result<(Matrix, Graph, MlpBinding, MlpTrace)> {
    check_input(spec, input)?;
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let binding = g.bind_params(params);
    let trace = g.mlp_forward(&binding, spec, x);
    let out = g.value(trace.output).clone();
    Ok((out, g, binding, trace))
}

/// Mean over the batch of `(||grad_x D(x)|| - target)^2`, built as a graph so
/// that backpropagation yields the penalty's gradient with respect to the
/// discriminator parameters (differentiation through the input gradient).
pub fn grad_norm_penalty(
    params: &ParamStore,
    spec: &MlpSpec,
    points: &Matrix,
    target: f64,
) -> Result<(f64, Graph, MlpBinding)> {
    if spec.output_dim() != 1 {
        return Err(SganError::Config(
            "gradient penalty requires a scalar-output discriminator".into(),
        ));
    }
    check_input(spec, points)?;
    let mut g = Graph::new();
    let x = g.input(points.clone());
    let binding = g.bind_params(params);
    let trace = g.mlp_forward(&binding, spec, x);
    let pen = g.grad_norm_penalty(&binding, spec, &trace, target);
    let value = g.value(pen).get(0, 0);
    g.set_root(pen);
    Ok((value, g, binding))
}

/// A network bundled with its optimizer state.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: MlpSpec,
    pub params: ParamStore,
    pub opt: OptimizerState,
}

impl Network {
    pub fn init(spec: MlpSpec, seed: u64, kind: OptimizerKind, lr: f64) -> Result<Network> {
        let params = mlp_init(&spec, seed)?;
        let opt = OptimizerState::new(kind, lr, &params);
        Ok(Network { spec, params, opt })
    }

    /// Checksum over parameters and optimizer moments together.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.params.checksum());
        h.update(self.opt.checksum());
        h.finalize().into()
    }
}

/// Deep copy of parameters and optimizer state; the clone shares no storage
/// with the source.
pub fn clone_params(params: &ParamStore, state: &OptimizerState) -> (ParamStore, OptimizerState) {
    (params.clone(), state.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gen_spec() -> MlpSpec {
        MlpSpec::new(vec![100, 512, 512, 512, 2], 0.01, OutputHead::Linear)
    }

    fn disc_spec() -> MlpSpec {
        MlpSpec::new(vec![2, 512, 512, 512, 1], 0.01, OutputHead::Sigmoid)
    }

    #[test]
    fn init_shapes_generator() {
        let p = mlp_init(&gen_spec(), 7).unwrap();
        let shapes: Vec<(usize, usize)> = p
            .layers
            .iter()
            .map(|l| (l.weight.rows(), l.weight.cols()))
            .collect();
        assert_eq!(shapes, vec![(512, 100), (512, 512), (512, 512), (2, 512)]);
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_shapes_discriminator() {
        let p = mlp_init(&disc_spec(), 7).unwrap();
        let shapes: Vec<(usize, usize)> = p
            .layers
            .iter()
            .map(|l| (l.weight.rows(), l.weight.cols()))
            .collect();
        assert_eq!(shapes, vec![(512, 2), (512, 512), (512, 512), (1, 512)]);
    }

    #[test]
    fn init_deterministic_and_seed_sensitive() {
        let spec = MlpSpec::new(vec![3, 8, 1], 0.01, OutputHead::Linear);
        let a = mlp_init(&spec, 11).unwrap();
        let b = mlp_init(&spec, 11).unwrap();
        let c = mlp_init(&spec, 12).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let spec = MlpSpec::new(vec![16, 4, 1], 0.01, OutputHead::Linear);
        let p = mlp_init(&spec, 3).unwrap();
        let bound0 = 1.0 / 4.0; // 1/sqrt(16)
        assert!(p.layers[0].weight.data().iter().all(|v| v.abs() <= bound0));
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(3.0, 0.01), 3.0);
        assert_eq!(leaky_relu(-1.0, 0.01), -0.01);
        assert_eq!(leaky_relu(0.0, 0.01), 0.0);
    }

    #[test]
    fn forward_zero_net_is_zero_map() {
        let spec = MlpSpec::new(vec![2, 4, 2], 0.01, OutputHead::Linear);
        let p = mlp_init(&spec, 0).unwrap().zeros_like();
        let x = Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.0, 3.0]).unwrap();
        let y = forward_plain(&p, &spec, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_hand_linear() {
        let spec = MlpSpec::new(vec![2, 1], 0.01, OutputHead::Linear);
        let p = ParamStore {
            layers: vec![LayerParams {
                weight: Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
                bias: vec![0.0],
            }],
        };
        let x = Matrix::from_vec(1, 2, vec![0.25, 0.5]).unwrap();
        let y = forward_plain(&p, &spec, &x).unwrap();
        assert_abs_diff_eq!(y.get(0, 0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn sigmoid_head_on_zero_net_is_half() {
        let spec = MlpSpec::new(vec![2, 4, 1], 0.01, OutputHead::Sigmoid);
        let p = mlp_init(&spec, 0).unwrap().zeros_like();
        let x = Matrix::from_vec(2, 2, vec![5.0, -3.0, 0.0, 1.0]).unwrap();
        let y = forward_plain(&p, &spec, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sigmoid_head_outputs_in_open_unit_interval() {
        // at data-scale inputs the pre-activations stay far from the f64
        // saturation point of sigmoid, so the open interval is exact
        let spec = MlpSpec::new(vec![2, 8, 1], 0.01, OutputHead::Sigmoid);
        let p = mlp_init(&spec, 5).unwrap();
        let x = Matrix::from_vec(2, 2, vec![4.0, -4.0, 0.0, 2.5]).unwrap();
        let y = forward_plain(&p, &spec, &x).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn taped_forward_matches_plain_and_never_mutates() {
        let spec = MlpSpec::new(vec![2, 8, 8, 1], 0.01, OutputHead::Sigmoid);
        let p = mlp_init(&spec, 9).unwrap();
        let before = p.checksum();
        let x = Matrix::from_vec(4, 2, vec![0.1, -0.4, 2.0, 1.0, -3.0, 0.0, 0.7, 0.7]).unwrap();
        let plain = forward_plain(&p, &spec, &x).unwrap();
        let (taped, g, binding, trace) = forward(&p, &spec, &x).unwrap();
        assert_eq!(plain.data(), taped.data());
        let mut g = g;
        let m = g.mean_all(trace.output);
        let _grads = g.backward(m).param_grads(&binding, &p);
        assert_eq!(p.checksum(), before);
    }

    #[test]
    fn penalty_unit_norm_weight_is_zero() {
        let spec = MlpSpec::new(vec![2, 1], 0.01, OutputHead::Linear);
        let p = ParamStore {
            layers: vec![LayerParams {
                weight: Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
                bias: vec![0.3],
            }],
        };
        let x = Matrix::from_vec(3, 2, vec![0.0, 0.0, 5.0, -2.0, 1.0, 1.0]).unwrap();
        let (v, _, _) = grad_norm_penalty(&p, &spec, &x, 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn penalty_three_four_weight_is_sixteen() {
        let spec = MlpSpec::new(vec![2, 1], 0.01, OutputHead::Linear);
        let p = ParamStore {
            layers: vec![LayerParams {
                weight: Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap(),
                bias: vec![0.0],
            }],
        };
        let x = Matrix::from_vec(2, 2, vec![0.1, 0.2, -1.0, 3.0]).unwrap();
        let (v, _, _) = grad_norm_penalty(&p, &spec, &x, 1.0).unwrap();
        assert_abs_diff_eq!(v, 16.0, epsilon = 1e-8);
    }

    #[test]
    fn clone_is_independent_and_value_equal() {
        let spec = MlpSpec::new(vec![2, 4, 1], 0.01, OutputHead::Linear);
        let mut net = Network::init(spec, 3, OptimizerKind::default_adam(), 1e-3).unwrap();
        let (mut cp, mut cs) = clone_params(&net.params, &net.opt);
        assert_eq!(cp.checksum(), net.params.checksum());
        let (cp2, _) = clone_params(&cp, &cs);
        assert_eq!(cp2.checksum(), cp.checksum());

        let source_before = net.checksum();
        let mut grads = cp.zeros_like();
        grads.layers[0].weight.data_mut()[0] = 1.0;
        cs.step(&mut cp, &grads).unwrap();
        assert_eq!(net.checksum(), source_before);
        assert_ne!(cp.checksum(), net.params.checksum());

        // and mutating the source leaves the earlier clone untouched
        let clone_before = cp2.checksum();
        net.opt.step(&mut net.params, &grads).unwrap();
        assert_eq!(cp2.checksum(), clone_before);
    }
}
