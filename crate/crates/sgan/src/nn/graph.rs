//! Reverse-mode differentiation over a recorded computation graph.
//!
//! Nodes are appended in topological order, so the backward sweep is a
//! single reverse pass over the node list. The graph supports the
//! second-order pattern needed by gradient penalties: the input gradient of
//! a forward pass is itself built out of graph operations (transposed
//! matmuls against the weight leaves, activation masks held constant, and
//! the sigmoid derivative taken from forward nodes), so differentiating a
//! scalar of that input gradient with respect to the parameters is ordinary
//! first-order backpropagation over the extended graph.

use crate::nn::{leaky_relu, sigmoid, MlpSpec, OutputHead, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    /// Input, parameter or constant; no inputs.
    Leaf,
    /// y = x @ w^T + b (row-broadcast bias); w is out x in.
    Linear { x: NodeId, w: NodeId, b: NodeId },
    /// c = a @ b.
    MatMul { a: NodeId, b: NodeId },
    LeakyRelu { a: NodeId, slope: f64 },
    Sigmoid { a: NodeId },
    MulElem { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { a: NodeId, k: f64 },
    /// a + k elementwise; the gradient passes through unchanged.
    AddScalar { a: NodeId },
    /// ln(clamp(a, lo, hi)); gradient is 1/a inside the clamp range, 0 outside.
    LnClamped { a: NodeId, lo: f64, hi: f64 },
    /// Row sums: B x C -> B x 1.
    RowSum { a: NodeId },
    /// sqrt(a + eps), elementwise; backward reads the forward value.
    SqrtShift { a: NodeId },
    /// Mean over all entries -> 1 x 1.
    MeanAll { a: NodeId },
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded forward computation. Backward consumes the graph, so a tape can
/// only be differentiated once; reuse is a compile-time error.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    root: Option<NodeId>,
}

/// Node ids of one network's weight and bias leaves within a graph.
#[derive(Clone, Debug)]
pub struct MlpBinding {
    pub w: Vec<NodeId>,
    pub b: Vec<NodeId>,
}

/// Nodes produced by one MLP forward pass: the input, every pre-activation,
/// and the head output.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub input: NodeId,
    pub pre: Vec<NodeId>,
    pub output: NodeId,
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            root: None,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn set_root(&mut self, id: NodeId) {
        self.root = Some(id);
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Create leaves for every weight matrix and bias vector of `params`.
    pub fn bind_params(&mut self, params: &ParamStore) -> MlpBinding {
        let mut w = Vec::with_capacity(params.layers.len());
        let mut b = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            w.push(self.push(layer.weight.clone(), Op::Leaf));
            let bias = Matrix::from_vec(1, layer.bias.len(), layer.bias.clone()).unwrap();
            b.push(self.push(bias, Op::Leaf));
        }
        MlpBinding { w, b }
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(x).matmul_transpose(self.value(w));
        let bias = self.value(b);
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let v = out.get(i, j) + bias.get(0, j);
                out.set(i, j, v);
            }
        }
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul { a, b })
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let out = self.value(a).map(|x| leaky_relu(x, slope));
        self.push(out, Op::LeakyRelu { a, slope })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid { a })
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()));
        let mut out = va.clone();
        for (x, y) in out.data_mut().iter_mut().zip(vb.data().iter()) {
            *x *= y;
        }
        self.push(out, Op::MulElem { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()));
        let mut out = va.clone();
        for (x, y) in out.data_mut().iter_mut().zip(vb.data().iter()) {
            *x -= y;
        }
        self.push(out, Op::Sub { a, b })
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = self.value(a).map(|x| k * x);
        self.push(out, Op::Scale { a, k })
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar { a })
    }

    pub fn ln_clamped(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let out = self.value(a).map(|x| x.clamp(lo, hi).ln());
        self.push(out, Op::LnClamped { a, lo, hi })
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mut out = Matrix::zeros(v.rows(), 1);
        for i in 0..v.rows() {
            out.set(i, 0, v.row(i).iter().sum());
        }
        self.push(out, Op::RowSum { a })
    }

    pub fn sqrt_shift(&mut self, a: NodeId, eps: f64) -> NodeId {
        let out = self.value(a).map(|x| (x + eps).sqrt());
        self.push(out, Op::SqrtShift { a })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let n = (v.rows() * v.cols()) as f64;
        let s: f64 = v.data().iter().sum();
        self.push(Matrix::scalar(s / n), Op::MeanAll { a })
    }

    /// Forward pass of an MLP from the input node `x`, reusing the bound
    /// parameter leaves.
    pub fn mlp_forward(&mut self, binding: &MlpBinding, spec: &MlpSpec, x: NodeId) -> MlpTrace {
        let last = spec.layer_count() - 1;
        let mut h = x;
        let mut pre = Vec::with_capacity(spec.layer_count());
        for k in 0..spec.layer_count() {
            let z = self.linear(h, binding.w[k], binding.b[k]);
            pre.push(z);
            h = if k < last {
                self.leaky_relu(z, spec.activation_slope)
            } else {
                match spec.output_head {
                    OutputHead::Linear => z,
                    OutputHead::Sigmoid => self.sigmoid(z),
                }
            };
        }
        MlpTrace {
            input: x,
            pre,
            output: h,
        }
    }

    /// Build the gradient of the (scalar-output) network at the traced
    /// points with respect to its input, as a B x d_in node. The LeakyReLU
    /// activation pattern is held constant (it is locally constant in the
    /// parameters); the sigmoid-head derivative is taken from forward nodes
    /// so that it stays differentiable in the parameters.
    pub fn input_gradient(&mut self, binding: &MlpBinding, spec: &MlpSpec, trace: &MlpTrace) -> NodeId {
        let batch = self.value(trace.input).rows();
        let mut g = match spec.output_head {
            OutputHead::Linear => self.constant(Matrix::ones(batch, 1)),
            OutputHead::Sigmoid => {
                // sigma'(z) = y (1 - y)
                let y = trace.output;
                let neg = self.scale(y, -1.0);
                let one_minus = self.add_scalar(neg, 1.0);
                self.mul_elem(y, one_minus)
            }
        };
        for k in (0..spec.layer_count()).rev() {
            g = self.matmul(g, binding.w[k]);
            if k > 0 {
                let slope = spec.activation_slope;
                let mask = self
                    .value(trace.pre[k - 1])
                    .map(|z| if z >= 0.0 { 1.0 } else { slope });
                let mask = self.constant(mask);
                g = self.mul_elem(g, mask);
            }
        }
        g
    }

    /// Mean over the batch of `(||grad_x D(x)||_2 - target)^2`, with the
    /// epsilon-guarded norm `sqrt(sum g^2 + 1e-12)`.
    pub fn grad_norm_penalty(
        &mut self,
        binding: &MlpBinding,
        spec: &MlpSpec,
        trace: &MlpTrace,
        target: f64,
    ) -> NodeId {
        let g = self.input_gradient(binding, spec, trace);
        let gsq = self.mul_elem(g, g);
        let rs = self.row_sum(gsq);
        let norm = self.sqrt_shift(rs, 1e-12);
        let dev = self.add_scalar(norm, -target);
        let sq = self.mul_elem(dev, dev);
        self.mean_all(sq)
    }

    /// Backpropagate from the scalar node `root` with seed gradient
    /// `loss_grad`. Consumes the graph: a tape cannot be differentiated
    /// twice. Never mutates the parameter stores it was built from; it only
    /// fills a gradient buffer.
    pub fn backward_from(self, root: NodeId, loss_grad: f64) -> Gradients {
        let rv = self.value(root);
        assert_eq!(
            (rv.rows(), rv.cols()),
            (1, 1),
            "backward root must be a scalar node"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(loss_grad));
        for idx in (0..self.nodes.len()).rev() {
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {
                    grads[idx] = Some(dout);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    // y = x @ w^T + b
                    let dx = dout.matmul(self.value(w));
                    let dw = dout.transpose_matmul(self.value(x));
                    let db =
                        Matrix::from_vec(1, dout.cols(), dout.col_sums()).unwrap();
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, b, db);
                }
                Op::MatMul { a, b } => {
                    let da = dout.matmul_transpose(self.value(b));
                    let db = self.value(a).transpose_matmul(&dout);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::LeakyRelu { a, slope } => {
                    let va = self.value(a);
                    let mut da = dout;
                    for (d, &x) in da.data_mut().iter_mut().zip(va.data().iter()) {
                        if x < 0.0 {
                            *d *= slope;
                        }
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::Sigmoid { a } => {
                    let y = &self.nodes[idx].value;
                    let mut da = dout;
                    for (d, &yv) in da.data_mut().iter_mut().zip(y.data().iter()) {
                        *d *= yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::MulElem { a, b } => {
                    let mut da = dout.clone();
                    for (d, &bv) in da.data_mut().iter_mut().zip(self.value(b).data().iter()) {
                        *d *= bv;
                    }
                    let mut db = dout;
                    for (d, &av) in db.data_mut().iter_mut().zip(self.value(a).data().iter()) {
                        *d *= av;
                    }
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a, dout.clone());
                    accumulate(&mut grads, b, dout);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, a, dout.clone());
                    let mut db = dout;
                    db.scale_assign(-1.0);
                    accumulate(&mut grads, b, db);
                }
                Op::Scale { a, k } => {
                    let mut da = dout;
                    da.scale_assign(k);
                    accumulate(&mut grads, a, da);
                }
                Op::AddScalar { a } => {
                    accumulate(&mut grads, a, dout);
                }
                Op::LnClamped { a, lo, hi } => {
                    let va = self.value(a);
                    let mut da = dout;
                    for (d, &x) in da.data_mut().iter_mut().zip(va.data().iter()) {
                        if x > lo && x < hi {
                            *d /= x;
                        } else {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::RowSum { a } => {
                    let va = self.value(a);
                    let mut da = Matrix::zeros(va.rows(), va.cols());
                    for i in 0..va.rows() {
                        let d = dout.get(i, 0);
                        for j in 0..va.cols() {
                            da.set(i, j, d);
                        }
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::SqrtShift { a } => {
                    let y = &self.nodes[idx].value;
                    let mut da = dout;
                    for (d, &yv) in da.data_mut().iter_mut().zip(y.data().iter()) {
                        *d *= 0.5 / yv;
                    }
                    accumulate(&mut grads, a, da);
                }
                Op::MeanAll { a } => {
                    let va = self.value(a);
                    let n = (va.rows() * va.cols()) as f64;
                    let d = dout.get(0, 0) / n;
                    let da = Matrix::from_vec(
                        va.rows(),
                        va.cols(),
                        vec![d; va.rows() * va.cols()],
                    )
                    .unwrap();
                    accumulate(&mut grads, a, da);
                }
            }
        }
        Gradients { grads }
    }

    /// Backward from the graph's declared root with seed 1.
    pub fn backward(self, root: NodeId) -> Gradients {
        self.backward_from(root, 1.0)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradient buffers produced by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Gather the gradients of one network's bound parameters into a store
    /// shaped like the originating [`ParamStore`]. Parameter blocks the loss
    /// does not depend on come back as exact zeros.
    pub fn param_grads(&self, binding: &MlpBinding, like: &ParamStore) -> ParamStore {
        let mut out = like.zeros_like();
        for (k, layer) in out.layers.iter_mut().enumerate() {
            if let Some(dw) = self.get(binding.w[k]) {
                layer.weight = dw.clone();
            }
            if let Some(db) = self.get(binding.b[k]) {
                layer.bias = db.data().to_vec();
            }
        }
        out
    }
}
