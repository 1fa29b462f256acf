use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tensor};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    Mul,
    ScalarMul,
    TransposeLastTwo,
    SoftmaxLastDim,
    Relu,
    Gelu,
    Selu,
    LeakyRelu,
    LayerNorm,
    MeanLastDim,
    Concat,
    Split,
    EmbeddingLookup,
    Dropout,
    Sigmoid,
    Reshape,
    SumAll,
    MeanAll,
    BceWithLogits,
}

impl OpKind {
    pub const ALL: [OpKind; 22] = [
        OpKind::Matmul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::ScalarMul,
        OpKind::TransposeLastTwo,
        OpKind::SoftmaxLastDim,
        OpKind::Relu,
        OpKind::Gelu,
        OpKind::Selu,
        OpKind::LeakyRelu,
        OpKind::LayerNorm,
        OpKind::MeanLastDim,
        OpKind::Concat,
        OpKind::Split,
        OpKind::EmbeddingLookup,
        OpKind::Dropout,
        OpKind::Sigmoid,
        OpKind::Reshape,
        OpKind::SumAll,
        OpKind::MeanAll,
        OpKind::BceWithLogits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise_mul",
            OpKind::ScalarMul => "scalar_mul",
            OpKind::TransposeLastTwo => "transpose_last_two",
            OpKind::SoftmaxLastDim => "softmax_last_dim",
            OpKind::Relu => "relu",
            OpKind::Gelu => "gelu",
            OpKind::Selu => "selu",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::LayerNorm => "layer_norm",
            OpKind::MeanLastDim => "mean_last_dim",
            OpKind::Concat => "concat",
            OpKind::Split => "split",
            OpKind::EmbeddingLookup => "embedding_lookup",
            OpKind::Dropout => "dropout",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Reshape => "reshape",
            OpKind::SumAll => "sum_all",
            OpKind::MeanAll => "mean_all",
            OpKind::BceWithLogits => "bce_with_logits",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| AutodiffError::UnknownOp(s.to_string()))
    }
}

/// An operation together with its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Matmul,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    TransposeLastTwo,
    SoftmaxLastDim,
    Relu,
    Gelu,
    Selu,
    LeakyRelu { slope: f64 },
    LayerNorm { eps: f64 },
    MeanLastDim,
    Concat { axis: usize },
    Split { axis: usize, sizes: Vec<usize> },
    /// Gathers rows of a `[rows, dim]` table. The output has shape `index_shape + [dim]`.
    EmbeddingLookup { ids: Vec<usize>, index_shape: Vec<usize> },
    Dropout { rate: f64, train: bool },
    Sigmoid,
    Reshape { shape: Vec<usize> },
    SumAll,
    MeanAll,
    BceWithLogits { labels: Vec<f64> },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Matmul => OpKind::Matmul,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::ScalarMul(_) => OpKind::ScalarMul,
            Op::TransposeLastTwo => OpKind::TransposeLastTwo,
            Op::SoftmaxLastDim => OpKind::SoftmaxLastDim,
            Op::Relu => OpKind::Relu,
            Op::Gelu => OpKind::Gelu,
            Op::Selu => OpKind::Selu,
            Op::LeakyRelu { .. } => OpKind::LeakyRelu,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::MeanLastDim => OpKind::MeanLastDim,
            Op::Concat { .. } => OpKind::Concat,
            Op::Split { .. } => OpKind::Split,
            Op::EmbeddingLookup { .. } => OpKind::EmbeddingLookup,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::SumAll => OpKind::SumAll,
            Op::MeanAll => OpKind::MeanAll,
            Op::BceWithLogits { .. } => OpKind::BceWithLogits,
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Matmul | Op::Add | Op::Sub | Op::Mul => Some(2),
            Op::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// How the right operand of an elementwise binary op maps onto the left.
enum Broadcast {
    Same,
    /// Output element `i` reads right element `(i / inner) % len`.
    Tiled { inner: usize, len: usize },
    /// Explicit index of the right operand for every output element.
    Indexed(Vec<usize>),
}

impl Broadcast {
    fn plan(op: OpKind, lhs: &[usize], rhs: &[usize]) -> Result<Self, AutodiffError> {
        let mismatch = || AutodiffError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        if lhs == rhs {
            return Ok(Broadcast::Same);
        }
        if rhs.len() > lhs.len() {
            // Leading unit dimensions on the right are harmless.
            let extra = rhs.len() - lhs.len();
            if rhs[..extra].iter().any(|&d| d != 1) {
                return Err(mismatch());
            }
            return Self::plan(op, lhs, &rhs[extra..]).map_err(|_| mismatch());
        }
        let offset = lhs.len() - rhs.len();
        for (i, &d) in rhs.iter().enumerate() {
            if d != 1 && d != lhs[offset + i] {
                return Err(mismatch());
            }
        }
        // A contiguous run of matching axes, unit axes on either side.
        let first = rhs.iter().position(|&d| d != 1);
        let last = rhs.iter().rposition(|&d| d != 1);
        if let (Some(first), Some(last)) = (first, last) {
            if rhs[first..=last] == lhs[offset + first..=offset + last] {
                return Ok(Broadcast::Tiled {
                    inner: lhs[offset + last + 1..].iter().product(),
                    len: rhs[first..=last].iter().product(),
                });
            }
        } else {
            return Ok(Broadcast::Tiled { inner: 1, len: 1 });
        }
        // General case: rhs has interior unit dimensions.
        let mut rhs_strides = vec![0usize; lhs.len()];
        let mut stride = 1;
        for i in (0..rhs.len()).rev() {
            if rhs[i] != 1 {
                rhs_strides[offset + i] = stride;
            }
            stride *= rhs[i];
        }
        let total: usize = lhs.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut index = vec![0usize; lhs.len()];
        for _ in 0..total {
            map.push(index.iter().zip(&rhs_strides).map(|(i, s)| i * s).sum());
            for axis in (0..lhs.len()).rev() {
                index[axis] += 1;
                if index[axis] < lhs[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        Ok(Broadcast::Indexed(map))
    }

    /// Calls `f(i, j)` for every output index `i` and its right index `j`.
    #[inline]
    fn visit(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Broadcast::Same => (0..n).for_each(|i| f(i, i)),
            Broadcast::Tiled { inner: 1, len } => {
                for base in (0..n).step_by((*len).max(1)) {
                    for j in 0..*len {
                        f(base + j, j);
                    }
                }
            }
            Broadcast::Tiled { inner, len } => {
                let mut i = 0;
                while i < n {
                    for j in 0..*len {
                        for _ in 0..*inner {
                            f(i, j);
                            i += 1;
                        }
                    }
                }
            }
            Broadcast::Indexed(map) => map.iter().enumerate().for_each(|(i, &j)| f(i, j)),
        }
    }
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    lhs_shared: bool,
    rhs_shared: bool,
}

enum Backward {
    Matmul(MatmulDims),
    Add(Broadcast),
    Sub(Broadcast),
    Mul(Broadcast),
    ScalarMul(f64),
    Transpose { rows: usize, cols: usize },
    Softmax { len: usize },
    Relu,
    Gelu { tanh: Vec<f64> },
    Selu,
    LeakyRelu(f64),
    LayerNorm { len: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    MeanLastDim { len: usize },
    Concat { outer: usize, chunks: Vec<usize> },
    Narrow { outer: usize, full: usize, start: usize, len: usize },
    Embedding { ids: Vec<usize>, dim: usize },
    Dropout { mask: Vec<f64> },
    Sigmoid,
    Reshape,
    SumAll,
    MeanAll,
    Bce { labels: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<Backward>,
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Append-only tape of recorded operations.
///
/// Nodes are stored in creation order, so every node's inputs precede it
/// and a reverse sweep is a valid topological order for backpropagation.
pub struct Graph {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// A graph whose dropout masks come from a ChaCha stream seeded with `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Vec::new(), None)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(
        &mut self,
        value: Tensor,
        requires_grad: bool,
        inputs: Vec<usize>,
        backward: Option<Backward>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            inputs,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, inputs: &[Var], backward: Backward) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let inputs = inputs.iter().map(|v| v.0).collect();
        let backward = requires_grad.then_some(backward);
        self.push(value, requires_grad, inputs, backward)
    }

    /// Applies `op` to `inputs`. `Split` yields one output per piece; every
    /// other op yields exactly one.
    pub fn apply(&mut self, op: &Op, inputs: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let kind = op.kind();
        if let Some(arity) = op.arity() {
            if inputs.len() != arity {
                return Err(AutodiffError::InvalidArgument {
                    op: kind,
                    reason: format!("expected {arity} inputs, got {}", inputs.len()),
                });
            }
        } else if inputs.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: kind,
                reason: "expected at least one input".into(),
            });
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(AutodiffError::InvalidArgument {
                op: kind,
                reason: format!("variable {} does not belong to this graph", bad.0),
            });
        }
        let single = |v: Result<Var, AutodiffError>| v.map(|v| vec![v]);
        match op {
            Op::Matmul => single(self.matmul(inputs[0], inputs[1])),
            Op::Add => single(self.add(inputs[0], inputs[1])),
            Op::Sub => single(self.sub(inputs[0], inputs[1])),
            Op::Mul => single(self.mul(inputs[0], inputs[1])),
            Op::ScalarMul(c) => Ok(vec![self.scale(inputs[0], *c)]),
            Op::TransposeLastTwo => single(self.transpose(inputs[0])),
            Op::SoftmaxLastDim => Ok(vec![self.softmax(inputs[0])]),
            Op::Relu => Ok(vec![self.relu(inputs[0])]),
            Op::Gelu => Ok(vec![self.gelu(inputs[0])]),
            Op::Selu => Ok(vec![self.selu(inputs[0])]),
            Op::LeakyRelu { slope } => Ok(vec![self.leaky_relu(inputs[0], *slope)]),
            Op::LayerNorm { eps } => single(self.layer_norm(inputs[0], *eps)),
            Op::MeanLastDim => Ok(vec![self.mean_last_dim(inputs[0])]),
            Op::Concat { axis } => single(self.concat(inputs, *axis)),
            Op::Split { axis, sizes } => self.split(inputs[0], *axis, sizes),
            Op::EmbeddingLookup { ids, index_shape } => {
                single(self.embedding(inputs[0], ids, index_shape))
            }
            Op::Dropout { rate, train } => single(self.dropout(inputs[0], *rate, *train)),
            Op::Sigmoid => Ok(vec![self.sigmoid(inputs[0])]),
            Op::Reshape { shape } => single(self.reshape(inputs[0], shape)),
            Op::SumAll => Ok(vec![self.sum_all(inputs[0])]),
            Op::MeanAll => Ok(vec![self.mean_all(inputs[0])]),
            Op::BceWithLogits { labels } => single(self.bce_with_logits(inputs[0], labels)),
        }
    }

    /// Batched matrix product over the last two axes.
    ///
    /// Either operand may be a plain matrix shared across the other's batch
    /// axes; otherwise the batch axes must match exactly.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || AutodiffError::ShapeMismatch {
            op: OpKind::Matmul,
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let (batch_shape, lhs_shared, rhs_shared) = if ba == bb {
            (ba.to_vec(), false, false)
        } else if bb.is_empty() {
            (ba.to_vec(), false, true)
        } else if ba.is_empty() {
            (bb.to_vec(), true, false)
        } else {
            return Err(mismatch());
        };
        let batch: usize = batch_shape.iter().product();
        let dims = MatmulDims {
            batch,
            m,
            k,
            n,
            lhs_shared: lhs_shared && batch > 1,
            rhs_shared: rhs_shared && batch > 1,
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        if dims.rhs_shared || batch == 1 {
            gemm(batch * m, k, n, av, false, bv, false, &mut out);
        } else {
        for t in 0..batch {
            let ao = if dims.lhs_shared { 0 } else { t * m * k };
            let bo = if dims.rhs_shared { 0 } else { t * k * n };
            gemm(
                m,
                k,
                n,
                &av[ao..ao + m * k],
                false,
                &bv[bo..bo + k * n],
                false,
                &mut out[t * m * n..(t + 1) * m * n],
            );
        }
        }
        let mut shape = batch_shape;
        shape.extend([m, n]);
        Ok(self.record(Tensor::from_parts(shape, out), &[a, b], Backward::Matmul(dims)))
    }

    fn elementwise(
        &mut self,
        kind: OpKind,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Broadcast), AutodiffError> {
        let plan = Broadcast::plan(kind, self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let (x, y) = (av.data(), self.value(b).data());
        let data: Vec<f64> = match &plan {
            Broadcast::Same => x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect(),
            Broadcast::Tiled { inner: 1, len } => {
                let mut data = Vec::with_capacity(x.len());
                for chunk in x.chunks(*len) {
                    data.extend(chunk.iter().zip(y).map(|(&p, &q)| f(p, q)));
                }
                data
            }
            _ => {
                let mut data = Vec::with_capacity(x.len());
                plan.visit(x.len(), |i, j| data.push(f(x[i], y[j])));
                data
            }
        };
        Ok((Tensor::from_parts(av.shape().to_vec(), data), plan))
    }

    /// `a + b`, with `b` broadcast against `a` (numpy rules, one direction).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (out, plan) = self.elementwise(OpKind::Add, a, b, |x, y| x + y)?;
        Ok(self.record(out, &[a, b], Backward::Add(plan)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (out, plan) = self.elementwise(OpKind::Sub, a, b, |x, y| x - y)?;
        Ok(self.record(out, &[a, b], Backward::Sub(plan)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (out, plan) = self.elementwise(OpKind::Mul, a, b, |x, y| x * y)?;
        Ok(self.record(out, &[a, b], Backward::Mul(plan)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.record(out, &[a], Backward::ScalarMul(c))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::TransposeLastTwo,
                reason: format!("needs rank >= 2, got shape {shape:?}"),
            });
        }
        let rows = shape[shape.len() - 2];
        let cols = shape[shape.len() - 1];
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for (block_in, block_out) in src.chunks(rows * cols).zip(out.chunks_mut(rows * cols)) {
            transpose_block(rows, cols, block_in, block_out);
        }
        let mut new_shape = shape;
        let r = new_shape.len();
        new_shape.swap(r - 2, r - 1);
        Ok(self.record(
            Tensor::from_parts(new_shape, out),
            &[a],
            Backward::Transpose { rows, cols },
        ))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let len = last_dim(value.shape());
        let mut out = value.data().to_vec();
        for row in out.chunks_mut(len) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::from_parts(value.shape().to_vec(), out);
        self.record(out, &[a], Backward::Softmax { len })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.record(out, &[a], Backward::Relu)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let tanh: Vec<f64> = x.data().iter().map(|&v| gelu_tanh(v)).collect();
        let data = x.data().iter().zip(&tanh).map(|(&v, &t)| 0.5 * v * (1.0 + t)).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        self.record(out, &[a], Backward::Gelu { tanh })
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            if x > 0.0 {
                SELU_SCALE * x
            } else {
                SELU_SCALE * SELU_ALPHA * x.exp_m1()
            }
        });
        self.record(out, &[a], Backward::Selu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.record(out, &[a], Backward::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.record(out, &[a], Backward::Sigmoid)
    }

    /// Normalizes each row of the last axis to zero mean and unit variance
    /// (population variance, `eps` added before the square root). No affine.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var, AutodiffError> {
        if !(eps >= 0.0) {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::LayerNorm,
                reason: format!("eps must be non-negative, got {eps}"),
            });
        }
        let value = self.value(a);
        let len = last_dim(value.shape());
        let rows = value.numel() / len;
        let mut xhat = value.data().to_vec();
        let mut inv_std = Vec::with_capacity(rows);
        for row in xhat.chunks_mut(len) {
            let mean = row.iter().sum::<f64>() / len as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = Tensor::from_parts(value.shape().to_vec(), xhat.clone());
        Ok(self.record(out, &[a], Backward::LayerNorm { len, xhat, inv_std }))
    }

    pub fn mean_last_dim(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let len = last_dim(value.shape());
        let data = value
            .data()
            .chunks(len)
            .map(|row| row.iter().sum::<f64>() / len as f64)
            .collect();
        let shape = value.shape()[..value.rank().saturating_sub(1)].to_vec();
        self.record(
            Tensor::from_parts(shape, data),
            &[a],
            Backward::MeanLastDim { len },
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::Concat,
                reason: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        for &v in &inputs[1..] {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: OpKind::Concat,
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let chunks: Vec<usize> = inputs
            .iter()
            .map(|&v| self.shape(v)[axis] * inner)
            .collect();
        let row: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&v, &c) in inputs.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(v).data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first;
        shape[axis] = row / inner;
        Ok(self.record(
            Tensor::from_parts(shape, out),
            inputs,
            Backward::Concat { outer, chunks },
        ))
    }

    /// Splits `a` along `axis` into consecutive pieces of the given sizes.
    pub fn split(
        &mut self,
        a: Var,
        axis: usize,
        sizes: &[usize],
    ) -> Result<Vec<Var>, AutodiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::Split,
                reason: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        if sizes.iter().sum::<usize>() != shape[axis] || sizes.contains(&0) {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::Split,
                reason: format!(
                    "sizes {sizes:?} do not partition axis {axis} of shape {shape:?}"
                ),
            });
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.narrow(a, axis, start, len));
            start += len;
        }
        Ok(out)
    }

    fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(a).to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let (start, len) = (start * inner, len * inner);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len);
        for o in 0..outer {
            out.extend_from_slice(&src[o * full + start..o * full + start + len]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len / inner;
        self.record(
            Tensor::from_parts(new_shape, out),
            &[a],
            Backward::Narrow {
                outer,
                full,
                start,
                len,
            },
        )
    }

    pub fn embedding(
        &mut self,
        table: Var,
        ids: &[usize],
        index_shape: &[usize],
    ) -> Result<Var, AutodiffError> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::EmbeddingLookup,
                reason: format!("table must be [rows, dim], got {shape:?}"),
            });
        }
        if index_shape.iter().product::<usize>() != ids.len() || index_shape.contains(&0) {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::EmbeddingLookup,
                reason: format!("{} ids do not fill index shape {index_shape:?}", ids.len()),
            });
        }
        let (rows, dim) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange {
                op: OpKind::EmbeddingLookup,
                index: bad,
                bound: rows,
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let mut out_shape = index_shape.to_vec();
        out_shape.push(dim);
        Ok(self.record(
            Tensor::from_parts(out_shape, out),
            &[table],
            Backward::Embedding {
                ids: ids.to_vec(),
                dim,
            },
        ))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    /// Returns `a` itself when `rate == 0` or `train` is false.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::Dropout,
                reason: format!("rate must lie in [0, 1), got {rate}"),
            });
        }
        if rate == 0.0 || !train {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).numel();
        let threshold = (rate * 4_294_967_296.0) as u64;
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if u64::from(self.rng.gen::<u32>()) < threshold {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let value = self.value(a);
        let data = value.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::from_parts(value.shape().to_vec(), data);
        Ok(self.record(out, &[a], Backward::Dropout { mask }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a);
        if shape.iter().product::<usize>() != value.numel() || shape.contains(&0) {
            return Err(AutodiffError::ShapeMismatch {
                op: OpKind::Reshape,
                lhs: value.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::from_parts(shape.to_vec(), value.data().to_vec());
        Ok(self.record(out, &[a], Backward::Reshape))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), &[a], Backward::SumAll)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.record(Tensor::scalar(s), &[a], Backward::MeanAll)
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `labels`, evaluated
    /// as `log(1 + exp(-|z|)) + max(z, 0) - z*y`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var, AutodiffError> {
        let z = self.value(logits);
        if z.numel() != labels.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: OpKind::BceWithLogits,
                lhs: z.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::BceWithLogits,
                reason: format!("labels must be 0 or 1, found {bad}"),
            });
        }
        if !z.is_finite() {
            return Err(AutodiffError::NonFinite(format!(
                "{} received non-finite logits",
                OpKind::BceWithLogits
            )));
        }
        let loss = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| (-z.abs()).exp().ln_1p() + z.max(0.0) - z * y)
            .sum::<f64>()
            / labels.len() as f64;
        Ok(self.record(
            Tensor::scalar(loss),
            &[logits],
            Backward::Bce {
                labels: labels.to_vec(),
            },
        ))
    }

    /// Reverse sweep from `loss`. Gradients of shared inputs accumulate.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyGraph);
        }
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !root.requires_grad {
            return Ok(Gradients {
                grads: Vec::new(),
            });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, backward, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match g {
                    Some(g) if node.requires_grad && node.backward.is_none() => {
                        Some(Tensor::from_parts(node.value.shape().to_vec(), g))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node,
        backward: &Backward,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let input = |k: usize| node.inputs[k];
        let value = |k: usize| self.nodes[node.inputs[k]].value.data();
        match backward {
            Backward::Matmul(d) => {
                let (av, bv) = (value(0), value(1));
                let (m, k, n) = (d.m, d.k, d.n);
                let flat = d.rhs_shared || d.batch == 1;
                if let Some(ga) = self.slot(grads, input(0)) {
                    if flat {
                        gemm(d.batch * m, n, k, g, false, bv, true, ga);
                    } else {
                        for t in 0..d.batch {
                            let ao = if d.lhs_shared { 0 } else { t * m * k };
                            let bo = t * k * n;
                            let go = t * m * n;
                            gemm(m, n, k, &g[go..go + m * n], false, &bv[bo..bo + k * n], true, &mut ga[ao..ao + m * k]);
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, input(1)) {
                    if flat {
                        gemm(k, d.batch * m, n, av, true, g, false, gb);
                    } else {
                        for t in 0..d.batch {
                            let ao = if d.lhs_shared { 0 } else { t * m * k };
                            let bo = if d.rhs_shared { 0 } else { t * k * n };
                            gemm(
                                k,
                                m,
                                n,
                                &av[ao..ao + m * k],
                                true,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &mut gb[bo..bo + k * n],
                            );
                        }
                    }
                }
            }
            Backward::Add(plan) | Backward::Sub(plan) => {
                let sign = if matches!(backward, Backward::Sub(_)) {
                    -1.0
                } else {
                    1.0
                };
                self.accumulate(grads, input(0), g);
                if let Some(gb) = self.slot(grads, input(1)) {
                    plan.visit(g.len(), |i, j| gb[j] += sign * g[i]);
                }
            }
            Backward::Mul(plan) => {
                let (av, bv) = (value(0), value(1));
                if let Some(ga) = self.slot(grads, input(0)) {
                    plan.visit(g.len(), |i, j| ga[i] += g[i] * bv[j]);
                }
                if let Some(gb) = self.slot(grads, input(1)) {
                    plan.visit(g.len(), |i, j| gb[j] += g[i] * av[i]);
                }
            }
            Backward::ScalarMul(c) => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    for (a, &gi) in ga.iter_mut().zip(g) {
                        *a += c * gi;
                    }
                }
            }
            Backward::Transpose { rows, cols } => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    let block = rows * cols;
                    let mut tmp = vec![0.0; block];
                    for (gin, gout) in g.chunks(block).zip(ga.chunks_mut(block)) {
                        transpose_block(*cols, *rows, gin, &mut tmp);
                        add_into(gout, &tmp);
                    }
                }
            }
            Backward::Softmax { len } => {
                let y = node.value.data();
                if let Some(ga) = self.slot(grads, input(0)) {
                    for ((yr, gr), ar) in y.chunks(*len).zip(g.chunks(*len)).zip(ga.chunks_mut(*len))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((a, &yi), &gi) in ar.iter_mut().zip(yr).zip(gr) {
                            *a += yi * (gi - dot);
                        }
                    }
                }
            }
            Backward::Relu | Backward::Gelu { .. } | Backward::Selu | Backward::LeakyRelu(_) => {
                let x = value(0);
                if let Some(ga) = self.slot(grads, input(0)) {
                    for (i, ((a, &xi), &gi)) in ga.iter_mut().zip(x).zip(g).enumerate() {
                        let d = match backward {
                            Backward::Relu => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Backward::Gelu { tanh } => gelu_derivative(xi, tanh[i]),
                            Backward::Selu => {
                                if xi > 0.0 {
                                    SELU_SCALE
                                } else {
                                    SELU_SCALE * SELU_ALPHA * xi.exp()
                                }
                            }
                            Backward::LeakyRelu(slope) => {
                                if xi >= 0.0 {
                                    1.0
                                } else {
                                    *slope
                                }
                            }
                            _ => unreachable!(),
                        };
                        *a += gi * d;
                    }
                }
            }
            Backward::Sigmoid => {
                let y = node.value.data();
                if let Some(ga) = self.slot(grads, input(0)) {
                    for ((a, &yi), &gi) in ga.iter_mut().zip(y).zip(g) {
                        *a += gi * yi * (1.0 - yi);
                    }
                }
            }
            Backward::LayerNorm { len, xhat, inv_std } => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    let n = *len as f64;
                    for (((ar, gr), xr), &inv) in ga
                        .chunks_mut(*len)
                        .zip(g.chunks(*len))
                        .zip(xhat.chunks(*len))
                        .zip(inv_std)
                    {
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((a, &gi), &xi) in ar.iter_mut().zip(gr).zip(xr) {
                            *a += inv * (gi - mean_g - xi * mean_gx);
                        }
                    }
                }
            }
            Backward::MeanLastDim { len } => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    let scale = 1.0 / *len as f64;
                    for (row, &gi) in ga.chunks_mut(*len).zip(g) {
                        for a in row {
                            *a += gi * scale;
                        }
                    }
                }
            }
            Backward::Concat { outer, chunks } => {
                let row: usize = chunks.iter().sum();
                let mut offset = 0;
                for (k, &c) in chunks.iter().enumerate() {
                    if let Some(ga) = self.slot(grads, input(k)) {
                        for o in 0..*outer {
                            let src = &g[o * row + offset..o * row + offset + c];
                            add_into(&mut ga[o * c..(o + 1) * c], src);
                        }
                    }
                    offset += c;
                }
            }
            Backward::Narrow {
                outer,
                full,
                start,
                len,
            } => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    for o in 0..*outer {
                        let dst = &mut ga[o * full + start..o * full + start + len];
                        add_into(dst, &g[o * len..(o + 1) * len]);
                    }
                }
            }
            Backward::Embedding { ids, dim } => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut ga[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                }
            }
            Backward::Dropout { mask } => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    for ((a, &m), &gi) in ga.iter_mut().zip(mask).zip(g) {
                        *a += gi * m;
                    }
                }
            }
            Backward::Reshape => self.accumulate(grads, input(0), g),
            Backward::SumAll | Backward::MeanAll => {
                if let Some(ga) = self.slot(grads, input(0)) {
                    let scale = if matches!(backward, Backward::MeanAll) {
                        1.0 / ga.len() as f64
                    } else {
                        1.0
                    };
                    for a in ga.iter_mut() {
                        *a += g[0] * scale;
                    }
                }
            }
            Backward::Bce { labels } => {
                let z = value(0);
                if let Some(ga) = self.slot(grads, input(0)) {
                    let scale = g[0] / labels.len() as f64;
                    for ((a, &zi), &y) in ga.iter_mut().zip(z).zip(labels) {
                        *a += scale * (sigmoid(zi) - y);
                    }
                }
            }
        }
    }

    /// Zero-initialized gradient buffer for node `idx`, or `None` if it does
    /// not need one.
    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], idx: usize) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[idx];
        if !node.requires_grad {
            return None;
        }
        Some(grads[idx].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    /// Adds `g` into the gradient slot of `idx`, copying on first touch.
    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], idx: usize, g: &[f64]) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(dst) => add_into(dst, g),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `tanh(sqrt(2/pi) (x + 0.044715 x^3))`.
fn gelu_tanh(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    if u.abs() < 0.5 {
        u.tanh()
    } else {
        1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
    }
}

fn gelu_derivative(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn transpose_block(rows: usize, cols: usize, src: &[f64], dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

const SMALL_GEMM: usize = 2048;

/// `c (m x n) += op(a) * op(b)`, where `op(a)` is `m x k` and `op(b)` is
/// `k x n`. A transposed operand is stored in its untransposed row-major
/// layout (`a` as `k x m`, `b` as `n x k`).
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m * k * n <= SMALL_GEMM {
        let transposed;
        let a = if a_t {
            let mut t = vec![0.0; m * k];
            transpose_block(k, m, &a[..m * k], &mut t);
            transposed = t;
            &transposed[..]
        } else {
            &a[..m * k]
        };
        for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
            if b_t {
                for (cj, b_row) in c_row.iter_mut().zip(b.chunks_exact(k)) {
                    *cj += a_row.iter().zip(b_row).map(|(p, q)| p * q).sum::<f64>();
                }
            } else {
                for (&aip, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
                    for (cj, bj) in c_row.iter_mut().zip(b_row) {
                        *cj += aip * bj;
                    }
                }
            }
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold at least the addressed extents, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
