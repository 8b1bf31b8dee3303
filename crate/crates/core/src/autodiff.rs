//! Dense-tensor reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] owns every tensor created during a forward pass and records one
//! node per operation. [`Tape::backward`] replays the nodes in reverse,
//! accumulating exact adjoints. The tape is rebuilt from scratch for every
//! minibatch; tensors are addressed by [`TensorId`].
//!
//! Two properties matter for the objectives built on top:
//!
//! * gradients accumulate across multiple `backward` calls until explicitly
//!   zeroed, so separate loss terms can be backpropagated in separate passes
//!   and summed;
//! * [`Tape::grad_reverse`] is identity in the forward pass and multiplies
//!   the upstream gradient by `-scale` in the backward pass.
//!
//! All values are 64-bit. Any operation whose output contains a non-finite
//! value reports [`TapeError::NonFinite`] instead of letting NaN propagate.

use std::fmt;

/// Index of a tensor on its tape.
pub type TensorId = usize;

/// Clamp floor used by `log`.
pub const EPS_LOG: f64 = 1e-12;
/// Clamp floor used by `l2_normalize`.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum TapeError {
    /// Operand shapes are incompatible for the requested operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// An operation produced a non-finite value from finite inputs.
    NonFinite { op: &'static str },
    /// A caller obligation was violated (non-scalar loss, bad scale, ...).
    Contract { op: &'static str, detail: String },
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapeError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            TapeError::NonFinite { op } => {
                write!(f, "non-finite value produced by {op}")
            }
            TapeError::Contract { op, detail } => {
                write!(f, "contract violation in {op}: {detail}")
            }
        }
    }
}

impl std::error::Error for TapeError {}

/// A dense tensor stored on the tape: row-major data plus its shape and an
/// optional gradient of the same length.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }
}

/// One recorded operation: kind, inputs, saved intermediates.
#[derive(Debug, Clone)]
enum Node {
    Add {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    AddConst {
        x: TensorId,
        out: TensorId,
    },
    ScalarMul {
        x: TensorId,
        c: f64,
        out: TensorId,
    },
    Relu {
        x: TensorId,
        out: TensorId,
    },
    Log {
        x: TensorId,
        out: TensorId,
    },
    Sigmoid {
        x: TensorId,
        out: TensorId,
    },
    Matmul {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    /// out = a · bᵀ with a: [m×k], b: [n×k].
    MatmulTransposeB {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    /// Row-wise bias add: x: [m×n], bias: [n].
    AddBias {
        x: TensorId,
        bias: TensorId,
        out: TensorId,
    },
    /// Each row scaled to unit ℓ2 norm; `norms` saves max(‖row‖, ε).
    L2Normalize {
        x: TensorId,
        out: TensorId,
        norms: Vec<f64>,
    },
    /// Row-wise softmax with max subtraction; backward reads the output.
    Softmax {
        x: TensorId,
        out: TensorId,
    },
    GradReverse {
        x: TensorId,
        scale: f64,
        out: TensorId,
    },
    ReduceSum {
        x: TensorId,
        out: TensorId,
    },
    ReduceMean {
        x: TensorId,
        out: TensorId,
    },
}

/// Reverse-mode tape. Single-threaded; one tape per training step.
#[derive(Debug, Default)]
pub struct Tape {
    tensors: Vec<Tensor>,
    nodes: Vec<Node>,
}

/// `(rows, cols)` of a 1-D or 2-D tensor, treating a vector as a single row.
fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [cols] => Some((1, *cols)),
        [rows, cols] => Some((*rows, *cols)),
        _ => None,
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Insert a leaf tensor. Inputs must be finite and match the shape.
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId, TapeError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TapeError::ShapeMismatch {
                op: "leaf",
                detail: format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    numel,
                    data.len()
                ),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TapeError::NonFinite { op: "leaf" });
        }
        Ok(self.push(Tensor {
            shape,
            data,
            grad: None,
        }))
    }

    /// Scalar leaf (rank 0).
    pub fn scalar(&mut self, value: f64) -> Result<TensorId, TapeError> {
        self.leaf(vec![value], vec![])
    }

    fn push(&mut self, tensor: Tensor) -> TensorId {
        let id = self.tensors.len();
        self.tensors.push(tensor);
        id
    }

    fn output(
        &mut self,
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
    ) -> Result<TensorId, TapeError> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TapeError::NonFinite { op });
        }
        Ok(self.push(Tensor {
            shape,
            data,
            grad: None,
        }))
    }

    // ── Accessors ────────────────────────────────────────────────────

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.tensors[id].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id].shape
    }

    /// Value of a scalar tensor.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert!(self.tensors[id].is_scalar());
        self.tensors[id].data[0]
    }

    /// Accumulated gradient, if any backward pass reached this tensor.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id].grad.as_deref()
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// Clear every stored gradient.
    pub fn zero_all_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn zero_grad(&mut self, id: TensorId) {
        self.tensors[id].grad = None;
    }

    // ── Elementwise operations ───────────────────────────────────────

    /// Elementwise add; one operand may be a scalar.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        self.nodes.push(Node::Add { a, b, out });
        Ok(out)
    }

    /// Elementwise multiply; one operand may be a scalar.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let out = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        self.nodes.push(Node::Mul { a, b, out });
        Ok(out)
    }

    fn broadcast_binary(
        &mut self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<TensorId, TapeError> {
        let (ta, tb) = (&self.tensors[a], &self.tensors[b]);
        let (data, shape) = if ta.shape == tb.shape {
            (
                ta.data
                    .iter()
                    .zip(&tb.data)
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
                ta.shape.clone(),
            )
        } else if tb.is_scalar() {
            let s = tb.data[0];
            (ta.data.iter().map(|&x| f(x, s)).collect(), ta.shape.clone())
        } else if ta.is_scalar() {
            let s = ta.data[0];
            (tb.data.iter().map(|&y| f(s, y)).collect(), tb.shape.clone())
        } else {
            return Err(TapeError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", ta.shape, tb.shape),
            });
        };
        self.output(op, data, shape)
    }

    /// x + c for a plain constant c.
    pub fn add_const(&mut self, x: TensorId, c: f64) -> Result<TensorId, TapeError> {
        let data = self.tensors[x].data.iter().map(|&v| v + c).collect();
        let shape = self.tensors[x].shape.clone();
        let out = self.output("add_const", data, shape)?;
        self.nodes.push(Node::AddConst { x, out });
        Ok(out)
    }

    /// c · x for a plain constant c.
    pub fn scalar_mul(&mut self, x: TensorId, c: f64) -> Result<TensorId, TapeError> {
        let data = self.tensors[x].data.iter().map(|&v| c * v).collect();
        let shape = self.tensors[x].shape.clone();
        let out = self.output("scalar_mul", data, shape)?;
        self.nodes.push(Node::ScalarMul { x, c, out });
        Ok(out)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let data = self.tensors[x].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.tensors[x].shape.clone();
        let out = self.output("relu", data, shape)?;
        self.nodes.push(Node::Relu { x, out });
        Ok(out)
    }

    /// Natural log with the input clamped at [`EPS_LOG`] from below.
    pub fn log(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let data = self.tensors[x]
            .data
            .iter()
            .map(|&v| v.max(EPS_LOG).ln())
            .collect();
        let shape = self.tensors[x].shape.clone();
        let out = self.output("log", data, shape)?;
        self.nodes.push(Node::Log { x, out });
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let data = self.tensors[x]
            .data
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let shape = self.tensors[x].shape.clone();
        let out = self.output("sigmoid", data, shape)?;
        self.nodes.push(Node::Sigmoid { x, out });
        Ok(out)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// Matrix product a · b with a: [m×k], b: [k×n].
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (sa, sb) = (&self.tensors[a].shape, &self.tensors[b].shape);
        let (m, ka, kb, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, ka], [kb, n]) => (*m, *ka, *kb, *n),
            _ => {
                return Err(TapeError::ShapeMismatch {
                    op: "matmul",
                    detail: format!("expected two matrices, got {:?} and {:?}", sa, sb),
                })
            }
        };
        if ka != kb {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dimensions {ka} and {kb} differ"),
            });
        }
        let mut data = vec![0.0; m * n];
        {
            let av = &self.tensors[a].data;
            let bv = &self.tensors[b].data;
            for i in 0..m {
                for p in 0..ka {
                    let aip = av[i * ka + p];
                    for j in 0..n {
                        data[i * n + j] += aip * bv[p * n + j];
                    }
                }
            }
        }
        let out = self.output("matmul", data, vec![m, n])?;
        self.nodes.push(Node::Matmul { a, b, out });
        Ok(out)
    }

    /// a · bᵀ with a: [m×k], b: [n×k]. Rows of `b` act as projection vectors.
    pub fn matmul_transpose_b(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (sa, sb) = (&self.tensors[a].shape, &self.tensors[b].shape);
        let (m, ka, n, kb) = match (sa.as_slice(), sb.as_slice()) {
            ([m, ka], [n, kb]) => (*m, *ka, *n, *kb),
            _ => {
                return Err(TapeError::ShapeMismatch {
                    op: "matmul_transpose_b",
                    detail: format!("expected two matrices, got {:?} and {:?}", sa, sb),
                })
            }
        };
        if ka != kb {
            return Err(TapeError::ShapeMismatch {
                op: "matmul_transpose_b",
                detail: format!("inner dimensions {ka} and {kb} differ"),
            });
        }
        let mut data = vec![0.0; m * n];
        {
            let av = &self.tensors[a].data;
            let bv = &self.tensors[b].data;
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..ka {
                        acc += av[i * ka + p] * bv[j * ka + p];
                    }
                    data[i * n + j] = acc;
                }
            }
        }
        let out = self.output("matmul_transpose_b", data, vec![m, n])?;
        self.nodes.push(Node::MatmulTransposeB { a, b, out });
        Ok(out)
    }

    /// Add `bias` (length n) to each row of x ([m×n]).
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, TapeError> {
        let (rows, cols) = match as_matrix(&self.tensors[x].shape) {
            Some(rc) => rc,
            None => {
                return Err(TapeError::ShapeMismatch {
                    op: "add_bias",
                    detail: format!("expected 1-D or 2-D input, got {:?}", self.tensors[x].shape),
                })
            }
        };
        if self.tensors[bias].shape != [cols] {
            return Err(TapeError::ShapeMismatch {
                op: "add_bias",
                detail: format!(
                    "bias shape {:?} does not match {cols} columns",
                    self.tensors[bias].shape
                ),
            });
        }
        let mut data = self.tensors[x].data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += self.tensors[bias].data[c];
            }
        }
        let shape = self.tensors[x].shape.clone();
        let out = self.output("add_bias", data, shape)?;
        self.nodes.push(Node::AddBias { x, bias, out });
        Ok(out)
    }

    // ── Structured operations ────────────────────────────────────────

    /// Scale each row to unit ℓ2 norm: row / max(‖row‖, ε). A 1-D tensor is
    /// treated as a single row. The zero vector passes through unchanged.
    pub fn l2_normalize(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let (rows, cols) = match as_matrix(&self.tensors[x].shape) {
            Some(rc) => rc,
            None => {
                return Err(TapeError::ShapeMismatch {
                    op: "l2_normalize",
                    detail: format!("expected 1-D or 2-D input, got {:?}", self.tensors[x].shape),
                })
            }
        };
        let mut data = vec![0.0; rows * cols];
        let mut norms = vec![0.0; rows];
        for r in 0..rows {
            let row = &self.tensors[x].data[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(EPS_NORM);
            // A squared-norm overflow would silently zero the row otherwise.
            if !norm.is_finite() {
                return Err(TapeError::NonFinite { op: "l2_normalize" });
            }
            norms[r] = norm;
            for c in 0..cols {
                data[r * cols + c] = row[c] / norm;
            }
        }
        let shape = self.tensors[x].shape.clone();
        let out = self.output("l2_normalize", data, shape)?;
        self.nodes.push(Node::L2Normalize { x, out, norms });
        Ok(out)
    }

    /// Row-wise softmax, computed with max subtraction.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let (rows, cols) = match as_matrix(&self.tensors[x].shape) {
            Some(rc) if rc.1 > 0 => rc,
            _ => {
                return Err(TapeError::ShapeMismatch {
                    op: "softmax",
                    detail: format!(
                        "expected nonempty 1-D or 2-D input, got {:?}",
                        self.tensors[x].shape
                    ),
                })
            }
        };
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.tensors[x].data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                data[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                data[r * cols + c] /= sum;
            }
        }
        let shape = self.tensors[x].shape.clone();
        let out = self.output("softmax", data, shape)?;
        self.nodes.push(Node::Softmax { x, out });
        Ok(out)
    }

    /// Identity forward; backward multiplies the upstream gradient by
    /// `-scale`. `scale` = 0 detaches the input entirely.
    pub fn grad_reverse(&mut self, x: TensorId, scale: f64) -> Result<TensorId, TapeError> {
        if !scale.is_finite() || scale < 0.0 {
            return Err(TapeError::Contract {
                op: "grad_reverse",
                detail: format!("scale must be finite and nonnegative, got {scale}"),
            });
        }
        let data = self.tensors[x].data.clone();
        let shape = self.tensors[x].shape.clone();
        let out = self.output("grad_reverse", data, shape)?;
        self.nodes.push(Node::GradReverse { x, scale, out });
        Ok(out)
    }

    /// Sum of all entries, as a scalar.
    pub fn reduce_sum(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let total = self.tensors[x].data.iter().sum();
        let out = self.output("reduce_sum", vec![total], vec![])?;
        self.nodes.push(Node::ReduceSum { x, out });
        Ok(out)
    }

    /// Mean of all entries, as a scalar.
    pub fn reduce_mean(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let n = self.tensors[x].data.len();
        if n == 0 {
            return Err(TapeError::Contract {
                op: "reduce_mean",
                detail: "mean of an empty tensor".to_string(),
            });
        }
        let total: f64 = self.tensors[x].data.iter().sum();
        let out = self.output("reduce_mean", vec![total / n as f64], vec![])?;
        self.nodes.push(Node::ReduceMean { x, out });
        Ok(out)
    }

    // ── Backward pass ────────────────────────────────────────────────

    /// Backpropagate from a scalar loss. Adjoints are computed in a scratch
    /// buffer and then added into each tensor's persistent `grad`, so
    /// repeated calls accumulate until [`Tape::zero_all_grads`].
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TapeError> {
        if !self.tensors[loss].is_scalar() {
            return Err(TapeError::Contract {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    self.tensors[loss].shape
                ),
            });
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.tensors.len()];
        adjoint[loss] = Some(vec![1.0]);

        for node in self.nodes.clone().iter().rev() {
            self.backward_node(node, &mut adjoint);
        }

        for (tensor, adj) in self.tensors.iter_mut().zip(adjoint) {
            if let Some(adj) = adj {
                let grad = tensor.grad.get_or_insert_with(|| vec![0.0; adj.len()]);
                for (g, a) in grad.iter_mut().zip(&adj) {
                    *g += a;
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node, adjoint: &mut [Option<Vec<f64>>]) {
        // Adds `delta` into the adjoint of `id`, handling scalar operands
        // of broadcast ops by summing the incoming gradient.
        fn accumulate(
            tensors: &[Tensor],
            adjoint: &mut [Option<Vec<f64>>],
            id: TensorId,
            delta: &[f64],
        ) {
            let n = tensors[id].numel();
            let slot = adjoint[id].get_or_insert_with(|| vec![0.0; n]);
            if delta.len() == n {
                for (s, d) in slot.iter_mut().zip(delta) {
                    *s += d;
                }
            } else {
                debug_assert_eq!(n, 1, "broadcast accumulate expects a scalar target");
                slot[0] += delta.iter().sum::<f64>();
            }
        }

        let out_adj = match node {
            Node::Add { out, .. }
            | Node::Mul { out, .. }
            | Node::AddConst { out, .. }
            | Node::ScalarMul { out, .. }
            | Node::Relu { out, .. }
            | Node::Log { out, .. }
            | Node::Sigmoid { out, .. }
            | Node::Matmul { out, .. }
            | Node::MatmulTransposeB { out, .. }
            | Node::AddBias { out, .. }
            | Node::L2Normalize { out, .. }
            | Node::Softmax { out, .. }
            | Node::GradReverse { out, .. }
            | Node::ReduceSum { out, .. }
            | Node::ReduceMean { out, .. } => match &adjoint[*out] {
                Some(a) => a.clone(),
                None => return,
            },
        };

        match node {
            Node::Add { a, b, .. } => {
                accumulate(&self.tensors, adjoint, *a, &out_adj);
                accumulate(&self.tensors, adjoint, *b, &out_adj);
            }
            Node::Mul { a, b, .. } => {
                let (ta, tb) = (&self.tensors[*a], &self.tensors[*b]);
                let da: Vec<f64> = if tb.numel() == out_adj.len() {
                    out_adj.iter().zip(&tb.data).map(|(&g, &y)| g * y).collect()
                } else {
                    out_adj.iter().map(|&g| g * tb.data[0]).collect()
                };
                let db: Vec<f64> = if ta.numel() == out_adj.len() {
                    out_adj.iter().zip(&ta.data).map(|(&g, &x)| g * x).collect()
                } else {
                    out_adj.iter().map(|&g| g * ta.data[0]).collect()
                };
                accumulate(&self.tensors, adjoint, *a, &da);
                accumulate(&self.tensors, adjoint, *b, &db);
            }
            Node::AddConst { x, .. } => {
                accumulate(&self.tensors, adjoint, *x, &out_adj);
            }
            Node::ScalarMul { x, c, .. } => {
                let dx: Vec<f64> = out_adj.iter().map(|&g| g * c).collect();
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::Relu { x, .. } => {
                let dx: Vec<f64> = self.tensors[*x]
                    .data
                    .iter()
                    .zip(&out_adj)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::Log { x, .. } => {
                // d/dx ln(max(x, ε)) = 1/x above the clamp, 0 below it.
                let dx: Vec<f64> = self.tensors[*x]
                    .data
                    .iter()
                    .zip(&out_adj)
                    .map(|(&v, &g)| if v > EPS_LOG { g / v } else { 0.0 })
                    .collect();
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::Sigmoid { x, out } => {
                let dx: Vec<f64> = self.tensors[*out]
                    .data
                    .iter()
                    .zip(&out_adj)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::Matmul { a, b, .. } => {
                let [m, k] = self.tensors[*a].shape[..] else {
                    unreachable!()
                };
                let n = self.tensors[*b].shape[1];
                let av = &self.tensors[*a].data;
                let bv = &self.tensors[*b].data;
                // dA = dOut · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = out_adj[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
                // dB = Aᵀ · dOut
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += x * out_adj[i * n + j];
                        }
                    }
                }
                accumulate(&self.tensors, adjoint, *a, &da);
                accumulate(&self.tensors, adjoint, *b, &db);
            }
            Node::MatmulTransposeB { a, b, .. } => {
                let [m, k] = self.tensors[*a].shape[..] else {
                    unreachable!()
                };
                let n = self.tensors[*b].shape[0];
                let av = &self.tensors[*a].data;
                let bv = &self.tensors[*b].data;
                // out = A · Bᵀ  ⇒  dA = dOut · B, dB = dOutᵀ · A
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = out_adj[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += g * bv[j * k + p];
                            db[j * k + p] += g * av[i * k + p];
                        }
                    }
                }
                accumulate(&self.tensors, adjoint, *a, &da);
                accumulate(&self.tensors, adjoint, *b, &db);
            }
            Node::AddBias { x, bias, .. } => {
                let (rows, cols) = as_matrix(&self.tensors[*x].shape).unwrap();
                let mut dbias = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dbias[c] += out_adj[r * cols + c];
                    }
                }
                accumulate(&self.tensors, adjoint, *x, &out_adj);
                accumulate(&self.tensors, adjoint, *bias, &dbias);
            }
            Node::L2Normalize { x, norms, .. } => {
                let (rows, cols) = as_matrix(&self.tensors[*x].shape).unwrap();
                let xv = &self.tensors[*x].data;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let norm = norms[r];
                    let g = &out_adj[r * cols..(r + 1) * cols];
                    let raw_norm_sq: f64 = row.iter().map(|v| v * v).sum();
                    if raw_norm_sq.sqrt() > EPS_NORM {
                        // d x = g/‖x‖ − x (x·g)/‖x‖³
                        let dot: f64 = row.iter().zip(g).map(|(&v, &gi)| v * gi).sum();
                        let inv = 1.0 / norm;
                        let inv3 = inv * inv * inv;
                        for c in 0..cols {
                            dx[r * cols + c] = g[c] * inv - row[c] * dot * inv3;
                        }
                    } else {
                        // Clamped region: y = x/ε is linear.
                        for c in 0..cols {
                            dx[r * cols + c] = g[c] / norm;
                        }
                    }
                }
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::Softmax { x, out } => {
                let (rows, cols) = as_matrix(&self.tensors[*x].shape).unwrap();
                let y = &self.tensors[*out].data;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let g = &out_adj[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(g).map(|(&yi, &gi)| yi * gi).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (g[c] - dot);
                    }
                }
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::GradReverse { x, scale, .. } => {
                let dx: Vec<f64> = out_adj.iter().map(|&g| -scale * g).collect();
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::ReduceSum { x, .. } => {
                let g = out_adj[0];
                let dx = vec![g; self.tensors[*x].numel()];
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
            Node::ReduceMean { x, .. } => {
                let n = self.tensors[*x].numel();
                let g = out_adj[0] / n as f64;
                let dx = vec![g; n];
                accumulate(&self.tensors, adjoint, *x, &dx);
            }
        }
    }
}
