use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: f64 },
    AddConst { x: NodeId },
    Transpose { x: NodeId },
    Reshape { x: NodeId },
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    Softmax { x: NodeId },
    LayerNorm { x: NodeId, eps: f64 },
    Gelu { x: NodeId },
    Silu { x: NodeId },
    Sigmoid { x: NodeId },
    Gather { table: NodeId, indices: Vec<usize> },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    Mse { a: NodeId, b: NodeId },
    L1 { a: NodeId, b: NodeId },
}

struct Node<R: Real> {
    op: Op,
    shape: Vec<usize>,
    value: Vec<R>,
    needs_grad: bool,
}

/// Reverse-mode tape. Operations record their inputs and cached forward
/// values; [`Tape::backward`] replays the tape once, newest node first.
/// A tape is owned by a single training step; it is not shared across steps.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

/// Per-node gradients produced by [`Tape::backward`]. Only leaf nodes retain
/// their gradient; interior gradients are dropped once consumed.
pub struct Gradients<R: Real> {
    grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, id: NodeId) -> Option<&[R]> {
        self.grads[id.0].as_deref()
    }
}

// ── matmul kernels ──────────────────────────────────────────────────────
// All kernels accumulate into `out`; callers zero-initialize when needed.

fn mm_ab<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize, out: &mut [R]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// out[k,n] += aᵀ·g for a[m,k], g[m,n].
fn mm_at_b<R: Real>(a: &[R], g: &[R], m: usize, k: usize, n: usize, out: &mut [R]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
}

/// out[m,k] += g·bᵀ for g[m,n], b[k,n].
fn mm_a_bt<R: Real>(g: &[R], b: &[R], m: usize, k: usize, n: usize, out: &mut [R]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = R::ZERO;
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            *o += acc;
        }
    }
}

fn gelu_tanh<R: Real>(x: R) -> R {
    // tanh approximation, matches the backward rule below.
    let c = R::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = R::from_f64(0.044_715);
    let half = R::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (R::ONE + inner.tanh())
}

fn sigmoid<R: Real>(x: R) -> R {
    R::ONE / (R::ONE + (-x).exp())
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<R>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
        });
        id
    }

    fn node(&self, id: NodeId) -> &Node<R> {
        &self.nodes[id.0]
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.node(*id).needs_grad)
    }

    // ── leaves and accessors ────────────────────────────────────────────

    /// Records an `f32` tensor as a leaf; `requires_grad` is taken from the
    /// tensor. Rejects non-finite input.
    pub fn leaf(&mut self, t: &Tensor) -> Result<NodeId> {
        if !t.is_finite() {
            return Err(TensorError::NonFinite("leaf"));
        }
        let value = t.data().iter().map(|&v| R::from_f32(v)).collect();
        Ok(self.push(Op::Leaf, t.shape().to_vec(), value, t.requires_grad()))
    }

    /// Leaf that never tracks gradients regardless of the tensor's flag
    /// (inference mode).
    pub fn leaf_frozen(&mut self, t: &Tensor) -> Result<NodeId> {
        if !t.is_finite() {
            return Err(TensorError::NonFinite("leaf"));
        }
        let value = t.data().iter().map(|&v| R::from_f32(v)).collect();
        Ok(self.push(Op::Leaf, t.shape().to_vec(), value, false))
    }

    /// Leaf from raw element values (used by the gradient checker to build
    /// `f64` graphs without an intermediate rounding to `f32`).
    pub fn leaf_raw(&mut self, shape: Vec<usize>, value: Vec<R>, needs_grad: bool) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != value.len() || numel == 0 {
            return Err(TensorError::shape(
                "leaf_raw",
                format!("shape {shape:?} vs {} values", value.len()),
            ));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("leaf_raw"));
        }
        Ok(self.push(Op::Leaf, shape, value, needs_grad))
    }

    pub fn value(&self, id: NodeId) -> &[R] {
        &self.node(id).value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    /// Scalar readback at full precision.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = self.node(id);
        if n.value.len() != 1 {
            return Err(TensorError::contract(format!(
                "expected scalar node, shape is {:?}",
                n.shape
            )));
        }
        Ok(n.value[0].to_f64())
    }

    /// Readback as an `f32` tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = self.node(id);
        let data = n.value.iter().map(|v| v.to_f32()).collect();
        Tensor::new(n.shape.clone(), data).expect("tape node holds a valid tensor")
    }

    pub fn check_finite(&self, id: NodeId, what: &'static str) -> Result<()> {
        if self.node(id).value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(what));
        }
        Ok(())
    }

    // ── shape helpers ───────────────────────────────────────────────────

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.node(id).shape;
        if s.len() != 2 {
            return Err(TensorError::shape(op, format!("expected rank 2, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        Ok(())
    }

    fn last_dim(&self, id: NodeId) -> usize {
        *self.node(id).shape.last().unwrap_or(&1)
    }

    // ── primitive operations ────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dims {k} vs {k2}"),
            ));
        }
        let mut out = vec![R::ZERO; m * n];
        mm_ab(&self.node(a).value, &self.node(b).value, m, k, n, &mut out);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul { a, b }, vec![m, n], out, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| x + y)
            .collect();
        let ng = self.needs(&[a, b]);
        let shape = self.node(a).shape.clone();
        Ok(self.push(Op::Add { a, b }, shape, value, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| x - y)
            .collect();
        let ng = self.needs(&[a, b]);
        let shape = self.node(a).shape.clone();
        Ok(self.push(Op::Sub { a, b }, shape, value, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| x * y)
            .collect();
        let ng = self.needs(&[a, b]);
        let shape = self.node(a).shape.clone();
        Ok(self.push(Op::Mul { a, b }, shape, value, ng))
    }

    /// `x + bias` broadcasting a length-`c` bias over the rows of `x[r, c]`.
    /// The only broadcasting form supported on the tape.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "add_bias")?;
        let bias_numel = self.node(bias).value.len();
        if bias_numel != c {
            return Err(TensorError::shape(
                "add_bias",
                format!("bias has {bias_numel} values, x has {c} columns"),
            ));
        }
        let xv = &self.node(x).value;
        let bv = &self.node(bias).value;
        let mut value = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                value.push(xv[i * c + j] + bv[j]);
            }
        }
        let ng = self.needs(&[x, bias]);
        Ok(self.push(Op::AddBias { x, bias }, vec![r, c], value, ng))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let cv = R::from_f64(c);
        let value = self.node(x).value.iter().map(|&v| v * cv).collect();
        let ng = self.node(x).needs_grad;
        let shape = self.node(x).shape.clone();
        Ok(self.push(Op::Scale { x, c }, shape, value, ng))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let cv = R::from_f64(c);
        let value = self.node(x).value.iter().map(|&v| v + cv).collect();
        let ng = self.node(x).needs_grad;
        let shape = self.node(x).shape.clone();
        Ok(self.push(Op::AddConst { x }, shape, value, ng))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "transpose")?;
        let xv = &self.node(x).value;
        let mut value = vec![R::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = xv[i * c + j];
            }
        }
        let ng = self.node(x).needs_grad;
        Ok(self.push(Op::Transpose { x }, vec![c, r], value, ng))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.node(x).value.len() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.node(x).shape),
            ));
        }
        let value = self.node(x).value.clone();
        let ng = self.node(x).needs_grad;
        Ok(self.push(Op::Reshape { x }, shape, value, ng))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "slice_rows")?;
        if start + len > r || len == 0 {
            return Err(TensorError::shape(
                "slice_rows",
                format!("rows {start}..{} of {r}", start + len),
            ));
        }
        let value = self.node(x).value[start * c..(start + len) * c].to_vec();
        let ng = self.node(x).needs_grad;
        Ok(self.push(Op::SliceRows { x, start }, vec![len, c], value, ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + len > c || len == 0 {
            return Err(TensorError::shape(
                "slice_cols",
                format!("cols {start}..{} of {c}", start + len),
            ));
        }
        let xv = &self.node(x).value;
        let mut value = Vec::with_capacity(r * len);
        for i in 0..r {
            value.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let ng = self.node(x).needs_grad;
        Ok(self.push(Op::SliceCols { x, start }, vec![r, len], value, ng))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::contract("concat_rows of zero parts"));
        }
        let (_, c) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(TensorError::shape(
                    "concat_rows",
                    format!("column mismatch {pc} vs {c}"),
                ));
            }
            rows += r;
            value.extend_from_slice(&self.node(p).value);
        }
        let ng = self.needs(parts);
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            vec![rows, c],
            value,
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::contract("concat_cols of zero parts"));
        }
        let (r, _) = self.dims2(parts[0], "concat_cols")?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(TensorError::shape(
                    "concat_cols",
                    format!("row mismatch {pr} vs {r}"),
                ));
            }
            cols += pc;
        }
        let mut value = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.node(p).shape[1];
                value.extend_from_slice(&self.node(p).value[i * pc..(i + 1) * pc]);
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            vec![r, cols],
            value,
            ng,
        ))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let d = self.last_dim(x);
        let xv = &self.node(x).value;
        let rows = xv.len() / d;
        let mut value = vec![R::ZERO; xv.len()];
        for i in 0..rows {
            let row = &xv[i * d..(i + 1) * d];
            let mut maxv = row[0];
            for &v in row {
                maxv = maxv.maxv(v);
            }
            let mut sum = R::ZERO;
            let out = &mut value[i * d..(i + 1) * d];
            for (o, &v) in out.iter_mut().zip(row) {
                let e = (v - maxv).exp();
                *o = e;
                sum += e;
            }
            let inv = R::ONE / sum;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let ng = self.node(x).needs_grad;
        let shape = self.node(x).shape.clone();
        Ok(self.push(Op::Softmax { x }, shape, value, ng))
    }

    /// Affine-free layer normalization over the last dimension
    /// (population variance, epsilon inside the square root).
    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let d = self.last_dim(x);
        if d < 2 {
            return Err(TensorError::shape("layer_norm", "last dim must be >= 2"));
        }
        let xv = &self.node(x).value;
        let rows = xv.len() / d;
        let dn = R::from_f64(d as f64);
        let epsv = R::from_f64(eps);
        let mut value = vec![R::ZERO; xv.len()];
        for i in 0..rows {
            let row = &xv[i * d..(i + 1) * d];
            let mut mean = R::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean / dn;
            let mut var = R::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var = var / dn;
            let inv_std = R::ONE / (var + epsv).sqrt();
            let out = &mut value[i * d..(i + 1) * d];
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mean) * inv_std;
            }
        }
        let ng = self.node(x).needs_grad;
        let shape = self.node(x).shape.clone();
        Ok(self.push(Op::LayerNorm { x, eps }, shape, value, ng))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.iter().map(|&v| gelu_tanh(v)).collect();
        let ng = self.node(x).needs_grad;
        let shape = self.node(x).shape.clone();
        Ok(self.push(Op::Gelu { x }, shape, value, ng))
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self
            .node(x)
            .value
            .iter()
            .map(|&v| v * sigmoid(v))
            .collect();
        let ng = self.node(x).needs_grad;
        let shape = self.node(x).shape.clone();
        Ok(self.push(Op::Silu { x }, shape, value, ng))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.iter().map(|&v| sigmoid(v)).collect();
        let ng = self.node(x).needs_grad;
        let shape = self.node(x).shape.clone();
        Ok(self.push(Op::Sigmoid { x }, shape, value, ng))
    }

    /// Embedding lookup: rows of `table` selected by `indices`.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, c) = self.dims2(table, "gather")?;
        if indices.is_empty() {
            return Err(TensorError::contract("gather with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::contract(format!(
                "gather index {bad} out of range (table has {rows} rows)"
            )));
        }
        let tv = &self.node(table).value;
        let mut value = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            value.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let ng = self.node(table).needs_grad;
        Ok(self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            vec![indices.len(), c],
            value,
            ng,
        ))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let mut sum = R::ZERO;
        for &v in &self.node(x).value {
            sum += v;
        }
        let ng = self.node(x).needs_grad;
        Ok(self.push(Op::SumAll { x }, vec![1], vec![sum], ng))
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x).value.len();
        let mut sum = R::ZERO;
        for &v in &self.node(x).value {
            sum += v;
        }
        let mean = sum / R::from_f64(n as f64);
        let ng = self.node(x).needs_grad;
        Ok(self.push(Op::MeanAll { x }, vec![1], vec![mean], ng))
    }

    /// Mean squared error between equal-shape tensors; scalar output.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mse")?;
        let n = self.node(a).value.len();
        let mut sum = R::ZERO;
        for (&x, &y) in self.node(a).value.iter().zip(&self.node(b).value) {
            let d = x - y;
            sum += d * d;
        }
        let value = sum / R::from_f64(n as f64);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::Mse { a, b }, vec![1], vec![value], ng))
    }

    /// Mean absolute error between equal-shape tensors; scalar output.
    pub fn l1(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "l1")?;
        let n = self.node(a).value.len();
        let mut sum = R::ZERO;
        for (&x, &y) in self.node(a).value.iter().zip(&self.node(b).value) {
            sum += (x - y).abs();
        }
        let value = sum / R::from_f64(n as f64);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Op::L1 { a, b }, vec![1], vec![value], ng))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss node. Returns per-leaf gradients;
    /// leaves that do not influence the loss keep a `None` entry.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<R>> {
        let loss_node = self.node(loss);
        if loss_node.value.len() != 1 {
            return Err(TensorError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.shape
            )));
        }
        if !loss_node.value[0].is_finite() {
            return Err(TensorError::NonFinite("loss"));
        }

        let mut grads: Vec<Option<Vec<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![R::ONE]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    // Leaves keep their gradient for the caller.
                    grads[i] = Some(g);
                }
                Op::MatMul { a, b } => {
                    let (m, k) = (self.node(*a).shape[0], self.node(*a).shape[1]);
                    let n = self.node(*b).shape[1];
                    if self.node(*a).needs_grad {
                        let buf = ensure(&mut grads, a.0, m * k);
                        mm_a_bt(&g, &self.node(*b).value, m, k, n, buf);
                    }
                    if self.node(*b).needs_grad {
                        let buf = ensure(&mut grads, b.0, k * n);
                        mm_at_b(&self.node(*a).value, &g, m, k, n, buf);
                    }
                }
                Op::Add { a, b } => {
                    accumulate(self, &mut grads, *a, &g, |gv| gv);
                    accumulate(self, &mut grads, *b, &g, |gv| gv);
                }
                Op::Sub { a, b } => {
                    accumulate(self, &mut grads, *a, &g, |gv| gv);
                    accumulate(self, &mut grads, *b, &g, |gv| -gv);
                }
                Op::Mul { a, b } => {
                    if self.node(*a).needs_grad {
                        let bv = &self.node(*b).value;
                        let buf = ensure(&mut grads, a.0, g.len());
                        for ((o, &gv), &v) in buf.iter_mut().zip(&g).zip(bv) {
                            *o += gv * v;
                        }
                    }
                    if self.node(*b).needs_grad {
                        let av = &self.node(*a).value;
                        let buf = ensure(&mut grads, b.0, g.len());
                        for ((o, &gv), &v) in buf.iter_mut().zip(&g).zip(av) {
                            *o += gv * v;
                        }
                    }
                }
                Op::AddBias { x, bias } => {
                    let c = self.node(*bias).value.len();
                    accumulate(self, &mut grads, *x, &g, |gv| gv);
                    if self.node(*bias).needs_grad {
                        let buf = ensure(&mut grads, bias.0, c);
                        for (row, chunk) in g.chunks_exact(c).enumerate() {
                            let _ = row;
                            for (o, &gv) in buf.iter_mut().zip(chunk) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let cv = R::from_f64(*c);
                    accumulate(self, &mut grads, *x, &g, |gv| gv * cv);
                }
                Op::AddConst { x } => {
                    accumulate(self, &mut grads, *x, &g, |gv| gv);
                }
                Op::Transpose { x } => {
                    if self.node(*x).needs_grad {
                        let (r, c) = (self.node(*x).shape[0], self.node(*x).shape[1]);
                        let buf = ensure(&mut grads, x.0, r * c);
                        // g has shape [c, r]
                        for j in 0..c {
                            for i2 in 0..r {
                                buf[i2 * c + j] += g[j * r + i2];
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    accumulate(self, &mut grads, *x, &g, |gv| gv);
                }
                Op::SliceRows { x, start } => {
                    if self.node(*x).needs_grad {
                        let (r, c) = (self.node(*x).shape[0], self.node(*x).shape[1]);
                        let buf = ensure(&mut grads, x.0, r * c);
                        let dst = &mut buf[start * c..start * c + g.len()];
                        for (o, &gv) in dst.iter_mut().zip(&g) {
                            *o += gv;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.node(*x).needs_grad {
                        let (r, c) = (self.node(*x).shape[0], self.node(*x).shape[1]);
                        let len = node.shape[1];
                        let buf = ensure(&mut grads, x.0, r * c);
                        for i2 in 0..r {
                            for j in 0..len {
                                buf[i2 * c + start + j] += g[i2 * len + j];
                            }
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let numel = self.node(p).value.len();
                        if self.node(p).needs_grad {
                            let buf = ensure(&mut grads, p.0, numel);
                            for (o, &gv) in buf.iter_mut().zip(&g[offset..offset + numel]) {
                                *o += gv;
                            }
                        }
                        offset += numel;
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let r = node.shape[0];
                    let total_c = node.shape[1];
                    let mut col = 0;
                    for p in parts {
                        let pc = self.node(p).shape[1];
                        if self.node(p).needs_grad {
                            let buf = ensure(&mut grads, p.0, r * pc);
                            for i2 in 0..r {
                                for j in 0..pc {
                                    buf[i2 * pc + j] += g[i2 * total_c + col + j];
                                }
                            }
                        }
                        col += pc;
                    }
                }
                Op::Softmax { x } => {
                    if self.node(*x).needs_grad {
                        let d = *node.shape.last().unwrap();
                        let s = &node.value;
                        let rows = s.len() / d;
                        let buf = ensure(&mut grads, x.0, s.len());
                        for i2 in 0..rows {
                            let srow = &s[i2 * d..(i2 + 1) * d];
                            let grow = &g[i2 * d..(i2 + 1) * d];
                            let mut dot = R::ZERO;
                            for (&sv, &gv) in srow.iter().zip(grow) {
                                dot += sv * gv;
                            }
                            let orow = &mut buf[i2 * d..(i2 + 1) * d];
                            for ((o, &sv), &gv) in orow.iter_mut().zip(srow).zip(grow) {
                                *o += sv * (gv - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm { x, eps } => {
                    if self.node(*x).needs_grad {
                        let d = *node.shape.last().unwrap();
                        let xv = &self.node(*x).value;
                        let rows = xv.len() / d;
                        let dn = R::from_f64(d as f64);
                        let epsv = R::from_f64(*eps);
                        let buf = ensure(&mut grads, x.0, xv.len());
                        for i2 in 0..rows {
                            let row = &xv[i2 * d..(i2 + 1) * d];
                            let grow = &g[i2 * d..(i2 + 1) * d];
                            let mut mean = R::ZERO;
                            for &v in row {
                                mean += v;
                            }
                            mean = mean / dn;
                            let mut var = R::ZERO;
                            for &v in row {
                                let c = v - mean;
                                var += c * c;
                            }
                            var = var / dn;
                            let inv_std = R::ONE / (var + epsv).sqrt();
                            let mut gsum = R::ZERO;
                            let mut gx_sum = R::ZERO;
                            for (&gv, &v) in grow.iter().zip(row) {
                                let xh = (v - mean) * inv_std;
                                gsum += gv;
                                gx_sum += gv * xh;
                            }
                            let orow = &mut buf[i2 * d..(i2 + 1) * d];
                            for ((o, &gv), &v) in orow.iter_mut().zip(grow).zip(row) {
                                let xh = (v - mean) * inv_std;
                                *o += inv_std / dn * (dn * gv - gsum - xh * gx_sum);
                            }
                        }
                    }
                }
                Op::Gelu { x } => {
                    if self.node(*x).needs_grad {
                        let xv = &self.node(*x).value;
                        let buf = ensure(&mut grads, x.0, xv.len());
                        let c = R::from_f64(0.797_884_560_802_865_4);
                        let k = R::from_f64(0.044_715);
                        let half = R::from_f64(0.5);
                        let three_k = R::from_f64(3.0 * 0.044_715);
                        for ((o, &gv), &v) in buf.iter_mut().zip(&g).zip(xv) {
                            let inner = c * (v + k * v * v * v);
                            let t = inner.tanh();
                            let sech2 = R::ONE - t * t;
                            let dinner = c * (R::ONE + three_k * v * v);
                            *o += gv * (half * (R::ONE + t) + half * v * sech2 * dinner);
                        }
                    }
                }
                Op::Silu { x } => {
                    if self.node(*x).needs_grad {
                        let xv = &self.node(*x).value;
                        let buf = ensure(&mut grads, x.0, xv.len());
                        for ((o, &gv), &v) in buf.iter_mut().zip(&g).zip(xv) {
                            let s = sigmoid(v);
                            *o += gv * (s * (R::ONE + v * (R::ONE - s)));
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    if self.node(*x).needs_grad {
                        let sv = &node.value;
                        let buf = ensure(&mut grads, x.0, sv.len());
                        for ((o, &gv), &s) in buf.iter_mut().zip(&g).zip(sv) {
                            *o += gv * s * (R::ONE - s);
                        }
                    }
                }
                Op::Gather { table, indices } => {
                    if self.node(*table).needs_grad {
                        let indices = indices.clone();
                        let (rows, c) = (self.node(*table).shape[0], self.node(*table).shape[1]);
                        let buf = ensure(&mut grads, table.0, rows * c);
                        for (k2, &idx) in indices.iter().enumerate() {
                            let src = &g[k2 * c..(k2 + 1) * c];
                            let dst = &mut buf[idx * c..(idx + 1) * c];
                            for (o, &gv) in dst.iter_mut().zip(src) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::SumAll { x } => {
                    if self.node(*x).needs_grad {
                        let numel = self.node(*x).value.len();
                        let gv = g[0];
                        let buf = ensure(&mut grads, x.0, numel);
                        for o in buf.iter_mut() {
                            *o += gv;
                        }
                    }
                }
                Op::MeanAll { x } => {
                    if self.node(*x).needs_grad {
                        let numel = self.node(*x).value.len();
                        let gv = g[0] / R::from_f64(numel as f64);
                        let buf = ensure(&mut grads, x.0, numel);
                        for o in buf.iter_mut() {
                            *o += gv;
                        }
                    }
                }
                Op::Mse { a, b } => {
                    let n = self.node(*a).value.len();
                    let coef = g[0] * R::from_f64(2.0 / n as f64);
                    if self.node(*a).needs_grad {
                        let diffs: Vec<R> = self
                            .node(*a)
                            .value
                            .iter()
                            .zip(&self.node(*b).value)
                            .map(|(&x, &y)| coef * (x - y))
                            .collect();
                        let buf = ensure(&mut grads, a.0, n);
                        for (o, d) in buf.iter_mut().zip(&diffs) {
                            *o += *d;
                        }
                    }
                    if self.node(*b).needs_grad {
                        let diffs: Vec<R> = self
                            .node(*a)
                            .value
                            .iter()
                            .zip(&self.node(*b).value)
                            .map(|(&x, &y)| coef * (x - y))
                            .collect();
                        let buf = ensure(&mut grads, b.0, n);
                        for (o, d) in buf.iter_mut().zip(&diffs) {
                            *o -= *d;
                        }
                    }
                }
                Op::L1 { a, b } => {
                    let n = self.node(*a).value.len();
                    let coef = g[0] / R::from_f64(n as f64);
                    let signs: Vec<R> = self
                        .node(*a)
                        .value
                        .iter()
                        .zip(&self.node(*b).value)
                        .map(|(&x, &y)| {
                            if x > y {
                                coef
                            } else if x < y {
                                -coef
                            } else {
                                R::ZERO
                            }
                        })
                        .collect();
                    if self.node(*a).needs_grad {
                        let buf = ensure(&mut grads, a.0, n);
                        for (o, s) in buf.iter_mut().zip(&signs) {
                            *o += *s;
                        }
                    }
                    if self.node(*b).needs_grad {
                        let buf = ensure(&mut grads, b.0, n);
                        for (o, s) in buf.iter_mut().zip(&signs) {
                            *o -= *s;
                        }
                    }
                }
            }
        }

        Ok(Gradients { grads })
    }
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure<R: Real>(grads: &mut [Option<Vec<R>>], idx: usize, numel: usize) -> &mut Vec<R> {
    let slot = &mut grads[idx];
    if slot.is_none() {
        *slot = Some(vec![R::ZERO; numel]);
    }
    slot.as_mut().unwrap()
}

/// Elementwise gradient accumulation with a mapping function.
fn accumulate<R: Real>(
    tape: &Tape<R>,
    grads: &mut [Option<Vec<R>>],
    target: NodeId,
    g: &[R],
    f: impl Fn(R) -> R,
) {
    if !tape.node(target).needs_grad {
        return;
    }
    let buf = ensure(grads, target.0, g.len());
    for (o, &gv) in buf.iter_mut().zip(g) {
        *o += f(gv);
    }
}
