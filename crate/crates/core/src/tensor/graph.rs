use std::collections::HashMap;

use super::kernels::{gemm, MatRef};
use super::{GradStore, Tensor, TensorError};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul { a: usize, b: usize, trans_b: bool },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Shift { a: usize },
    Relu(usize),
    Sigmoid(usize),
    Ln(usize),
    Clamp { a: usize, lo: f64, hi: f64 },
    Softmax(usize),
    LayerNorm { a: usize, inv_std: Vec<f64> },
    SumAll(usize),
    MeanAll(usize),
    MaxLast { a: usize, argmax: Vec<usize> },
    MeanLast(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Reshape(usize),
    Permute { a: usize, axes: Vec<usize> },
    Narrow { a: usize, axis: usize, start: usize },
    BroadcastTo(usize),
    Gather { table: usize, indices: Vec<Option<usize>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Shift { .. } => "shift",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Ln(_) => "ln",
            Op::Clamp { .. } => "clamp",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::MaxLast { .. } => "max_last",
            Op::MeanLast(_) => "mean_last",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Narrow { .. } => "narrow",
            Op::BroadcastTo(_) => "broadcast_to",
            Op::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in topological order and evaluated immediately. Named
/// parameter leaves are deduplicated, so several forward passes built on the
/// same graph share one leaf (and one gradient) per parameter.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, usize>,
}

type Res = Result<NodeId, TensorError>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    /// Input tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Named trainable leaf. Registering a name twice returns the first node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        if let Some(&idx) = self.params.get(name) {
            return NodeId(idx);
        }
        self.nodes.push(Node {
            op: Op::Param(name.to_string()),
            value: value.clone(),
            requires_grad: true,
        });
        let idx = self.nodes.len() - 1;
        self.params.insert(name.to_string(), idx);
        NodeId(idx)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[usize]) -> Res {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                node,
                op: op.name(),
            });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(node))
    }

    fn mismatch(&self, op: &'static str, detail: String) -> TensorError {
        TensorError::ShapeMismatch {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    /// Batched matrix product over the last two axes.
    ///
    /// `a` is `[.., m, k]`. `b` is either a shared `[k, n]` matrix or carries the
    /// same leading batch axes as `a`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Res {
        self.matmul_impl(a, b, false)
    }

    /// Like [`Graph::matmul`] but multiplies by the transpose of `b`'s last two axes.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Res {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Res {
        let op = "matmul";
        let ad = self.dims(a).to_vec();
        let bd = self.dims(b).to_vec();
        if ad.len() < 2 || bd.len() < 2 {
            return Err(self.mismatch(op, format!("operands need rank >= 2, got {ad:?} and {bd:?}")));
        }
        let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
        let (bk, n) = if trans_b {
            (bd[bd.len() - 1], bd[bd.len() - 2])
        } else {
            (bd[bd.len() - 2], bd[bd.len() - 1])
        };
        if k != bk {
            return Err(self.mismatch(op, format!("inner extents differ: {ad:?} x {bd:?} (trans_b={trans_b})")));
        }
        let batch_dims = &ad[..ad.len() - 2];
        let shared = bd.len() == 2;
        if !shared && bd[..bd.len() - 2] != *batch_dims {
            return Err(self.mismatch(op, format!("batch axes differ: {ad:?} x {bd:?}")));
        }
        let batch: usize = batch_dims.iter().product();
        let mut out_dims = batch_dims.to_vec();
        out_dims.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let (br, bc) = (bd[bd.len() - 2], bd[bd.len() - 1]);
            let bmat = |i: usize| {
                let mat = MatRef::new(&bv[i * br * bc..(i + 1) * br * bc], br, bc);
                if trans_b {
                    mat.t()
                } else {
                    mat
                }
            };
            if shared {
                gemm(MatRef::new(av, batch * m, k), bmat(0), &mut out, false);
            } else {
                for i in 0..batch {
                    gemm(
                        MatRef::new(&av[i * m * k..(i + 1) * m * k], m, k),
                        bmat(i),
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let value = Tensor::new(out_dims, out)?;
        self.push(
            Op::MatMul {
                a: a.0,
                b: b.0,
                trans_b,
            },
            value,
            &[a.0, b.0],
        )
    }

    fn check_suffix(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        let ad = self.dims(a);
        let bd = self.dims(b);
        if bd.len() > ad.len() || ad[ad.len() - bd.len()..] != *bd {
            return Err(self.mismatch(
                op,
                format!("{bd:?} does not broadcast onto {ad:?} (trailing axes must match)"),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Res {
        self.check_suffix(op.name(), a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_exact_mut(bv.len()) {
            for (x, &y) in chunk.iter_mut().zip(bv) {
                *x = f(*x, y);
            }
        }
        let value = Tensor::new(av.dims().to_vec(), data)?;
        self.push(op, value, &[a.0, b.0])
    }

    /// `a + b`, with `b` broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Res {
        self.binary(a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    /// `a - b`, with `b` broadcast over the leading axes of `a`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Res {
        self.binary(a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    /// Element-wise `a ∘ b`, with `b` broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Res {
        self.binary(a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Res {
        let av = self.value(a);
        let value = Tensor::new(av.dims().to_vec(), av.data().iter().map(|&x| f(x)).collect())?;
        self.push(op, value, &[a.0])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Res {
        self.unary(a, Op::Scale { a: a.0, factor }, |x| x * factor)
    }

    /// `a + offset` for a constant offset.
    pub fn shift(&mut self, a: NodeId, offset: f64) -> Res {
        self.unary(a, Op::Shift { a: a.0 }, |x| x + offset)
    }

    pub fn relu(&mut self, a: NodeId) -> Res {
        self.unary(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Res {
        self.unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    /// Natural logarithm; non-positive inputs surface as a non-finite error.
    pub fn ln(&mut self, a: NodeId) -> Res {
        self.unary(a, Op::Ln(a.0), f64::ln)
    }

    /// Clamp to `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Res {
        self.unary(a, Op::Clamp { a: a.0, lo, hi }, |x| x.clamp(lo, hi))
    }

    fn last_axis(&self, op: &'static str, a: NodeId) -> Result<usize, TensorError> {
        self.dims(a)
            .last()
            .copied()
            .ok_or_else(|| self.mismatch(op, "operand must have rank >= 1".into()))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Res {
        let n = self.last_axis("softmax", a)?;
        let av = self.value(a);
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
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
        let value = Tensor::new(av.dims().to_vec(), data)?;
        self.push(Op::Softmax(a.0), value, &[a.0])
    }

    /// Normalizes each last-axis row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Res {
        let n = self.last_axis("layer_norm", a)?;
        let av = self.value(a);
        let mut data = av.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / n);
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(av.dims().to_vec(), data)?;
        self.push(Op::LayerNorm { a: a.0, inv_std }, value, &[a.0])
    }

    pub fn sum(&mut self, a: NodeId) -> Res {
        let s = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a.0), Tensor::scalar(s), &[a.0])
    }

    pub fn mean(&mut self, a: NodeId) -> Res {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::MeanAll(a.0), Tensor::scalar(s), &[a.0])
    }

    /// Maximum over the last axis. The gradient goes to the first maximal entry.
    pub fn max_last(&mut self, a: NodeId) -> Res {
        let n = self.last_axis("max_last", a)?;
        let av = self.value(a);
        let mut argmax = Vec::with_capacity(av.len() / n);
        let mut data = Vec::with_capacity(av.len() / n);
        for row in av.data().chunks(n) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            argmax.push(best);
            data.push(row[best]);
        }
        let dims = av.dims()[..av.rank() - 1].to_vec();
        let value = Tensor::new(dims, data)?;
        self.push(Op::MaxLast { a: a.0, argmax }, value, &[a.0])
    }

    pub fn mean_last(&mut self, a: NodeId) -> Res {
        let n = self.last_axis("mean_last", a)?;
        let av = self.value(a);
        let data = av
            .data()
            .chunks(n)
            .map(|row| row.iter().sum::<f64>() / n as f64)
            .collect();
        let dims = av.dims()[..av.rank() - 1].to_vec();
        let value = Tensor::new(dims, data)?;
        self.push(Op::MeanLast(a.0), value, &[a.0])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Res {
        let op = "concat";
        let Some(first) = inputs.first() else {
            return Err(self.mismatch(op, "no inputs".into()));
        };
        let base = self.dims(*first).to_vec();
        if axis >= base.len() {
            return Err(self.mismatch(op, format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for id in inputs {
            let d = self.dims(*id);
            let compatible = d.len() == base.len()
                && d.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(self.mismatch(op, format!("{d:?} incompatible with {base:?} on axis {axis}")));
            }
            total += d[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_dims = base.clone();
        out_dims[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for id in inputs {
                let v = self.value(*id);
                let chunk = v.dims()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_dims, data)?;
        let idx: Vec<usize> = inputs.iter().map(|i| i.0).collect();
        self.push(
            Op::Concat {
                inputs: idx.clone(),
                axis,
            },
            value,
            &idx,
        )
    }

    pub fn reshape(&mut self, a: NodeId, dims: &[usize]) -> Res {
        let av = self.value(a);
        if dims.iter().product::<usize>() != av.len() || dims.contains(&0) {
            return Err(self.mismatch("reshape", format!("cannot view {:?} as {dims:?}", av.dims())));
        }
        let value = av.view(dims.to_vec());
        self.push(Op::Reshape(a.0), value, &[a.0])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Res {
        let dims = self.dims(a).to_vec();
        let mut seen = vec![false; dims.len()];
        let valid = axes.len() == dims.len()
            && axes.iter().all(|&x| x < dims.len() && !std::mem::replace(&mut seen[x], true));
        if !valid {
            return Err(self.mismatch("permute", format!("{axes:?} is not a permutation of {} axes", dims.len())));
        }
        let out_dims: Vec<usize> = axes.iter().map(|&x| dims[x]).collect();
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for_each_permuted_run(&dims, axes, |out_i, in_i, run| {
            data[out_i..out_i + run].copy_from_slice(&src[in_i..in_i + run])
        });
        let value = Tensor::new(out_dims, data)?;
        self.push(
            Op::Permute {
                a: a.0,
                axes: axes.to_vec(),
            },
            value,
            &[a.0],
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Res {
        let dims = self.dims(a).to_vec();
        if axis >= dims.len() || len == 0 || start + len > dims[axis] {
            return Err(self.mismatch(
                "narrow",
                format!("range {start}..{} on axis {axis} of {dims:?}", start + len),
            ));
        }
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dims[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_dims = dims;
        out_dims[axis] = len;
        let value = Tensor::new(out_dims, data)?;
        self.push(Op::Narrow { a: a.0, axis, start }, value, &[a.0])
    }

    /// Repeats `a` over new leading axes so that its dims become `dims`.
    pub fn broadcast_to(&mut self, a: NodeId, dims: &[usize]) -> Res {
        let ad = self.dims(a);
        if ad.len() > dims.len() || dims[dims.len() - ad.len()..] != *ad {
            return Err(self.mismatch("broadcast_to", format!("{ad:?} does not broadcast to {dims:?}")));
        }
        let src = self.value(a).data();
        let reps = dims.iter().product::<usize>() / src.len();
        let mut data = Vec::with_capacity(reps * src.len());
        for _ in 0..reps {
            data.extend_from_slice(src);
        }
        let value = Tensor::new(dims.to_vec(), data)?;
        self.push(Op::BroadcastTo(a.0), value, &[a.0])
    }

    /// Column lookup: `table` is `[rows, entries]`, output is
    /// `[rows, indices.len()]`; a `None` index yields 0.
    pub fn gather(&mut self, table: NodeId, indices: &[Option<usize>]) -> Res {
        let td = self.dims(table).to_vec();
        if td.len() != 2 {
            return Err(self.mismatch("gather", format!("table must be rank 2, got {td:?}")));
        }
        if let Some(bad) = indices.iter().flatten().find(|&&i| i >= td[1]) {
            return Err(self.mismatch("gather", format!("index {bad} outside table of {} entries", td[1])));
        }
        if indices.is_empty() {
            return Err(self.mismatch("gather", "empty index list".into()));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(td[0] * indices.len());
        for r in 0..td[0] {
            let row = &src[r * td[1]..(r + 1) * td[1]];
            data.extend(indices.iter().map(|i| i.map_or(0.0, |i| row[i])));
        }
        let value = Tensor::new(vec![td[0], indices.len()], data)?;
        self.push(
            Op::Gather {
                table: table.0,
                indices: indices.to_vec(),
            },
            value,
            &[table.0],
        )
    }

    /// Reverse pass from a scalar node; returns the gradient of every
    /// parameter leaf reachable from `output`.
    pub fn backward(&self, output: NodeId) -> Result<GradStore, TensorError> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(TensorError::NotScalar(out_val.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Tensor::full(out_val.dims().to_vec(), 1.0));
        let mut store = GradStore::new();

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, grad, &mut grads, &mut store);
        }
        Ok(store)
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, idx: usize, grad: Tensor, grads: &mut [Option<Tensor>], store: &mut GradStore) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let g = &grad;
        let gd = g.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(name) => store.insert(name.clone(), grad),
            Op::MatMul { a, b, trans_b } => self.matmul_backward(*a, *b, *trans_b, g, grads),
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    self.pass_through(grads, *a, g);
                }
                if self.wants(*b) {
                    self.acc(grads, *b, |buf| {
                        for chunk in gd.chunks(buf.len()) {
                            for (o, v) in buf.iter_mut().zip(chunk) {
                                *o += sign * v;
                            }
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                let n = bv.len();
                if self.wants(*a) {
                    self.acc(grads, *a, |buf| {
                        for (bo, gr) in buf.chunks_exact_mut(n).zip(gd.chunks_exact(n)) {
                            for ((o, &gv), &y) in bo.iter_mut().zip(gr).zip(bv) {
                                *o += gv * y;
                            }
                        }
                    });
                }
                if self.wants(*b) {
                    self.acc(grads, *b, |buf| {
                        for (gr, ar) in gd.chunks_exact(n).zip(av.chunks_exact(n)) {
                            for ((o, &gv), &x) in buf.iter_mut().zip(gr).zip(ar) {
                                *o += gv * x;
                            }
                        }
                    });
                }
            }
            Op::Scale { a, factor } => self.acc(grads, *a, |buf| {
                for (o, v) in buf.iter_mut().zip(gd) {
                    *o += factor * v;
                }
            }),
            Op::Shift { a } | Op::Reshape(a) => self.pass_through(grads, *a, g),
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                self.acc(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        if x[i] > 0.0 {
                            buf[i] += gd[i];
                        }
                    }
                })
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |buf| {
                for i in 0..buf.len() {
                    buf[i] += gd[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Ln(a) => {
                let x = self.nodes[*a].value.data();
                self.acc(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += gd[i] / x[i];
                    }
                })
            }
            Op::Clamp { a, lo, hi } => {
                let x = self.nodes[*a].value.data();
                self.acc(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            buf[i] += gd[i];
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let n = *node.value.dims().last().unwrap();
                self.acc(grads, *a, |buf| {
                    for ((bo, yr), gr) in buf.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for i in 0..n {
                            bo[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                })
            }
            Op::LayerNorm { a, inv_std } => {
                let n = *node.value.dims().last().unwrap();
                let nf = n as f64;
                self.acc(grads, *a, |buf| {
                    for (r, ((bo, yr), gr)) in
                        buf.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)).enumerate()
                    {
                        let mean_g = gr.iter().sum::<f64>() / nf;
                        let mean_gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / nf;
                        for i in 0..n {
                            bo[i] += inv_std[r] * (gr[i] - mean_g - yr[i] * mean_gy);
                        }
                    }
                })
            }
            Op::SumAll(a) => self.acc(grads, *a, |buf| buf.iter_mut().for_each(|o| *o += gd[0])),
            Op::MeanAll(a) => self.acc(grads, *a, |buf| {
                let s = gd[0] / buf.len() as f64;
                buf.iter_mut().for_each(|o| *o += s);
            }),
            Op::MaxLast { a, argmax } => {
                let n = *self.nodes[*a].value.dims().last().unwrap();
                self.acc(grads, *a, |buf| {
                    for (r, &j) in argmax.iter().enumerate() {
                        buf[r * n + j] += gd[r];
                    }
                })
            }
            Op::MeanLast(a) => {
                let n = *self.nodes[*a].value.dims().last().unwrap();
                self.acc(grads, *a, |buf| {
                    for (row, &gv) in buf.chunks_mut(n).zip(gd) {
                        let s = gv / n as f64;
                        row.iter_mut().for_each(|o| *o += s);
                    }
                })
            }
            Op::Concat { inputs, axis } => {
                let od = node.value.dims();
                let outer: usize = od[..*axis].iter().product();
                let inner: usize = od[axis + 1..].iter().product();
                let row = od[*axis] * inner;
                let mut offset = 0;
                for &i in inputs {
                    let chunk = self.nodes[i].value.dims()[*axis] * inner;
                    if self.wants(i) {
                        self.acc(grads, i, |buf| {
                            for o in 0..outer {
                                let src = &gd[o * row + offset..o * row + offset + chunk];
                                add_into(&mut buf[o * chunk..(o + 1) * chunk], src);
                            }
                        });
                    }
                    offset += chunk;
                }
            }
            Op::Permute { a, axes } => {
                let in_dims = self.nodes[*a].value.dims().to_vec();
                self.acc(grads, *a, |buf| {
                    for_each_permuted_run(&in_dims, axes, |out_i, in_i, run| {
                        add_into(&mut buf[in_i..in_i + run], &gd[out_i..out_i + run])
                    });
                })
            }
            Op::Narrow { a, axis, start } => {
                let in_dims = self.nodes[*a].value.dims();
                let len = node.value.dims()[*axis];
                let outer: usize = in_dims[..*axis].iter().product();
                let inner: usize = in_dims[axis + 1..].iter().product();
                let full = in_dims[*axis];
                self.acc(grads, *a, |buf| {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        add_into(&mut buf[base..base + len * inner], &gd[o * len * inner..(o + 1) * len * inner]);
                    }
                })
            }
            Op::BroadcastTo(a) => self.acc(grads, *a, |buf| {
                for chunk in gd.chunks(buf.len()) {
                    add_into(buf, chunk);
                }
            }),
            Op::Gather { table, indices } => {
                let entries = self.nodes[*table].value.dims()[1];
                let l = indices.len();
                self.acc(grads, *table, |buf| {
                    for (r, grow) in gd.chunks(l).enumerate() {
                        for (k, idx) in indices.iter().enumerate() {
                            if let Some(e) = idx {
                                buf[r * entries + e] += grow[k];
                            }
                        }
                    }
                })
            }
        }
    }

    /// Adds a gradient of equal length to node `i`, sharing its storage when
    /// `i` has no gradient yet.
    fn pass_through(&self, grads: &mut [Option<Tensor>], i: usize, g: &Tensor) {
        if !self.wants(i) {
            return;
        }
        match &mut grads[i] {
            Some(slot) => add_into(slot.data_mut(), g.data()),
            empty => *empty = Some(g.view(self.nodes[i].value.dims().to_vec())),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], i: usize, f: impl FnOnce(&mut [f64])) {
        if !self.wants(i) {
            return;
        }
        let dims = self.nodes[i].value.dims();
        let slot = grads[i].get_or_insert_with(|| Tensor::zeros(dims.to_vec()));
        f(slot.data_mut());
    }

    fn matmul_backward(&self, a: usize, b: usize, trans_b: bool, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let ad = self.nodes[a].value.dims();
        let bd = self.nodes[b].value.dims();
        let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
        let (br, bc) = (bd[bd.len() - 2], bd[bd.len() - 1]);
        let n = if trans_b { br } else { bc };
        let batch: usize = ad[..ad.len() - 2].iter().product();
        let shared = bd.len() == 2;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let gd = g.data();

        // dA = dC · op(B)ᵀ
        self.acc(grads, a, |buf| {
            let bmat = |i: usize| {
                let mat = MatRef::new(&bv[i * br * bc..(i + 1) * br * bc], br, bc);
                if trans_b {
                    mat
                } else {
                    mat.t()
                }
            };
            if shared {
                gemm(MatRef::new(gd, batch * m, n), bmat(0), buf, true);
            } else {
                for i in 0..batch {
                    gemm(
                        MatRef::new(&gd[i * m * n..(i + 1) * m * n], m, n),
                        bmat(i),
                        &mut buf[i * m * k..(i + 1) * m * k],
                        true,
                    );
                }
            }
        });
        // dB = Aᵀ · dC, or dCᵀ · A when B enters transposed.
        self.acc(grads, b, |buf| {
            let rows = if shared { batch * m } else { m };
            let count = if shared { 1 } else { batch };
            for i in 0..count {
                let amat = MatRef::new(&av[i * rows * k..(i + 1) * rows * k], rows, k);
                let gmat = MatRef::new(&gd[i * rows * n..(i + 1) * rows * n], rows, n);
                let out = &mut buf[i * br * bc..(i + 1) * br * bc];
                if trans_b {
                    gemm(gmat.t(), amat, out, true);
                } else {
                    gemm(amat.t(), gmat, out, true);
                }
            }
        });
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Like [`for_each_permuted`] but hands out contiguous runs
/// `f(output_index, input_index, len)` when the last axis stays in place.
fn for_each_permuted_run(in_dims: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = in_dims.len();
    if rank >= 2 && axes[rank - 1] == rank - 1 {
        let run = in_dims[rank - 1];
        let outer_axes: Vec<usize> = axes[..rank - 1].to_vec();
        for_each_permuted(&in_dims[..rank - 1], &outer_axes, |o, i| f(o * run, i * run, run));
    } else {
        for_each_permuted(in_dims, axes, |o, i| f(o, i, 1));
    }
}

/// Walks the output of a permutation in row-major order, calling
/// `f(output_index, input_index)` for every element.
fn for_each_permuted(in_dims: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = in_dims.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_dims[i + 1];
    }
    let out_dims: Vec<usize> = axes.iter().map(|&x| in_dims[x]).collect();
    let strides: Vec<usize> = axes.iter().map(|&x| in_strides[x]).collect();
    let total: usize = in_dims.iter().product();
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    let last = rank - 1;
    for out_i in 0..total {
        f(out_i, offset);
        // odometer increment
        let mut ax = last;
        loop {
            counter[ax] += 1;
            offset += strides[ax];
            if counter[ax] < out_dims[ax] || ax == 0 {
                break;
            }
            offset -= strides[ax] * out_dims[ax];
            counter[ax] = 0;
            ax -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_clips_negatives() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn matmul_of_ones() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(vec![2, 3], 1.0));
        let b = g.constant(Tensor::full(vec![3, 2], 1.0));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.dims(c), &[2, 2]);
        assert!(g.value(c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn dimension_mismatch_names_the_node() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            TensorError::ShapeMismatch { node, op, .. } => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", &t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn max_routes_gradient_to_first_tie() {
        let mut g = Graph::new();
        let x = g.param("x", &t(&[3], &[0.3, 0.9, 0.9]));
        let m = g.max_last(x).unwrap();
        assert_eq!(g.value(m).item(), Some(0.9));
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param("x", &t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn ln_of_zero_is_a_contract_violation() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[0.0]));
        assert!(matches!(g.ln(x), Err(TensorError::NonFinite { op: "ln", .. })));
    }

    #[test]
    fn param_leaves_are_shared_by_name() {
        let mut g = Graph::new();
        let w = t(&[1], &[3.0]);
        let a = g.param("w", &w);
        let b = g.param("w", &w);
        assert_eq!(a, b);
        let s = g.add(a, b).unwrap();
        let total = g.sum(s).unwrap();
        assert_eq!(g.backward(total).unwrap().get("w").unwrap().data(), &[2.0]);
    }

    #[test]
    fn permute_moves_axes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![2, 3, 4], |i| i as f64));
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.dims(y), &[4, 2, 3]);
        // y[c, a, b] = x[a, b, c]
        let yv = g.value(y).data();
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(yv[c * 6 + a * 3 + b], (a * 12 + b * 4 + c) as f64);
                }
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![3, 7], |i| ((i * 37) % 11) as f64 * 0.3 - 1.0));
        let y = g.layer_norm(x, 1e-14).unwrap();
        for row in g.value(y).data().chunks(7) {
            let mean = row.iter().sum::<f64>() / 7.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gather_and_concat_and_narrow() {
        let mut g = Graph::new();
        let table = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.gather(table, &[Some(2), None, Some(0)]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 0.0, 1.0, 6.0, 0.0, 4.0]);
        let c = g.concat(&[table, y], 1).unwrap();
        assert_eq!(g.dims(c), &[2, 6]);
        let n = g.narrow(c, 1, 3, 2).unwrap();
        assert_eq!(g.value(n).data(), &[3.0, 0.0, 6.0, 0.0]);
    }
}
