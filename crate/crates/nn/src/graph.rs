//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParameterStore`] read-only. Every operation on a
//! [`Var`] appends a node holding its forward value and enough saved state to
//! run its backward rule. [`Graph::backward`] walks the nodes in reverse
//! creation order, which is always a valid topological order.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::params::ParameterStore;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, strides, Tensor};

/// Lower clamp applied inside [`Var::ln`].
pub const LOG_EPS: f64 = 1e-12;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Affine(usize, f64),
    Linear(usize, usize),
    BatchMatMul { a: usize, b: usize, trans_b: bool },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Log(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        inv_std: Vec<f64>,
    },
    SumAll(usize),
    SumLast(usize),
    Embedding { table: usize, ids: Vec<usize> },
    Pick { x: usize, idx: Vec<usize> },
    RowNormalize { x: usize, norms: Vec<f64> },
    ScatterAdd { x: usize, index: Vec<usize>, width: usize },
    PadLast(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every bound parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// A single forward pass over a parameter store.
pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<BTreeMap<String, usize>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph<'g>,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        nodes.len() - 1
    }

    fn var<'g>(&'g self, id: usize) -> Var<'g> {
        Var { graph: self, id }
    }

    /// Binds a stored parameter as a differentiable leaf. Binding the same
    /// name twice returns the same node.
    pub fn param<'g>(&'g self, name: &str) -> Result<Var<'g>> {
        if let Some(&id) = self.bound.borrow().get(name) {
            return Ok(self.var(id));
        }
        let value = self.store.value(name)?.clone();
        let id = self.push(value, Op::Leaf, true);
        self.bound.borrow_mut().insert(name.to_string(), id);
        Ok(self.var(id))
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant<'g>(&'g self, value: Tensor) -> Var<'g> {
        let id = self.push(value, Op::Leaf, false);
        self.var(id)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(NnError::InvalidArgument {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            });
        }
        if !root.value.item().is_finite() {
            return Err(NnError::NonFiniteLoss(root.value.item()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (pid, pg) in backward_rule(&nodes, id, &g) {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let mut out = BTreeMap::new();
        for (name, &id) in self.bound.borrow().iter() {
            if id > loss.id {
                continue;
            }
            let g = grads[id]
                .take()
                .unwrap_or_else(|| Tensor::zeros(nodes[id].value.shape()));
            out.insert(name.clone(), g);
        }
        Ok(Gradients { grads: out })
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<'g> {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    /// Runs `f` on the forward value without cloning it.
    pub fn with_value<T>(&self, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn item(&self) -> f64 {
        self.with_value(|t| t.item())
    }

    fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn emit(&self, value: Tensor, op: Op, parents: &[Var<'g>]) -> Var<'g> {
        let rg = parents.iter().any(Var::requires_grad);
        let id = self.graph.push(value, op, rg);
        self.graph.var(id)
    }

    fn zip_with(
        &self,
        other: Var<'g>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let nodes = self.graph.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.shape() != b.shape() {
            return Err(mismatch(op, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(a.shape(), data)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        self.with_value(|t| {
            let data = t.data().iter().map(|x| f(*x)).collect();
            Tensor::new(t.shape(), data).expect("same shape")
        })
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.emit(v, Op::Add(self.id, other.id), &[*self, other]))
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.emit(v, Op::Sub(self.id, other.id), &[*self, other]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.emit(v, Op::Mul(self.id, other.id), &[*self, other]))
    }

    /// `x[..., n] + bias[n]`
    pub fn add_row(&self, bias: Var<'g>) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let n = x.last_dim();
            if b.numel() != n {
                return Err(mismatch("add_row", x.shape(), b.shape()));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n.max(1)) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        Ok(self.emit(v, Op::AddRow(self.id, bias.id), &[*self, bias]))
    }

    /// `x[..., n] * s[..., 1]`, scaling each row by one scalar.
    pub fn mul_col(&self, scale: Var<'g>) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let (x, s) = (&nodes[self.id].value, &nodes[scale.id].value);
            if s.numel() != x.rows() {
                return Err(mismatch("mul_col", x.shape(), s.shape()));
            }
            let n = x.last_dim();
            let mut out = x.clone();
            for (row, sv) in out.data_mut().chunks_mut(n.max(1)).zip(s.data()) {
                row.iter_mut().for_each(|o| *o *= sv);
            }
            out
        };
        Ok(self.emit(v, Op::MulCol(self.id, scale.id), &[*self, scale]))
    }

    /// `a * x + b` with constant `a`, `b`.
    pub fn affine(&self, a: f64, b: f64) -> Var<'g> {
        let v = self.map(|x| a * x + b);
        self.emit(v, Op::Affine(self.id, a), &[*self])
    }

    pub fn scale(&self, a: f64) -> Var<'g> {
        self.affine(a, 0.0)
    }

    pub fn neg(&self) -> Var<'g> {
        self.affine(-1.0, 0.0)
    }

    /// `x[..., k] @ w[k, m] -> [..., m]`
    pub fn matmul(&self, w: Var<'g>) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let (x, wt) = (&nodes[self.id].value, &nodes[w.id].value);
            if wt.shape().len() != 2 || wt.shape()[0] != x.last_dim() {
                return Err(mismatch("matmul", x.shape(), wt.shape()));
            }
            let (n, k, m) = (x.rows(), wt.shape()[0], wt.shape()[1]);
            let mut out = vec![0.0; n * m];
            gemm_nn(x.data(), wt.data(), &mut out, n, k, m);
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = m;
            Tensor::new(&shape, out)?
        };
        Ok(self.emit(v, Op::Linear(self.id, w.id), &[*self, w]))
    }

    /// Batched product `[G, n, k] x [G, k, m]`, or `[G, n, k] x [G, m, k]^T`
    /// when `trans_b`.
    pub fn bmm(&self, other: Var<'g>, trans_b: bool) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
                return Err(mismatch("bmm", sa, sb));
            }
            let (g, n, k) = (sa[0], sa[1], sa[2]);
            let (kb, m) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
            if kb != k {
                return Err(mismatch("bmm", sa, sb));
            }
            let mut out = vec![0.0; g * n * m];
            for gi in 0..g {
                let ab = &a.data()[gi * n * k..(gi + 1) * n * k];
                let bb = &b.data()[gi * k * m..(gi + 1) * k * m];
                let cb = &mut out[gi * n * m..(gi + 1) * n * m];
                if trans_b {
                    gemm_nt(ab, bb, cb, n, k, m);
                } else {
                    gemm_nn(ab, bb, cb, n, k, m);
                }
            }
            Tensor::new(&[g, n, m], out)?
        };
        Ok(self.emit(
            v,
            Op::BatchMatMul {
                a: self.id,
                b: other.id,
                trans_b,
            },
            &[*self, other],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().reshaped(shape)?;
        Ok(self.emit(v, Op::Reshape(self.id), &[*self]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'g>> {
        let v = self.with_value(|x| permute_tensor(x, axes))?;
        Ok(self.emit(v, Op::Permute(self.id, axes.to_vec()), &[*self]))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or(NnError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let v = {
            let nodes = first.graph.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let lead = &vals[0].shape()[..vals[0].shape().len() - 1];
            for t in &vals[1..] {
                if &t.shape()[..t.shape().len() - 1] != lead {
                    return Err(mismatch("concat", vals[0].shape(), t.shape()));
                }
            }
            let rows = vals[0].rows();
            let total: usize = vals.iter().map(|t| t.last_dim()).sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in &vals {
                    out.extend_from_slice(t.row(r));
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(&shape, out)?
        };
        Ok(first.emit(v, Op::Concat(parts.iter().map(|p| p.id).collect()), parts))
    }

    pub fn tanh(&self) -> Var<'g> {
        let v = self.map(f64::tanh);
        self.emit(v, Op::Tanh(self.id), &[*self])
    }

    pub fn sigmoid(&self) -> Var<'g> {
        let v = self.map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.emit(v, Op::Sigmoid(self.id), &[*self])
    }

    pub fn relu(&self) -> Var<'g> {
        let v = self.map(|x| x.max(0.0));
        self.emit(v, Op::Relu(self.id), &[*self])
    }

    /// Natural log of `max(x, LOG_EPS)`.
    pub fn ln(&self) -> Var<'g> {
        let v = self.map(|x| x.max(LOG_EPS).ln());
        self.emit(v, Op::Log(self.id), &[*self])
    }

    /// Softmax over the last axis. `mask`, when given, has one flag per
    /// element (`true` = keep); masked entries come out exactly zero. A row
    /// with every entry masked yields all zeros.
    pub fn softmax(&self, mask: Option<&[bool]>) -> Result<Var<'g>> {
        let v = self.with_value(|x| softmax_forward(x, mask))?;
        Ok(self.emit(v, Op::Softmax(self.id), &[*self]))
    }

    /// Layer normalization over the last axis with gain and bias vectors.
    pub fn layer_norm(&self, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>> {
        let (v, inv_std) = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let (gm, bt) = (&nodes[gamma.id].value, &nodes[beta.id].value);
            let n = x.last_dim();
            if gm.numel() != n || bt.numel() != n {
                return Err(mismatch("layer_norm", x.shape(), gm.shape()));
            }
            let mut out = vec![0.0; x.numel()];
            let mut inv_std = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std.push(is);
                for j in 0..n {
                    out[r * n + j] = (row[j] - mean) * is * gm.data()[j] + bt.data()[j];
                }
            }
            (Tensor::new(x.shape(), out)?, inv_std)
        };
        Ok(self.emit(
            v,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                inv_std,
            },
            &[*self, gamma, beta],
        ))
    }

    pub fn sum(&self) -> Var<'g> {
        let v = Tensor::scalar(self.with_value(Tensor::sum));
        self.emit(v, Op::SumAll(self.id), &[*self])
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.with_value(Tensor::numel).max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums the last axis away: `[..., n] -> [...]`.
    pub fn sum_last(&self) -> Var<'g> {
        let v = self.with_value(|x| {
            let data: Vec<f64> = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
            let mut shape = x.shape()[..x.shape().len() - 1].to_vec();
            if shape.is_empty() {
                shape.push(1);
            }
            Tensor::new(&shape, data).expect("row count")
        });
        self.emit(v, Op::SumLast(self.id), &[*self])
    }

    /// Row lookup `table[ids]`, output shape `shape ++ [d]`. Id 0 is the
    /// padding row: it always reads as zeros and never receives gradient.
    pub fn embedding(&self, ids: &[usize], shape: &[usize]) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let table = &nodes[self.id].value;
            if table.shape().len() != 2 {
                return Err(NnError::InvalidArgument {
                    op: "embedding",
                    msg: format!("table must be 2-d, got {:?}", table.shape()),
                });
            }
            if shape.iter().product::<usize>() != ids.len() {
                return Err(NnError::InvalidArgument {
                    op: "embedding",
                    msg: format!("{} ids cannot fill shape {shape:?}", ids.len()),
                });
            }
            let (rows, d) = (table.shape()[0], table.shape()[1]);
            let mut out = vec![0.0; ids.len() * d];
            for (i, &id) in ids.iter().enumerate() {
                if id >= rows {
                    return Err(NnError::InvalidArgument {
                        op: "embedding",
                        msg: format!("id {id} out of range for {rows} rows"),
                    });
                }
                if id != 0 {
                    out[i * d..(i + 1) * d].copy_from_slice(table.row(id));
                }
            }
            let mut s = shape.to_vec();
            s.push(d);
            Tensor::new(&s, out)?
        };
        Ok(self.emit(
            v,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            &[*self],
        ))
    }

    /// `x[n, c] -> [n]` picking `x[i, idx[i]]`.
    pub fn pick(&self, idx: &[usize]) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let c = x.last_dim();
            if x.rows() != idx.len() || idx.iter().any(|&i| i >= c) {
                return Err(NnError::InvalidArgument {
                    op: "pick",
                    msg: format!("{} indices for shape {:?}", idx.len(), x.shape()),
                });
            }
            let data = idx.iter().enumerate().map(|(r, &i)| x.row(r)[i]).collect();
            Tensor::new(&[idx.len()], data)?
        };
        Ok(self.emit(
            v,
            Op::Pick {
                x: self.id,
                idx: idx.to_vec(),
            },
            &[*self],
        ))
    }

    /// Scales every row of the last axis to unit L2 norm; zero rows stay zero.
    pub fn row_normalize(&self) -> Var<'g> {
        let (v, norms) = self.with_value(|x| {
            let n = x.last_dim();
            let mut out = x.clone();
            let mut norms = Vec::with_capacity(x.rows());
            for row in out.data_mut().chunks_mut(n.max(1)) {
                let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                norms.push(nr);
                if nr > 0.0 {
                    row.iter_mut().for_each(|v| *v /= nr);
                }
            }
            (out, norms)
        });
        self.emit(v, Op::RowNormalize { x: self.id, norms }, &[*self])
    }

    /// Cosine similarity of every row of `self` (`[n, d]`) against every row
    /// of `other` (`[m, d]`), giving `[n, m]`. Zero-norm rows score 0.
    pub fn cosine_similarity(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(mismatch("cosine_similarity", &sa, &sb));
        }
        let a = self.row_normalize().reshape(&[1, sa[0], sa[1]])?;
        let b = other.row_normalize().reshape(&[1, sb[0], sb[1]])?;
        a.bmm(b, true)?.reshape(&[sa[0], sb[0]])
    }

    /// Scatter-adds `x[g, t, l]` into `[g, t, width]` at columns
    /// `index[g, l]`. Used to fold copy attention onto vocabulary ids.
    pub fn scatter_add(&self, index: &[usize], width: usize) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let s = x.shape();
            if s.len() != 3 || index.len() != s[0] * s[2] || index.iter().any(|&i| i >= width) {
                return Err(NnError::InvalidArgument {
                    op: "scatter_add",
                    msg: format!("index of len {} for shape {s:?} width {width}", index.len()),
                });
            }
            let (g, t, l) = (s[0], s[1], s[2]);
            let mut out = vec![0.0; g * t * width];
            for gi in 0..g {
                for ti in 0..t {
                    let src = &x.data()[(gi * t + ti) * l..(gi * t + ti + 1) * l];
                    let dst = &mut out[(gi * t + ti) * width..(gi * t + ti + 1) * width];
                    for (li, &val) in src.iter().enumerate() {
                        dst[index[gi * l + li]] += val;
                    }
                }
            }
            Tensor::new(&[g, t, width], out)?
        };
        Ok(self.emit(
            v,
            Op::ScatterAdd {
                x: self.id,
                index: index.to_vec(),
                width,
            },
            &[*self],
        ))
    }

    /// Zero-pads the last axis up to `width`.
    pub fn pad_last(&self, width: usize) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let n = x.last_dim();
            if width < n {
                return Err(NnError::InvalidArgument {
                    op: "pad_last",
                    msg: format!("cannot pad width {n} down to {width}"),
                });
            }
            let mut out = vec![0.0; x.rows() * width];
            for r in 0..x.rows() {
                out[r * width..r * width + n].copy_from_slice(x.row(r));
            }
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = width;
            Tensor::new(&shape, out)?
        };
        Ok(self.emit(v, Op::PadLast(self.id), &[*self]))
    }

    /// Same value, cut off from the gradient path.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.value())
    }
}

fn permute_tensor(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let s = x.shape();
    let mut seen = vec![false; s.len()];
    if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
        return Err(NnError::InvalidArgument {
            op: "permute",
            msg: format!("axes {axes:?} invalid for shape {s:?}"),
        });
    }
    let in_strides = strides(s);
    let out_shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let mut counter = vec![0usize; out_shape.len()];
    for _ in 0..x.numel() {
        let off: usize = counter.iter().zip(&src_strides).map(|(c, st)| c * st).sum();
        out.push(x.data()[off]);
        for ax in (0..counter.len()).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn softmax_forward(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if let Some(m) = mask {
        if m.len() != x.numel() {
            return Err(NnError::InvalidArgument {
                op: "softmax",
                msg: format!("mask of len {} for shape {:?}", m.len(), x.shape()),
            });
        }
    }
    let n = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.rows() {
        let row = x.row(r);
        let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
        let max = (0..n)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for j in 0..n {
            if keep(j) {
                let e = (row[j] - max).exp();
                out[r * n + j] = e;
                total += e;
            }
        }
        for v in &mut out[r * n..(r + 1) * n] {
            *v /= total;
        }
    }
    Tensor::new(x.shape(), out)
}

fn backward_rule(nodes: &[Node], id: usize, g: &Tensor) -> Vec<(usize, Tensor)> {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let like = |i: usize, data: Vec<f64>| Tensor::new(nodes[i].value.shape(), data).expect("grad shape");
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, like(*b, g.data().iter().map(|x| -x).collect()))],
        Op::Mul(a, b) => {
            let ga = g.data().iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
            let gb = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
            vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
        }
        Op::AddRow(x, b) => {
            let n = g.last_dim();
            let mut gb = vec![0.0; n];
            for r in 0..g.rows() {
                for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                    *acc += v;
                }
            }
            vec![(*x, g.clone()), (*b, like(*b, gb))]
        }
        Op::MulCol(x, s) => {
            let (xv, sv) = (val(*x), val(*s));
            let n = g.last_dim();
            let mut gx = g.clone();
            let mut gs = vec![0.0; sv.numel()];
            for (r, gs_r) in gs.iter_mut().enumerate() {
                let scale = sv.data()[r];
                let grow = &mut gx.data_mut()[r * n..(r + 1) * n];
                *gs_r = grow.iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                grow.iter_mut().for_each(|v| *v *= scale);
            }
            vec![(*x, gx), (*s, like(*s, gs))]
        }
        Op::Affine(x, a) => vec![(*x, like(*x, g.data().iter().map(|v| v * a).collect()))],
        Op::Linear(x, w) => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, k, m) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
            let mut gx = vec![0.0; n * k];
            gemm_nt(g.data(), wv.data(), &mut gx, n, m, k);
            let mut gw = vec![0.0; k * m];
            gemm_tn(xv.data(), g.data(), &mut gw, n, k, m);
            vec![(*x, like(*x, gx)), (*w, like(*w, gw))]
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let (av, bv) = (val(*a), val(*b));
            let (gs, n, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let m = g.shape()[2];
            let mut ga = vec![0.0; av.numel()];
            let mut gb = vec![0.0; bv.numel()];
            for gi in 0..gs {
                let ab = &av.data()[gi * n * k..(gi + 1) * n * k];
                let bb = &bv.data()[gi * k * m..(gi + 1) * k * m];
                let gg = &g.data()[gi * n * m..(gi + 1) * n * m];
                let gab = &mut ga[gi * n * k..(gi + 1) * n * k];
                let gbb = &mut gb[gi * k * m..(gi + 1) * k * m];
                if *trans_b {
                    // C = A B^T, B: [m, k]
                    gemm_nn(gg, bb, gab, n, m, k);
                    gemm_tn(gg, ab, gbb, n, m, k);
                } else {
                    gemm_nt(gg, bb, gab, n, m, k);
                    gemm_tn(ab, gg, gbb, n, k, m);
                }
            }
            vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
        }
        Op::Reshape(x) => vec![(*x, like(*x, g.data().to_vec()))],
        Op::Permute(x, axes) => {
            let back = permute_tensor(g, &inverse_axes(axes)).expect("valid inverse");
            vec![(*x, back)]
        }
        Op::Concat(parts) => {
            let widths: Vec<usize> = parts.iter().map(|p| val(*p).last_dim()).collect();
            let mut outs: Vec<Vec<f64>> = parts.iter().map(|p| Vec::with_capacity(val(*p).numel())).collect();
            for r in 0..g.rows() {
                let row = g.row(r);
                let mut off = 0;
                for (o, w) in outs.iter_mut().zip(&widths) {
                    o.extend_from_slice(&row[off..off + w]);
                    off += w;
                }
            }
            parts.iter().zip(outs).map(|(p, o)| (*p, like(*p, o))).collect()
        }
        Op::Tanh(x) => {
            let d = g.data().iter().zip(node.value.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
            vec![(*x, like(*x, d))]
        }
        Op::Sigmoid(x) => {
            let d = g.data().iter().zip(node.value.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
            vec![(*x, like(*x, d))]
        }
        Op::Relu(x) => {
            let d = g.data().iter().zip(val(*x).data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
            vec![(*x, like(*x, d))]
        }
        Op::Log(x) => {
            let d = g
                .data()
                .iter()
                .zip(val(*x).data())
                .map(|(gv, xv)| if *xv > LOG_EPS { gv / xv } else { 0.0 })
                .collect();
            vec![(*x, like(*x, d))]
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let n = y.last_dim();
            let mut d = vec![0.0; y.numel()];
            for r in 0..y.rows() {
                let yr = y.row(r);
                let gr = g.row(r);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d[r * n + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![(*x, like(*x, d))]
        }
        Op::LayerNorm { x, gamma, beta, inv_std } => {
            let (xv, gm) = (val(*x), val(*gamma));
            let n = xv.last_dim();
            let mut gx = vec![0.0; xv.numel()];
            let mut gg = vec![0.0; n];
            let mut gbt = vec![0.0; n];
            let mut xhat = vec![0.0; n];
            let mut dxhat = vec![0.0; n];
            for r in 0..xv.rows() {
                let row = xv.row(r);
                let mean = row.iter().sum::<f64>() / n as f64;
                let is = inv_std[r];
                let gr = g.row(r);
                for j in 0..n {
                    xhat[j] = (row[j] - mean) * is;
                    dxhat[j] = gr[j] * gm.data()[j];
                    gg[j] += gr[j] * xhat[j];
                    gbt[j] += gr[j];
                }
                let m1 = dxhat.iter().sum::<f64>() / n as f64;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for j in 0..n {
                    gx[r * n + j] = is * (dxhat[j] - m1 - xhat[j] * m2);
                }
            }
            vec![(*x, like(*x, gx)), (*gamma, like(*gamma, gg)), (*beta, like(*beta, gbt))]
        }
        Op::SumAll(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
        Op::SumLast(x) => {
            let xv = val(*x);
            let n = xv.last_dim();
            let mut d = vec![0.0; xv.numel()];
            for r in 0..xv.rows() {
                d[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = g.data()[r]);
            }
            vec![(*x, like(*x, d))]
        }
        Op::Embedding { table, ids } => {
            let tv = val(*table);
            let d = tv.shape()[1];
            let mut gt = vec![0.0; tv.numel()];
            for (i, &id) in ids.iter().enumerate() {
                if id == 0 {
                    continue;
                }
                for j in 0..d {
                    gt[id * d + j] += g.data()[i * d + j];
                }
            }
            vec![(*table, like(*table, gt))]
        }
        Op::Pick { x, idx } => {
            let xv = val(*x);
            let c = xv.last_dim();
            let mut d = vec![0.0; xv.numel()];
            for (r, &i) in idx.iter().enumerate() {
                d[r * c + i] = g.data()[r];
            }
            vec![(*x, like(*x, d))]
        }
        Op::RowNormalize { x, norms } => {
            let y = &node.value;
            let n = y.last_dim();
            let mut d = vec![0.0; y.numel()];
            for r in 0..y.rows() {
                if norms[r] == 0.0 {
                    continue;
                }
                let (yr, gr) = (y.row(r), g.row(r));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d[r * n + j] = (gr[j] - yr[j] * dot) / norms[r];
                }
            }
            vec![(*x, like(*x, d))]
        }
        Op::ScatterAdd { x, index, width } => {
            let s = val(*x).shape().to_vec();
            let (gs, t, l) = (s[0], s[1], s[2]);
            let mut d = vec![0.0; gs * t * l];
            for gi in 0..gs {
                for ti in 0..t {
                    for li in 0..l {
                        d[(gi * t + ti) * l + li] = g.data()[(gi * t + ti) * width + index[gi * l + li]];
                    }
                }
            }
            vec![(*x, like(*x, d))]
        }
        Op::PadLast(x) => {
            let xv = val(*x);
            let (n, w) = (xv.last_dim(), g.last_dim());
            let mut d = Vec::with_capacity(xv.numel());
            for r in 0..xv.rows() {
                d.extend_from_slice(&g.data()[r * w..r * w + n]);
            }
            vec![(*x, like(*x, d))]
        }
    }
}
