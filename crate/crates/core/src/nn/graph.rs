//! Reverse-mode tape over 2-D tensors.

use std::collections::HashMap;

use super::kernels::{self, gelu, gelu_grad, logsumexp, masked_softmax, matmul, matmul_at, matmul_bt};
use super::tensor::{Grads, ParamId, ParamStore, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which keys each attention query may see.
#[derive(Debug, Clone)]
pub enum Mask {
    None,
    /// Query i sees keys 0..=i.
    Causal,
    /// Per-key validity shared by every query.
    Keys(Vec<bool>),
    /// Query i sees key j iff their group labels match.
    Groups { queries: Vec<usize>, keys: Vec<usize> },
}

impl Mask {
    fn allowed(&self, i: usize, j: usize) -> bool {
        match self {
            Mask::None => true,
            Mask::Causal => j <= i,
            Mask::Keys(k) => k[j],
            Mask::Groups { queries, keys } => queries[i] == keys[j],
        }
    }
}

/// One cross-entropy term: `weight · −log softmax(logits[row, ..n_classes])[target]`.
#[derive(Debug, Clone, Copy)]
pub struct CeItem {
    pub row: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    LayerNorm { x: Var, g: Var, b: Var },
    Softmax(Var),
    Embedding { table: Var, ids: Vec<Option<usize>> },
    Rows { x: Var, idx: Vec<Option<usize>> },
    Reshape(Var),
    Concat(Vec<Var>),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, items: Vec<CeItem>, n_classes: usize },
    Mse { a: Var, target: Tensor },
    Sum(Var),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

/// A tape recording one forward computation. Parameter leaves borrow the store.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> NnError {
    NnError::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, t: Tensor, op: Op) -> Var {
        debug_assert!(t.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value: Value::Owned(t), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Copies the value into a new leaf; no gradient flows back through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let out = Tensor { rows: ta.rows, cols: tb.cols, data: matmul(&ta.data, ta.rows, ta.cols, &tb.data, tb.cols) };
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor { rows: ta.rows, cols: ta.cols, data };
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows != 1 || tb.cols != ta.cols {
            return Err(shape_err("add_row", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        for r in 0..out.rows {
            for (x, y) in out.row_slice_mut(r).iter_mut().zip(&tb.data) {
                *x += y;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor { rows: ta.rows, cols: ta.cols, data };
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor { rows: ta.rows, cols: ta.cols, data: ta.data.iter().map(|x| x * s).collect() };
        self.push(out, Op::Scale(a, s))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out = Tensor { rows: ta.rows, cols: ta.cols, data: ta.data.iter().map(|x| f(*x)).collect() };
        self.push(out, op)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Per-row normalization followed by the affine `g`, `b` (both 1×c).
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var, NnError> {
        let (tx, tg, tb) = (self.value(x), self.value(g), self.value(b));
        if tg.shape() != (1, tx.cols) || tb.shape() != (1, tx.cols) {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let mut out = tx.clone();
        for r in 0..out.rows {
            let row = out.row_slice_mut(r);
            kernels::normalize_row(row);
            for ((v, gv), bv) in row.iter_mut().zip(&tg.data).zip(&tb.data) {
                *v = *v * gv + bv;
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, g, b }))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            masked_softmax(out.row_slice_mut(r), |_| true);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Rows of `table` selected by `ids`; `None` yields a zero row.
    pub fn embedding(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var, NnError> {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, id) in ids.iter().enumerate() {
            if let Some(i) = *id {
                if i >= t.rows {
                    return Err(NnError::Shape(format!("embedding id {i} out of range for {} rows", t.rows)));
                }
                out.row_slice_mut(r).copy_from_slice(t.row_slice(i));
            }
        }
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }))
    }

    pub fn rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NnError> {
        let idx: Vec<Option<usize>> = idx.iter().map(|i| Some(*i)).collect();
        self.gather(x, &idx)
    }

    /// Rows of `x` selected by `idx`; `None` yields a zero row.
    pub fn gather(&mut self, x: Var, idx: &[Option<usize>]) -> Result<Var, NnError> {
        let t = self.value(x);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= t.rows {
                    return Err(NnError::Shape(format!("row {i} out of range for {} rows", t.rows)));
                }
                out.row_slice_mut(r).copy_from_slice(t.row_slice(i));
            }
        }
        Ok(self.push(out, Op::Rows { x, idx: idx.to_vec() }))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let t = self.value(x);
        if t.len() != rows * cols {
            return Err(shape_err("reshape", t.shape(), (rows, cols)));
        }
        let out = Tensor { rows, cols, data: t.data.clone() };
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols != cols {
                return Err(shape_err("concat_rows", (rows, cols), t.shape()));
            }
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        Ok(self.push(Tensor { rows, cols, data }, Op::Concat(parts.to_vec())))
    }

    /// Multi-head scaled dot-product attention. `q` is Tq×d, `k` and `v` are Tk×d. Query rows that
    /// see no key produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &Mask) -> Result<Var, NnError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tk.shape() != tv.shape() || tq.cols != tk.cols {
            return Err(shape_err("attention", tq.shape(), tk.shape()));
        }
        let d = tq.cols;
        if heads == 0 || d % heads != 0 {
            return Err(NnError::Shape(format!("attention: width {d} not divisible by {heads} heads")));
        }
        match mask {
            Mask::Keys(m) if m.len() != tk.rows => {
                return Err(NnError::Shape(format!("attention: {} mask entries for {} keys", m.len(), tk.rows)));
            }
            Mask::Groups { queries, keys } if queries.len() != tq.rows || keys.len() != tk.rows => {
                return Err(NnError::Shape(format!(
                    "attention: group labels {}/{} for {}x{} scores",
                    queries.len(),
                    keys.len(),
                    tq.rows,
                    tk.rows
                )));
            }
            _ => {}
        }
        let (nq, nk, dh) = (tq.rows, tk.rows, d / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * nq * nk];
        let mut out = Tensor::zeros(nq, d);
        for h in 0..heads {
            for i in 0..nq {
                let qi = &tq.data[i * d + h * dh..i * d + (h + 1) * dh];
                let p = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                for (j, pj) in p.iter_mut().enumerate() {
                    if mask.allowed(i, j) {
                        *pj = kernels::dot(qi, &tk.data[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
                    }
                }
                masked_softmax(p, |j| mask.allowed(i, j));
                let o = &mut out.data[i * d + h * dh..i * d + (h + 1) * dh];
                for (j, &pj) in p.iter().enumerate() {
                    if pj != 0.0 {
                        for (ov, &vv) in o.iter_mut().zip(&tv.data[j * d + h * dh..j * d + (h + 1) * dh]) {
                            *ov += pj * vv;
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }))
    }

    /// Weighted sum of negative log-likelihoods over the first `n_classes` logit columns.
    pub fn cross_entropy(&mut self, logits: Var, items: &[CeItem], n_classes: usize) -> Result<Var, NnError> {
        let t = self.value(logits);
        if n_classes == 0 || n_classes > t.cols {
            return Err(NnError::Shape(format!("cross_entropy: {n_classes} classes for {} logits", t.cols)));
        }
        let mut total = 0.0;
        for it in items {
            if it.row >= t.rows || it.target >= n_classes {
                return Err(NnError::Shape(format!(
                    "cross_entropy: target ({}, {}) outside {}x{n_classes}",
                    it.row, it.target, t.rows
                )));
            }
            let row = &t.row_slice(it.row)[..n_classes];
            total += it.weight * (logsumexp(row) - row[it.target]);
        }
        Ok(self.push(Tensor::scalar(total), Op::CrossEntropy { logits, items: items.to_vec(), n_classes }))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: &Tensor) -> Result<Var, NnError> {
        let ta = self.value(a);
        if ta.shape() != target.shape() {
            return Err(shape_err("mse", ta.shape(), target.shape()));
        }
        let n = ta.len().max(1) as f64;
        let s = ta.data.iter().zip(&target.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse { a, target: target.clone() }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar; returns gradients for every parameter reached.
    pub fn backward(&self, loss: Var) -> Result<Grads, NnError> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(NnError::NonScalarLoss { rows: lt.rows, cols: lt.cols });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Grads::empty(self.store.len());

        fn acc(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
            match &mut grads[v.0] {
                Some(g) => g.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &gy),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = matmul_bt(&gy.data, ta.rows, tb.cols, &tb.data, ta.cols);
                    let db = matmul_at(&ta.data, ta.rows, ta.cols, &gy.data, tb.cols);
                    acc(&mut grads, *a, Tensor { rows: ta.rows, cols: ta.cols, data: da });
                    acc(&mut grads, *b, Tensor { rows: tb.rows, cols: tb.cols, data: db });
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy);
                }
                Op::AddRow(a, b) => {
                    let mut db = Tensor::zeros(1, gy.cols);
                    for r in 0..gy.rows {
                        for (x, y) in db.data.iter_mut().zip(gy.row_slice(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *a, gy);
                    acc(&mut grads, *b, db);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = gy.data.iter().zip(&tb.data).map(|(g, y)| g * y).collect();
                    let db = gy.data.iter().zip(&ta.data).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, Tensor { rows: gy.rows, cols: gy.cols, data: da });
                    acc(&mut grads, *b, Tensor { rows: gy.rows, cols: gy.cols, data: db });
                }
                Op::Scale(a, s) => {
                    let d = gy.data.iter().map(|g| g * s).collect();
                    acc(&mut grads, *a, Tensor { rows: gy.rows, cols: gy.cols, data: d });
                }
                Op::Gelu(a) | Op::Relu(a) | Op::Tanh(a) => {
                    let x = self.value(*a);
                    let y = self.value(Var(i));
                    let d = gy
                        .data
                        .iter()
                        .zip(&x.data)
                        .zip(&y.data)
                        .map(|((g, xv), yv)| match node.op {
                            Op::Gelu(_) => g * gelu_grad(*xv),
                            Op::Relu(_) => {
                                if *xv > 0.0 {
                                    *g
                                } else {
                                    0.0
                                }
                            }
                            _ => g * (1.0 - yv * yv),
                        })
                        .collect();
                    acc(&mut grads, *a, Tensor { rows: gy.rows, cols: gy.cols, data: d });
                }
                Op::LayerNorm { x, g, b } => {
                    let (tx, tg) = (self.value(*x), self.value(*g));
                    let c = tx.cols;
                    let mut dx = Tensor::zeros(tx.rows, c);
                    let mut dg = Tensor::zeros(1, c);
                    let mut db = Tensor::zeros(1, c);
                    let mut xhat = vec![0.0; c];
                    let mut dxh = vec![0.0; c];
                    for r in 0..tx.rows {
                        xhat.copy_from_slice(tx.row_slice(r));
                        let inv = kernels::normalize_row(&mut xhat);
                        let gr = gy.row_slice(r);
                        for j in 0..c {
                            dg.data[j] += gr[j] * xhat[j];
                            db.data[j] += gr[j];
                            dxh[j] = gr[j] * tg.data[j];
                        }
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let cf = c as f64;
                        for (j, o) in dx.row_slice_mut(r).iter_mut().enumerate() {
                            *o = inv / cf * (cf * dxh[j] - s1 - xhat[j] * s2);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *g, dg);
                    acc(&mut grads, *b, db);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut d = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row_slice(r), gy.row_slice(r));
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, o) in d.row_slice_mut(r).iter_mut().enumerate() {
                            *o = yr[j] * (gr[j] - s);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Embedding { table, ids } => {
                    let t = self.value(*table);
                    let mut d = Tensor::zeros(t.rows, t.cols);
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(k) = id {
                            for (x, y) in d.row_slice_mut(*k).iter_mut().zip(gy.row_slice(r)) {
                                *x += y;
                            }
                        }
                    }
                    acc(&mut grads, *table, d);
                }
                Op::Rows { x, idx } => {
                    let t = self.value(*x);
                    let mut d = Tensor::zeros(t.rows, t.cols);
                    for (r, k) in idx.iter().enumerate() {
                        if let Some(k) = *k {
                            for (a, b) in d.row_slice_mut(k).iter_mut().zip(gy.row_slice(r)) {
                                *a += b;
                            }
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.shape(*x);
                    acc(&mut grads, *x, Tensor { rows: r, cols: c, data: gy.data });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let d = Tensor { rows: r, cols: c, data: gy.data[off..off + r * c].to_vec() };
                        off += r * c;
                        acc(&mut grads, p, d);
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (nq, nk, d) = (tq.rows, tk.rows, tq.cols);
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Tensor::zeros(nq, d);
                    let mut dk = Tensor::zeros(nk, d);
                    let mut dv = Tensor::zeros(nk, d);
                    let mut dp = vec![0.0; nk];
                    for h in 0..*heads {
                        let cs = h * dh..(h + 1) * dh;
                        for i in 0..nq {
                            let p = &probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                            let go = &gy.data[i * d + cs.start..i * d + cs.end];
                            let mut s = 0.0;
                            for j in 0..nk {
                                if p[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let vj = &tv.data[j * d + cs.start..j * d + cs.end];
                                dp[j] = kernels::dot(go, vj);
                                s += dp[j] * p[j];
                                for (x, g) in dv.data[j * d + cs.start..j * d + cs.end].iter_mut().zip(go) {
                                    *x += p[j] * g;
                                }
                            }
                            let qi = &tq.data[i * d + cs.start..i * d + cs.end];
                            for j in 0..nk {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - s) * scale;
                                let kj = &tk.data[j * d + cs.start..j * d + cs.end];
                                for (x, kv) in dq.data[i * d + cs.start..i * d + cs.end].iter_mut().zip(kj) {
                                    *x += ds * kv;
                                }
                                for (x, qv) in dk.data[j * d + cs.start..j * d + cs.end].iter_mut().zip(qi) {
                                    *x += ds * qv;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::CrossEntropy { logits, items, n_classes } => {
                    let t = self.value(*logits);
                    let g = gy.item();
                    let mut d = Tensor::zeros(t.rows, t.cols);
                    let mut probs = vec![0.0; *n_classes];
                    for it in items {
                        probs.copy_from_slice(&t.row_slice(it.row)[..*n_classes]);
                        masked_softmax(&mut probs, |_| true);
                        let row = d.row_slice_mut(it.row);
                        for (c, p) in probs.iter().enumerate() {
                            row[c] += g * it.weight * p;
                        }
                        row[it.target] -= g * it.weight;
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::Mse { a, target } => {
                    let ta = self.value(*a);
                    let n = ta.len().max(1) as f64;
                    let g = gy.item();
                    let data = ta.data.iter().zip(&target.data).map(|(x, y)| 2.0 * g * (x - y) / n).collect();
                    acc(&mut grads, *a, Tensor { rows: ta.rows, cols: ta.cols, data });
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::full(r, c, gy.item()));
                }
            }
        }
        Ok(out)
    }
}
