//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] is built fresh for every minibatch: leaves are inputs or
//! bound parameters, every operation appends a node, and [`Graph::backward`]
//! walks the tape in reverse accumulating gradients. Nodes fed to several
//! consumers receive the sum of their gradients.

use thiserror::Error;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("empty sequence")]
    EmptySequence,
}

fn mismatch(op: &'static str, left: (usize, usize), right: (usize, usize)) -> NnError {
    NnError::ShapeMismatch { op, left, right }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SelectRows(Vec<bool>, Var, Var),
    Gather(Var, Vec<usize>),
    GatherElems(Var, Vec<usize>),
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
    LogSumExpRows(Var),
    LogSumExpTrans(Var, Var),
    LstmPointwise(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bound: Vec<(ParamId, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a parameter as a leaf; binding the same id twice returns the
    /// same node. Frozen parameters are bound as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.bound.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every bound trainable parameter, indexed by parameter id.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out = vec![None; store.len()];
        for &(id, v) in &self.bound {
            if store.get(id).trainable {
                out[id.index()] = self.grad(v).cloned();
            }
        }
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(mismatch("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(m, n, out), Op::MatMul(a, b), ng))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(mismatch("matmul_bt", (m, k), (n, k2)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(m, n, out), Op::MatMulBt(a, b), ng))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(sa.0, sa.1, data), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (r, c) = self.shape(a);
        let sb = self.shape(row);
        if sb != (1, c) {
            return Err(mismatch("add_row", (r, c), sb));
        }
        let bias = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, k: Tensor) -> Result<Var, NnError> {
        let sa = self.shape(a);
        if sa != k.shape() {
            return Err(mismatch("mul_const", sa, k.shape()));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(k.data())
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_vec(sa.0, sa.1, data), Op::MulConst(a, k), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = parts.first().map(|&p| self.shape(p).0).ok_or(NnError::EmptySequence)?;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(mismatch("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_vec(rows, cols, out), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(mismatch("slice_cols", (r, c), (start, len)));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src.row_slice(i)[start..start + len]);
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_vec(r, len, out), Op::SliceCols(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = parts.first().map(|&p| self.shape(p).1).ok_or(NnError::EmptySequence)?;
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(mismatch("concat_rows", (rows, cols), s));
            }
            rows += s.0;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_vec(rows, cols, out), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(mismatch("slice_rows", (r, c), (start, len)));
        }
        let out = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_vec(len, c, out), Op::SliceRows(a, start), ng))
    }

    /// Row `r` of the result is row `r` of `a` where `mask[r]`, else of `b`.
    pub fn select_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || mask.len() != sa.0 {
            return Err(mismatch("select_rows", sa, sb));
        }
        let mut out = Vec::with_capacity(sa.0 * sa.1);
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { a } else { b };
            out.extend_from_slice(self.value(src).row_slice(r));
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_vec(sa.0, sa.1, out),
            Op::SelectRows(mask.to_vec(), a, b),
            ng,
        ))
    }

    /// Embedding lookup: one output row per id.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let (v, d) = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NnError::ClassOutOfRange { class: id, classes: v });
            }
            out.extend_from_slice(self.value(table).row_slice(id));
        }
        let ng = self.needs(table);
        Ok(self.push(Tensor::from_vec(ids.len(), d, out), Op::Gather(table, ids.to_vec()), ng))
    }

    /// Picks elements by flat row-major index into an `n x 1` column.
    pub fn gather_elems(&mut self, a: Var, flat: &[usize]) -> Result<Var, NnError> {
        let n = self.value(a).len();
        let mut out = Vec::with_capacity(flat.len());
        for &i in flat {
            if i >= n {
                return Err(NnError::ClassOutOfRange { class: i, classes: n });
            }
            out.push(self.value(a).data()[i]);
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_vec(flat.len(), 1, out), Op::GatherElems(a, flat.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`. A fully
    /// masked input gives loss 0 and zero gradient.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var, NnError> {
        let (t, c) = self.shape(logits);
        if targets.len() != t || mask.len() != t {
            return Err(mismatch("softmax_cross_entropy", (t, c), (targets.len(), mask.len())));
        }
        let lv = self.value(logits);
        let mut probs = Tensor::zeros(t, c);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..t {
            let row = lv.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for (j, x) in row.iter().enumerate() {
                probs.set(r, j, (x - m).exp() / z);
            }
            if mask[r] {
                let target = targets[r];
                if target >= c {
                    return Err(NnError::ClassOutOfRange { class: target, classes: c });
                }
                total += m + z.ln() - row[target];
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    /// Row-wise log-sum-exp into an `R x 1` column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = (0..av.rows()).map(|r| logsumexp(av.row_slice(r))).collect();
        let ng = self.needs(a);
        let rows = out.len();
        self.push(Tensor::from_vec(rows, 1, out), Op::LogSumExpRows(a), ng)
    }

    /// One step of the CRF forward recurrence:
    /// `out[b, j] = log sum_i exp(alpha[b, i] + trans[i, j])`.
    pub fn logsumexp_trans(&mut self, alpha: Var, trans: Var) -> Result<Var, NnError> {
        let (b, c) = self.shape(alpha);
        let st = self.shape(trans);
        if st != (c, c) {
            return Err(mismatch("logsumexp_trans", (b, c), st));
        }
        let av = self.value(alpha);
        let tv = self.value(trans);
        let mut out = Tensor::zeros(b, c);
        let mut buf = vec![0.0; c];
        for r in 0..b {
            for j in 0..c {
                for (i, x) in buf.iter_mut().enumerate() {
                    *x = av.get(r, i) + tv.get(i, j);
                }
                out.set(r, j, logsumexp(&buf));
            }
        }
        let ng = self.needs(alpha) || self.needs(trans);
        Ok(self.push(out, Op::LogSumExpTrans(alpha, trans), ng))
    }

    /// LSTM state update from gate pre-activations `[B x 4H]` (order i, f,
    /// g, o) and the previous cell `[B x H]`. Returns `[h | c]` as `[B x 2H]`.
    pub fn lstm_pointwise(&mut self, gates: Var, c_prev: Var) -> Result<Var, NnError> {
        let (b, h4) = self.shape(gates);
        let (bc, h) = self.shape(c_prev);
        if bc != b || h4 != 4 * h {
            return Err(mismatch("lstm_pointwise", (b, h4), (bc, h)));
        }
        let gv = self.value(gates);
        let cv = self.value(c_prev);
        let mut out = Tensor::zeros(b, 2 * h);
        for r in 0..b {
            let g = gv.row_slice(r);
            for k in 0..h {
                let i = sigmoid(g[k]);
                let f = sigmoid(g[h + k]);
                let cand = g[2 * h + k].tanh();
                let o = sigmoid(g[3 * h + k]);
                let c = f * cv.get(r, k) + i * cand;
                out.set(r, k, o * c.tanh());
                out.set(r, h + k, c);
            }
        }
        let ng = self.needs(gates) || self.needs(c_prev);
        Ok(self.push(out, Op::LstmPointwise(gates, c_prev), ng))
    }

    /// Reverse pass from a scalar node. Gradients of earlier backward calls
    /// are discarded.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.shape(root), (1, 1), "backward from a non-scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            self.backprop_node(idx, &g);
            self.grads[idx] = Some(g);
        }
    }

    fn acc(&mut self, v: Var) -> Option<&mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let (r, c) = self.nodes[v.0].value.shape();
        Some(self.grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn backprop_node(&mut self, idx: usize, g: &Tensor) {
        // The op is moved out so parent values and grads can be borrowed.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.needs(*a) {
                    let bv = self.nodes[b.0].value.data().to_vec();
                    let da = self.acc(*a).unwrap();
                    gemm_nt(g.data(), &bv, da.data_mut(), m, n, k);
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let db = self.acc(*b).unwrap();
                    gemm_tn(&av, g.data(), db.data_mut(), m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).0;
                if self.needs(*a) {
                    let bv = self.nodes[b.0].value.data().to_vec();
                    let da = self.acc(*a).unwrap();
                    gemm_nn(g.data(), &bv, da.data_mut(), m, n, k);
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let db = self.acc(*b).unwrap();
                    gemm_tn(g.data(), &av, db.data_mut(), m, n, k);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.acc(*a) {
                    da.add_assign(g);
                }
                if let Some(db) = self.acc(*b) {
                    db.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.acc(*a) {
                    da.add_assign(g);
                }
                if let Some(db) = self.acc(*b) {
                    for (d, x) in db.data_mut().iter_mut().zip(g.data()) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                if let Some(da) = self.acc(*a) {
                    for ((d, x), y) in da.data_mut().iter_mut().zip(g.data()).zip(&bv) {
                        *d += x * y;
                    }
                }
                if let Some(db) = self.acc(*b) {
                    for ((d, x), y) in db.data_mut().iter_mut().zip(g.data()).zip(&av) {
                        *d += x * y;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(da) = self.acc(*a) {
                    da.add_assign(g);
                }
                let c = g.cols();
                if let Some(dr) = self.acc(*row) {
                    for chunk in g.data().chunks(c.max(1)) {
                        for (d, x) in dr.data_mut().iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                if let Some(da) = self.acc(*a) {
                    for ((d, x), y) in da.data_mut().iter_mut().zip(g.data()).zip(&y) {
                        *d += x * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                if let Some(da) = self.acc(*a) {
                    for ((d, x), y) in da.data_mut().iter_mut().zip(g.data()).zip(&y) {
                        *d += x * (1.0 - y * y);
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(da) = self.acc(*a) {
                    for (d, x) in da.data_mut().iter_mut().zip(g.data()) {
                        *d += x * k;
                    }
                }
            }
            Op::MulConst(a, k) => {
                if let Some(da) = self.acc(*a) {
                    for ((d, x), y) in da.data_mut().iter_mut().zip(g.data()).zip(k.data()) {
                        *d += x * y;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(dp) = self.acc(p) {
                        for r in 0..g.rows() {
                            let src = &g.row_slice(r)[offset..offset + w];
                            for (d, x) in dp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let w = g.cols();
                let c = self.shape(*a).1;
                if let Some(da) = self.acc(*a) {
                    for r in 0..g.rows() {
                        let dst = &mut da.data_mut()[r * c + start..r * c + start + w];
                        for (d, x) in dst.iter_mut().zip(g.row_slice(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if let Some(dp) = self.acc(p) {
                        for (d, x) in dp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *d += x;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let c = g.cols();
                if let Some(da) = self.acc(*a) {
                    let dst = &mut da.data_mut()[start * c..start * c + g.len()];
                    for (d, x) in dst.iter_mut().zip(g.data()) {
                        *d += x;
                    }
                }
            }
            Op::SelectRows(mask, a, b) => {
                let c = g.cols();
                for (src, want) in [(*a, true), (*b, false)] {
                    if let Some(ds) = self.acc(src) {
                        for (r, &m) in mask.iter().enumerate() {
                            if m == want {
                                let dst = &mut ds.data_mut()[r * c..(r + 1) * c];
                                for (d, x) in dst.iter_mut().zip(g.row_slice(r)) {
                                    *d += x;
                                }
                            }
                        }
                    }
                }
            }
            Op::Gather(table, ids) => {
                let d = g.cols();
                if let Some(dt) = self.acc(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                        for (o, x) in dst.iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::GatherElems(a, flat) => {
                if let Some(da) = self.acc(*a) {
                    for (&i, x) in flat.iter().zip(g.data()) {
                        da.data_mut()[i] += x;
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.item();
                if let Some(da) = self.acc(*a) {
                    for d in da.data_mut() {
                        *d += s;
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                if *count > 0 {
                    let scale = g.item() / *count as f64;
                    let c = probs.cols();
                    if let Some(dl) = self.acc(*logits) {
                        for (r, &m) in mask.iter().enumerate() {
                            if !m {
                                continue;
                            }
                            for j in 0..c {
                                let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                                dl.data_mut()[r * c + j] += scale * (probs.get(r, j) - onehot);
                            }
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let av = self.nodes[a.0].value.clone();
                let out = self.nodes[idx].value.data().to_vec();
                let c = av.cols();
                if let Some(da) = self.acc(*a) {
                    for (r, (&lse, gr)) in out.iter().zip(g.data()).enumerate() {
                        for j in 0..c {
                            da.data_mut()[r * c + j] += gr * (av.get(r, j) - lse).exp();
                        }
                    }
                }
            }
            Op::LogSumExpTrans(alpha, trans) => {
                let av = self.nodes[alpha.0].value.clone();
                let tv = self.nodes[trans.0].value.clone();
                let out = self.nodes[idx].value.clone();
                let (b, c) = av.shape();
                // weights[r][i][j] = g[r, j] * p(i | r, j)
                let mut d_alpha = Tensor::zeros(b, c);
                let mut d_trans = Tensor::zeros(c, c);
                for r in 0..b {
                    for j in 0..c {
                        let gj = g.get(r, j);
                        if gj == 0.0 {
                            continue;
                        }
                        let o = out.get(r, j);
                        for i in 0..c {
                            let w = gj * (av.get(r, i) + tv.get(i, j) - o).exp();
                            d_alpha.data_mut()[r * c + i] += w;
                            d_trans.data_mut()[i * c + j] += w;
                        }
                    }
                }
                if let Some(da) = self.acc(*alpha) {
                    da.add_assign(&d_alpha);
                }
                if let Some(dt) = self.acc(*trans) {
                    dt.add_assign(&d_trans);
                }
            }
            Op::LstmPointwise(gates, c_prev) => {
                let gv = self.nodes[gates.0].value.clone();
                let cv = self.nodes[c_prev.0].value.clone();
                let out = self.nodes[idx].value.clone();
                let (b, h) = cv.shape();
                let mut d_gates = Tensor::zeros(b, 4 * h);
                let mut d_c = Tensor::zeros(b, h);
                for r in 0..b {
                    let pre = gv.row_slice(r);
                    for k in 0..h {
                        let i = sigmoid(pre[k]);
                        let f = sigmoid(pre[h + k]);
                        let cand = pre[2 * h + k].tanh();
                        let o = sigmoid(pre[3 * h + k]);
                        let c = out.get(r, h + k);
                        let tc = c.tanh();
                        let gh = g.get(r, k);
                        let gc = g.get(r, h + k) + gh * o * (1.0 - tc * tc);
                        let dg = d_gates.data_mut();
                        dg[r * 4 * h + k] = gc * cand * i * (1.0 - i);
                        dg[r * 4 * h + h + k] = gc * cv.get(r, k) * f * (1.0 - f);
                        dg[r * 4 * h + 2 * h + k] = gc * i * (1.0 - cand * cand);
                        dg[r * 4 * h + 3 * h + k] = gh * tc * o * (1.0 - o);
                        d_c.set(r, k, gc * f);
                    }
                }
                if let Some(dg) = self.acc(*gates) {
                    dg.add_assign(&d_gates);
                }
                if let Some(dc) = self.acc(*c_prev) {
                    dc.add_assign(&d_c);
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
