//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation executed during a forward pass.
//! Parameters are borrowed from a shared [`ParamSet`] rather than copied, so
//! any number of tapes can run concurrently over the same read-only
//! parameters. [`Tape::backward`] walks the record in exact reverse order and
//! returns the gradients; applying them to the parameter set is a separate,
//! exclusive step ([`ParamSet::accumulate`]).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{NumericsError, ParamGrads, ParamId, ParamSet, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op<T> {
    Param(ParamId),
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRowBroadcast(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Concat(Vec<usize>, Axis),
    Slice { input: usize, axis: Axis, start: usize },
    Transpose(usize),
    Reshape(usize),
    Tanh(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    L2NormDiff(usize, usize),
    Sum(usize),
    Mean(usize),
    MaxScalar(usize, T),
    Gather(usize, Vec<usize>),
    CrossEntropy(usize, usize),
    LstmCell(usize, usize),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

/// Record of executed differentiable operations.
pub struct Tape<'p, T: Real> {
    id: u64,
    params: Option<&'p ParamSet<T>>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, usize>,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    tape: u64,
    nodes: Vec<Option<Vec<T>>>,
    params: ParamGrads<T>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf recorded with [`Tape::leaf`] or
    /// [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.nodes.get(v.idx).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}

fn mismatch(op: &'static str, got: &[usize], expected: impl Into<String>) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        got: got.to_vec(),
        expected: expected.into(),
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
fn matmul_nt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
fn matmul_tn_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape whose `param` lookups resolve against `params`.
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params: Some(params),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// A tape without parameters; only leaves and constants can enter it.
    pub fn standalone() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, NumericsError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(NumericsError::DetachedTensor);
        }
        Ok(v.idx)
    }

    fn val(&self, idx: usize) -> &Tensor<T> {
        let node = &self.nodes[idx];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(pid)) => &self.params.expect("param node without params").value(*pid),
            (None, _) => unreachable!("non-param node without value"),
        }
    }

    /// Value of a recorded tensor.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        let idx = self.idx(v).expect("var from another tape");
        self.val(idx)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool, name: &'static str) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFiniteValue { op: name });
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(Var { tape: self.id, idx })
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Registers a parameter on the tape. Repeated calls return the same
    /// handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&idx) = self.param_nodes.get(&id) {
            return Var { tape: self.id, idx };
        }
        let params = self.params.expect("standalone tape has no parameters");
        assert!(id.0 < params.len(), "unknown parameter id");
        let idx = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        self.param_nodes.insert(id, idx);
        Var { tape: self.id, idx }
    }

    /// Input tensor whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var, NumericsError> {
        self.push(Op::Leaf, value, true, "leaf")
    }

    /// Input tensor excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, NumericsError> {
        self.push(Op::Constant, value, false, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(mismatch(
                "matmul",
                tb.shape(),
                format!("[{}, _] to match lhs {:?}", ta.shape().get(1).copied().unwrap_or(0), ta.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![T::zero(); m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::MatMul(ia, ib), Tensor::new(vec![m, n], out)?, rg, "matmul")
    }

    /// Element-wise sum. `b` may also be a `[1 × n]` row, which is added to
    /// every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let rg = self.rg(ia) || self.rg(ib);
        if ta.shape() == tb.shape() {
            let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
            let shape = ta.shape().to_vec();
            return self.push(Op::Add(ia, ib), Tensor::new(shape, out)?, rg, "add");
        }
        if ta.is_matrix() && tb.is_matrix() && tb.rows() == 1 && tb.cols() == ta.cols() {
            let n = ta.cols();
            let bias = tb.data();
            let out: Vec<T> = ta.data().iter().enumerate().map(|(i, &x)| x + bias[i % n]).collect();
            let shape = ta.shape().to_vec();
            return self.push(Op::AddRowBroadcast(ia, ib), Tensor::new(shape, out)?, rg, "add");
        }
        Err(mismatch("add", tb.shape(), format!("{:?} or [1, {}]", ta.shape(), ta.shape().last().unwrap_or(&0))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(mismatch("sub", tb.shape(), format!("{:?}", ta.shape())));
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x - y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::Sub(ia, ib), Tensor::new(shape, out)?, rg, "sub")
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", tb.shape(), format!("{:?}", ta.shape())));
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::Mul(ia, ib), Tensor::new(shape, out)?, rg, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        let out: Vec<T> = ta.data().iter().map(|&x| x * factor).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(ia);
        self.push(Op::Scale(ia, factor), Tensor::new(shape, out)?, rg, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        let out: Vec<T> = ta.data().iter().map(|&x| x + c).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(ia);
        self.push(Op::AddScalar(ia), Tensor::new(shape, out)?, rg, "add_scalar")
    }

    /// Concatenates matrices along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(mismatch("concat", &[], "at least one input"));
        }
        let idxs: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_, _>>()?;
        let first = self.val(idxs[0]);
        if !first.is_matrix() {
            return Err(mismatch("concat", first.shape(), "a matrix"));
        }
        let (rows0, cols0) = (first.rows(), first.cols());
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &i in &idxs {
                    let t = self.val(i);
                    if !t.is_matrix() || t.cols() != cols0 {
                        return Err(mismatch("concat", t.shape(), format!("[_, {cols0}]")));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, cols0], data)?
            }
            Axis::Cols => {
                let mut total = 0;
                for &i in &idxs {
                    let t = self.val(i);
                    if !t.is_matrix() || t.rows() != rows0 {
                        return Err(mismatch("concat", t.shape(), format!("[{rows0}, _]")));
                    }
                    total += t.cols();
                }
                let mut data = Vec::with_capacity(rows0 * total);
                for r in 0..rows0 {
                    for &i in &idxs {
                        data.extend_from_slice(self.val(i).row_slice(r));
                    }
                }
                Tensor::new(vec![rows0, total], data)?
            }
        };
        let rg = idxs.iter().any(|&i| self.rg(i));
        self.push(Op::Concat(idxs, axis), out, rg, "concat")
    }

    /// `len` rows or columns starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        if !ta.is_matrix() {
            return Err(mismatch("slice", ta.shape(), "a matrix"));
        }
        let (rows, cols) = (ta.rows(), ta.cols());
        let out = match axis {
            Axis::Rows => {
                if len == 0 || start + len > rows {
                    return Err(mismatch("slice", ta.shape(), format!("at least {} rows", start + len.max(1))));
                }
                Tensor::new(vec![len, cols], ta.data()[start * cols..(start + len) * cols].to_vec())?
            }
            Axis::Cols => {
                if len == 0 || start + len > cols {
                    return Err(mismatch("slice", ta.shape(), format!("at least {} cols", start + len.max(1))));
                }
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
                }
                Tensor::new(vec![rows, len], data)?
            }
        };
        let rg = self.rg(ia);
        self.push(Op::Slice { input: ia, axis, start }, out, rg, "slice")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        if !ta.is_matrix() {
            return Err(mismatch("transpose", ta.shape(), "a matrix"));
        }
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut data = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = ta.data()[r * cols + c];
            }
        }
        let rg = self.rg(ia);
        self.push(Op::Transpose(ia), Tensor::new(vec![cols, rows], data)?, rg, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(mismatch("reshape", ta.shape(), format!("{} elements", shape.iter().product::<usize>())));
        }
        let out = Tensor::new(shape, ta.data().to_vec())?;
        let rg = self.rg(ia);
        self.push(Op::Reshape(ia), out, rg, "reshape")
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        let out: Vec<T> = ta.data().iter().map(|&x| f(x)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(ia);
        self.push(op(ia), Tensor::new(shape, out)?, rg, name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, "tanh", |x| x.tanh(), Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid)
    }

    /// `max(x, c)` element-wise.
    pub fn max_with_scalar(&mut self, a: Var, c: T) -> Result<Var, NumericsError> {
        self.unary(a, "max_with_scalar", |x| x.max(c), |i| Op::MaxScalar(i, c))
    }

    /// Softmax over the last axis of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        if !ta.is_matrix() || ta.cols() == 0 {
            return Err(mismatch("softmax_rows", ta.shape(), "a non-empty matrix"));
        }
        let cols = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let shape = ta.shape().to_vec();
        let rg = self.rg(ia);
        self.push(Op::SoftmaxRows(ia), Tensor::new(shape, out)?, rg, "softmax_rows")
    }

    /// Euclidean distance `‖a − b‖₂` as a scalar.
    pub fn l2_norm_diff(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(mismatch("l2_norm_diff", tb.shape(), format!("{:?}", ta.shape())));
        }
        let sq: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::L2NormDiff(ia, ib), Tensor::scalar(sq.sqrt()), rg, "l2_norm_diff")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let total: T = self.val(ia).data().iter().copied().sum();
        let rg = self.rg(ia);
        self.push(Op::Sum(ia), Tensor::scalar(total), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let ta = self.val(ia);
        if ta.numel() == 0 {
            return Err(mismatch("mean", ta.shape(), "a non-empty tensor"));
        }
        let total: T = ta.data().iter().copied().sum();
        let mean = total / T::lit(ta.numel() as f64);
        let rg = self.rg(ia);
        self.push(Op::Mean(ia), Tensor::scalar(mean), rg, "mean")
    }

    /// Row lookup into a `[vocab × dim]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let it = self.idx(table)?;
        let tt = self.val(it);
        if !tt.is_matrix() {
            return Err(mismatch("gather_rows", tt.shape(), "a matrix"));
        }
        let (rows, cols) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    len: rows,
                });
            }
            data.extend_from_slice(tt.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        let rg = self.rg(it);
        self.push(Op::Gather(it, ids.to_vec()), out, rg, "gather_rows")
    }

    /// Negative log-likelihood of `target` under `softmax(logits)` for a
    /// `[1 × classes]` row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NumericsError> {
        let il = self.idx(logits)?;
        let tl = self.val(il);
        if !tl.is_matrix() || tl.rows() != 1 {
            return Err(mismatch("cross_entropy", tl.shape(), "[1, classes]"));
        }
        if target >= tl.cols() {
            return Err(NumericsError::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                len: tl.cols(),
            });
        }
        let row = tl.data();
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        let rg = self.rg(il);
        self.push(Op::CrossEntropy(il, target), Tensor::scalar(lse - row[target]), rg, "cross_entropy")
    }

    /// One LSTM cell update. `pre` is `[m × 4u]` gate pre-activations in
    /// `i, f, g, o` order and `c_prev` is `[m × u]`; the output is
    /// `[m × 2u]`, the new hidden state followed by the new cell state.
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Result<Var, NumericsError> {
        let (ip, ic) = (self.idx(pre)?, self.idx(c_prev)?);
        let (tp, tc) = (self.val(ip), self.val(ic));
        if !tc.is_matrix() || !tp.is_matrix() || tp.rows() != tc.rows() || tp.cols() != 4 * tc.cols() {
            return Err(mismatch("lstm_cell", tp.shape(), format!("[{}, {}]", tc.rows(), 4 * tc.cols())));
        }
        let (m, u) = (tc.rows(), tc.cols());
        let mut out = vec![T::zero(); m * 2 * u];
        for r in 0..m {
            let a = tp.row_slice(r);
            let cp = tc.row_slice(r);
            let (h_out, c_out) = out[r * 2 * u..(r + 1) * 2 * u].split_at_mut(u);
            for j in 0..u {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[u + j]);
                let g = a[2 * u + j].tanh();
                let o = sigmoid(a[3 * u + j]);
                let c = f * cp[j] + i * g;
                c_out[j] = c;
                h_out[j] = o * c.tanh();
            }
        }
        let rg = self.rg(ip) || self.rg(ic);
        self.push(Op::LstmCell(ip, ic), Tensor::new(vec![m, 2 * u], out)?, rg, "lstm_cell")
    }

    /// Back-propagates from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        let il = self.idx(loss)?;
        let t = self.val(il);
        if t.numel() != 1 {
            return Err(NumericsError::NotScalarLoss(t.shape().to_vec()));
        }
        self.backward_with(loss, &[T::one()])
    }

    /// Back-propagates an upstream gradient `seed` (same shape as `out`).
    pub fn backward_with(&self, out: Var, seed: &[T]) -> Result<Gradients<T>, NumericsError> {
        let io = self.idx(out)?;
        let numel = self.val(io).numel();
        if seed.len() != numel {
            return Err(mismatch("backward", &[seed.len()], format!("{numel} seed values")));
        }
        let num_params = self.params.map_or(0, |p| p.len());
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        let mut param_grads = ParamGrads::new(num_params);
        if self.nodes[io].requires_grad {
            grads[io] = Some(seed.to_vec());
        }

        for i in (0..=io).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Param(pid) => {
                    let slot = param_grads.slot_mut(*pid, g.len());
                    slot.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
                    grads[i] = Some(g);
                }
                Op::Leaf => grads[i] = Some(g),
                Op::Constant => {}
                op => self.backprop_op(op, i, &g, &mut grads),
            }
        }

        Ok(Gradients {
            tape: self.id,
            nodes: grads,
            params: param_grads,
        })
    }

    fn backprop_op(&self, op: &Op<T>, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.val(node);
        match *op {
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.slot(grads, a) {
                    matmul_nt_acc(g, tb.data(), ga, m, k, n);
                }
                if let Some(gb) = self.slot(grads, b) {
                    matmul_tn_acc(ta.data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for input in [a, b] {
                    if let Some(buf) = self.slot(grads, input) {
                        buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::AddRowBroadcast(a, b) => {
                if let Some(buf) = self.slot(grads, a) {
                    buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                let n = self.val(b).numel();
                if let Some(buf) = self.slot(grads, b) {
                    for row in g.chunks(n) {
                        buf.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(buf) = self.slot(grads, a) {
                    buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(buf) = self.slot(grads, b) {
                    buf.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                if let Some(buf) = self.slot(grads, a) {
                    for ((x, &gv), &bv) in buf.iter_mut().zip(g).zip(tb.data()) {
                        *x += gv * bv;
                    }
                }
                if let Some(buf) = self.slot(grads, b) {
                    for ((x, &gv), &av) in buf.iter_mut().zip(g).zip(ta.data()) {
                        *x += gv * av;
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(buf) = self.slot(grads, a) {
                    buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y * factor);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(buf) = self.slot(grads, a) {
                    buf.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Concat(ref inputs, axis) => {
                let out_cols = out.cols();
                let mut offset = 0;
                for &input in inputs {
                    let t = self.val(input);
                    let (rows, cols) = (t.rows(), t.cols());
                    if let Some(buf) = self.slot(grads, input) {
                        match axis {
                            Axis::Rows => {
                                let part = &g[offset * out_cols..(offset + rows) * out_cols];
                                buf.iter_mut().zip(part).for_each(|(x, &y)| *x += y);
                            }
                            Axis::Cols => {
                                for r in 0..rows {
                                    let src = &g[r * out_cols + offset..r * out_cols + offset + cols];
                                    let dst = &mut buf[r * cols..(r + 1) * cols];
                                    dst.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                                }
                            }
                        }
                    }
                    offset += match axis {
                        Axis::Rows => rows,
                        Axis::Cols => cols,
                    };
                }
            }
            Op::Slice { input, axis, start } => {
                let cols_in = self.val(input).cols();
                let (rows, len) = (out.rows(), out.cols());
                if let Some(buf) = self.slot(grads, input) {
                    match axis {
                        Axis::Rows => {
                            let dst = &mut buf[start * cols_in..(start + rows) * cols_in];
                            dst.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                        }
                        Axis::Cols => {
                            for r in 0..rows {
                                let dst = &mut buf[r * cols_in + start..r * cols_in + start + len];
                                dst.iter_mut().zip(&g[r * len..(r + 1) * len]).for_each(|(x, &y)| *x += y);
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (rows, cols) = (out.rows(), out.cols());
                if let Some(buf) = self.slot(grads, a) {
                    // out is [rows × cols], input is [cols × rows]
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c * rows + r] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(buf) = self.slot(grads, a) {
                    for ((x, &gv), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                        *x += gv * (T::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(buf) = self.slot(grads, a) {
                    for ((x, &gv), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                        *x += gv * y * (T::one() - y);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                if let Some(buf) = self.slot(grads, a) {
                    for ((brow, grow), yrow) in buf.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&gv, &y)| gv * y).sum();
                        for ((x, &gv), &y) in brow.iter_mut().zip(grow).zip(yrow) {
                            *x += y * (gv - dot);
                        }
                    }
                }
            }
            Op::L2NormDiff(a, b) => {
                let d = out.item();
                if d == T::zero() {
                    // subgradient 0 at coincident points
                    self.slot(grads, a);
                    self.slot(grads, b);
                    return;
                }
                let scale = g[0] / d;
                let (ta, tb) = (self.val(a), self.val(b));
                if let Some(buf) = self.slot(grads, a) {
                    for ((x, &av), &bv) in buf.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *x += scale * (av - bv);
                    }
                }
                if let Some(buf) = self.slot(grads, b) {
                    for ((x, &av), &bv) in buf.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *x -= scale * (av - bv);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(buf) = self.slot(grads, a) {
                    buf.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = T::lit(self.val(a).numel() as f64);
                if let Some(buf) = self.slot(grads, a) {
                    buf.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::MaxScalar(a, c) => {
                let ta = self.val(a);
                if let Some(buf) = self.slot(grads, a) {
                    for ((x, &gv), &xv) in buf.iter_mut().zip(g).zip(ta.data()) {
                        if xv > c {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Gather(table, ref ids) => {
                let cols = out.cols();
                if let Some(buf) = self.slot(grads, table) {
                    for (row, &id) in ids.iter().enumerate() {
                        let dst = &mut buf[id * cols..(id + 1) * cols];
                        dst.iter_mut().zip(&g[row * cols..(row + 1) * cols]).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::CrossEntropy(logits, target) => {
                let tl = self.val(logits);
                let mut probs = tl.data().to_vec();
                softmax_in_place(&mut probs);
                if let Some(buf) = self.slot(grads, logits) {
                    for (j, (x, &p)) in buf.iter_mut().zip(&probs).enumerate() {
                        let onehot = if j == target { T::one() } else { T::zero() };
                        *x += g[0] * (p - onehot);
                    }
                }
            }
            Op::LstmCell(pre, c_prev) => {
                let (tp, tc) = (self.val(pre), self.val(c_prev));
                let (m, u) = (tc.rows(), tc.cols());
                let mut d_pre = vec![T::zero(); m * 4 * u];
                let mut d_c = vec![T::zero(); m * u];
                for r in 0..m {
                    let a = tp.row_slice(r);
                    let cp = tc.row_slice(r);
                    let c_new = &out.row_slice(r)[u..];
                    let (gh, gc) = g[r * 2 * u..(r + 1) * 2 * u].split_at(u);
                    let dp = &mut d_pre[r * 4 * u..(r + 1) * 4 * u];
                    for j in 0..u {
                        let i = sigmoid(a[j]);
                        let f = sigmoid(a[u + j]);
                        let gg = a[2 * u + j].tanh();
                        let o = sigmoid(a[3 * u + j]);
                        let tc_new = c_new[j].tanh();
                        let dc = gc[j] + gh[j] * o * (T::one() - tc_new * tc_new);
                        dp[j] = dc * gg * i * (T::one() - i);
                        dp[u + j] = dc * cp[j] * f * (T::one() - f);
                        dp[2 * u + j] = dc * i * (T::one() - gg * gg);
                        dp[3 * u + j] = gh[j] * tc_new * o * (T::one() - o);
                        d_c[r * u + j] = dc * f;
                    }
                }
                if let Some(buf) = self.slot(grads, pre) {
                    buf.iter_mut().zip(&d_pre).for_each(|(x, &y)| *x += y);
                }
                if let Some(buf) = self.slot(grads, c_prev) {
                    buf.iter_mut().zip(&d_c).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Param(_) | Op::Leaf | Op::Constant => unreachable!(),
        }
    }

    /// Gradient buffer of `input`, allocated on first use; `None` when the
    /// input does not require a gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], input: usize) -> Option<&'g mut [T]> {
        if !self.nodes[input].requires_grad {
            return None;
        }
        let numel = self.val(input).numel();
        Some(grads[input].get_or_insert_with(|| vec![T::zero(); numel]).as_mut_slice())
    }
}
