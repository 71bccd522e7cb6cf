//! Dense row-major matrices and a reverse-mode tape over them.
//!
//! The primitive set is deliberately small: it covers exactly what the
//! message-passing encoder, the classifier head and the loss need. There is
//! no general broadcasting; the only broadcast is [`Tape::add_bias`] (a `1×c`
//! row added to every row).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major matrix with optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {}x{}", data.len(), rows, cols),
            ));
        }
        Ok(Self {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Vec<T>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Relu(Var),
    LeakyRelu(Var, T),
    Prelu(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    MeanRows(Var),
    Sum(Var),
    IndexSelect(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    WeightedCe {
        probs: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        mask: Vec<bool>,
        total_weight: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Probability floor applied before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Records primitive applications in topological order.
///
/// A tape is single-use: build the forward pass, call [`Tape::backward`]
/// once, read gradients with [`Tape::grad`].
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn check(ok: bool, op: &'static str, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::shape(op, detail()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, mut t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad;
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check(ta.cols == tb.rows, "matmul", || {
            format!("{:?} x {:?}", ta.shape(), tb.shape())
        })?;
        let out = matmul_into(ta, tb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check(ta.shape() == tb.shape(), "add", || {
            format!("{:?} + {:?}", ta.shape(), tb.shape())
        })?;
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.rows, ta.cols, data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `1×c` row vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        check(tb.rows == 1 && tb.cols == ta.cols, "add_bias", || {
            format!("{:?} + {:?}", ta.shape(), tb.shape())
        })?;
        let mut data = ta.data.clone();
        for row in data.chunks_mut(ta.cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(&tb.data) {
                *x += b;
            }
        }
        let out = Tensor::new(ta.rows, ta.cols, data)?;
        Ok(self.push(out, Op::AddBias(a, bias), &[a, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check(ta.shape() == tb.shape(), "mul", || {
            format!("{:?} * {:?}", ta.shape(), tb.shape())
        })?;
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.rows, ta.cols, data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| x * c).collect();
        let out = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<T>) -> Result<Var> {
        let ta = self.value(a);
        check(factors.len() == ta.rows, "scale_rows", || {
            format!("{} factors for {} rows", factors.len(), ta.rows)
        })?;
        let mut data = ta.data.clone();
        for (row, &f) in data.chunks_mut(ta.cols.max(1)).zip(&factors) {
            for x in row {
                *x *= f;
            }
        }
        let out = Tensor::new(ta.rows, ta.cols, data)?;
        Ok(self.push(out, Op::ScaleRows(a, factors), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        check(!parts.is_empty(), "concat_cols", || "no inputs".into())?;
        let rows = self.value(parts[0]).rows;
        for p in parts {
            let r = self.value(*p).rows;
            check(r == rows, "concat_cols", || format!("row counts {rows} and {r}"))?;
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        check(start <= end && end <= ta.cols, "slice_cols", || {
            format!("{start}..{end} of {} columns", ta.cols)
        })?;
        let width = end - start;
        let mut data = Vec::with_capacity(ta.rows * width);
        for r in 0..ta.rows {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let out = Tensor::new(ta.rows, width, data)?;
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| f(x)).collect();
        let out = Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(out, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Var {
        self.unary(a, Op::LeakyRelu(a, alpha), |x| {
            if x > T::zero() {
                x
            } else {
                alpha * x
            }
        })
    }

    /// Parametric ReLU with a single learned slope (`alpha` is `1×1`).
    pub fn prelu(&mut self, a: Var, alpha: Var) -> Result<Var> {
        let ta = self.value(alpha);
        check(ta.shape() == (1, 1), "prelu", || {
            format!("slope shape {:?}", ta.shape())
        })?;
        let slope = ta.data[0];
        let tx = self.value(a);
        let data = tx
            .data
            .iter()
            .map(|&x| if x > T::zero() { x } else { slope * x })
            .collect();
        let out = Tensor::new(tx.rows, tx.cols, data)?;
        Ok(self.push(out, Op::Prelu(a, alpha), &[a, alpha]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let (n, c) = self.shape(x);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(v);
            check(s == (1, c), "batch_norm", || {
                format!("{name} shape {s:?} for {c} features")
            })?;
        }
        Ok((n, c))
    }

    /// Batch normalization with batch statistics. Returns the output together
    /// with the per-column batch mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (n, c) = self.check_bn(x, gamma, beta)?;
        check(n > 0, "batch_norm", || "empty batch".into())?;
        let tx = self.value(x);
        let nt = T::lit(n as f64);
        let mut mean = vec![T::zero(); c];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(tx.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= nt;
        }
        let mut var = vec![T::zero(); c];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(tx.row(r)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        for s in &mut var {
            *s /= nt;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalize(x, gamma, beta, &mean, &inv_std);
        let node = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        );
        Ok((node, mean, var))
    }

    /// Batch normalization with frozen statistics: an affine map per column.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c) = self.check_bn(x, gamma, beta)?;
        check(mean.len() == c && var.len() == c, "batch_norm", || {
            format!("running stats of length {} for {c} features", mean.len())
        })?;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (out, xhat) = self.normalize(x, gamma, beta, mean, &inv_std);
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
    ) -> (Tensor<T>, Vec<T>) {
        let tx = self.value(x);
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let c = tx.cols;
        let mut xhat = Vec::with_capacity(tx.data.len());
        let mut out = Vec::with_capacity(tx.data.len());
        for r in 0..tx.rows {
            for j in 0..c {
                let h = (tx.data[r * c + j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        (
            Tensor {
                rows: tx.rows,
                cols: c,
                data: out,
                requires_grad: false,
                grad: None,
            },
            xhat,
        )
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols;
        let mut data = ta.data.clone();
        for row in data.chunks_mut(c.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let out = Tensor {
            rows: ta.rows,
            cols: c,
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Column means, `1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        check(ta.rows > 0, "mean_rows", || "no rows".into())?;
        let mut data = vec![T::zero(); ta.cols];
        for r in 0..ta.rows {
            for (m, &v) in data.iter_mut().zip(ta.row(r)) {
                *m += v;
            }
        }
        let n = T::lit(ta.rows as f64);
        for m in &mut data {
            *m /= n;
        }
        let out = Tensor::new(1, ta.cols, data)?;
        Ok(self.push(out, Op::MeanRows(a), &[a]))
    }

    /// Sum of all entries, `1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Gathers rows: `out[r] = a[idx[r]]`.
    pub fn index_select_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.rows) {
            return Err(Error::shape(
                "index_select_rows",
                format!("index {bad} out of {} rows", ta.rows),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * ta.cols);
        for &i in &idx {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::new(idx.len(), ta.cols, data)?;
        Ok(self.push(out, Op::IndexSelect(a, idx), &[a]))
    }

    /// Scatters rows into `n_out` buckets: `out[idx[r]] += a[r]`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Vec<usize>, n_out: usize) -> Result<Var> {
        let ta = self.value(a);
        check(idx.len() == ta.rows, "scatter_add_rows", || {
            format!("{} indices for {} rows", idx.len(), ta.rows)
        })?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("index {bad} out of {n_out} outputs"),
            ));
        }
        let c = ta.cols;
        let mut data = vec![T::zero(); n_out * c];
        for (r, &i) in idx.iter().enumerate() {
            for (o, &v) in data[i * c..(i + 1) * c].iter_mut().zip(ta.row(r)) {
                *o += v;
            }
        }
        let out = Tensor::new(n_out, c, data)?;
        Ok(self.push(out, Op::ScatterAdd(a, idx), &[a]))
    }

    /// Class-weighted negative log likelihood over the masked rows of a
    /// probability matrix:
    /// `Σ_i w[y_i]·(−log p_i[y_i]) / Σ_i w[y_i]`.
    ///
    /// Probabilities are floored at [`PROB_FLOOR`] before the log. An empty
    /// mask yields a constant zero loss.
    pub fn weighted_cross_entropy(
        &mut self,
        probs: Var,
        targets: &[usize],
        weights: &[T],
        mask: &[bool],
    ) -> Result<Var> {
        let tp = self.value(probs);
        let (n, c) = tp.shape();
        check(targets.len() == n && mask.len() == n, "weighted_cross_entropy", || {
            format!("{} targets / {} mask entries for {n} rows", targets.len(), mask.len())
        })?;
        check(weights.len() == c, "weighted_cross_entropy", || {
            format!("{} weights for {c} classes", weights.len())
        })?;
        if let Some(&bad) = targets.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t).find(|&&t| t >= c) {
            return Err(Error::shape(
                "weighted_cross_entropy",
                format!("target {bad} out of {c} classes"),
            ));
        }
        let floor = T::lit(PROB_FLOOR);
        let mut total_weight = T::zero();
        let mut acc = T::zero();
        for i in (0..n).filter(|&i| mask[i]) {
            let w = weights[targets[i]];
            let p = tp.get(i, targets[i]).max(floor);
            acc += w * -p.ln();
            total_weight += w;
        }
        let loss = if total_weight > T::zero() {
            acc / total_weight
        } else {
            T::zero()
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedCe {
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                mask: mask.to_vec(),
                total_weight,
            },
            &[probs],
        ))
    }

    /// One LSTM cell step with gate order `[input, forget, cell, output]`.
    ///
    /// `x` is `n×d`, `h` and `c` are `n×m`, `w_ih` is `d×4m`, `w_hh` is
    /// `m×4m`, `bias` is `1×4m`. Returns `(h', c')`.
    pub fn lstm_cell_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<(Var, Var)> {
        let m = self.shape(h).1;
        check(self.shape(w_hh) == (m, 4 * m), "lstm_cell_step", || {
            format!("w_hh shape {:?} for hidden {m}", self.shape(w_hh))
        })?;
        check(self.shape(c) == self.shape(h), "lstm_cell_step", || {
            format!("cell {:?} vs hidden {:?}", self.shape(c), self.shape(h))
        })?;
        let xi = self.matmul(x, w_ih)?;
        let hh = self.matmul(h, w_hh)?;
        let pre = self.add(xi, hh)?;
        let gates = self.add_bias(pre, bias)?;
        let i = self.slice_cols(gates, 0, m)?;
        let f = self.slice_cols(gates, m, 2 * m)?;
        let g = self.slice_cols(gates, 2 * m, 3 * m)?;
        let o = self.slice_cols(gates, 3 * m, 4 * m)?;
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let g = self.tanh(g);
        let o = self.sigmoid(o);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_next = self.add(fc, ig)?;
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Reverse pass from a `1×1` output. Gradients land on every node that
    /// depends on a trainable leaf and are read back with [`Tape::grad`].
    pub fn backward(&mut self, output: Var) -> Result<()> {
        check(self.shape(output) == (1, 1), "backward", || {
            format!("output shape {:?}", self.shape(output))
        })?;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = if node.needs_grad { g } else { None };
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows, ta.cols, tb.cols);
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); n * k];
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let bk = tb.row(kk);
                            let mut s = T::zero();
                            for j in 0..m {
                                s += gi[j] * bk[j];
                            }
                            da[i * k + kk] = s;
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * m];
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let av = ta.data[i * k + kk];
                            if av == T::zero() {
                                continue;
                            }
                            for (d, &gv) in db[kk * m..(kk + 1) * m].iter_mut().zip(gi) {
                                *d += av * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(grads, *v, g.to_vec());
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*bias) {
                    let c = out.cols;
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks(c.max(1)) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.iter().zip(&tb.data).map(|(&gv, &y)| gv * y).collect();
                    accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = g.iter().zip(&ta.data).map(|(&gv, &x)| gv * x).collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, g.iter().map(|&v| v * *c).collect());
            }
            Op::ScaleRows(a, factors) => {
                let c = out.cols.max(1);
                let mut d = g.to_vec();
                for (row, &f) in d.chunks_mut(c).zip(factors) {
                    for x in row {
                        *x *= f;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).cols;
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(out.rows * width);
                        for r in 0..out.rows {
                            let start = r * out.cols + offset;
                            d.extend_from_slice(&g[start..start + width]);
                        }
                        accumulate(grads, *p, d);
                    }
                    offset += width;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let mut d = vec![T::zero(); ta.data.len()];
                let w = out.cols;
                for r in 0..out.rows {
                    let dst = r * ta.cols + start;
                    d[dst..dst + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(&out.data)
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, alpha) => {
                let d = g
                    .iter()
                    .zip(&self.value(*a).data)
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { gv * *alpha })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Prelu(a, alpha) => {
                let slope = self.value(*alpha).data[0];
                let tx = self.value(*a);
                if self.wants(*a) {
                    let d = g
                        .iter()
                        .zip(&tx.data)
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { gv * slope })
                        .collect();
                    accumulate(grads, *a, d);
                }
                if self.wants(*alpha) {
                    let mut s = T::zero();
                    for (&gv, &x) in g.iter().zip(&tx.data) {
                        if x <= T::zero() {
                            s += gv * x;
                        }
                    }
                    accumulate(grads, *alpha, vec![s]);
                }
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(&out.data)
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(&out.data)
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c) = out.shape();
                let (dgamma, dbeta) = bn_param_grads(g, xhat, c);
                if self.wants(*x) {
                    let gam = &self.value(*gamma).data;
                    let nt = T::lit(n as f64);
                    let mut dx = vec![T::zero(); n * c];
                    for r in 0..n {
                        for j in 0..c {
                            let i = r * c + j;
                            dx[i] = gam[j] * inv_std[j] / nt
                                * (nt * g[i] - dbeta[j] - xhat[i] * dgamma[j]);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.cols;
                if self.wants(*x) {
                    let gam = &self.value(*gamma).data;
                    let dx = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * gam[i % c] * inv_std[i % c])
                        .collect();
                    accumulate(grads, *x, dx);
                }
                let (dgamma, dbeta) = bn_param_grads(g, xhat, c);
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::Softmax(a) => {
                let c = out.cols.max(1);
                let mut d = vec![T::zero(); g.len()];
                for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.data.chunks(c)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&gv, &y)| gv * y).sum();
                    for ((dv, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv = y * (gv - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let n = T::lit(ta.rows as f64);
                let mut d = Vec::with_capacity(ta.data.len());
                for _ in 0..ta.rows {
                    d.extend(g.iter().map(|&v| v / n));
                }
                accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let len = self.value(*a).data.len();
                accumulate(grads, *a, vec![g[0]; len]);
            }
            Op::IndexSelect(a, idx) => {
                let ta = self.value(*a);
                let c = ta.cols;
                let mut d = vec![T::zero(); ta.data.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (dv, &gv) in d[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                        *dv += gv;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::ScatterAdd(a, idx) => {
                let c = out.cols;
                let mut d = Vec::with_capacity(idx.len() * c);
                for &i in idx {
                    d.extend_from_slice(&g[i * c..(i + 1) * c]);
                }
                accumulate(grads, *a, d);
            }
            Op::WeightedCe {
                probs,
                targets,
                weights,
                mask,
                total_weight,
            } => {
                let tp = self.value(*probs);
                let c = tp.cols;
                let mut d = vec![T::zero(); tp.data.len()];
                if *total_weight > T::zero() {
                    let floor = T::lit(PROB_FLOOR);
                    for i in (0..tp.rows).filter(|&i| mask[i]) {
                        let t = targets[i];
                        let p = tp.get(i, t);
                        if p > floor {
                            d[i * c + t] = -g[0] * weights[t] / (*total_weight * p);
                        }
                    }
                }
                accumulate(grads, *probs, d);
            }
        }
    }
}

fn bn_param_grads<T: Scalar>(g: &[T], xhat: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
        dgamma[i % c] += gv * h;
        dbeta[i % c] += gv;
    }
    (dgamma, dbeta)
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// `A·B` with an i-k-j loop; zero entries of `A` are skipped, which pays off
/// on the sparse one-hot and zero-filled feature blocks.
fn matmul_into<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let av = a.data[i * k + kk];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b.data[kk * m..(kk + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        rows: n,
        cols: m,
        data: out,
        requires_grad: false,
        grad: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x);
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[-1.0, 2.0]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let err = tape.scatter_add_rows(a, vec![0, 5], 3).unwrap_err();
        assert!(err.to_string().contains("scatter_add_rows"), "{err}");
        assert!(Tensor::<f32>::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn weighted_ce_two_class_toy() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(1, 2, &[0.5, 0.5]));
        let loss = tape.weighted_cross_entropy(p, &[0], &[2.0, 1.0], &[true]).unwrap();
        assert!((tape.value(loss).get(0, 0) - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn weighted_ce_uniform_weights_is_mean_ce() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(3, 2, &[0.9, 0.1, 0.2, 0.8, 0.6, 0.4]));
        let loss = tape
            .weighted_cross_entropy(p, &[0, 1, 1], &[1.0, 1.0], &[true, true, true])
            .unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln() + 0.4f64.ln()) / 3.0;
        assert!((tape.value(loss).get(0, 0) - expected).abs() < 1e-6);
    }

    #[test]
    fn weighted_ce_perfect_and_degenerate() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let loss = tape
            .weighted_cross_entropy(p, &[0, 1], &[1.0, 3.0], &[true, true])
            .unwrap();
        assert!(tape.value(loss).get(0, 0) <= 1e-6);
        // zero probability on the target is clamped, not NaN
        let loss = tape
            .weighted_cross_entropy(p, &[1, 0], &[1.0, 1.0], &[true, true])
            .unwrap();
        let v = tape.value(loss).get(0, 0);
        assert!(v.is_finite() && v > 20.0);
        // empty mask
        let loss = tape
            .weighted_cross_entropy(p, &[1, 0], &[1.0, 1.0], &[false, false])
            .unwrap();
        assert_eq!(tape.value(loss).get(0, 0), 0.0);
    }

    #[test]
    fn backward_skips_constants() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(t(2, 1, &[0.5, -0.5]).with_grad());
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad(w).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn batch_norm_eval_is_affine() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 1, &[1.0, 3.0]));
        let g = tape.leaf(t(1, 1, &[2.0]));
        let b = tape.leaf(t(1, 1, &[0.5]));
        let y = tape.batch_norm_eval(x, g, b, &[1.0], &[4.0], 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 2.5]);
    }
}
