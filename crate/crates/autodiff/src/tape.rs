//! Forward recording and reverse replay.

use crate::error::{AutodiffError, Result};
use crate::float::{gemm, Float};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p, F> {
    Owned(Tensor<F>),
    Borrowed(&'p Tensor<F>),
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, b_t: bool },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    Scale(Var, F),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, rstd: Vec<F> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Transpose(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<F> },
}

struct Node<'p, F> {
    value: Value<'p, F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Ordered record of executed ops over one borrowed [`ParamSet`].
///
/// Ops append nodes in execution order, so the node list is already a
/// topological order. [`Tape::backward`] consumes the tape.
pub struct Tape<'p, F> {
    params: &'p ParamSet<F>,
    nodes: Vec<Node<'p, F>>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl<'p, F: Float> Tape<'p, F> {
    pub fn new(params: &'p ParamSet<F>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor<F>, node_op: Op<F>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op });
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: node_op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Records a parameter. Repeated requests return the same node, so every
    /// use of a shared tensor accumulates into one gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Borrowed(self.params.get(id)),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn mismatch(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
    }

    /// `a · b` for `a: [m,k]`, `b: [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let op = if b_t { "matmul_t" } else { "matmul" };
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2(op)?;
        let (br, bc) = tb.dims2(op)?;
        let (kb, n) = if b_t { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Self::mismatch(op, ta, tb));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), b_t, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        self.push(op, Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, b_t }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::mismatch("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), needs)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("mul", out, Op::Mul(a, b), needs)
    }

    /// Adds a length-`n` row vector to every row of `x: [m,n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let (_, n) = tx.dims2("add_row")?;
        if tr.len() != n {
            return Err(Self::mismatch("add_row", tx, tr));
        }
        let r = tr.data();
        let data = tx
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(row);
        self.push("add_row", out, Op::AddRow { x, row }, needs)
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push("scale", out, Op::Scale(x, factor), needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v.max(F::zero())).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push("relu", out, Op::Relu(x), needs)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu(v)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push("gelu", out, Op::Gelu(x), needs)
    }

    /// Softmax along `axis` (0 = columns, 1 = rows) of a matrix.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => self.masked_softmax(x, None),
            0 => {
                let t = self.transpose(x)?;
                let s = self.masked_softmax(t, None)?;
                self.transpose(s)
            }
            _ => Err(AutodiffError::invalid("softmax", format!("axis {axis} out of range"))),
        }
    }

    /// Row softmax where `allowed[i*n + j] == false` forces weight exactly zero.
    /// A row with no allowed position yields all zeros.
    pub fn masked_softmax(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("softmax")?;
        if let Some(mask) = allowed {
            if mask.len() != m * n {
                return Err(AutodiffError::invalid(
                    "softmax",
                    format!("mask of {} entries for a {m}x{n} input", mask.len()),
                ));
            }
        }
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let ok = |j: usize| allowed.is_none_or(|mask| mask[i * n + j]);
            let max = (0..n)
                .filter(|&j| ok(j))
                .map(|j| row[j])
                .fold(F::neg_infinity(), F::max);
            if max == F::neg_infinity() {
                continue;
            }
            let dst = &mut out[i * n..(i + 1) * n];
            let mut total = F::zero();
            for j in 0..n {
                if ok(j) {
                    let e = (row[j] - max).exp();
                    dst[j] = e;
                    total += e;
                }
            }
            for v in dst.iter_mut() {
                *v = *v / total;
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(x);
        self.push("softmax", out, Op::Softmax(x), needs)
    }

    /// Row-wise layer normalisation with learned gain and bias, ε = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("layer_norm")?;
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != n || tb.len() != n {
            return Err(Self::mismatch("layer_norm", tx, tg));
        }
        let eps = F::of(LN_EPS);
        let nf = F::of(n as f64);
        let mut xhat = vec![F::zero(); m * n];
        let mut rstd = vec![F::zero(); m];
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let r = F::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm { x, gain, bias, xhat, rstd },
            needs,
        )
    }

    /// Gathers rows of `table: [V,d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = tt.dims2("embedding")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::invalid(
                    "embedding",
                    format!("id {id} out of range for table of {v} rows"),
                ));
            }
            out.extend_from_slice(tt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        let needs = self.needs(table);
        self.push(
            "embedding",
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat_cols", "no inputs"))?;
        let (m, _) = self.value(*first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != m {
                return Err(Self::mismatch("concat_cols", self.value(*first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![m, total], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat_rows", "no inputs"))?;
        let (_, n) = self.value(*first).dims2("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_rows")?;
            if c != n {
                return Err(Self::mismatch("concat_rows", self.value(*first), self.value(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, n], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), needs)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("slice_cols")?;
        if start >= end || end > n {
            return Err(AutodiffError::invalid(
                "slice_cols",
                format!("range {start}..{end} invalid for width {n}"),
            ));
        }
        let out = (0..m)
            .flat_map(|i| tx.row(i)[start..end].iter().copied())
            .collect();
        let out = Tensor::new(vec![m, end - start], out)?;
        let needs = self.needs(x);
        self.push("slice_cols", out, Op::SliceCols { x, start }, needs)
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("slice_rows")?;
        if start >= end || end > m {
            return Err(AutodiffError::invalid(
                "slice_rows",
                format!("range {start}..{end} invalid for {m} rows"),
            ));
        }
        let out = tx.data()[start * n..end * n].to_vec();
        let out = Tensor::new(vec![end - start, n], out)?;
        let needs = self.needs(x);
        self.push("slice_rows", out, Op::SliceRows { x, start }, needs)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("transpose")?;
        let out = transpose(tx.data(), m, n);
        let out = Tensor::new(vec![n, m], out)?;
        let needs = self.needs(x);
        self.push("transpose", out, Op::Transpose(x), needs)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push("sum", Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// Summed negative log-likelihood of `targets[i]` under row `i` of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (m, v) = tl.dims2("cross_entropy")?;
        if targets.len() != m {
            return Err(AutodiffError::invalid(
                "cross_entropy",
                format!("{} targets for {m} rows", targets.len()),
            ));
        }
        let mut probs = vec![F::zero(); m * v];
        let mut total = F::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(AutodiffError::invalid(
                    "cross_entropy",
                    format!("target {t} out of range for {v} classes"),
                ));
            }
            let row = tl.row(i);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&x| (x - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[t];
            for j in 0..v {
                probs[i * v + j] = (row[j] - log_z).exp();
            }
        }
        let needs = self.needs(logits);
        self.push(
            "cross_entropy",
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        )
    }

    /// Reverse pass from a scalar `loss`; consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<F>> {
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(loss_shape));
        }
        let mut out = Gradients::empty(self.params.len());
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(&loss_shape, F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.add(*id, g),
                Op::MatMul { a, b, b_t } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2("matmul")?;
                    let n = g.shape()[1];
                    if self.needs(*a) {
                        // dA = dC · Bᵀ  (or dC · B when b is stored transposed)
                        let mut da = vec![F::zero(); m * k];
                        gemm(m, n, k, g.data(), false, tb.data(), !*b_t, &mut da, false);
                        accumulate(&mut grads, *a, Tensor::new(vec![m, k], da)?);
                    }
                    if self.needs(*b) {
                        if *b_t {
                            // B: [n,k], dB = dCᵀ · A
                            let mut db = vec![F::zero(); n * k];
                            gemm(n, m, k, g.data(), true, ta.data(), false, &mut db, false);
                            accumulate(&mut grads, *b, Tensor::new(vec![n, k], db)?);
                        } else {
                            let mut db = vec![F::zero(); k * n];
                            gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, false);
                            accumulate(&mut grads, *b, Tensor::new(vec![k, n], db)?);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = zip_map(&g, tb, |x, y| x * y);
                        accumulate(&mut grads, *a, d);
                    }
                    if self.needs(*b) {
                        let d = zip_map(&g, ta, |x, y| x * y);
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::AddRow { x, row } => {
                    if self.needs(*row) {
                        let tr = self.value(*row);
                        let n = tr.len();
                        let mut dr = vec![F::zero(); n];
                        for chunk in g.data().chunks(n) {
                            for (d, &v) in dr.iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *row, Tensor::new(tr.shape().to_vec(), dr)?);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Scale(x, factor) => {
                    let mut d = g;
                    d.scale_assign(*factor);
                    accumulate(&mut grads, *x, d);
                }
                Op::Relu(x) => {
                    let d = zip_map(&g, self.value(*x), |gv, xv| {
                        if xv > F::zero() {
                            gv
                        } else {
                            F::zero()
                        }
                    });
                    accumulate(&mut grads, *x, d);
                }
                Op::Gelu(x) => {
                    let d = zip_map(&g, self.value(*x), |gv, xv| gv * gelu_grad(xv));
                    accumulate(&mut grads, *x, d);
                }
                Op::Softmax(x) => {
                    let y = self.value(Var(i));
                    let (m, n) = y.dims2("softmax")?;
                    let mut dx = vec![F::zero(); m * n];
                    for r in 0..m {
                        let yr = y.row(r);
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![m, n], dx)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let tg = self.value(*gain);
                    let n = tg.len();
                    let m = rstd.len();
                    if self.needs(*gain) || self.needs(*bias) {
                        let mut dg = vec![F::zero(); n];
                        let mut db = vec![F::zero(); n];
                        for r in 0..m {
                            for j in 0..n {
                                let gv = g.data()[r * n + j];
                                dg[j] += gv * xhat[r * n + j];
                                db[j] += gv;
                            }
                        }
                        if self.needs(*gain) {
                            accumulate(&mut grads, *gain, Tensor::new(tg.shape().to_vec(), dg)?);
                        }
                        if self.needs(*bias) {
                            let shape = self.value(*bias).shape().to_vec();
                            accumulate(&mut grads, *bias, Tensor::new(shape, db)?);
                        }
                    }
                    if self.needs(*x) {
                        let nf = F::of(n as f64);
                        let mut dx = vec![F::zero(); m * n];
                        for r in 0..m {
                            let mut sum_dh = F::zero();
                            let mut sum_dh_h = F::zero();
                            for j in 0..n {
                                let dh = g.data()[r * n + j] * tg.data()[j];
                                sum_dh += dh;
                                sum_dh_h += dh * xhat[r * n + j];
                            }
                            for j in 0..n {
                                let dh = g.data()[r * n + j] * tg.data()[j];
                                dx[r * n + j] =
                                    rstd[r] / nf * (nf * dh - sum_dh - xhat[r * n + j] * sum_dh_h);
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::new(vec![m, n], dx)?);
                    }
                }
                Op::Embedding { table, ids } => {
                    let tt = self.value(*table);
                    let (v, d) = tt.dims2("embedding")?;
                    let mut dt = vec![F::zero(); v * d];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += g.data()[r * d + j];
                        }
                    }
                    accumulate(&mut grads, *table, Tensor::new(vec![v, d], dt)?);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = g.dims2("concat_cols")?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        if self.needs(p) {
                            let d = (0..m)
                                .flat_map(|r| g.data()[r * total + offset..r * total + offset + w].iter().copied())
                                .collect();
                            accumulate(&mut grads, p, Tensor::new(vec![m, w], d)?);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let n = g.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).shape()[0];
                        if self.needs(p) {
                            let d = g.data()[offset * n..(offset + r) * n].to_vec();
                            accumulate(&mut grads, p, Tensor::new(vec![r, n], d)?);
                        }
                        offset += r;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (m, n) = self.value(*x).dims2("slice_cols")?;
                    let w = g.shape()[1];
                    let mut dx = vec![F::zero(); m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![m, n], dx)?);
                }
                Op::SliceRows { x, start } => {
                    let (m, n) = self.value(*x).dims2("slice_rows")?;
                    let mut dx = vec![F::zero(); m * n];
                    dx[start * n..start * n + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, Tensor::new(vec![m, n], dx)?);
                }
                Op::Transpose(x) => {
                    let (m, n) = g.dims2("transpose")?;
                    let d = transpose(g.data(), m, n);
                    accumulate(&mut grads, *x, Tensor::new(vec![n, m], d)?);
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::full(&shape, g.data()[0]));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let (m, v) = self.value(*logits).dims2("cross_entropy")?;
                    let scale = g.data()[0];
                    let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * v + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, Tensor::new(vec![m, v], d)?);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<F: Float>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<F: Float>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn transpose<F: Float>(data: &[F], m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = data[i * n + j];
        }
    }
    out
}

fn gelu<F: Float>(x: F) -> F {
    let half = F::of(0.5);
    let inner = F::of(SQRT_2_OVER_PI) * (x + F::of(GELU_C) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Float>(x: F) -> F {
    let half = F::of(0.5);
    let c = F::of(SQRT_2_OVER_PI);
    let inner = c * (x + F::of(GELU_C) * x * x * x);
    let t = inner.tanh();
    let d_inner = c * (F::one() + F::of(3.0 * GELU_C) * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * d_inner
}
