//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every value on the tape is a `rows x cols` matrix; scalars are `1 x 1`.
//! Nodes are appended in evaluation order, so the reverse index order is a
//! valid topological order for the backward sweep.

use super::params::{Gradients, ParamId, ParamSet};
use super::rng::{dropout_mask, Rng};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Mean(Var),
    RowDot(Var, Var),
    NormalizeRows {
        x: Var,
        eps: T,
        norms: Vec<T>,
    },
    NormRows(Var),
    LogSumExpRows(Var),
    Diag(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Abs(_) => "abs",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::Gather { .. } => "gather",
            Op::SelectRows { .. } => "select_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Mean(_) => "mean",
            Op::RowDot(..) => "row_dot",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::NormRows(_) => "norm_rows",
            Op::LogSumExpRows(_) => "logsumexp_rows",
            Op::Diag(_) => "diag",
        }
    }
}

/// Packing of a batch of padded sequences for multi-head self-attention.
///
/// Row `b * seq + t` holds position `t` of sequence `b`; only the first
/// `lens[b]` positions of a sequence are real tokens.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub seq: usize,
    pub heads: usize,
    pub lens: Vec<usize>,
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    needs_grad: bool,
    op: Op<T>,
}

pub struct Graph<'p, T: Scalar = f32> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    fault: Option<&'static str>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            fault: None,
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &n.value,
        }
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        assert_eq!(self.shape(v), (1, 1), "scalar() on non-scalar node");
        self.value(v)[0]
    }

    /// First op that produced a non-finite value, if any.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some(op) => Err(Error::NonFinite { op: op.to_string() }),
            None => Ok(()),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(rows * cols, value.len(), "{}", op.name());
        if self.fault.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.fault = Some(op.name());
        }
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(id) => self.params.get(*id).requires_grad(),
            other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        assert_eq!(rows * cols, data.len(), "input shape");
        self.push(rows, cols, data, Op::Input)
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let (rows, cols) = self.params.get(id).dims2();
        if self.fault.is_none() && self.params.get(id).check_finite("param").is_err() {
            self.fault = Some("param");
        }
        let v = self.push_param(rows, cols, id);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn push_param(&mut self, rows: usize, cols: usize, id: ParamId) -> Var {
        self.nodes.push(Node {
            rows,
            cols,
            value: Vec::new(),
            needs_grad: self.params.get(id).requires_grad(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions {m}x{k} . {k2}x{n}");
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a), self.value(b), m, k, n, &mut out);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = transposed(self.value(x), r, c);
        self.push(c, r, out, Op::Transpose(x))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let shape = self.shape(a);
        assert_eq!(shape, self.shape(b), "{} operand shapes", op.name());
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(shape.0, shape.1, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(row), (1, n), "add_row bias shape");
        let bias = self.value(row);
        let mut out = self.value(x).to_vec();
        for r in out.chunks_exact_mut(n) {
            r.iter_mut().zip(bias).for_each(|(o, &b)| *o = *o + b);
        }
        self.push(m, n, out, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * c).collect();
        self.push(m, n, out, Op::Scale(x, c))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).iter().map(|v| v.abs()).collect();
        self.push(m, n, out, Op::Abs(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).iter().map(|&v| gelu(v).0).collect();
        self.push(m, n, out, Op::Gelu(x))
    }

    /// Row-wise layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(gain), (1, n), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, n), "layer_norm bias shape");
        let inv_n = T::of(1.0 / n as f64);
        let eps = T::of(eps);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for (r, row) in self.value(x).chunks_exact(n).enumerate() {
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        self.push(
            m,
            n,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Multi-head scaled dot-product self-attention with key padding.
    ///
    /// `q`, `k`, `v` are `(batch * seq) x d`; padded query rows produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Var {
        let (rows, d) = self.shape(q);
        assert_eq!(self.shape(k), (rows, d), "attention key shape");
        assert_eq!(self.shape(v), (rows, d), "attention value shape");
        let AttentionLayout { seq, heads, ref lens } = layout;
        assert_eq!(rows, seq * lens.len(), "attention layout rows");
        assert_eq!(d % heads, 0, "attention heads must divide width");
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![T::zero(); rows * d];
        let mut probs = vec![T::zero(); lens.len() * heads * seq * seq];
        let mut scores = vec![T::zero(); seq];
        for (b, &len) in lens.iter().enumerate() {
            assert!(len >= 1 && len <= seq, "attention length {len} outside 1..={seq}");
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let qi = &qv[(b * seq + i) * d + off..][..dh];
                    let mut max = T::neg_infinity();
                    for j in 0..len {
                        let kj = &kv[(b * seq + j) * d + off..][..dh];
                        let s = dot(qi, kj) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let mut total = T::zero();
                    for s in &mut scores[..len] {
                        *s = (*s - max).exp();
                        total = total + *s;
                    }
                    let p = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let o = &mut out[(b * seq + i) * d + off..][..dh];
                    for j in 0..len {
                        let pj = scores[j] / total;
                        p[j] = pj;
                        let vj = &vv[(b * seq + j) * d + off..][..dh];
                        axpy(pj, vj, o);
                    }
                }
            }
        }
        self.push(
            rows,
            d,
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
        )
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let (vocab, n) = self.shape(table);
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in &ids {
            assert!(id < vocab, "gather id {id} outside table of {vocab} rows");
            out.extend_from_slice(&t[id * n..(id + 1) * n]);
        }
        self.push(ids.len(), n, out, Op::Gather { table, ids })
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let (m, n) = self.shape(x);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            assert!(r < m, "select_rows index {r} outside {m} rows");
            out.extend_from_slice(&xv[r * n..(r + 1) * n]);
        }
        self.push(rows.len(), n, out, Op::SelectRows { x, rows })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let m = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, m, "concat_cols row counts");
                c
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        self.push(m, n, out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let (m, n) = self.shape(x);
        assert!(width > 0 && start + width <= n, "slice_cols {start}+{width} of {n}");
        let out = self
            .value(x)
            .chunks_exact(n)
            .flat_map(|r| r[start..start + width].iter().copied())
            .collect();
        self.push(m, width, out, Op::SliceCols { x, start })
    }

    /// Mean over all entries, as a `1 x 1` node.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.iter().copied().sum::<T>() / T::of(xv.len() as f64);
        self.push(1, 1, vec![m], Op::Mean(x))
    }

    /// Per-row inner product, `m x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, n), "row_dot operand shapes");
        let out = self
            .value(a)
            .chunks_exact(n)
            .zip(self.value(b).chunks_exact(n))
            .map(|(x, y)| dot(x, y))
            .collect();
        self.push(m, 1, out, Op::RowDot(a, b))
    }

    /// `x_i / max(|x_i|, eps)` per row.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let (m, n) = self.shape(x);
        let eps = T::of(eps);
        let mut norms = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in self.value(x).chunks_exact(n) {
            let norm = dot(row, row).sqrt();
            norms.push(norm);
            let denom = norm.max(eps);
            out.extend(row.iter().map(|&v| v / denom));
        }
        self.push(m, n, out, Op::NormalizeRows { x, eps, norms })
    }

    /// Euclidean norm of every row, `m x 1`.
    pub fn norm_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let out = self
            .value(x)
            .chunks_exact(n)
            .map(|r| dot(r, r).sqrt())
            .collect();
        self.push(m, 1, out, Op::NormRows(x))
    }

    /// Stabilized `log sum_j exp(x_ij)` per row, `m x 1`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let out = self.value(x).chunks_exact(n).map(logsumexp).collect();
        self.push(m, 1, out, Op::LogSumExpRows(x))
    }

    /// Diagonal of a square matrix, `n x 1`.
    pub fn diag(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(m, n, "diag of non-square matrix");
        let xv = self.value(x);
        let out = (0..n).map(|i| xv[i * n + i]).collect();
        self.push(n, 1, out, Op::Diag(x))
    }

    /// `x W + b` with `W: in x out` and `b: 1 x out`.
    pub fn linear(&mut self, x: Var, weight: ParamId, bias: ParamId) -> Var {
        let w = self.param(weight);
        let b = self.param(bias);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Inverted dropout with a freshly drawn mask; identity when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if p == 0.0 {
            return Ok(x);
        }
        let (m, n) = self.shape(x);
        let mask = dropout_mask::<T>(&[m, n], p, rng)?;
        let mask = self.input(m, n, mask.into_data());
        Ok(self.mul(x, mask))
    }

    /// Reverse sweep from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check()?;
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar node");
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::empty(self.params.len());
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, g, &mut grads, &mut out);
        }
        if out
            .slots
            .iter()
            .flatten()
            .any(|g| !g.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite {
                op: "backward".to_string(),
            });
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        out: &mut Gradients<T>,
    ) {
        let (m, n) = (node.rows, node.cols);
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => match &mut out.slots[id.0] {
                Some(acc) => add_into(acc, &g),
                slot @ None => *slot = Some(g),
            },
            Op::MatMul(a, b) => {
                let (_, k) = self.shape(*a);
                if wants(*a) {
                    // dA = G B^T
                    let bt = transposed(self.value(*b), k, n);
                    let mut da = vec![T::zero(); m * k];
                    gemm_nn(&g, &bt, m, n, k, &mut da);
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    // dB = A^T G
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(self.value(*a), &g, m, k, n, &mut db);
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(x) => accumulate(grads, *x, transposed(&g, m, n)),
            Op::Add(a, b) => {
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
                accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if wants(*b) {
                    accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
                accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::AddRow(x, row) => {
                if wants(*row) {
                    accumulate(grads, *row, column_sums(&g, n));
                }
                accumulate(grads, *x, g);
            }
            Op::Scale(x, c) => accumulate(grads, *x, g.iter().map(|&v| v * *c).collect()),
            Op::Abs(x) => {
                let dx = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&g, &v)| if v > T::zero() { g } else if v < T::zero() { -g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let dx = g
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&g, &v)| g * gelu(v).1)
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                if wants(*gain) {
                    let mut dg = vec![T::zero(); n];
                    for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for c in 0..n {
                            dg[c] = dg[c] + gr[c] * hr[c];
                        }
                    }
                    accumulate(grads, *gain, dg);
                }
                if wants(*bias) {
                    accumulate(grads, *bias, column_sums(&g, n));
                }
                if wants(*x) {
                    let gv = self.value(*gain);
                    let inv_n = T::of(1.0 / n as f64);
                    let mut dx = vec![T::zero(); m * n];
                    let mut dh = vec![T::zero(); n];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        for c in 0..n {
                            dh[c] = gr[c] * gv[c];
                        }
                        let mean_dh = dh.iter().copied().sum::<T>() * inv_n;
                        let mean_dhh = dot(&dh, hr) * inv_n;
                        for c in 0..n {
                            dx[r * n + c] = rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dhh);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => {
                let d = n;
                let AttentionLayout { seq, heads, lens } = layout;
                let (seq, heads) = (*seq, *heads);
                let dh = d / heads;
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = vec![T::zero(); m * d];
                let mut dk = vec![T::zero(); m * d];
                let mut dv = vec![T::zero(); m * d];
                let mut dp = vec![T::zero(); seq];
                for (b, &len) in lens.iter().enumerate() {
                    for h in 0..heads {
                        let off = h * dh;
                        for i in 0..len {
                            let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                            let gi = &g[(b * seq + i) * d + off..][..dh];
                            let mut weighted = T::zero();
                            for j in 0..len {
                                let vj = &vv[(b * seq + j) * d + off..][..dh];
                                dp[j] = dot(gi, vj);
                                weighted = weighted + p[j] * dp[j];
                                axpy(p[j], gi, &mut dv[(b * seq + j) * d + off..][..dh]);
                            }
                            let qi_row = (b * seq + i) * d + off;
                            for j in 0..len {
                                let ds = p[j] * (dp[j] - weighted) * scale;
                                let kj_row = (b * seq + j) * d + off;
                                axpy(ds, &kv[kj_row..][..dh], &mut dq[qi_row..][..dh]);
                                axpy(ds, &qv[qi_row..][..dh], &mut dk[kj_row..][..dh]);
                            }
                        }
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::Gather { table, ids } => {
                let (vocab, _) = self.shape(*table);
                let mut dt = vec![T::zero(); vocab * n];
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                }
                accumulate(grads, *table, dt);
            }
            Op::SelectRows { x, rows } => {
                let (xm, _) = self.shape(*x);
                let mut dx = vec![T::zero(); xm * n];
                for (r, &src) in rows.iter().enumerate() {
                    add_into(&mut dx[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if wants(p) {
                        let dp = g
                            .chunks_exact(n)
                            .flat_map(|r| r[start..start + w].iter().copied())
                            .collect();
                        accumulate(grads, p, dp);
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (xm, xn) = self.shape(*x);
                let mut dx = vec![T::zero(); xm * xn];
                for r in 0..xm {
                    dx[r * xn + start..r * xn + start + n].copy_from_slice(&g[r * n..(r + 1) * n]);
                }
                accumulate(grads, *x, dx);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                accumulate(grads, *x, vec![g[0] / T::of(len as f64); len]);
            }
            Op::RowDot(a, b) => {
                let w = self.shape(*a).1;
                let (av, bv) = (self.value(*a), self.value(*b));
                let spread = |other: &[T]| -> Vec<T> {
                    other
                        .chunks_exact(w)
                        .zip(&g)
                        .flat_map(|(r, &gr)| r.iter().map(move |&v| v * gr))
                        .collect()
                };
                if wants(*a) {
                    accumulate(grads, *a, spread(bv));
                }
                if wants(*b) {
                    accumulate(grads, *b, spread(av));
                }
            }
            Op::NormalizeRows { x, eps, norms } => {
                let mut dx = vec![T::zero(); m * n];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &node.value[r * n..(r + 1) * n];
                    let dr = &mut dx[r * n..(r + 1) * n];
                    if norms[r] > *eps {
                        let proj = dot(yr, gr);
                        for c in 0..n {
                            dr[c] = (gr[c] - yr[c] * proj) / norms[r];
                        }
                    } else {
                        for c in 0..n {
                            dr[c] = gr[c] / *eps;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::NormRows(x) => {
                let w = self.shape(*x).1;
                let mut dx = vec![T::zero(); m * w];
                for (r, row) in self.value(*x).chunks_exact(w).enumerate() {
                    let norm = node.value[r];
                    if norm > T::zero() {
                        for c in 0..w {
                            dx[r * w + c] = g[r] * row[c] / norm;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LogSumExpRows(x) => {
                let w = self.shape(*x).1;
                let mut dx = vec![T::zero(); m * w];
                for (r, row) in self.value(*x).chunks_exact(w).enumerate() {
                    let lse = node.value[r];
                    for c in 0..w {
                        dx[r * w + c] = g[r] * (row[c] - lse).exp();
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Diag(x) => {
                let mut dx = vec![T::zero(); m * m];
                for i in 0..m {
                    dx[i * m + i] = g[i];
                }
                accumulate(grads, *x, dx);
            }
        }
    }
}

fn parents<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Input | Op::Param(_) => Vec::new(),
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::RowDot(a, b) => {
            vec![*a, *b]
        }
        Op::Transpose(x)
        | Op::Scale(x, _)
        | Op::Abs(x)
        | Op::Gelu(x)
        | Op::Mean(x)
        | Op::NormRows(x)
        | Op::LogSumExpRows(x)
        | Op::Diag(x)
        | Op::Gather { table: x, .. }
        | Op::SelectRows { x, .. }
        | Op::SliceCols { x, .. }
        | Op::NormalizeRows { x, .. } => vec![*x],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        Op::ConcatCols(parts) => parts.clone(),
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => add_into(acc, &delta),
        slot @ None => *slot = Some(delta),
    }
}

fn add_into<T: Scalar>(acc: &mut [T], delta: &[T]) {
    acc.iter_mut().zip(delta).for_each(|(a, &d)| *a = *a + d);
}

fn column_sums<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for row in g.chunks_exact(n) {
        add_into(&mut out, row);
    }
    out
}

/// Inner product with four independent accumulators.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] = acc[l] + a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(y, &x)| *y = *y + alpha * x);
}

/// `out += a(m x k) * b(k x n)`.
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], orow);
        }
    }
}

/// `out += a(m x k)^T * g(m x n)`.
fn gemm_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], grow, &mut out[p * n..(p + 1) * n]);
        }
    }
}

fn transposed<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub(crate) fn logsumexp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// GELU value and derivative.
#[inline]
fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let x2 = x * x;
    let u = c * (x + a * x2 * x);
    let t = u.tanh();
    let value = half * x * (T::one() + t);
    let du = c * (T::one() + T::of(3.0) * a * x2);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (value, deriv)
}
