//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and a single reverse sweep visits each node once.

use super::kernels::{self, dot};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is expanded to the left operand's shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Ln,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    GroupMatMul {
        x: Var,
        w: Var,
        group: usize,
        k: usize,
        m: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        trans_b: bool,
    },
    Binary(Binary, Var, Var, Bcast),
    Affine {
        x: Var,
        scale: T,
    },
    Unary(Unary, Var),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Concat(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Where {
        mask: Vec<bool>,
        a: Var,
        b: Var,
    },
    SoftmaxRows(Var),
    SoftmaxMix {
        logits: Var,
        slots: Var,
        alpha: Vec<T>,
    },
    MeanGroups {
        x: Var,
        group: usize,
    },
    SumCols(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    trainable_leaf: bool,
}

/// Records one forward pass. Leaves flagged non-trainable never receive gradients.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    non_finite: Option<String>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of trainable leaves from one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn dims<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    /// First non-finite result seen during the forward pass, if any.
    pub fn check_finite(&self) -> Result<()> {
        match &self.non_finite {
            Some(op) => Err(Error::NonFinite(op.clone())),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var], name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(format!("{name} (node {})", self.nodes.len()));
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            trainable_leaf: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is collected when `trainable` is set.
    pub fn leaf(&mut self, value: Tensor<T>, trainable: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(format!("leaf (node {})", self.nodes.len()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: trainable,
            trainable_leaf: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims(self.value(a));
        let (k2, m) = dims(self.value(b));
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(
            Tensor::matrix(n, m, out),
            Op::MatMul(a, b),
            &[a, b],
            "matmul",
        ))
    }

    /// Each consecutive block of `group` rows of `x` is multiplied by its own
    /// matrix: row `g` of `w` holds a `k×m` matrix in row-major order.
    pub fn group_matmul(&mut self, x: Var, w: Var, group: usize, m: usize) -> Result<Var> {
        let (n, k) = dims(self.value(x));
        let (bw, km) = dims(self.value(w));
        if group == 0 || n != bw * group || km != k * m {
            return Err(Error::shape(
                "group_matmul",
                format!("x {n}x{k}, w {bw}x{km}, group {group}, m {m}"),
            ));
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = Vec::with_capacity(n * m);
        for g in 0..bw {
            let wg = &wv[g * km..(g + 1) * km];
            let xg = &xv[g * group * k..(g + 1) * group * k];
            out.extend(kernels::matmul(xg, wg, group, k, m));
        }
        Ok(self.push(
            Tensor::matrix(n, m, out),
            Op::GroupMatMul { x, w, group, k, m },
            &[x, w],
            "group_matmul",
        ))
    }

    /// `a` holds `batch` stacked `p×k` blocks, `b` holds `batch` stacked `k×q`
    /// blocks (or `q×k` when `trans_b`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, batch: usize, trans_b: bool) -> Result<Var> {
        let (ar, k) = dims(self.value(a));
        let (br, bc) = dims(self.value(b));
        if batch == 0 || ar % batch != 0 || br % batch != 0 {
            return Err(Error::shape(
                "batch_matmul",
                format!("{ar}x{k} / {br}x{bc} by {batch}"),
            ));
        }
        let p = ar / batch;
        let (kb, q) = if trans_b {
            (bc, br / batch)
        } else {
            (br / batch, bc)
        };
        if kb != k {
            return Err(Error::shape("batch_matmul", format!("inner {k} vs {kb}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * p * q];
        for s in 0..batch {
            let ab = &av[s * p * k..(s + 1) * p * k];
            let bb = &bv[s * k * q..(s + 1) * k * q];
            let ob = &mut out[s * p * q..(s + 1) * p * q];
            if trans_b {
                for i in 0..p {
                    for j in 0..q {
                        ob[i * q + j] = dot(&ab[i * k..(i + 1) * k], &bb[j * k..(j + 1) * k]);
                    }
                }
            } else {
                ob.copy_from_slice(&kernels::matmul(ab, bb, p, k, q));
            }
        }
        Ok(self.push(
            Tensor::matrix(batch * p, q, out),
            Op::BatchMatMul {
                a,
                b,
                batch,
                trans_b,
            },
            &[a, b],
            "batch_matmul",
        ))
    }

    fn bcast_kind(&self, a: Var, b: Var, op: &'static str) -> Result<Bcast> {
        let (ra, ca) = dims(self.value(a));
        let (rb, cb) = dims(self.value(b));
        Ok(match (rb, cb) {
            _ if (rb, cb) == (ra, ca) => Bcast::Same,
            (1, c) if c == ca => Bcast::Row,
            (r, 1) if r == ra => Bcast::Col,
            (1, 1) => Bcast::Scalar,
            _ => {
                return Err(Error::shape(
                    op,
                    format!("cannot broadcast {rb}x{cb} to {ra}x{ca}"),
                ))
            }
        })
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let bc = self.bcast_kind(a, b, name)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let cols = av.cols();
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Bcast::Same => bv[i],
                    Bcast::Row => bv[i % cols],
                    Bcast::Col => bv[i / cols],
                    Bcast::Scalar => bv[0],
                };
                f(x, y)
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Binary(kind, a, b, bc), &[a, b], name))
    }

    /// `a + b`, with `b` broadcast as a row, column or scalar when smaller.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine { x, scale }, &[x], "affine")
    }

    fn unary(&mut self, kind: Unary, x: Var, name: &'static str) -> Var {
        let value = self.value(x).map(|v| match kind {
            Unary::Sigmoid => kernels::sigmoid(v),
            Unary::Tanh => v.tanh(),
            Unary::Relu => v.max(T::zero()),
            Unary::Exp => v.exp(),
            Unary::Ln => v.ln(),
        });
        self.push(value, Op::Unary(kind, x), &[x], name)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x, "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x, "relu")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x, "exp")
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(Unary::Ln, x, "ln")
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { x, lo, hi }, &[x], "clamp")
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(
            Tensor::matrix(rows, cols, data),
            Op::Concat(parts.to_vec()),
            parts,
            "concat",
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = dims(self.value(x));
        if start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}+{len} > {cols}"),
            ));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        Ok(self.push(
            Tensor::matrix(rows, len, data),
            Op::SliceCols { x, start },
            &[x],
            "slice_cols",
        ))
    }

    /// Row gather: output row `i` is row `idx[i]` of `x`. Backward scatter-adds,
    /// so repeated indices accumulate.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, cols) = dims(self.value(x));
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::IdOutOfRange { id: bad, rows });
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(xv.row(i));
        }
        let n = idx.len();
        Ok(self.push(
            Tensor::matrix(n, cols, data),
            Op::Gather { x, idx },
            &[x],
            "gather",
        ))
    }

    /// Row-wise select: row `i` comes from `a` when `mask[i]`, else from `b`.
    pub fn select_rows(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = dims(self.value(a));
        if dims(self.value(b)) != (ra, ca) || mask.len() != ra {
            return Err(Error::shape("select_rows", "operand or mask size"));
        }
        let mut data = Vec::with_capacity(ra * ca);
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { self.value(a) } else { self.value(b) };
            data.extend_from_slice(src.row(r));
        }
        Ok(self.push(
            Tensor::matrix(ra, ca, data),
            Op::Where { mask, a, b },
            &[a, b],
            "select_rows",
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = dims(xv);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - mx).exp()).collect();
            let s: T = e.iter().copied().sum();
            data.extend(e.into_iter().map(|v| v / s));
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("softmax shape");
        self.push(value, Op::SoftmaxRows(x), &[x], "softmax_rows")
    }

    /// Row `b` of the result is `Σ_i softmax(logits_b)_i · slots_i`, evaluated as
    /// `(Σ_i e_i slots_i) / Σ_i e_i` with `e = exp(logits_b - max)`. When every
    /// slot holds the same value `c`, the result is exactly `c`.
    pub fn softmax_mix(&mut self, logits: Var, slots: Var) -> Result<Var> {
        let (b, l) = dims(self.value(logits));
        let (ls, p) = dims(self.value(slots));
        if l != ls {
            return Err(Error::shape(
                "softmax_mix",
                format!("logits {b}x{l}, slots {ls}x{p}"),
            ));
        }
        let (lv, sv) = (self.value(logits), self.value(slots).data());
        let mut alpha = Vec::with_capacity(b * l);
        let mut data = Vec::with_capacity(b * p);
        for r in 0..b {
            let row = lv.row(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - mx).exp()).collect();
            let s: T = e.iter().copied().sum();
            let mixed = kernels::matmul(&e, sv, 1, l, p);
            data.extend(mixed.into_iter().map(|v| v / s));
            alpha.extend(e.iter().map(|&v| v / s));
        }
        Ok(self.push(
            Tensor::matrix(b, p, data),
            Op::SoftmaxMix {
                logits,
                slots,
                alpha,
            },
            &[logits, slots],
            "softmax_mix",
        ))
    }

    /// Mean over each consecutive block of `group` rows.
    pub fn mean_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, cols) = dims(self.value(x));
        if group == 0 || rows % group != 0 {
            return Err(Error::shape(
                "mean_groups",
                format!("{rows} rows by {group}"),
            ));
        }
        let xv = self.value(x);
        let n = T::of(group as f64);
        let mut data = Vec::with_capacity(rows / group * cols);
        for g in 0..rows / group {
            let mut acc = vec![T::zero(); cols];
            for r in g * group..(g + 1) * group {
                for (a, &v) in acc.iter_mut().zip(xv.row(r)) {
                    *a += v;
                }
            }
            data.extend(acc.into_iter().map(|a| a / n));
        }
        Ok(self.push(
            Tensor::matrix(rows / group, cols, data),
            Op::MeanGroups { x, group },
            &[x],
            "mean_groups",
        ))
    }

    /// Row sums as an `rows×1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let rows = xv.rows();
        let data = (0..rows).map(|r| xv.row(r).iter().copied().sum()).collect();
        self.push(
            Tensor::matrix(rows, 1, data),
            Op::SumCols(x),
            &[x],
            "sum_cols",
        )
    }

    /// Per-row standardization to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Var {
        let xv = self.value(x);
        let (rows, cols) = dims(xv);
        let n = T::of(cols as f64);
        let mut data = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            data.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("layer_norm shape");
        self.push(value, Op::LayerNorm { x, inv_std }, &[x], "layer_norm")
    }

    /// Inverted dropout with an explicit keep mask; kept entries are scaled by
    /// `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Result<Var> {
        if keep.len() != self.value(x).len() {
            return Err(Error::shape("dropout", "mask size"));
        }
        let scale = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = keep
            .iter()
            .map(|&k| if k { scale } else { T::zero() })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x], "dropout"))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: T = xv.data().iter().copied().sum();
        let m = s / T::of(xv.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x], "mean")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x], "reshape"))
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for trainable leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_finite()?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient at node {i}")));
            }
            self.propagate(i, &g, &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.trainable_leaf {
                grads[i] = None;
            } else if let Some(g) = &grads[i] {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of leaf {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = dims(self.value(*a));
                let m = self.value(*b).cols();
                if self.wants(*a) {
                    let ga = acc_slot(grads, *a, self.value(*a));
                    kernels::matmul_nt_acc(gd, self.value(*b).data(), ga, n, k, m);
                }
                if self.wants(*b) {
                    let gb = acc_slot(grads, *b, self.value(*b));
                    kernels::matmul_tn_acc(self.value(*a).data(), gd, gb, n, k, m);
                }
            }
            Op::GroupMatMul { x, w, group, k, m } => {
                let (group, k, m) = (*group, *k, *m);
                let groups = self.value(*w).rows();
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if self.wants(*x) {
                    let gx = acc_slot(grads, *x, self.value(*x));
                    for s in 0..groups {
                        kernels::matmul_nt_acc(
                            &gd[s * group * m..(s + 1) * group * m],
                            &wv[s * k * m..(s + 1) * k * m],
                            &mut gx[s * group * k..(s + 1) * group * k],
                            group,
                            k,
                            m,
                        );
                    }
                }
                if self.wants(*w) {
                    let gw = acc_slot(grads, *w, self.value(*w));
                    for s in 0..groups {
                        kernels::matmul_tn_acc(
                            &xv[s * group * k..(s + 1) * group * k],
                            &gd[s * group * m..(s + 1) * group * m],
                            &mut gw[s * k * m..(s + 1) * k * m],
                            group,
                            k,
                            m,
                        );
                    }
                }
            }
            Op::BatchMatMul {
                a,
                b,
                batch,
                trans_b,
            } => {
                let (ar, k) = dims(self.value(*a));
                let p = ar / batch;
                let q = out.cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga = acc_slot(grads, *a, self.value(*a));
                    for s in 0..*batch {
                        let gs = &gd[s * p * q..(s + 1) * p * q];
                        let bs = &bv[s * k * q..(s + 1) * k * q];
                        let gas = &mut ga[s * p * k..(s + 1) * p * k];
                        if *trans_b {
                            // out = A Bᵀ, dA = G B
                            let prod = kernels::matmul(gs, bs, p, q, k);
                            for (d, v) in gas.iter_mut().zip(prod) {
                                *d += v;
                            }
                        } else {
                            kernels::matmul_nt_acc(gs, bs, gas, p, k, q);
                        }
                    }
                }
                if self.wants(*b) {
                    let gb = acc_slot(grads, *b, self.value(*b));
                    for s in 0..*batch {
                        let gs = &gd[s * p * q..(s + 1) * p * q];
                        let as_ = &av[s * p * k..(s + 1) * p * k];
                        let gbs = &mut gb[s * k * q..(s + 1) * k * q];
                        if *trans_b {
                            // dB = Gᵀ A  (q×k)
                            kernels::matmul_tn_acc(gs, as_, gbs, p, q, k);
                        } else {
                            kernels::matmul_tn_acc(as_, gs, gbs, p, k, q);
                        }
                    }
                }
            }
            Op::Binary(kind, a, b, bc) => {
                let cols = out.cols();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let bidx = |i: usize| match bc {
                    Bcast::Same => i,
                    Bcast::Row => i % cols,
                    Bcast::Col => i / cols,
                    Bcast::Scalar => 0,
                };
                if self.wants(*a) {
                    let ga = acc_slot(grads, *a, self.value(*a));
                    for (i, gi) in gd.iter().enumerate() {
                        ga[i] += match kind {
                            Binary::Add | Binary::Sub => *gi,
                            Binary::Mul => *gi * bv[bidx(i)],
                        };
                    }
                }
                if self.wants(*b) {
                    let gb = acc_slot(grads, *b, self.value(*b));
                    for (i, gi) in gd.iter().enumerate() {
                        gb[bidx(i)] += match kind {
                            Binary::Add => *gi,
                            Binary::Sub => -*gi,
                            Binary::Mul => *gi * av[i],
                        };
                    }
                }
            }
            Op::Affine { x, scale } => {
                let gx = acc_slot(grads, *x, self.value(*x));
                for (d, gi) in gx.iter_mut().zip(gd) {
                    *d += *gi * *scale;
                }
            }
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let yv = out.data();
                let gx = acc_slot(grads, *x, self.value(*x));
                for i in 0..gd.len() {
                    let dy = match kind {
                        Unary::Sigmoid => yv[i] * (T::one() - yv[i]),
                        Unary::Tanh => T::one() - yv[i] * yv[i],
                        Unary::Relu => {
                            if xv[i] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Exp => yv[i],
                        Unary::Ln => T::one() / xv[i],
                    };
                    gx[i] += gd[i] * dy;
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let gx = acc_slot(grads, *x, self.value(*x));
                for i in 0..gd.len() {
                    if xv[i] >= *lo && xv[i] <= *hi {
                        gx[i] += gd[i];
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = out.rows();
                let cols = out.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.wants(p) {
                        let gp = acc_slot(grads, p, self.value(p));
                        for r in 0..rows {
                            for c in 0..pc {
                                gp[r * pc + c] += gd[r * cols + off + c];
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::SliceCols { x, start } => {
                let xc = self.value(*x).cols();
                let len = out.cols();
                let gx = acc_slot(grads, *x, self.value(*x));
                for r in 0..out.rows() {
                    for c in 0..len {
                        gx[r * xc + start + c] += gd[r * len + c];
                    }
                }
            }
            Op::Gather { x, idx } => {
                let cols = out.cols();
                let gx = acc_slot(grads, *x, self.value(*x));
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        gx[src * cols + c] += gd[r * cols + c];
                    }
                }
            }
            Op::Where { mask, a, b } => {
                let cols = out.cols();
                for (target, want) in [(*a, true), (*b, false)] {
                    if !self.wants(target) {
                        continue;
                    }
                    let gt = acc_slot(grads, target, self.value(target));
                    for (r, &m) in mask.iter().enumerate() {
                        if m == want {
                            for c in 0..cols {
                                gt[r * cols + c] += gd[r * cols + c];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let cols = out.cols();
                let yv = out.data();
                let gx = acc_slot(grads, *x, self.value(*x));
                for r in 0..out.rows() {
                    let y = &yv[r * cols..(r + 1) * cols];
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let s = dot(y, gr);
                    for c in 0..cols {
                        gx[r * cols + c] += y[c] * (gr[c] - s);
                    }
                }
            }
            Op::SoftmaxMix {
                logits,
                slots,
                alpha,
            } => {
                let (b, p) = dims(out);
                let l = self.value(*slots).rows();
                if self.wants(*slots) {
                    let gs = acc_slot(grads, *slots, self.value(*slots));
                    kernels::matmul_tn_acc(alpha, gd, gs, b, l, p);
                }
                if self.wants(*logits) {
                    let sv = self.value(*slots).data();
                    let gl = acc_slot(grads, *logits, self.value(*logits));
                    for r in 0..b {
                        let gr = &gd[r * p..(r + 1) * p];
                        let base = dot(out.row(r), gr);
                        for i in 0..l {
                            let a = alpha[r * l + i];
                            gl[r * l + i] += a * (dot(&sv[i * p..(i + 1) * p], gr) - base);
                        }
                    }
                }
            }
            Op::MeanGroups { x, group } => {
                let cols = out.cols();
                let n = T::of(*group as f64);
                let gx = acc_slot(grads, *x, self.value(*x));
                for gi in 0..out.rows() {
                    for r in gi * group..(gi + 1) * group {
                        for c in 0..cols {
                            gx[r * cols + c] += gd[gi * cols + c] / n;
                        }
                    }
                }
            }
            Op::SumCols(x) => {
                let cols = self.value(*x).cols();
                let gx = acc_slot(grads, *x, self.value(*x));
                for (i, d) in gx.iter_mut().enumerate() {
                    *d += gd[i / cols];
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let cols = out.cols();
                let n = T::of(cols as f64);
                let yv = out.data();
                let gx = acc_slot(grads, *x, self.value(*x));
                for r in 0..out.rows() {
                    let y = &yv[r * cols..(r + 1) * cols];
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let mean_g = gr.iter().copied().sum::<T>() / n;
                    let mean_gy = dot(gr, y) / n;
                    for c in 0..cols {
                        gx[r * cols + c] += inv_std[r] * (gr[c] - mean_g - y[c] * mean_gy);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = acc_slot(grads, *x, self.value(*x));
                for i in 0..gd.len() {
                    gx[i] += gd[i] * mask[i];
                }
            }
            Op::Sum(x) => {
                let gx = acc_slot(grads, *x, self.value(*x));
                for d in gx.iter_mut() {
                    *d += gd[0];
                }
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).len() as f64);
                let gx = acc_slot(grads, *x, self.value(*x));
                for d in gx.iter_mut() {
                    *d += gd[0] / n;
                }
            }
            Op::Reshape(x) => {
                let gx = acc_slot(grads, *x, self.value(*x));
                for (d, gi) in gx.iter_mut().zip(gd) {
                    *d += *gi;
                }
            }
        }
        Ok(())
    }
}

fn acc_slot<'a, T: Real>(
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
    like: &Tensor<T>,
) -> &'a mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(like.shape()))
        .data_mut()
}
