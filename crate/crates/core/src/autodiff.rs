//! Dense matrices and a reverse-mode tape.
//!
//! The tape records one node per operation. Parameter leaves borrow their
//! values from a [`ParamStore`] instead of copying them, and
//! [`Tape::backward`] accumulates into a [`Gradients`] buffer laid out like
//! the store. All arithmetic is `f64`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Matrix::from_vec(1, n, data)
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Matrix::from_vec(n, 1, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`. Zero entries of `self` are skipped, so rows whose
    /// weights are exactly zero contribute nothing (not even a signed zero).
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `selfᵀ · other`
    fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let brow = other.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.values.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

/// Gradient buffer shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store
                .iter()
                .map(|(_, _, m)| Matrix::zeros(m.rows, m.cols))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            for x in &mut g.data {
                *x *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    SumRows(Var),
    SumCols(Var),
    MaxRows(Var, Vec<usize>),
    MaxCols(Var, Vec<usize>),
    MulConst(Var, Matrix),
    Reshape(Var),
    BlockWeightedSum(Var, Var),
}

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows, 1);
        assert_eq!(x.cols, r.cols, "add_row width");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, b) in v.data[i * v.cols..(i + 1) * v.cols].iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows, 1);
        assert_eq!(x.cols, r.cols, "mul_row width");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, b) in v.data[i * v.cols..(i + 1) * v.cols].iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    /// `k·a + c`
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let v = self.value(a).map(|x| k * x + c);
        self.push(v, Op::Affine(a, k))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Row-wise softmax. Entries with `mask == false` get exactly zero
    /// weight; a fully masked row is all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Var {
        let x = self.value(a);
        if let Some(m) = &mask {
            assert_eq!(m.len(), x.len(), "softmax mask size");
        }
        let v = softmax_rows_masked(x, mask.as_deref());
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row count");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows col count");
            data.extend_from_slice(&m.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let x = self.value(a);
        assert!(c0 <= c1 && c1 <= x.cols);
        let w = c1 - c0;
        let mut v = Matrix::zeros(x.rows, w);
        for r in 0..x.rows {
            v.data[r * w..(r + 1) * w].copy_from_slice(&x.row(r)[c0..c1]);
        }
        self.push(v, Op::SliceCols(a, c0))
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        let x = self.value(a);
        assert!(r0 <= r1 && r1 <= x.rows);
        let v = Matrix::from_vec(r1 - r0, x.cols, x.data[r0 * x.cols..r1 * x.cols].to_vec());
        self.push(v, Op::SliceRows(a, r0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Column sums as a `1×c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, b) in v.data.iter_mut().zip(x.row(r)) {
                *o += b;
            }
        }
        self.push(v, Op::SumRows(a))
    }

    /// Row sums as an `r×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows).map(|r| x.row(r).iter().sum()).collect();
        self.push(Matrix::column_vector(data), Op::SumCols(a))
    }

    /// Column maxima as a `1×c` row (first maximiser wins on ties).
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.rows > 0);
        let mut arg = vec![0usize; x.cols];
        let mut v = Matrix::from_vec(1, x.cols, x.row(0).to_vec());
        for r in 1..x.rows {
            for c in 0..x.cols {
                if x.get(r, c) > v.data[c] {
                    v.data[c] = x.get(r, c);
                    arg[c] = r;
                }
            }
        }
        self.push(v, Op::MaxRows(a, arg))
    }

    /// Row maxima as an `r×1` column.
    pub fn max_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.cols > 0);
        let mut arg = vec![0usize; x.rows];
        let mut data = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            arg[r] = best;
            data.push(row[best]);
        }
        self.push(Matrix::column_vector(data), Op::MaxCols(a, arg))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, m: Matrix) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), m.shape());
        let data = x.data.iter().zip(&m.data).map(|(p, q)| p * q).collect();
        let v = Matrix::from_vec(x.rows, x.cols, data);
        self.push(v, Op::MulConst(a, m))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size");
        let v = Matrix::from_vec(rows, cols, x.data.clone());
        self.push(v, Op::Reshape(a))
    }

    /// `out[t] = Σ_n w[t,n] · values[t·N + n]` for weights `T×N` and
    /// values `(T·N)×C`.
    pub fn block_weighted_sum(&mut self, w: Var, values: Var) -> Var {
        let (wm, vm) = (self.value(w), self.value(values));
        let (t, n) = wm.shape();
        assert_eq!(vm.rows, t * n, "block_weighted_sum rows");
        let c = vm.cols;
        let mut out = Matrix::zeros(t, c);
        for i in 0..t {
            for j in 0..n {
                let a = wm.get(i, j);
                if a == 0.0 {
                    continue;
                }
                let vrow = vm.row(i * n + j);
                for (o, b) in out.data[i * c..(i + 1) * c].iter_mut().zip(vrow) {
                    *o += a * b;
                }
            }
        }
        self.push(out, Op::BlockWeightedSum(w, values))
    }

    /// Reverse pass seeded with `(output, ∂L/∂output)` pairs; parameter
    /// gradients are added into `grads`.
    pub fn backward(&self, seeds: &[(Var, Matrix)], grads: &mut Gradients) {
        let mut g: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, s) in seeds {
            assert_eq!(self.value(*v).shape(), s.shape(), "seed shape");
            accum(&mut g[v.0], s);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            let out = match &node.value {
                Value::Owned(m) => m,
                Value::Param(id) => self.params.get(*id),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.grads[id.0].add_assign(&gi),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = gi.matmul_nt(bv);
                    let gb = av.matmul_tn(&gi);
                    accum(&mut g[a.0], &ga);
                    accum(&mut g[b.0], &gb);
                }
                Op::Add(a, b) => {
                    accum(&mut g[a.0], &gi);
                    accum(&mut g[b.0], &gi);
                }
                Op::Sub(a, b) => {
                    accum(&mut g[a.0], &gi);
                    accum(&mut g[b.0], &gi.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = hadamard(&gi, bv);
                    let gb = hadamard(&gi, av);
                    accum(&mut g[a.0], &ga);
                    accum(&mut g[b.0], &gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, gi.cols);
                    for r in 0..gi.rows {
                        for (o, b) in gr.data.iter_mut().zip(gi.row(r)) {
                            *o += b;
                        }
                    }
                    accum(&mut g[a.0], &gi);
                    accum(&mut g[row.0], &gr);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    let mut ga = gi.clone();
                    let mut gr = Matrix::zeros(1, gi.cols);
                    for r in 0..gi.rows {
                        for c in 0..gi.cols {
                            let gg = gi.get(r, c);
                            ga.data[r * gi.cols + c] = gg * rv.data[c];
                            gr.data[c] += gg * av.get(r, c);
                        }
                    }
                    accum(&mut g[a.0], &ga);
                    accum(&mut g[row.0], &gr);
                }
                Op::Affine(a, k) => {
                    let k = *k;
                    accum(&mut g[a.0], &gi.map(|x| k * x));
                }
                Op::Tanh(a) => {
                    let ga = Matrix {
                        rows: gi.rows,
                        cols: gi.cols,
                        data: gi
                            .data
                            .iter()
                            .zip(&out.data)
                            .map(|(gg, y)| gg * (1.0 - y * y))
                            .collect(),
                    };
                    accum(&mut g[a.0], &ga);
                }
                Op::Sigmoid(a) => {
                    let ga = Matrix {
                        rows: gi.rows,
                        cols: gi.cols,
                        data: gi
                            .data
                            .iter()
                            .zip(&out.data)
                            .map(|(gg, y)| gg * y * (1.0 - y))
                            .collect(),
                    };
                    accum(&mut g[a.0], &ga);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Matrix::zeros(gi.rows, gi.cols);
                    for r in 0..gi.rows {
                        let y = out.row(r);
                        let gr = gi.row(r);
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..gi.cols {
                            ga.data[r * gi.cols + c] = y[c] * (gr[c] - dot);
                        }
                    }
                    accum(&mut g[a.0], &ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols;
                        let mut gp = Matrix::zeros(gi.rows, w);
                        for r in 0..gi.rows {
                            gp.data[r * w..(r + 1) * w].copy_from_slice(&gi.row(r)[off..off + w]);
                        }
                        accum(&mut g[p.0], &gp);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).rows;
                        let gp = Matrix::from_vec(
                            h,
                            gi.cols,
                            gi.data[off * gi.cols..(off + h) * gi.cols].to_vec(),
                        );
                        accum(&mut g[p.0], &gp);
                        off += h;
                    }
                }
                Op::SliceCols(a, c0) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..gi.rows {
                        ga.data[r * av.cols + c0..r * av.cols + c0 + gi.cols]
                            .copy_from_slice(gi.row(r));
                    }
                    accum(&mut g[a.0], &ga);
                }
                Op::SliceRows(a, r0) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    ga.data[r0 * av.cols..(r0 + gi.rows) * av.cols].copy_from_slice(&gi.data);
                    accum(&mut g[a.0], &ga);
                }
                Op::Transpose(a) => accum(&mut g[a.0], &gi.transpose()),
                Op::SumRows(a) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        ga.data[r * av.cols..(r + 1) * av.cols].copy_from_slice(&gi.data);
                    }
                    accum(&mut g[a.0], &ga);
                }
                Op::SumCols(a) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        for c in 0..av.cols {
                            ga.data[r * av.cols + c] = gi.data[r];
                        }
                    }
                    accum(&mut g[a.0], &ga);
                }
                Op::MaxRows(a, arg) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (c, &r) in arg.iter().enumerate() {
                        ga.data[r * av.cols + c] = gi.data[c];
                    }
                    accum(&mut g[a.0], &ga);
                }
                Op::MaxCols(a, arg) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (r, &c) in arg.iter().enumerate() {
                        ga.data[r * av.cols + c] = gi.data[r];
                    }
                    accum(&mut g[a.0], &ga);
                }
                Op::MulConst(a, m) => accum(&mut g[a.0], &hadamard(&gi, m)),
                Op::Reshape(a) => {
                    let av = self.value(*a);
                    accum(
                        &mut g[a.0],
                        &Matrix::from_vec(av.rows, av.cols, gi.data.clone()),
                    );
                }
                Op::BlockWeightedSum(w, values) => {
                    let (wm, vm) = (self.value(*w), self.value(*values));
                    let (t, n) = wm.shape();
                    let c = vm.cols;
                    let mut gw = Matrix::zeros(t, n);
                    let mut gv = Matrix::zeros(vm.rows, c);
                    for i in 0..t {
                        let go = gi.row(i);
                        for j in 0..n {
                            let vrow = vm.row(i * n + j);
                            gw.data[i * n + j] = go.iter().zip(vrow).map(|(p, q)| p * q).sum();
                            let a = wm.get(i, j);
                            if a != 0.0 {
                                for (o, gg) in gv.data[(i * n + j) * c..(i * n + j + 1) * c]
                                    .iter_mut()
                                    .zip(go)
                                {
                                    *o += a * gg;
                                }
                            }
                        }
                    }
                    accum(&mut g[w.0], &gw);
                    accum(&mut g[values.0], &gv);
                }
            }
        }
    }
}

fn accum(slot: &mut Option<Matrix>, g: &Matrix) {
    match slot {
        Some(m) => m.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.shape(), b.shape());
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(p, q)| p * q).collect(),
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

/// Max-stabilised row softmax; masked-out entries are exactly zero.
pub fn softmax_rows_masked(x: &Matrix, mask: Option<&[bool]>) -> Matrix {
    let mut v = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let keep = |c: usize| mask.is_none_or(|m| m[r * x.cols + c]);
        let row = x.row(r);
        let mut mx = f64::NEG_INFINITY;
        for (c, &val) in row.iter().enumerate() {
            if keep(c) && val > mx {
                mx = val;
            }
        }
        if mx == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for (c, &val) in row.iter().enumerate() {
            if keep(c) {
                let e = (val - mx).exp();
                v.data[r * x.cols + c] = e;
                sum += e;
            }
        }
        for c in 0..x.cols {
            v.data[r * x.cols + c] /= sum;
        }
    }
    v
}
