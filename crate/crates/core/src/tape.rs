//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] is an append-only arena of nodes; every operation records
//! its inputs and value eagerly, and [`Tape::backward_seeded`] walks the
//! arena in reverse to accumulate gradients. All compute is 64-bit so
//! analytic gradients can be validated against central finite
//! differences tightly.
//!
//! Leaves can share storage with parameter arrays (`ArcArray`), so
//! binding a large parameter to a tape is a refcount bump, not a copy.

use ndarray::{concatenate, s, ArcArray, Array2, ArrayView2, Axis, Ix2};

use crate::special::digamma;

/// Shared 2-D matrix; cheap to clone.
pub type SharedMatrix = ArcArray<f64, Ix2>;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    DiagExtract(usize),
    Ln(usize),
    Ln1p(usize),
    Exp(usize),
    Softplus(usize),
    Gelu(usize),
    LnGamma(usize),
    SumAll(usize),
    MeanAll(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
    GatherRows(usize, Vec<usize>),
    L2NormRows(usize),
    LayerNormRows(usize),
}

struct Node {
    value: SharedMatrix,
    op: Op,
}

/// Append-only computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.push_shared(value.into_shared(), op)
    }

    fn push_shared(&mut self, value: SharedMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    pub fn value_owned(&self, v: Var) -> Array2<f64> {
        self.nodes[v.0].value.to_owned()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = &self.nodes[v.0].value;
        assert_eq!(m.dim(), (1, 1), "scalar_value on non-scalar node");
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    // ---- construction -------------------------------------------------

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf sharing storage with the caller (no copy).
    pub fn leaf_shared(&mut self, value: SharedMatrix) -> Var {
        self.push_shared(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn row_leaf(&mut self, row: &[f64]) -> Var {
        self.leaf(Array2::from_shape_vec((1, row.len()), row.to_vec()).expect("row leaf"))
    }

    // ---- arithmetic ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "div shape mismatch");
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(v, Op::Div(a.0, b.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul shape mismatch: {ar}x{ac} . {br}x{bc}");
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    /// Add a 1×d row to every row of an n×d matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "add_row shape mismatch");
        let v = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    /// Multiply every row of an n×d matrix by a 1×d row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "mul_row shape mismatch");
        let v = &self.nodes[a.0].value * &self.nodes[row.0].value;
        self.push(v, Op::MulRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(v, Op::AddScalar(a.0, c))
    }

    // ---- nonlinearities --------------------------------------------------

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows_value(&self.nodes[a.0].value.view());
        self.push(v, Op::SoftmaxRows(a.0))
    }

    /// Row-wise log-sum-exp: n×d → n×1.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let (n, _) = x.dim();
        let mut out = Array2::zeros((n, 1));
        for (i, row) in x.outer_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            out[[i, 0]] = m + s.ln();
        }
        self.push(out, Op::LogSumExpRows(a.0))
    }

    /// Diagonal of a square matrix as n×1.
    pub fn diag_extract(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let (n, m) = x.dim();
        assert_eq!(n, m, "diag_extract requires a square matrix");
        let mut out = Array2::zeros((n, 1));
        for i in 0..n {
            out[[i, 0]] = x[[i, i]];
        }
        self.push(out, Op::DiagExtract(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::ln);
        self.push(v, Op::Ln(a.0))
    }

    pub fn ln1p(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::ln_1p);
        self.push(v, Op::Ln1p(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(v, Op::Exp(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(softplus);
        self.push(v, Op::Softplus(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(gelu);
        self.push(v, Op::Gelu(a.0))
    }

    pub fn ln_gamma(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(crate::special::ln_gamma);
        self.push(v, Op::LnGamma(a.0))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push(v, Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(v, Op::MeanAll(a.0))
    }

    // ---- structure -------------------------------------------------------

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows");
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols");
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    /// Rows [start, end) of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (n, _) = self.shape(a);
        assert!(start < end && end <= n, "slice_rows out of range");
        let v = self.nodes[a.0].value.slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a.0, start, end))
    }

    /// Columns [start, end) of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (_, d) = self.shape(a);
        assert!(start < end && end <= d, "slice_cols out of range");
        let v = self.nodes[a.0].value.slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a.0, start, end))
    }

    /// Gather rows by index (embedding lookup); indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let x = &self.nodes[a.0].value;
        let (n, d) = x.dim();
        let mut out = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            assert!(i < n, "gather_rows index {i} out of range {n}");
            out.row_mut(r).assign(&x.row(i));
        }
        self.push(out, Op::GatherRows(a.0, indices.to_vec()))
    }

    /// Row-wise L2 normalization (smooth: divides by sqrt(Σx² + ε)).
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            let n = (row.iter().map(|v| v * v).sum::<f64>() + L2_EPS).sqrt();
            row.mapv_inplace(|v| v / n);
        }
        self.push(out, Op::L2NormRows(a.0))
    }

    /// Row-wise standardization (zero mean, unit variance per row).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let d = x.ncols() as f64;
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let s = (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) / s);
        }
        self.push(out, Op::LayerNormRows(a.0))
    }

    // ---- backward ---------------------------------------------------------

    /// Backpropagate from a single 1×1 root with seed 1.
    pub fn backward(&mut self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let seed = Array2::from_elem((1, 1), 1.0);
        self.backward_seeded(&[(root, seed)])
    }

    /// Backpropagate from several roots with explicit seed gradients.
    pub fn backward_seeded(&mut self, seeds: &[(Var, Array2<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, seed) in seeds {
            assert_eq!(self.shape(*v), seed.dim(), "seed shape mismatch");
            accumulate(&mut grads[v.0], seed.view());
        }

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Reinstall: callers may read gradients of interior nodes.
            let gv = g.view();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], gv);
                    accumulate(&mut grads[*b], gv);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*a], gv);
                    accumulate_scaled(&mut grads[*b], gv, -1.0);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[*b].value;
                    let db = &g * &self.nodes[*a].value;
                    accumulate(&mut grads[*a], da.view());
                    accumulate(&mut grads[*b], db.view());
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[*b].value;
                    let da = &g / bv;
                    let y = &self.nodes[i].value;
                    let db = -(&g * y) / bv;
                    accumulate(&mut grads[*a], da.view());
                    accumulate(&mut grads[*b], db.view());
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[*b].value.t());
                    let db = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads[*a], da.view());
                    accumulate(&mut grads[*b], db.view());
                }
                Op::Transpose(a) => {
                    let da = g.t().to_owned();
                    accumulate(&mut grads[*a], da.view());
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads[*a], gv);
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[*row], db.view());
                }
                Op::MulRow(a, row) => {
                    let da = &g * &self.nodes[*row].value;
                    let db = (&g * &self.nodes[*a].value).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[*a], da.view());
                    accumulate(&mut grads[*row], db.view());
                }
                Op::Scale(a, c) => {
                    accumulate_scaled(&mut grads[*a], gv, *c);
                }
                Op::AddScalar(a, _) => {
                    accumulate(&mut grads[*a], gv);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let mut da = &g * y;
                    for (mut drow, yrow) in da.outer_iter_mut().zip(y.outer_iter()) {
                        let dot: f64 = drow.sum();
                        drow.zip_mut_with(&yrow, |d, &yv| *d -= dot * yv);
                    }
                    accumulate(&mut grads[*a], da.view());
                }
                Op::LogSumExpRows(a) => {
                    let sm = softmax_rows_value(&self.nodes[*a].value.view());
                    let mut da = sm;
                    for (mut row, gv) in da.outer_iter_mut().zip(g.outer_iter()) {
                        let gi = gv[0];
                        row.mapv_inplace(|v| v * gi);
                    }
                    accumulate(&mut grads[*a], da.view());
                }
                Op::DiagExtract(a) => {
                    let n = g.nrows();
                    let mut da = Array2::zeros((n, n));
                    for r in 0..n {
                        da[[r, r]] = g[[r, 0]];
                    }
                    accumulate(&mut grads[*a], da.view());
                }
                Op::Ln(a) => {
                    let da = &g / &self.nodes[*a].value;
                    accumulate(&mut grads[*a], da.view());
                }
                Op::Ln1p(a) => {
                    let da = &g / &self.nodes[*a].value.mapv(|x| 1.0 + x);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::Exp(a) => {
                    let da = &g * &self.nodes[i].value;
                    accumulate(&mut grads[*a], da.view());
                }
                Op::Softplus(a) => {
                    let da = &g * &self.nodes[*a].value.mapv(sigmoid);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::Gelu(a) => {
                    let da = &g * &self.nodes[*a].value.mapv(gelu_grad);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::LnGamma(a) => {
                    let da = &g * &self.nodes[*a].value.mapv(digamma);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::SumAll(a) => {
                    let c = g[[0, 0]];
                    let shape = self.nodes[*a].value.dim();
                    let da = Array2::from_elem(shape, c);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::MeanAll(a) => {
                    let shape = self.nodes[*a].value.dim();
                    let c = g[[0, 0]] / (shape.0 * shape.1) as f64;
                    let da = Array2::from_elem(shape, c);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.nrows();
                        let slice = g.slice(s![offset..offset + rows, ..]);
                        accumulate(&mut grads[p], slice);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.nodes[p].value.ncols();
                        let slice = g.slice(s![.., offset..offset + cols]);
                        accumulate(&mut grads[p], slice);
                        offset += cols;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let shape = self.nodes[*a].value.dim();
                    let mut da = Array2::zeros(shape);
                    da.slice_mut(s![*start..*end, ..]).assign(&g);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::SliceCols(a, start, end) => {
                    let shape = self.nodes[*a].value.dim();
                    let mut da = Array2::zeros(shape);
                    da.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads[*a], da.view());
                }
                Op::GatherRows(a, indices) => {
                    let shape = self.nodes[*a].value.dim();
                    let mut da = Array2::zeros(shape);
                    for (r, &idx) in indices.iter().enumerate() {
                        let mut dst = da.row_mut(idx);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads[*a], da.view());
                }
                Op::L2NormRows(a) => {
                    let x = &self.nodes[*a].value;
                    let mut da = Array2::zeros(x.dim());
                    for ((xrow, grow), mut drow) in
                        x.outer_iter().zip(g.outer_iter()).zip(da.outer_iter_mut())
                    {
                        let nsq = xrow.iter().map(|v| v * v).sum::<f64>() + L2_EPS;
                        let n = nsq.sqrt();
                        let dot: f64 = xrow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        for ((d, &xv), &gvv) in drow.iter_mut().zip(xrow.iter()).zip(grow.iter()) {
                            *d = gvv / n - xv * dot / (nsq * n);
                        }
                    }
                    accumulate(&mut grads[*a], da.view());
                }
                Op::LayerNormRows(a) => {
                    let x = &self.nodes[*a].value;
                    let y = &self.nodes[i].value;
                    let d = x.ncols() as f64;
                    let mut da = Array2::zeros(x.dim());
                    for (((xrow, yrow), grow), mut drow) in x
                        .outer_iter()
                        .zip(y.outer_iter())
                        .zip(g.outer_iter())
                        .zip(da.outer_iter_mut())
                    {
                        let mean = xrow.sum() / d;
                        let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let s = (var + LN_EPS).sqrt();
                        let g_mean = grow.sum() / d;
                        let gy_mean = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
                        for ((dv, &gvv), &yv) in drow.iter_mut().zip(grow.iter()).zip(yrow.iter()) {
                            *dv = (gvv - g_mean - yv * gy_mean) / s;
                        }
                    }
                    accumulate(&mut grads[*a], da.view());
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// Gradient results of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, zeros if it never received one.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Array2<f64> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.shape(v)),
        }
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: ArrayView2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g.to_owned()),
    }
}

fn accumulate_scaled(slot: &mut Option<Array2<f64>>, g: ArrayView2<f64>, c: f64) {
    match slot {
        Some(acc) => acc.zip_mut_with(&g, |a, &b| *a += c * b),
        None => *slot = Some(g.mapv(|x| x * c)),
    }
}

fn softmax_rows_value(x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub(crate) fn softplus(x: f64) -> f64 {
    // max(x,0) + ln(1+e^{-|x|}) never overflows.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/π)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize), seed: u64, lo: f64, hi: f64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(shape, |_| rng.gen_range(lo..hi))
    }

    /// Scalar probe: loss = mean(out ⊙ probe) with a fixed random probe, so
    /// every output entry contributes asymmetrically.
    fn probe_loss(tape: &mut Tape, out: Var, seed: u64) -> Var {
        let probe = tape.leaf(random(tape.shape(out), seed, -1.0, 1.0));
        let prod = tape.mul(out, probe);
        tape.mean_all(prod)
    }

    /// Check ∂loss/∂input against central finite differences for a unary
    /// graph builder.
    fn check_unary<F>(build: F, input: Array2<f64>, tol: f64)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let analytic = {
            let mut tape = Tape::new();
            let x = tape.leaf(input.clone());
            let out = build(&mut tape, x);
            let loss = probe_loss(&mut tape, out, 99);
            let grads = tape.backward(loss);
            grads.get_or_zeros(&tape, x)
        };
        let mut max_err: f64 = 0.0;
        let eval = |m: &Array2<f64>| -> f64 {
            let mut tape = Tape::new();
            let x = tape.leaf(m.clone());
            let out = build(&mut tape, x);
            let loss = probe_loss(&mut tape, out, 99);
            tape.scalar_value(loss)
        };
        for idx in 0..input.len() {
            let (r, c) = (idx / input.ncols(), idx % input.ncols());
            let h = 1e-6 * input[[r, c]].abs().max(1.0);
            let mut plus = input.clone();
            plus[[r, c]] += h;
            let mut minus = input.clone();
            minus[[r, c]] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[[r, c]];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            max_err = max_err.max(err);
        }
        assert!(max_err < tol, "max rel err {max_err} over tolerance {tol}");
    }

    #[test]
    fn unary_op_gradients_match_finite_differences() {
        let x = random((3, 4), 1, 0.2, 2.0); // positive domain covers ln/ln_gamma
        check_unary(|t, x| t.ln(x), x.clone(), 1e-6);
        check_unary(|t, x| t.ln1p(x), x.clone(), 1e-6);
        check_unary(|t, x| t.exp(x), x.clone(), 1e-6);
        check_unary(|t, x| t.softplus(x), x.clone(), 1e-6);
        check_unary(|t, x| t.gelu(x), x.clone(), 1e-6);
        check_unary(|t, x| t.ln_gamma(x), x.clone(), 1e-5);
        check_unary(|t, x| t.softmax_rows(x), x.clone(), 1e-6);
        check_unary(|t, x| t.log_sum_exp_rows(x), x.clone(), 1e-6);
        check_unary(|t, x| t.l2_normalize_rows(x), x.clone(), 1e-6);
        check_unary(|t, x| t.layer_norm_rows(x), x.clone(), 1e-5);
        check_unary(|t, x| t.transpose(x), x.clone(), 1e-6);
        check_unary(|t, x| t.scale(x, -2.5), x.clone(), 1e-6);
        check_unary(|t, x| t.add_scalar(x, 3.0), x.clone(), 1e-6);
        check_unary(|t, x| t.sum_all(x), x.clone(), 1e-6);
        check_unary(|t, x| t.mean_all(x), x.clone(), 1e-6);
        check_unary(|t, x| t.slice_rows(x, 1, 3), x.clone(), 1e-6);
        check_unary(|t, x| t.slice_cols(x, 0, 2), x.clone(), 1e-6);
        check_unary(|t, x| t.gather_rows(x, &[2, 0, 2, 1]), x.clone(), 1e-6);
        let sq = random((4, 4), 2, -1.0, 1.0);
        check_unary(|t, x| t.diag_extract(x), sq, 1e-6);
        let signed = random((3, 4), 3, -2.0, 2.0);
        check_unary(|t, x| t.gelu(x), signed.clone(), 1e-6);
        check_unary(|t, x| t.softmax_rows(x), signed, 1e-6);
    }

    #[test]
    fn binary_op_gradients_match_finite_differences() {
        // Pack both operands into one leaf via slicing so check_unary covers
        // gradients of each side, including through matmul.
        let xy = random((6, 4), 4, 0.5, 1.5);
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 3);
                let b = t.slice_rows(x, 3, 6);
                t.add(a, b)
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 3);
                let b = t.slice_rows(x, 3, 6);
                t.sub(a, b)
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 3);
                let b = t.slice_rows(x, 3, 6);
                t.mul(a, b)
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 3);
                let b = t.slice_rows(x, 3, 6);
                t.div(a, b)
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 3);
                let b = t.slice_rows(x, 3, 6);
                let bt = t.transpose(b);
                t.matmul(a, bt)
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 5);
                let row = t.slice_rows(x, 5, 6);
                t.add_row(a, row)
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 5);
                let row = t.slice_rows(x, 5, 6);
                t.mul_row(a, row)
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_rows(x, 0, 2);
                let b = t.slice_rows(x, 2, 5);
                let c = t.slice_rows(x, 5, 6);
                t.concat_rows(&[a, b, c])
            },
            xy.clone(),
            1e-6,
        );
        check_unary(
            |t, x| {
                let a = t.slice_cols(x, 0, 1);
                let b = t.slice_cols(x, 1, 4);
                t.concat_cols(&[b, a])
            },
            xy,
            1e-6,
        );
    }

    #[test]
    fn reused_node_accumulates_gradient() {
        // loss = mean(x ⊙ x): grad = 2x/len
        let x0 = random((2, 3), 7, -1.0, 1.0);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let prod = tape.mul(x, x);
        let loss = tape.mean_all(prod);
        let grads = tape.backward(loss);
        let g = grads.get(x).unwrap();
        let expected = x0.mapv(|v| 2.0 * v / 6.0);
        for (a, b) in g.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_backward_combines_roots() {
        // Two roots with distinct seeds behave like d(α·f + β·g).
        let x0 = random((2, 2), 8, 0.5, 1.5);
        let run = |alpha: f64, beta: f64| -> Array2<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let f = tape.sum_all(x);
            let e = tape.exp(x);
            let g = tape.mean_all(e);
            let grads = tape.backward_seeded(&[
                (f, Array2::from_elem((1, 1), alpha)),
                (g, Array2::from_elem((1, 1), beta)),
            ]);
            grads.get(x).unwrap().clone()
        };
        let combined = run(2.0, 3.0);
        let fa = run(1.0, 0.0);
        let fb = run(0.0, 1.0);
        for ((c, a), b) in combined.iter().zip(fa.iter()).zip(fb.iter()) {
            assert!((c - (2.0 * a + 3.0 * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_leaf_does_not_copy() {
        let arr = random((4, 4), 9, 0.0, 1.0).into_shared();
        let mut tape = Tape::new();
        let v = tape.leaf_shared(arr.clone());
        assert_eq!(tape.value(v), arr.view());
    }
}
