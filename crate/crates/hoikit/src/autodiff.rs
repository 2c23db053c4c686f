//! Minimal reverse-mode automatic differentiation over 2-d f64 arrays.
//!
//! A [`Tape`] is an append-only arena of nodes; each operation records its
//! parents and enough context to push gradients backwards. One tape lives
//! for one forward/backward pass and is dropped afterwards, so values and
//! gradients never alias across steps.
//!
//! The op set is exactly what the toy detector and the loss stack need:
//! dense linear algebra, row-wise softmax/layernorm, elementwise
//! nonlinearities, gathers, and reductions. Everything is f64 so analytic
//! gradients can be checked against central finite differences at tight
//! tolerances.

use ndarray::{Array2, Axis};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// matrix + row vector broadcast over rows
    AddRow(Var, Var),
    /// matrix * row vector broadcast over rows
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Neg(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Max(Var, Var),
    Min(Var, Var),
    MaxConst(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    /// row-wise (x - mean) / sqrt(var + eps); affine is separate
    LayerNormRows(Var, f64),
    Transpose(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    /// picks (row, col) entries into a 1 x n row
    GatherElems(Var, Vec<(usize, usize)>),
    SumAll(Var),
    MeanAll(Var),
}

struct Node {
    value: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let grad = Array2::zeros(value.dim());
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + &self.value(row).row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) * &self.value(row).row(0);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid_stable);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &y| x.max(y));
        self.push(v, Op::Max(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &y| x.min(y));
        self.push(v, Op::Min(a, b))
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(c));
        self.push(v, Op::MaxConst(a, c))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows_value(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = row.iter().map(|&e| (e - max).exp()).sum::<f64>().ln() + max;
            row.mapv_inplace(|e| e - log_sum);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|e| (e - mean) * inv);
        }
        self.push(v, Op::LayerNormRows(a, eps))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self
            .value(a)
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        self.push(v, Op::SliceCols(a, start, len))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("column concat");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let src = self.value(a);
        let v = Array2::from_shape_fn((rows.len(), src.ncols()), |(i, j)| src[(rows[i], j)]);
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn gather_elems(&mut self, a: Var, coords: &[(usize, usize)]) -> Var {
        let src = self.value(a);
        let v = Array2::from_shape_fn((1, coords.len()), |(_, j)| src[coords[j]]);
        self.push(v, Op::GatherElems(a, coords.to_vec()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let v = Array2::from_elem((1, 1), self.value(a).sum() / n);
        self.push(v, Op::MeanAll(a))
    }

    /// Seed the output gradient with 1 and run the reverse sweep.
    /// `root` must be a 1x1 scalar node.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].value.dim(),
            (1, 1),
            "backward root must be scalar"
        );
        for node in self.nodes.iter_mut() {
            node.grad.fill(0.0);
        }
        self.nodes[root.0].grad[(0, 0)] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if self.nodes[idx].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let grad = self.nodes[idx].grad.clone();
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = grad.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&grad);
                    self.nodes[a.0].grad += &da;
                    self.nodes[b.0].grad += &db;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.nodes[a.0].grad += &grad;
                    self.nodes[b.0].grad += &grad;
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.nodes[a.0].grad += &grad;
                    self.nodes[b.0].grad -= &grad;
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = &grad * &self.nodes[b.0].value;
                    let db = &grad * &self.nodes[a.0].value;
                    self.nodes[a.0].grad += &da;
                    self.nodes[b.0].grad += &db;
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv = self.nodes[b.0].value.clone();
                    let av = self.nodes[a.0].value.clone();
                    let da = &grad / &bv;
                    let db = -&grad * &av / (&bv * &bv);
                    self.nodes[a.0].grad += &da;
                    self.nodes[b.0].grad += &db;
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    self.nodes[a.0].grad += &grad;
                    let summed = grad.sum_axis(Axis(0));
                    self.nodes[row.0].grad += &summed
                        .view()
                        .into_shape_with_order((1, summed.len()))
                        .expect("row shape");
                }
                Op::MulRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let rv = self.nodes[row.0].value.row(0).to_owned();
                    let da = &grad * &rv;
                    let db = (&grad * &self.nodes[a.0].value).sum_axis(Axis(0));
                    self.nodes[a.0].grad += &da;
                    self.nodes[row.0].grad += &db
                        .view()
                        .into_shape_with_order((1, db.len()))
                        .expect("row shape");
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    self.nodes[a.0].grad += &grad.mapv(|g| g * c);
                }
                Op::AddConst(a) => {
                    let a = *a;
                    self.nodes[a.0].grad += &grad;
                }
                Op::Neg(a) => {
                    let a = *a;
                    self.nodes[a.0].grad -= &grad;
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let y = self.nodes[idx].value.clone();
                    let da = &grad * &(y.mapv(|s| s * (1.0 - s)));
                    self.nodes[a.0].grad += &da;
                }
                Op::Relu(a) => {
                    let a = *a;
                    let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    self.nodes[a.0].grad += &(&grad * &mask);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let y = self.nodes[idx].value.clone();
                    self.nodes[a.0].grad += &(&grad * &y);
                }
                Op::Ln(a) => {
                    let a = *a;
                    let x = self.nodes[a.0].value.clone();
                    self.nodes[a.0].grad += &(&grad / &x);
                }
                Op::Abs(a) => {
                    let a = *a;
                    let sign = self.nodes[a.0].value.mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    self.nodes[a.0].grad += &(&grad * &sign);
                }
                Op::Max(a, b) => {
                    // subgradient: ties route to the first argument
                    let (a, b) = (*a, *b);
                    let mask = ndarray::Zip::from(&self.nodes[a.0].value)
                        .and(&self.nodes[b.0].value)
                        .map_collect(|&x, &y| if x >= y { 1.0 } else { 0.0 });
                    let da = &grad * &mask;
                    let db = &grad * &mask.mapv(|m| 1.0 - m);
                    self.nodes[a.0].grad += &da;
                    self.nodes[b.0].grad += &db;
                }
                Op::Min(a, b) => {
                    let (a, b) = (*a, *b);
                    let mask = ndarray::Zip::from(&self.nodes[a.0].value)
                        .and(&self.nodes[b.0].value)
                        .map_collect(|&x, &y| if x <= y { 1.0 } else { 0.0 });
                    let da = &grad * &mask;
                    let db = &grad * &mask.mapv(|m| 1.0 - m);
                    self.nodes[a.0].grad += &da;
                    self.nodes[b.0].grad += &db;
                }
                Op::MaxConst(a, c) => {
                    let (a, c) = (*a, *c);
                    let mask = self.nodes[a.0].value.mapv(|x| if x > c { 1.0 } else { 0.0 });
                    self.nodes[a.0].grad += &(&grad * &mask);
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    let y = self.nodes[idx].value.clone();
                    let mut da = &grad * &y;
                    for (mut row, (grow, yrow)) in da
                        .rows_mut()
                        .into_iter()
                        .zip(grad.rows().into_iter().zip(y.rows()))
                    {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(g, s)| g * s).sum();
                        for (d, s) in row.iter_mut().zip(yrow.iter()) {
                            *d -= dot * s;
                        }
                    }
                    self.nodes[a.0].grad += &da;
                }
                Op::LogSoftmaxRows(a) => {
                    let a = *a;
                    let y = self.nodes[idx].value.mapv(f64::exp);
                    let mut da = grad.clone();
                    for (mut row, (grow, prow)) in da
                        .rows_mut()
                        .into_iter()
                        .zip(grad.rows().into_iter().zip(y.rows()))
                    {
                        let gsum: f64 = grow.sum();
                        for (d, p) in row.iter_mut().zip(prow.iter()) {
                            *d -= gsum * p;
                        }
                    }
                    self.nodes[a.0].grad += &da;
                }
                Op::LayerNormRows(a, eps) => {
                    let (a, eps) = (*a, *eps);
                    let x = self.nodes[a.0].value.clone();
                    let y = self.nodes[idx].value.clone();
                    let mut da = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let n = x.ncols() as f64;
                        let row = x.row(i);
                        let mean = row.sum() / n;
                        let var =
                            row.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g = grad.row(i);
                        let yv = y.row(i);
                        let g_mean: f64 = g.sum() / n;
                        let gy_mean: f64 =
                            g.iter().zip(yv.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..x.ncols() {
                            da[(i, j)] = inv * (g[j] - g_mean - yv[j] * gy_mean);
                        }
                    }
                    self.nodes[a.0].grad += &da;
                }
                Op::Transpose(a) => {
                    let a = *a;
                    self.nodes[a.0].grad += &grad.t();
                }
                Op::SliceCols(a, start, len) => {
                    let (a, start, len) = (*a, *start, *len);
                    let mut da = self.nodes[a.0].grad.clone();
                    da.slice_mut(ndarray::s![.., start..start + len])
                        .zip_mut_with(&grad, |d, &g| *d += g);
                    self.nodes[a.0].grad = da;
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0usize;
                    for part in parts {
                        let w = self.nodes[part.0].value.ncols();
                        let g = grad.slice(ndarray::s![.., offset..offset + w]).to_owned();
                        self.nodes[part.0].grad += &g;
                        offset += w;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let a = *a;
                    let rows = rows.clone();
                    for (i, &r) in rows.iter().enumerate() {
                        let g = grad.row(i).to_owned();
                        let mut dst = self.nodes[a.0].grad.row_mut(r);
                        dst += &g;
                    }
                }
                Op::GatherElems(a, coords) => {
                    let a = *a;
                    let coords = coords.clone();
                    for (j, &(r, c)) in coords.iter().enumerate() {
                        self.nodes[a.0].grad[(r, c)] += grad[(0, j)];
                    }
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let g = grad[(0, 0)];
                    self.nodes[a.0].grad += g;
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let n = self.nodes[a.0].value.len() as f64;
                    let g = grad[(0, 0)] / n;
                    self.nodes[a.0].grad += g;
                }
            }
        }
    }
}

fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows_value(x: &Array2<f64>) -> Array2<f64> {
    let mut v = x.clone();
    for mut row in v.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|e| (e - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    v
}

pub fn sigmoid_value(x: f64) -> f64 {
    sigmoid_stable(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of f at x0.
    fn numerical_grad(
        x0: &Array2<f64>,
        f: &dyn Fn(&Array2<f64>) -> f64,
        eps: f64,
    ) -> Array2<f64> {
        let mut g = Array2::zeros(x0.dim());
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let mut plus = x0.clone();
            let mut minus = x0.clone();
            plus[(r, c)] += eps;
            minus[(r, c)] -= eps;
            g[(r, c)] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        g
    }

    fn assert_grad_close(analytic: &Array2<f64>, numeric: &Array2<f64>, tol: f64) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            assert!(
                (a - n).abs() / denom <= tol,
                "gradient mismatch: analytic {a} vs numeric {n}"
            );
        }
    }

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Every differentiable op against finite differences.
    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        type Builder = (&'static str, Box<dyn Fn(&mut Tape, Var, Var) -> Var>);
        let ops: Vec<Builder> = vec![
            ("matmul", Box::new(|t, a, b| t.matmul(a, b))),
            ("add", Box::new(|t, a, b| t.add(a, b))),
            ("sub", Box::new(|t, a, b| t.sub(a, b))),
            ("mul", Box::new(|t, a, b| t.mul(a, b))),
            ("max", Box::new(|t, a, b| t.max(a, b))),
            ("min", Box::new(|t, a, b| t.min(a, b))),
            ("sigmoid", Box::new(|t, a, _| t.sigmoid(a))),
            ("relu", Box::new(|t, a, _| t.relu(a))),
            ("exp", Box::new(|t, a, _| t.exp(a))),
            ("abs", Box::new(|t, a, _| t.abs(a))),
            ("softmax", Box::new(|t, a, _| t.softmax_rows(a))),
            ("log_softmax", Box::new(|t, a, _| t.log_softmax_rows(a))),
            ("layernorm", Box::new(|t, a, _| t.layer_norm_rows(a, 1e-5))),
            ("transpose", Box::new(|t, a, _| t.transpose(a))),
            ("scale", Box::new(|t, a, _| t.scale(a, 1.7))),
            ("neg", Box::new(|t, a, _| t.neg(a))),
            ("slice", Box::new(|t, a, _| t.slice_cols(a, 1, 2))),
            ("gather_rows", Box::new(|t, a, _| t.gather_rows(a, &[2, 0, 2]))),
            (
                "gather_elems",
                Box::new(|t, a, _| t.gather_elems(a, &[(0, 1), (2, 3), (0, 1)])),
            ),
        ];
        for (name, build) in &ops {
            let a0 = random(&mut rng, 3, 4);
            let b0 = random(&mut rng, if *name == "matmul" { 4 } else { 3 }, 4);
            // weight the output so the scalar reduction has non-uniform grads
            let w = random(&mut rng, 64, 1); // oversized; sliced on use

            let eval = |a_in: &Array2<f64>, b_in: &Array2<f64>| -> (f64, Tape, Var, Var, Var) {
                let mut t = Tape::new();
                let a = t.leaf(a_in.clone());
                let b = t.leaf(b_in.clone());
                let out = build(&mut t, a, b);
                let dims = t.value(out).dim();
                let wmat = Array2::from_shape_fn(dims, |(i, j)| w[(i * dims.1 + j, 0)]);
                let wleaf = t.leaf(wmat);
                let weighted = t.mul(out, wleaf);
                let loss = t.sum_all(weighted);
                (t.scalar(loss), t, a, b, loss)
            };

            let (_, mut tape, a, b, root) = eval(&a0, &b0);
            tape.backward(root);

            let fa = |x: &Array2<f64>| eval(x, &b0).0;
            let na = numerical_grad(&a0, &fa, 1e-6);
            assert_grad_close(tape.grad(a), &na, 1e-5);

            if matches!(*name, "matmul" | "add" | "sub" | "mul" | "max" | "min") {
                let fb = |x: &Array2<f64>| eval(&a0, x).0;
                let nb = numerical_grad(&b0, &fb, 1e-6);
                assert_grad_close(tape.grad(b), &nb, 1e-5);
            }
        }
    }

    #[test]
    fn broadcast_row_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a0 = random(&mut rng, 4, 3);
        let r0 = random(&mut rng, 1, 3);
        let eval = |a_in: &Array2<f64>, r_in: &Array2<f64>| {
            let mut t = Tape::new();
            let a = t.leaf(a_in.clone());
            let r = t.leaf(r_in.clone());
            let x = t.add_row(a, r);
            let y = t.mul_row(x, r);
            let s = t.sigmoid(y);
            let loss = t.mean_all(s);
            (t.scalar(loss), t, a, r, loss)
        };
        let (_, mut tape, a, r, loss) = eval(&a0, &r0);
        tape.backward(loss);
        let na = numerical_grad(&a0, &|x| eval(x, &r0).0, 1e-6);
        let nr = numerical_grad(&r0, &|x| eval(&a0, x).0, 1e-6);
        assert_grad_close(tape.grad(a), &na, 1e-5);
        assert_grad_close(tape.grad(r), &nr, 1e-5);
    }

    #[test]
    fn concat_div_ln_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a0 = random(&mut rng, 2, 3).mapv(|x| x.abs() + 0.5);
        let b0 = random(&mut rng, 2, 2).mapv(|x| x.abs() + 0.5);
        let eval = |a_in: &Array2<f64>, b_in: &Array2<f64>| {
            let mut t = Tape::new();
            let a = t.leaf(a_in.clone());
            let b = t.leaf(b_in.clone());
            let c = t.concat_cols(&[a, b, a]);
            let d = t.add_const(c, 2.0);
            let e = t.div(c, d);
            let f = t.ln(d);
            let g = t.add(e, f);
            let loss = t.sum_all(g);
            (t.scalar(loss), t, a, b, loss)
        };
        let (_, mut tape, a, b, loss) = eval(&a0, &b0);
        tape.backward(loss);
        let na = numerical_grad(&a0, &|x| eval(x, &b0).0, 1e-6);
        let nb = numerical_grad(&b0, &|x| eval(&a0, x).0, 1e-6);
        assert_grad_close(tape.grad(a), &na, 1e-5);
        assert_grad_close(tape.grad(b), &nb, 1e-5);
    }

    #[test]
    fn values_are_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let a = t.leaf(Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64 / 7.0));
            let s = t.softmax_rows(a);
            let l = t.mean_all(s);
            t.scalar(l)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
