//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse and accumulates gradients
//! for every node that depends on a trainable leaf.

use ndarray::{s, Array2, Axis, Zip};

use crate::params::Params;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    OverwriteRows { base: Var, src: Var, rows: Vec<usize> },
    MeanRows(Var),
    SumCols(Var),
    BroadcastRows(Var),
    ShiftRows(Var, isize),
    MaxPoolRows(Var, Vec<Vec<usize>>),
    MeanAll(Var),
    SumAll(Var),
}

/// Trainable leaves created by [`Graph::bind`], one per parameter matrix.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Mat>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Mat>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.ops.clear();
        self.requires_grad.clear();
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    fn derived(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.requires_grad[p.0]);
        self.push(value, op, rg)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Trainable leaves for every matrix in `params`.
    pub fn bind(&mut self, params: &Params) -> Bound {
        Bound {
            vars: params.values().iter().map(|m| self.input(m.clone())).collect(),
        }
    }

    /// Frozen copies of `params`: gradients flow through them to their
    /// inputs but not into the parameters.
    pub fn bind_frozen(&mut self, params: &Params) -> Bound {
        Bound {
            vars: params.values().iter().map(|m| self.constant(m.clone())).collect(),
        }
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of each bound leaf, zeros where the loss does not depend on it.
    pub fn grads_of(&self, bound: &Bound) -> Vec<Mat> {
        bound
            .vars
            .iter()
            .map(|&v| match self.grad(v) {
                Some(g) => g.clone(),
                None => Mat::zeros(self.values[v.0].raw_dim()),
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].dot(&self.values[b.0]);
        self.derived(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] + &self.values[b.0];
        self.derived(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] - &self.values[b.0];
        self.derived(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] * &self.values[b.0];
        self.derived(v, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `1×n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.values[bias.0].nrows(), 1, "bias must be a single row");
        let v = &self.values[a.0] + &self.values[bias.0];
        self.derived(v, Op::AddRow(a, bias), &[a, bias])
    }

    /// Multiplies row `i` of `a` by `col[i, 0]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.values[col.0].ncols(), 1, "column factor must have one column");
        let v = &self.values[a.0] * &self.values[col.0];
        self.derived(v, Op::MulCol(a, col), &[a, col])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.values[a.0] * c;
        self.derived(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = &self.values[a.0] + c;
        self.derived(v, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(|x| x.max(0.0));
        self.derived(v, Op::Relu(a), &[a])
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.derived(v, Op::Elu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(sigmoid);
        self.derived(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(f64::tanh);
        self.derived(v, Op::Tanh(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(|x| x * x);
        self.derived(v, Op::Square(a), &[a])
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let mut v = self.values[a.0].clone();
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            if causal {
                let n = row.len();
                row.slice_mut(s![(i + 1).min(n)..]).fill(f64::NEG_INFINITY);
            }
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.derived(v, Op::SoftmaxRows(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.values[a.0].t().to_owned();
        self.derived(v, Op::Transpose(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.derived(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.values[a.0].slice(s![.., start..end]).to_owned();
        self.derived(v, Op::SliceCols(a, start), &[a])
    }

    /// Rows of `a` listed in `rows`, in that order.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.values[a.0].select(Axis(0), rows);
        self.derived(v, Op::GatherRows(a, rows.to_vec()), &[a])
    }

    /// `base` with row `rows[k]` replaced by row `k` of `src`.
    pub fn overwrite_rows(&mut self, base: Var, src: Var, rows: &[usize]) -> Var {
        let mut v = self.values[base.0].clone();
        for (k, &r) in rows.iter().enumerate() {
            v.row_mut(r).assign(&self.values[src.0].row(k));
        }
        self.derived(
            v,
            Op::OverwriteRows {
                base,
                src,
                rows: rows.to_vec(),
            },
            &[base, src],
        )
    }

    /// Column means as a `1×n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.derived(v, Op::MeanRows(a), &[a])
    }

    /// Row sums as an `m×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.values[a.0].sum_axis(Axis(1)).insert_axis(Axis(1));
        self.derived(v, Op::SumCols(a), &[a])
    }

    /// Repeats the `1×n` row `a` into `rows` rows.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let n = self.values[a.0].ncols();
        let v = self.values[a.0].broadcast((rows, n)).expect("single row").to_owned();
        self.derived(v, Op::BroadcastRows(a), &[a])
    }

    /// `out[i] = a[i − k]`, zero outside the range.
    pub fn shift_rows(&mut self, a: Var, k: isize) -> Var {
        let v = shifted(&self.values[a.0], k);
        self.derived(v, Op::ShiftRows(a, k), &[a])
    }

    /// Max pooling over rows with window 3, stride 2 and padding 1, giving
    /// `⌈L/2⌉` rows.
    pub fn max_pool_rows(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let (l, n) = x.dim();
        let out_len = l.div_ceil(2);
        let mut v = Mat::zeros((out_len, n));
        let mut arg = vec![vec![0usize; n]; out_len];
        for i in 0..out_len {
            let lo = (2 * i).saturating_sub(1);
            let hi = (2 * i + 1).min(l - 1);
            for c in 0..n {
                let mut best = lo;
                for r in lo + 1..=hi {
                    if x[[r, c]] > x[[best, c]] {
                        best = r;
                    }
                }
                v[[i, c]] = x[[best, c]];
                arg[i][c] = best;
            }
        }
        self.derived(v, Op::MaxPoolRows(a, arg), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let v = Mat::from_elem((1, 1), x.sum() / x.len() as f64);
        self.derived(v, Op::MeanAll(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.values[a.0].sum());
        self.derived(v, Op::SumAll(a), &[a])
    }

    /// Mean squared difference to a constant target.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let t = self.constant(target);
        let d = self.sub(a, t);
        let sq = self.square(d);
        self.mean_all(sq)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.values[loss.0].dim(), (1, 1), "loss must be a scalar");
        self.grads = vec![None; self.values.len()];
        self.grads[loss.0] = Some(Mat::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn acc(&mut self, v: Var, g: Mat) {
        if !self.requires_grad[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    fn propagate(&mut self, i: usize, g: &Mat) {
        let op = self.ops[i].clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let ga = g.dot(&self.values[b.0].t());
                    self.acc(a, ga);
                }
                if self.needs(b) {
                    let gb = self.values[a.0].t().dot(g);
                    self.acc(b, gb);
                }
            }
            Op::Add(a, b) => {
                self.acc(a, g.clone());
                self.acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(a, g.clone());
                self.acc(b, -g);
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let ga = g * &self.values[b.0];
                    self.acc(a, ga);
                }
                if self.needs(b) {
                    let gb = g * &self.values[a.0];
                    self.acc(b, gb);
                }
            }
            Op::AddRow(a, bias) => {
                self.acc(a, g.clone());
                if self.needs(bias) {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(bias, gb);
                }
            }
            Op::MulCol(a, col) => {
                if self.needs(a) {
                    let ga = g * &self.values[col.0];
                    self.acc(a, ga);
                }
                if self.needs(col) {
                    let gc = (g * &self.values[a.0]).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.acc(col, gc);
                }
            }
            Op::Scale(a, c) => self.acc(a, g * c),
            Op::AddScalar(a) => self.acc(a, g.clone()),
            Op::Relu(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(&self.values[a.0]).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                self.acc(a, ga);
            }
            Op::Elu(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(&self.values[a.0]).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= x.exp();
                    }
                });
                self.acc(a, ga);
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(&self.values[i]).for_each(|d, &y| *d *= y * (1.0 - y));
                self.acc(a, ga);
            }
            Op::Tanh(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(&self.values[i]).for_each(|d, &y| *d *= 1.0 - y * y);
                self.acc(a, ga);
            }
            Op::Square(a) => {
                let ga = g * &self.values[a.0] * 2.0;
                self.acc(a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.values[i];
                let mut ga = Mat::zeros(y.raw_dim());
                for ((mut out, yr), gr) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                    let dot = yr.dot(&gr);
                    Zip::from(&mut out).and(&yr).and(&gr).for_each(|o, &p, &d| *o = p * (d - dot));
                }
                self.acc(a, ga);
            }
            Op::Transpose(a) => self.acc(a, g.t().to_owned()),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.values[p.0].ncols();
                    if self.needs(p) {
                        self.acc(p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                if self.needs(a) {
                    let mut ga = Mat::zeros(self.values[a.0].raw_dim());
                    ga.slice_mut(s![.., start..start + g.ncols()]).assign(g);
                    self.acc(a, ga);
                }
            }
            Op::GatherRows(a, rows) => {
                if self.needs(a) {
                    let mut ga = Mat::zeros(self.values[a.0].raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(k);
                    }
                    self.acc(a, ga);
                }
            }
            Op::OverwriteRows { base, src, rows } => {
                if self.needs(src) {
                    let gs = g.select(Axis(0), &rows);
                    self.acc(src, gs);
                }
                if self.needs(base) {
                    let mut gb = g.clone();
                    for &r in &rows {
                        gb.row_mut(r).fill(0.0);
                    }
                    self.acc(base, gb);
                }
            }
            Op::MeanRows(a) => {
                let m = self.values[a.0].nrows();
                let ga = g.broadcast(self.values[a.0].raw_dim()).unwrap().mapv(|x| x / m as f64);
                self.acc(a, ga);
            }
            Op::SumCols(a) => {
                let ga = g.broadcast(self.values[a.0].raw_dim()).unwrap().to_owned();
                self.acc(a, ga);
            }
            Op::BroadcastRows(a) => {
                let ga = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.acc(a, ga);
            }
            Op::ShiftRows(a, k) => self.acc(a, shifted(g, -k)),
            Op::MaxPoolRows(a, arg) => {
                let mut ga = Mat::zeros(self.values[a.0].raw_dim());
                for (o, row) in arg.iter().enumerate() {
                    for (c, &r) in row.iter().enumerate() {
                        ga[[r, c]] += g[[o, c]];
                    }
                }
                self.acc(a, ga);
            }
            Op::MeanAll(a) => {
                let n = self.values[a.0].len() as f64;
                let ga = Mat::from_elem(self.values[a.0].raw_dim(), g[[0, 0]] / n);
                self.acc(a, ga);
            }
            Op::SumAll(a) => {
                let ga = Mat::from_elem(self.values[a.0].raw_dim(), g[[0, 0]]);
                self.acc(a, ga);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shifted(x: &Mat, k: isize) -> Mat {
    let l = x.nrows() as isize;
    let mut out = Mat::zeros(x.raw_dim());
    for i in 0..l {
        let src = i - k;
        if (0..l).contains(&src) {
            out.row_mut(i as usize).assign(&x.row(src as usize));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_input_gradient;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_and_bias_values() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = g.constant(array![[1.0], [1.0]]);
        let bias = g.constant(array![[0.5]]);
        let y = g.matmul(a, b);
        let y = g.add_row(y, bias);
        assert_eq!(g.value(y), &array![[3.5], [7.5]]);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let a = g.constant(Mat::zeros((3, 3)));
        let y = g.softmax_rows(a, true);
        assert_eq!(g.value(y), &array![[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]);
    }

    #[test]
    fn max_pool_lengths() {
        for l in 1..9 {
            let mut g = Graph::new();
            let a = g.constant(Mat::zeros((l, 2)));
            let y = g.max_pool_rows(a);
            assert_eq!(g.value(y).nrows(), l.div_ceil(2));
        }
        let mut g = Graph::new();
        let a = g.constant(array![[1.0], [5.0], [2.0], [0.0], [3.0]]);
        let y = g.max_pool_rows(a);
        assert_eq!(g.value(y), &array![[5.0], [5.0], [3.0]]);
    }

    #[test]
    fn shift_rows_zero_fills() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0], [2.0], [3.0]]);
        let up = g.shift_rows(a, 1);
        let down = g.shift_rows(a, -1);
        assert_eq!(g.value(up), &array![[0.0], [1.0], [2.0]]);
        assert_eq!(g.value(down), &array![[2.0], [3.0], [0.0]]);
    }

    #[test]
    fn elementwise_gradients() {
        let x = random(3, 4, 1);
        let w = random(4, 4, 2);
        type Build = fn(&mut Graph, Var, Var) -> Var;
        let cases: Vec<(&str, Build)> = vec![
            ("relu", |g, x, _| g.relu(x)),
            ("elu", |g, x, _| g.elu(x)),
            ("sigmoid", |g, x, _| g.sigmoid(x)),
            ("tanh", |g, x, _| g.tanh(x)),
            ("square", |g, x, _| g.square(x)),
            ("softmax", |g, x, _| g.softmax_rows(x, false)),
            ("softmax_causal", |g, x, w| {
                let s = g.matmul(x, w);
                let s = g.slice_cols(s, 0, 3);
                g.softmax_rows(s, true)
            }),
            ("transpose", |g, x, w| {
                let t = g.transpose(x);
                g.matmul(w, t)
            }),
            ("shift", |g, x, _| {
                let a = g.shift_rows(x, 1);
                let b = g.shift_rows(x, -1);
                g.mul(a, b)
            }),
            ("pool", |g, x, w| {
                let y = g.matmul(x, w);
                g.max_pool_rows(y)
            }),
            ("gather_overwrite", |g, x, w| {
                let y = g.matmul(x, w);
                let m = g.mean_rows(y);
                let base = g.broadcast_rows(m, 3);
                let sel = g.gather_rows(y, &[2, 0]);
                let sel = g.tanh(sel);
                g.overwrite_rows(base, sel, &[2, 0])
            }),
            ("concat_slice", |g, x, w| {
                let y = g.matmul(x, w);
                let a = g.slice_cols(y, 1, 3);
                let c = g.concat_cols(&[x, a]);
                g.sigmoid(c)
            }),
            ("mul_col_sum_cols", |g, x, w| {
                let y = g.matmul(x, w);
                let c = g.sum_cols(y);
                let c = g.square(c);
                g.mul_col(x, c)
            }),
            ("scale_shift", |g, x, _| {
                let y = g.scale(x, -1.7);
                let y = g.add_scalar(y, 0.3);
                g.elu(y)
            }),
        ];
        for (name, build) in cases {
            let err = check_input_gradient(&x, |g, xv| {
                let wv = g.constant(w.clone());
                let y = build(g, xv, wv);
                let y = g.square(y);
                g.sum_all(y)
            });
            assert!(err <= 1e-4, "{name}: relative error {err}");
        }
    }
}
