//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node holding its forward value and enough
//! saved state to propagate gradients. [`Tape::backward`] walks the nodes in
//! reverse order and returns a [`Gradients`] table covering both leaf inputs
//! and the parameters that were pulled onto the tape.
//!
//! All values are rank-2; vectors are `1 x n` rows. Elementwise binary ops
//! broadcast any operand dimension of size 1.

use ndarray::{s, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Select(Var, Vec<Option<usize>>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Dropout(Var, Mat),
    LayerNormRows(Var, Mat, Vec<f64>),
    SumAll(Var),
    SumAxis0(Var),
    SumAxis1(Var),
    Extremum(Var, usize),
    LogAddExp(Var, Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Recorder for one forward pass.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
    train: bool,
    rng: ChaCha8Rng,
}

fn shape(m: &Mat) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn broadcast_shape(op: &'static str, a: &Mat, b: &Mat) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.nrows(), b.nrows()), dim(a.ncols(), b.ncols())) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(NnError::ShapeMismatch {
            op,
            lhs: shape(a),
            rhs: shape(b),
        }),
    }
}

/// Sums `grad` down to `target` by reducing broadcast axes.
fn unbroadcast(grad: Mat, target: (usize, usize)) -> Mat {
    let mut g = grad;
    if target.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn row_softmax(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

impl<'s> Tape<'s> {
    /// Inference-mode tape: dropout is the identity.
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: vec![None; store.len()],
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode tape whose dropout masks are drawn from `seed`.
    pub fn training(store: &'s ParamStore, seed: u64) -> Self {
        let mut tape = Self::new(store);
        tape.set_training(true, seed);
        tape
    }

    pub fn set_training(&mut self, train: bool, seed: u64) {
        self.train = train;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(shape(m), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, op_name: &'static str, value: Mat, op: Op) -> Result<Var> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input. Gradients are still reported for it.
    pub fn input(&mut self, value: Mat) -> Result<Var> {
        self.push("input", value, Op::Leaf)
    }

    /// Pulls a parameter onto the tape; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.params[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                lhs: shape(x),
                rhs: shape(y),
            });
        }
        let value = x.dot(y);
        self.push("matmul", value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a) + self.value(b);
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a) - self.value(b);
        self.push("sub", value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a) * self.value(b);
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape("div", self.value(a), self.value(b))?;
        let value = self.value(a) / self.value(b);
        self.push("div", value, Op::Div(a, b))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(a).mapv(|v| scale * v + shift);
        self.push("affine", value, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 1.0)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 0.0)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).t().to_owned();
        self.push("transpose", value, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NnError::invalid("concat_cols", "no inputs"));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).map_err(|_| NnError::ShapeMismatch {
            op: "concat_cols",
            lhs: shape(self.value(parts[0])),
            rhs: parts
                .iter()
                .map(|&p| self.shape(p))
                .find(|s| s.0 != self.shape(parts[0]).0)
                .unwrap_or((0, 0)),
        })?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NnError::invalid("concat_rows", "no inputs"));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).map_err(|_| NnError::ShapeMismatch {
            op: "concat_rows",
            lhs: shape(self.value(parts[0])),
            rhs: parts
                .iter()
                .map(|&p| self.shape(p))
                .find(|s| s.1 != self.shape(parts[0]).1)
                .unwrap_or((0, 0)),
        })?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        if start > end || end > r {
            return Err(NnError::invalid(
                "slice_rows",
                format!("range {start}..{end} outside {r} rows"),
            ));
        }
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push("slice_rows", value, Op::SliceRows(a, start))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (_, c) = self.shape(a);
        if start > end || end > c {
            return Err(NnError::invalid(
                "slice_cols",
                format!("range {start}..{end} outside {c} cols"),
            ));
        }
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push("slice_cols", value, Op::SliceCols(a, start))
    }

    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        self.slice_rows(a, index, index + 1)
    }

    /// Row lookup, e.g. an embedding table read.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.nrows()) {
            return Err(NnError::invalid(
                "gather_rows",
                format!("row {bad} outside {} rows", t.nrows()),
            ));
        }
        let mut value = Mat::zeros((indices.len(), t.ncols()));
        for (o, &i) in indices.iter().enumerate() {
            value.row_mut(o).assign(&t.row(i));
        }
        self.push(
            "gather_rows",
            value,
            Op::GatherRows(table, indices.to_vec()),
        )
    }

    /// Flat gather into a `rows x cols` result. `None` entries take `fill`
    /// and receive no gradient.
    pub fn select(
        &mut self,
        src: Var,
        indices: &[Option<usize>],
        rows: usize,
        cols: usize,
        fill: f64,
    ) -> Result<Var> {
        if indices.len() != rows * cols {
            return Err(NnError::invalid(
                "select",
                format!("{} indices for a {rows}x{cols} result", indices.len()),
            ));
        }
        let x = self.value(src);
        let n = x.len();
        let flat: Vec<f64> = x.iter().copied().collect();
        let mut out = Vec::with_capacity(indices.len());
        for idx in indices {
            match *idx {
                Some(i) if i < n => out.push(flat[i]),
                Some(i) => {
                    return Err(NnError::invalid(
                        "select",
                        format!("index {i} outside {n} elements"),
                    ))
                }
                None => out.push(fill),
            }
        }
        let value = Mat::from_shape_vec((rows, cols), out).expect("length checked");
        self.push("select", value, Op::Select(src, indices.to_vec()))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(f64::tanh);
        self.push("tanh", value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        self.push("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(f64::exp);
        self.push("exp", value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(f64::ln);
        self.push("ln", value, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(|v| v * v);
        self.push("square", value, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mapv(f64::sqrt);
        self.push("sqrt", value, Op::Sqrt(a))
    }

    /// Numerically stabilised softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = row_softmax(self.value(a));
        self.push("softmax_rows", value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push("log_softmax_rows", value, Op::LogSoftmaxRows(a))
    }

    /// Inverted dropout. Identity outside training mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::invalid("dropout", format!("rate {rate}")));
        }
        if !self.train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let (r, c) = self.shape(a);
        let rng = &mut self.rng;
        let mask = Mat::from_shape_fn((r, c), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let value = self.value(a) * &mask;
        self.push("dropout", value, Op::Dropout(a, mask))
    }

    /// Per-row standardisation without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let value = xhat.clone();
        self.push(
            "layer_norm_rows",
            value,
            Op::LayerNormRows(a, xhat, inv_std),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push("sum_all", value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(NnError::invalid("mean_all", "empty input"));
        }
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Column sums as a `1 x cols` row.
    pub fn sum_axis0(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push("sum_axis0", value, Op::SumAxis0(a))
    }

    /// Row sums as a `rows x 1` column.
    pub fn sum_axis1(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push("sum_axis1", value, Op::SumAxis1(a))
    }

    fn extremum(&mut self, a: Var, want_max: bool) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(NnError::invalid("extremum", "empty input"));
        }
        let mut best = 0;
        let mut best_v = f64::NAN;
        for (i, &v) in x.iter().enumerate() {
            let better = if want_max { v > best_v } else { v < best_v };
            if i == 0 || better {
                best = i;
                best_v = v;
            }
        }
        let value = Mat::from_elem((1, 1), best_v);
        self.push("extremum", value, Op::Extremum(a, best))
    }

    /// Largest element as `1 x 1`; ties go to the lowest flat index.
    pub fn max_all(&mut self, a: Var) -> Result<Var> {
        self.extremum(a, true)
    }

    /// Smallest element as `1 x 1`; ties go to the lowest flat index.
    pub fn min_all(&mut self, a: Var) -> Result<Var> {
        self.extremum(a, false)
    }

    /// Elementwise `ln(exp(a) + exp(b))` for equal shapes.
    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if shape(x) != shape(y) {
            return Err(NnError::ShapeMismatch {
                op: "log_add_exp",
                lhs: shape(x),
                rhs: shape(y),
            });
        }
        let mut value = x.clone();
        Zip::from(&mut value)
            .and(y)
            .for_each(|o, &b| *o = log_add_exp(*o, b));
        self.push("log_add_exp", value, Op::LogAddExp(a, b))
    }

    /// Runs the reverse pass from a `1 x 1` node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if shape(self.value(root)) != (1, 1) {
            return Err(NnError::invalid(
                "backward",
                format!("root must be 1x1, got {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFinite { op: "backward" });
            }
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                // leaves keep their gradient for the caller
                Op::Leaf | Op::Param => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, unbroadcast(g.clone(), self.shape(*a)));
                    acc(&mut grads, *b, unbroadcast(g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, unbroadcast(g.clone(), self.shape(*a)));
                    acc(&mut grads, *b, unbroadcast(-g, self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, unbroadcast(ga, self.shape(*a)));
                    acc(&mut grads, *b, unbroadcast(gb, self.shape(*b)));
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = &g / bv;
                    let gb = -(&g * out) / bv;
                    acc(&mut grads, *a, unbroadcast(ga, self.shape(*a)));
                    acc(&mut grads, *b, unbroadcast(gb, self.shape(*b)));
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, g * *scale),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        acc(&mut grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(table, indices) => {
                    let mut gt = Mat::zeros(self.shape(*table));
                    for (o, &i) in indices.iter().enumerate() {
                        let mut r = gt.row_mut(i);
                        r += &g.row(o);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Select(src, indices) => {
                    let (r, c) = self.shape(*src);
                    let mut flat = vec![0.0; r * c];
                    for (gv, idx) in g.iter().zip(indices) {
                        if let Some(i) = idx {
                            flat[*i] += gv;
                        }
                    }
                    acc(
                        &mut grads,
                        *src,
                        Mat::from_shape_vec((r, c), flat).expect("shape"),
                    );
                }
                Op::Tanh(a) => acc(&mut grads, *a, &g * &out.mapv(|y| 1.0 - y * y)),
                Op::Sigmoid(a) => acc(&mut grads, *a, &g * &out.mapv(|y| y * (1.0 - y))),
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, g * mask)
                }
                Op::Exp(a) => acc(&mut grads, *a, g * out),
                Op::Ln(a) => acc(&mut grads, *a, g / self.value(*a)),
                Op::Square(a) => acc(&mut grads, *a, g * &self.value(*a).mapv(|x| 2.0 * x)),
                Op::Sqrt(a) => acc(&mut grads, *a, g / &out.mapv(|y| 2.0 * y)),
                Op::SoftmaxRows(a) => {
                    let mut ga = &g * out;
                    let dots = ga.sum_axis(Axis(1)).insert_axis(Axis(1));
                    ga -= &(out * &dots);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let sums = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let soft = out.mapv(f64::exp);
                    acc(&mut grads, *a, g - &(soft * &sums));
                }
                Op::Dropout(a, mask) => acc(&mut grads, *a, g * mask),
                Op::LayerNormRows(a, xhat, inv_std) => {
                    let n = xhat.ncols() as f64;
                    let mut ga = Mat::zeros(xhat.raw_dim());
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let sum_g = gr.sum();
                        let sum_gx = gr.dot(&xr);
                        let mut out_r = ga.row_mut(r);
                        for j in 0..xhat.ncols() {
                            out_r[j] = is / n * (n * gr[j] - sum_g - xr[j] * sum_gx);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    acc(&mut grads, *a, Mat::from_elem(self.shape(*a), g[[0, 0]]));
                }
                Op::SumAxis0(a) => {
                    let (r, _) = self.shape(*a);
                    let ga = g
                        .broadcast((r, g.ncols()))
                        .expect("row broadcast")
                        .to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::SumAxis1(a) => {
                    let (_, c) = self.shape(*a);
                    let ga = g
                        .broadcast((g.nrows(), c))
                        .expect("column broadcast")
                        .to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::Extremum(a, flat_idx) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Mat::zeros((r, c));
                    ga[[flat_idx / c, flat_idx % c]] = g[[0, 0]];
                    acc(&mut grads, *a, ga);
                }
                Op::LogAddExp(a, b) => {
                    let mut ga = self.value(*a) - out;
                    ga.mapv_inplace(f64::exp);
                    let mut gb = self.value(*b) - out;
                    gb.mapv_inplace(f64::exp);
                    acc(&mut grads, *a, &g * &ga);
                    acc(&mut grads, *b, g * gb);
                }
            }
        }

        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    params: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient with respect to a leaf (input or parameter) node.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a parameter; `None` if it did not reach it.
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }

    /// Global L2 norm over the given parameters' gradients.
    pub fn norm(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .filter_map(|&id| self.param(id))
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}
