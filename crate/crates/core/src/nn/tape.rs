//! Minimal reverse-mode automatic differentiation over `Mat` values.
//!
//! A `Tape` records a fixed set of matrix operations as they execute;
//! `backward` replays them in reverse and accumulates vector-Jacobian
//! products. The op set is exactly what the models in this crate need —
//! this is not a general graph engine.

use super::tensor::Mat;

/// Handle to a value recorded on a tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    /// Broadcast-add a 1×n row vector to every row of an m×n matrix.
    AddRow(ValueId, ValueId),
    /// Broadcast-multiply an m×n matrix by an m×1 column, row by row.
    MulCol(ValueId, ValueId),
    /// Row-wise dot product of two m×n matrices, yielding m×1.
    RowDot(ValueId, ValueId),
    Scale(ValueId, f64),
    AddConst(ValueId),
    Relu(ValueId),
    Abs(ValueId),
    Sqrt(ValueId),
    /// ln(max(x, eps)); gradient is zero where the clamp is active.
    LnClamped(ValueId, f64),
    Sigmoid(ValueId),
    SoftmaxRows(ValueId),
    Transpose(ValueId),
    SumAll(ValueId),
    MeanAll(ValueId),
    SumAxis0(ValueId),
    MeanAxis0(ValueId),
    ConcatCols(Vec<ValueId>),
    ConcatRows(Vec<ValueId>),
    SliceCols(ValueId, usize, usize),
    SliceRows(ValueId, usize, usize),
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input value. Leaves accumulate gradients like any node;
    /// whether they are parameters or constants is the caller's concern.
    pub fn leaf(&mut self, value: Mat) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`.
    pub fn grad(&self, id: ValueId) -> Option<&Mat> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, value: Mat, op: Op) -> ValueId {
        self.nodes.push(Node { value, grad: None, op });
        ValueId(self.nodes.len() - 1)
    }

    fn val(&self, id: ValueId) -> &Mat {
        &self.nodes[id.0].value
    }

    // ---- op recording -------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.val(a).matmul(self.val(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.val(a).zip_map(self.val(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.val(a).zip_map(self.val(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.val(a).zip_map(self.val(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = self.val(a).zip_map(self.val(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> ValueId {
        let (m, n) = self.val(a).shape();
        assert_eq!(self.val(row).shape(), (1, n), "add_row wants 1x{n}");
        let mut v = self.val(a).clone();
        for i in 0..m {
            let r = self.val(row).data().to_vec();
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_col(&mut self, a: ValueId, col: ValueId) -> ValueId {
        let (m, _n) = self.val(a).shape();
        assert_eq!(self.val(col).shape(), (m, 1), "mul_col wants {m}x1");
        let mut v = self.val(a).clone();
        for i in 0..m {
            let c = self.val(col).get(i, 0);
            for x in v.row_mut(i).iter_mut() {
                *x *= c;
            }
        }
        self.push(v, Op::MulCol(a, col))
    }

    pub fn row_dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "row_dot shape mismatch");
        let m = self.val(a).rows();
        let mut v = Mat::zeros(m, 1);
        for i in 0..m {
            let s: f64 = self.val(a).row(i).iter().zip(self.val(b).row(i)).map(|(x, y)| x * y).sum();
            v.set(i, 0, s);
        }
        self.push(v, Op::RowDot(a, b))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let v = self.val(a).map(|x| k * x);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: ValueId, c: f64) -> ValueId {
        let v = self.val(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let v = self.val(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn abs(&mut self, a: ValueId) -> ValueId {
        let v = self.val(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: ValueId) -> ValueId {
        let v = self.val(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn ln_clamped(&mut self, a: ValueId, eps: f64) -> ValueId {
        let v = self.val(a).map(|x| x.max(eps).ln());
        self.push(v, Op::LnClamped(a, eps))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let v = self.val(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    /// Numerically stable softmax applied independently to each row.
    pub fn softmax_rows(&mut self, a: ValueId) -> ValueId {
        let src = self.val(a);
        let mut v = src.clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        let v = self.val(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.val(a).data().iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]).unwrap(), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.val(a).data().iter().sum();
        let n = self.val(a).len() as f64;
        self.push(Mat::from_vec(1, 1, vec![s / n]).unwrap(), Op::MeanAll(a))
    }

    pub fn sum_axis0(&mut self, a: ValueId) -> ValueId {
        let src = self.val(a);
        let mut v = Mat::zeros(1, src.cols());
        for i in 0..src.rows() {
            for (o, x) in v.row_mut(0).iter_mut().zip(src.row(i)) {
                *o += x;
            }
        }
        self.push(v, Op::SumAxis0(a))
    }

    pub fn mean_axis0(&mut self, a: ValueId) -> ValueId {
        let m = self.val(a).rows() as f64;
        let sum = {
            let src = self.val(a);
            let mut v = Mat::zeros(1, src.cols());
            for i in 0..src.rows() {
                for (o, x) in v.row_mut(0).iter_mut().zip(src.row(i)) {
                    *o += x;
                }
            }
            v.map(|x| x / m)
        };
        self.push(sum, Op::MeanAxis0(a))
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty());
        let m = self.val(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut v = Mat::zeros(m, total);
        let mut off = 0;
        for &p in parts {
            let src = self.val(p);
            assert_eq!(src.rows(), m, "concat_cols row mismatch");
            for i in 0..m {
                v.row_mut(i)[off..off + src.cols()].copy_from_slice(src.row(i));
            }
            off += src.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty());
        let n = self.val(parts[0]).cols();
        let total: usize = parts.iter().map(|&p| self.val(p).rows()).sum();
        let mut v = Mat::zeros(total, n);
        let mut off = 0;
        for &p in parts {
            let src = self.val(p);
            assert_eq!(src.cols(), n, "concat_rows col mismatch");
            for i in 0..src.rows() {
                v.row_mut(off + i).copy_from_slice(src.row(i));
            }
            off += src.rows();
        }
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: ValueId, c0: usize, c1: usize) -> ValueId {
        let src = self.val(a);
        assert!(c0 < c1 && c1 <= src.cols(), "slice_cols {c0}..{c1} of {}", src.cols());
        let mut v = Mat::zeros(src.rows(), c1 - c0);
        for i in 0..src.rows() {
            v.row_mut(i).copy_from_slice(&src.row(i)[c0..c1]);
        }
        self.push(v, Op::SliceCols(a, c0, c1))
    }

    pub fn slice_rows(&mut self, a: ValueId, r0: usize, r1: usize) -> ValueId {
        let src = self.val(a);
        assert!(r0 < r1 && r1 <= src.rows(), "slice_rows {r0}..{r1} of {}", src.rows());
        let mut v = Mat::zeros(r1 - r0, src.cols());
        for i in r0..r1 {
            v.row_mut(i - r0).copy_from_slice(src.row(i));
        }
        self.push(v, Op::SliceRows(a, r0, r1))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse pass from a scalar (1×1) value. Gradients of every node that
    /// influenced it are stored and readable via `grad`.
    pub fn backward(&mut self, loss: ValueId) {
        assert_eq!(self.val(loss).shape(), (1, 1), "backward target must be scalar");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g_owned) = grads[id].take() else { continue };
            self.nodes[id].grad = Some(g_owned);
            let g = self.nodes[id].grad.as_ref().unwrap();
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.val(b).transpose());
                    let db = self.val(a).transpose().matmul(&g);
                    acc(&mut grads, a, da);
                    acc(&mut grads, b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.val(b), |gi, bi| gi * bi);
                    let db = g.zip_map(self.val(a), |gi, ai| gi * ai);
                    acc(&mut grads, a, da);
                    acc(&mut grads, b, db);
                }
                Op::Div(a, b) => {
                    let da = g.zip_map(self.val(b), |gi, bi| gi / bi);
                    let mut db = g.zip_map(self.val(a), |gi, ai| gi * ai);
                    db = db.zip_map(self.val(b), |x, bi| -x / (bi * bi));
                    acc(&mut grads, a, da);
                    acc(&mut grads, b, db);
                }
                Op::AddRow(a, row) => {
                    let mut drow = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in drow.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, row, drow);
                }
                Op::MulCol(a, col) => {
                    let av = self.val(a);
                    let cv = self.val(col);
                    let mut da = g.clone();
                    let mut dcol = Mat::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        let c = cv.get(i, 0);
                        let mut s = 0.0;
                        for (x, (&gi, &ai)) in
                            da.row_mut(i).iter_mut().zip(g.row(i).iter().zip(av.row(i)))
                        {
                            *x = gi * c;
                            s += gi * ai;
                        }
                        dcol.set(i, 0, s);
                    }
                    acc(&mut grads, a, da);
                    acc(&mut grads, col, dcol);
                }
                Op::RowDot(a, b) => {
                    let av = self.val(a);
                    let bv = self.val(b);
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    let mut db = Mat::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let gi = g.get(i, 0);
                        for j in 0..av.cols() {
                            da.set(i, j, gi * bv.get(i, j));
                            db.set(i, j, gi * av.get(i, j));
                        }
                    }
                    acc(&mut grads, a, da);
                    acc(&mut grads, b, db);
                }
                Op::Scale(a, k) => acc(&mut grads, a, g.map(|x| k * x)),
                Op::AddConst(a) => acc(&mut grads, a, g.clone()),
                Op::Relu(a) => {
                    let da = g.zip_map(self.val(a), |gi, ai| if ai > 0.0 { gi } else { 0.0 });
                    acc(&mut grads, a, da);
                }
                Op::Abs(a) => {
                    let da = g.zip_map(self.val(a), |gi, ai| gi * sign(ai));
                    acc(&mut grads, a, da);
                }
                Op::Sqrt(a) => {
                    let out = &self.nodes[id].value;
                    let da = g.zip_map(out, |gi, oi| if oi > 0.0 { gi * 0.5 / oi } else { 0.0 });
                    acc(&mut grads, a, da);
                }
                Op::LnClamped(a, eps) => {
                    let da = g.zip_map(self.val(a), |gi, ai| if ai >= eps { gi / ai } else { 0.0 });
                    acc(&mut grads, a, da);
                }
                Op::Sigmoid(a) => {
                    let out = &self.nodes[id].value;
                    let da = g.zip_map(out, |gi, oi| gi * oi * (1.0 - oi));
                    acc(&mut grads, a, da);
                }
                Op::SoftmaxRows(a) => {
                    let out = &self.nodes[id].value;
                    let mut da = Mat::zeros(out.rows(), out.cols());
                    for i in 0..out.rows() {
                        let dot: f64 =
                            g.row(i).iter().zip(out.row(i)).map(|(x, y)| x * y).sum();
                        for j in 0..out.cols() {
                            da.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    acc(&mut grads, a, da);
                }
                Op::Transpose(a) => acc(&mut grads, a, g.transpose()),
                Op::SumAll(a) => {
                    let (m, nn) = self.val(a).shape();
                    acc(&mut grads, a, Mat::filled(m, nn, g.get(0, 0)));
                }
                Op::MeanAll(a) => {
                    let (m, nn) = self.val(a).shape();
                    let k = g.get(0, 0) / (m * nn) as f64;
                    acc(&mut grads, a, Mat::filled(m, nn, k));
                }
                Op::SumAxis0(a) => {
                    let (m, nn) = self.val(a).shape();
                    let mut da = Mat::zeros(m, nn);
                    for i in 0..m {
                        da.row_mut(i).copy_from_slice(g.row(0));
                    }
                    acc(&mut grads, a, da);
                }
                Op::MeanAxis0(a) => {
                    let (m, nn) = self.val(a).shape();
                    let mut da = Mat::zeros(m, nn);
                    for i in 0..m {
                        for (o, x) in da.row_mut(i).iter_mut().zip(g.row(0)) {
                            *o = x / m as f64;
                        }
                    }
                    acc(&mut grads, a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pc = self.val(p).cols();
                        let mut dp = Mat::zeros(g.rows(), pc);
                        for i in 0..g.rows() {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + pc]);
                        }
                        acc(&mut grads, p, dp);
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pr = self.val(p).rows();
                        let mut dp = Mat::zeros(pr, g.cols());
                        for i in 0..pr {
                            dp.row_mut(i).copy_from_slice(g.row(off + i));
                        }
                        acc(&mut grads, p, dp);
                        off += pr;
                    }
                }
                Op::SliceCols(a, c0, _c1) => {
                    let (m, nn) = self.val(a).shape();
                    let mut da = Mat::zeros(m, nn);
                    for i in 0..m {
                        da.row_mut(i)[c0..c0 + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, a, da);
                }
                Op::SliceRows(a, r0, _r1) => {
                    let (m, nn) = self.val(a).shape();
                    let mut da = Mat::zeros(m, nn);
                    for i in 0..g.rows() {
                        da.row_mut(r0 + i).copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, a, da);
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn acc(grads: &mut [Option<Mat>], id: ValueId, g: Mat) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
