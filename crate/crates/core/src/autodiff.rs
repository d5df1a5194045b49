//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass. Calling
//! [`Tape::backward`] on a 1x1 result walks the tape in reverse and returns
//! the gradient of every non-frozen parameter leaf that took part, keyed by
//! parameter name. Frozen parameters enter the tape as constants, so no
//! gradient is ever produced for them.
//!
//! ```
//! use dgp_core::autodiff::Tape;
//! use dgp_core::params::ParamSet;
//! use dgp_core::Tensor;
//!
//! let mut ps = ParamSet::new();
//! ps.insert("w", Tensor::row_vector(vec![1.0, 2.0]));
//! let tape = Tape::new();
//! let w = tape.param(ps.get("w").unwrap());
//! let loss = tape.sum_all(tape.mul(w, w).unwrap()).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads["w"].data(), &[2.0, 4.0]);
//! ```

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::params::{Gradients, Param};
use crate::{Error, Result, Tensor};

/// Floor applied to probabilities inside cross-entropy.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

const NORM_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    ClampMin(Var, f64),
    Recip(Var),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    SumRows(Var),
    MeanRows(Var),
    SumCols(Var),
    SumAll(Var),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    ScaleRows(Var, Var),
    LogSoftmaxRows(Var),
    L2NormalizeRows(Var, Vec<f64>),
    CrossEntropy(Var, Tensor),
    MinCols(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, param: Option<String>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            param,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn push_op(&self, value: Tensor, op: Op, name: &'static str, inputs: &[Var]) -> Result<Var> {
        let value = value.check_finite(name)?;
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        Ok(self.push(value, op, None, requires_grad))
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, None, false)
    }

    /// A parameter leaf. Frozen parameters are recorded as constants.
    pub fn param(&self, p: &Param) -> Var {
        if p.frozen {
            self.constant(p.value.clone())
        } else {
            self.push(p.value.clone(), Op::Leaf, Some(p.name.clone()), true)
        }
    }

    /// Copy of the forward value of `v`.
    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Forward value of a 1x1 node.
    pub fn item(&self, v: Var) -> Result<f64> {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            n[a.0].value.matmul(&n[b.0].value)?
        };
        self.push_op(out, Op::MatMul(a, b), "matmul", &[a, b])
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.transpose();
        self.push_op(out, Op::Transpose(a), "transpose", &[a])
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (av, bv) = (&n[a.0].value, &n[bias.0].value);
            if bv.rows() != 1 || bv.cols() != av.cols() {
                return Err(Error::ShapeMismatch {
                    op: "add_bias",
                    lhs: av.shape(),
                    rhs: bv.shape(),
                });
            }
            let mut out = av.clone();
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            out
        };
        self.push_op(out, Op::AddBias(a, bias), "add_bias", &[a, bias])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            n[a.0].value.zip_map(&n[b.0].value, "add", |x, y| x + y)?
        };
        self.push_op(out, Op::Add(a, b), "add", &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            n[a.0].value.zip_map(&n[b.0].value, "sub", |x, y| x - y)?
        };
        self.push_op(out, Op::Sub(a, b), "sub", &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            n[a.0].value.zip_map(&n[b.0].value, "mul", |x, y| x * y)?
        };
        self.push_op(out, Op::Mul(a, b), "mul", &[a, b])
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(|x| x * s);
        self.push_op(out, Op::Scale(a, s), "scale", &[a])
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(|x| x + s);
        self.push_op(out, Op::AddScalar(a), "add_scalar", &[a])
    }

    /// Multiplies every entry of `a` by the 1x1 node `s`.
    pub fn mul_scalar_var(&self, a: Var, s: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let sv = n[s.0].value.item()?;
            n[a.0].value.map(|x| x * sv)
        };
        self.push_op(out, Op::MulScalarVar(a, s), "mul_scalar_var", &[a, s])
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push_op(out, Op::Relu(a), "relu", &[a])
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(sigmoid);
        self.push_op(out, Op::Sigmoid(a), "sigmoid", &[a])
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(libm::exp);
        self.push_op(out, Op::Exp(a), "exp", &[a])
    }

    /// `max(a, floor)` elementwise; entries at or below the floor get no gradient.
    pub fn clamp_min(&self, a: Var, floor: f64) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(|x| if x > floor { x } else { floor });
        self.push_op(out, Op::ClampMin(a, floor), "clamp_min", &[a])
    }

    pub fn recip(&self, a: Var) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.map(|x| 1.0 / x);
        self.push_op(out, Op::Recip(a), "recip", &[a])
    }

    pub fn concat_rows(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (av, bv) = (&n[a.0].value, &n[b.0].value);
            if av.cols() != bv.cols() {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: av.shape(),
                    rhs: bv.shape(),
                });
            }
            let mut data = Vec::with_capacity(av.len() + bv.len());
            data.extend_from_slice(av.data());
            data.extend_from_slice(bv.data());
            Tensor::from_vec(av.rows() + bv.rows(), av.cols(), data)?
        };
        self.push_op(out, Op::ConcatRows(a, b), "concat_rows", &[a, b])
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (av, bv) = (&n[a.0].value, &n[b.0].value);
            if av.rows() != bv.rows() {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: av.shape(),
                    rhs: bv.shape(),
                });
            }
            let mut data = Vec::with_capacity(av.len() + bv.len());
            for r in 0..av.rows() {
                data.extend_from_slice(av.row(r));
                data.extend_from_slice(bv.row(r));
            }
            Tensor::from_vec(av.rows(), av.cols() + bv.cols(), data)?
        };
        self.push_op(out, Op::ConcatCols(a, b), "concat_cols", &[a, b])
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&self, a: Var) -> Result<Var> {
        let out = sum_rows(&self.nodes.borrow()[a.0].value);
        self.push_op(out, Op::SumRows(a), "sum_rows", &[a])
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let av = &n[a.0].value;
            let r = av.rows() as f64;
            sum_rows(av).map(|x| x / r)
        };
        self.push_op(out, Op::MeanRows(a), "mean_rows", &[a])
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(&self, a: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let av = &n[a.0].value;
            let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
            Tensor::from_vec(av.rows(), 1, data)?
        };
        self.push_op(out, Op::SumCols(a), "sum_cols", &[a])
    }

    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.nodes.borrow()[a.0].value.data().iter().sum());
        self.push_op(out, Op::SumAll(a), "sum_all", &[a])
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let av = &n[a.0].value;
            let mut data = Vec::with_capacity(index.len() * av.cols());
            for &i in index.iter() {
                if i >= av.rows() {
                    return Err(Error::ShapeMismatch {
                        op: "gather_rows",
                        lhs: av.shape(),
                        rhs: (i, 0),
                    });
                }
                data.extend_from_slice(av.row(i));
            }
            Tensor::from_vec(index.len(), av.cols(), data)?
        };
        self.push_op(out, Op::GatherRows(a, index), "gather_rows", &[a])
    }

    /// Output has `out_rows` rows; row `k` of `a` is added into row `index[k]`.
    pub fn scatter_add_rows(&self, a: Var, index: Rc<[usize]>, out_rows: usize) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let av = &n[a.0].value;
            if index.len() != av.rows() {
                return Err(Error::ShapeMismatch {
                    op: "scatter_add_rows",
                    lhs: av.shape(),
                    rhs: (index.len(), 1),
                });
            }
            let mut out = Tensor::zeros(out_rows, av.cols());
            for (k, &i) in index.iter().enumerate() {
                if i >= out_rows {
                    return Err(Error::ShapeMismatch {
                        op: "scatter_add_rows",
                        lhs: (out_rows, av.cols()),
                        rhs: (i, 0),
                    });
                }
                for (o, x) in out.row_mut(i).iter_mut().zip(av.row(k)) {
                    *o += x;
                }
            }
            out
        };
        self.push_op(out, Op::ScatterAddRows(a, index), "scatter_add_rows", &[a])
    }

    /// Multiplies row `i` of `a` by entry `i` of the `r x 1` column `w`.
    pub fn scale_rows(&self, a: Var, w: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (av, wv) = (&n[a.0].value, &n[w.0].value);
            if wv.shape() != (av.rows(), 1) {
                return Err(Error::ShapeMismatch {
                    op: "scale_rows",
                    lhs: av.shape(),
                    rhs: wv.shape(),
                });
            }
            let mut out = av.clone();
            for r in 0..out.rows() {
                let s = wv.data()[r];
                out.row_mut(r).iter_mut().for_each(|x| *x *= s);
            }
            out
        };
        self.push_op(out, Op::ScaleRows(a, w), "scale_rows", &[a, w])
    }

    pub fn log_softmax_rows(&self, a: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let mut out = n[a.0].value.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
                row.iter_mut().for_each(|x| *x -= lse);
            }
            out
        };
        self.push_op(out, Op::LogSoftmaxRows(a), "log_softmax_rows", &[a])
    }

    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let ls = self.log_softmax_rows(a)?;
        self.exp(ls)
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&self, a: Var) -> Result<Var> {
        let (out, norms) = {
            let n = self.nodes.borrow();
            let mut out = n[a.0].value.clone();
            let mut norms = Vec::with_capacity(out.rows());
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>()).max(NORM_FLOOR);
                row.iter_mut().for_each(|x| *x /= norm);
                norms.push(norm);
            }
            (out, norms)
        };
        self.push_op(out, Op::L2NormalizeRows(a, norms), "l2_normalize_rows", &[a])
    }

    /// Mean over rows of `-sum_c target[c] * max(log_probs[c], ln 1e-12)`.
    pub fn cross_entropy(&self, log_probs: Var, target: Tensor) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let lp = &n[log_probs.0].value;
            lp.expect_same_shape(&target, "cross_entropy")?;
            let floor = libm::log(LOG_PROB_FLOOR);
            let total: f64 = lp
                .data()
                .iter()
                .zip(target.data())
                .map(|(&l, &t)| -t * l.max(floor))
                .sum();
            Tensor::scalar(total / lp.rows() as f64)
        };
        self.push_op(out, Op::CrossEntropy(log_probs, target), "cross_entropy", &[log_probs])
    }

    /// Row-wise minimum as an `r x 1` column. Ties go to the lowest column.
    pub fn min_cols(&self, a: Var) -> Result<Var> {
        let (out, arg) = {
            let n = self.nodes.borrow();
            let av = &n[a.0].value;
            let mut vals = Vec::with_capacity(av.rows());
            let mut arg = Vec::with_capacity(av.rows());
            for r in 0..av.rows() {
                let row = av.row(r);
                let mut best = 0;
                for (c, &x) in row.iter().enumerate() {
                    if x < row[best] {
                        best = c;
                    }
                }
                vals.push(row[best]);
                arg.push(best);
            }
            (Tensor::from_vec(av.rows(), 1, vals)?, arg)
        };
        self.push_op(out, Op::MinCols(a, arg), "min_cols", &[a])
    }

    /// Gradients of the 1x1 `loss` with respect to every non-frozen parameter
    /// leaf recorded on this tape. Leaves sharing a name are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new();

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let val = |v: Var| &nodes[v.0].value;
            let mut send = |v: Var, t: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t).expect("gradient shape"),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = &node.param {
                        match out.get_mut(name) {
                            Some(acc) => acc.add_assign(&g)?,
                            None => {
                                out.insert(name.clone(), g);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if nodes[a.0].requires_grad {
                        send(*a, g.matmul_nt(val(*b))?);
                    }
                    if nodes[b.0].requires_grad {
                        send(*b, val(*a).matmul_tn(&g)?);
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::AddBias(a, b) => {
                    send(*b, sum_rows(&g));
                    send(*a, g);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|x| -x));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(val(*b), "mul", |x, y| x * y)?);
                    send(*b, g.zip_map(val(*a), "mul", |x, y| x * y)?);
                }
                Op::Scale(a, s) => send(*a, g.map(|x| x * s)),
                Op::AddScalar(a) => send(*a, g),
                Op::MulScalarVar(a, s) => {
                    let sv = val(*s).item()?;
                    let gs: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    send(*s, Tensor::scalar(gs));
                    send(*a, g.map(|x| x * sv));
                }
                Op::Relu(a) => send(*a, g.zip_map(val(*a), "relu", |x, y| if y > 0.0 { x } else { 0.0 })?),
                Op::Sigmoid(a) => send(*a, g.zip_map(&node.value, "sigmoid", |x, y| x * y * (1.0 - y))?),
                Op::Exp(a) => send(*a, g.zip_map(&node.value, "exp", |x, y| x * y)?),
                Op::ClampMin(a, floor) => {
                    let f = *floor;
                    send(*a, g.zip_map(val(*a), "clamp_min", |x, y| if y > f { x } else { 0.0 })?)
                }
                Op::Recip(a) => send(*a, g.zip_map(&node.value, "recip", |x, y| -x * y * y)?),
                Op::ConcatRows(a, b) => {
                    let split = val(*a).len();
                    let cols = g.cols();
                    let ga = Tensor::from_vec(val(*a).rows(), cols, g.data()[..split].to_vec())?;
                    let gb = Tensor::from_vec(val(*b).rows(), cols, g.data()[split..].to_vec())?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    let cb = val(*b).cols();
                    let mut ga = Vec::with_capacity(g.rows() * ca);
                    let mut gb = Vec::with_capacity(g.rows() * cb);
                    for r in 0..g.rows() {
                        ga.extend_from_slice(&g.row(r)[..ca]);
                        gb.extend_from_slice(&g.row(r)[ca..]);
                    }
                    send(*a, Tensor::from_vec(g.rows(), ca, ga)?);
                    send(*b, Tensor::from_vec(g.rows(), cb, gb)?);
                }
                Op::SumRows(a) | Op::MeanRows(a) => {
                    let rows = val(*a).rows();
                    let s = if matches!(node.op, Op::MeanRows(_)) {
                        1.0 / rows as f64
                    } else {
                        1.0
                    };
                    let mut ga = Tensor::zeros(rows, g.cols());
                    for r in 0..rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o = x * s;
                        }
                    }
                    send(*a, ga);
                }
                Op::SumCols(a) => {
                    let (rows, cols) = val(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x = gr);
                    }
                    send(*a, ga);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = val(*a).shape();
                    send(*a, Tensor::full(rows, cols, g.item()?));
                }
                Op::GatherRows(a, index) => {
                    let mut ga = Tensor::zeros(val(*a).rows(), g.cols());
                    for (k, &i) in index.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    send(*a, ga);
                }
                Op::ScatterAddRows(a, index) => {
                    let mut data = Vec::with_capacity(index.len() * g.cols());
                    for &i in index.iter() {
                        data.extend_from_slice(g.row(i));
                    }
                    send(*a, Tensor::from_vec(index.len(), g.cols(), data)?);
                }
                Op::ScaleRows(a, w) => {
                    let (av, wv) = (val(*a), val(*w));
                    if nodes[w.0].requires_grad {
                        let gw = (0..av.rows())
                            .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                            .collect();
                        send(*w, Tensor::from_vec(av.rows(), 1, gw)?);
                    }
                    let mut ga = g;
                    for r in 0..ga.rows() {
                        let s = wv.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    send(*a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for r in 0..ga.rows() {
                        let total: f64 = ga.row(r).iter().sum();
                        for (o, &l) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o -= libm::exp(l) * total;
                        }
                    }
                    send(*a, ga);
                }
                Op::L2NormalizeRows(a, norms) => {
                    let y = &node.value;
                    let mut ga = g;
                    for (r, &norm) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        if norm <= NORM_FLOOR {
                            ga.row_mut(r).iter_mut().for_each(|x| *x /= norm);
                            continue;
                        }
                        let dot: f64 = ga.row(r).iter().zip(yr).map(|(x, y)| x * y).sum();
                        for (o, &yv) in ga.row_mut(r).iter_mut().zip(yr) {
                            *o = (*o - yv * dot) / norm;
                        }
                    }
                    send(*a, ga);
                }
                Op::CrossEntropy(lp, target) => {
                    let s = g.item()?;
                    let lpv = val(*lp);
                    let floor = libm::log(LOG_PROB_FLOOR);
                    let scale = s / lpv.rows() as f64;
                    let ga = lpv.zip_map(target, "cross_entropy", |l, t| if l > floor { -t * scale } else { 0.0 })?;
                    send(*lp, ga);
                }
                Op::MinCols(a, arg) => {
                    let (rows, cols) = val(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for (r, &c) in arg.iter().enumerate() {
                        ga.set(r, c, g.data()[r]);
                    }
                    send(*a, ga);
                }
            }
        }
        Ok(out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn sum_rows(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, a.cols());
    for r in 0..a.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(a.row(r)) {
            *o += x;
        }
    }
    out
}
