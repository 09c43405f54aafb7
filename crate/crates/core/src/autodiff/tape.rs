//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in execution order. [`Var`] is a cheap
//! handle to one recorded value. Calling [`Tape::backward`] on a scalar walks
//! the tape once in reverse and adds `d loss / d leaf` into each leaf that
//! requires a gradient. Leaf gradients accumulate across calls until
//! [`Tape::zero_grad`].

use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, ArrayViewMut1, Axis, Zip};
use rand::Rng;

use super::graph::{EdgeList, Segments};
use super::tensor::{Tensor, TensorError, TensorResult};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Sum(usize, Option<Axis>),
    Concat(Vec<usize>),
    SliceRows(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize, Axis),
    Log(usize),
    Pow(usize, T),
    Clamp(usize, T, T),
    SpMM {
        edges: Arc<EdgeList>,
        weights: Option<usize>,
        x: usize,
    },
    EdgeDot {
        edges: Arc<EdgeList>,
        p: usize,
        q: usize,
    },
    SegmentSum(Arc<Segments>, usize),
    SegmentSoftmax(Arc<Segments>, usize),
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Array2<T>>,
}

/// Records operations for one forward pass.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    index: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Var(tape={}, index={}, shape={:?})",
            self.tape.id,
            self.index,
            self.shape()
        )
    }
}

fn check_finite<T: Scalar>(value: &Array2<T>, op: &'static str) -> TensorResult<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::Numerical { op })
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> TensorError {
    TensorError::Shape { op, lhs, rhs }
}

fn broadcastable(lhs: (usize, usize), rhs: (usize, usize)) -> bool {
    (rhs.0 == lhs.0 || rhs.0 == 1) && (rhs.1 == lhs.1 || rhs.1 == 1)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> TensorResult<Var<'_, T>> {
        check_finite(&value, name)?;
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        let grad = if requires_grad && matches!(op, Op::Leaf) {
            Some(Array2::zeros(value.raw_dim()))
        } else {
            None
        };
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad,
        });
        Ok(Var { tape: self, index })
    }

    /// Records a tensor as a leaf; it is differentiable iff the tensor requires grad.
    pub fn leaf(&self, tensor: &Tensor<T>) -> TensorResult<Var<'_, T>> {
        self.push(tensor.data().clone(), Op::Leaf, tensor.requires_grad(), "leaf")
    }

    /// A differentiable leaf.
    pub fn variable(&self, value: Array2<T>) -> TensorResult<Var<'_, T>> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// A non-differentiable leaf.
    pub fn constant(&self, value: Array2<T>) -> TensorResult<Var<'_, T>> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn scalar_constant(&self, value: T) -> TensorResult<Var<'_, T>> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Array2<T>> {
        if var.tape.id != self.id {
            return None;
        }
        self.nodes.borrow().get(var.index).and_then(|n| n.grad.clone())
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            if let Some(g) = node.grad.as_mut() {
                g.fill(T::zero());
            }
        }
    }

    /// Propagates `d loss / d leaf` into every differentiable leaf.
    pub fn backward(&self, loss: Var<'_, T>) -> TensorResult<()> {
        if loss.tape.id != self.id {
            return Err(TensorError::Tape("loss was not recorded on this tape".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        if loss.index >= nodes.len() {
            return Err(TensorError::Tape("loss index outside tape".into()));
        }
        let shape = nodes[loss.index].value.dim();
        if shape != (1, 1) {
            return Err(shape_err("backward", shape, (1, 1)));
        }
        if !nodes[loss.index].requires_grad {
            return Ok(());
        }

        let mut adj: Vec<Option<Array2<T>>> = vec![None; loss.index + 1];
        adj[loss.index] = Some(Array2::from_elem((1, 1), T::one()));

        for i in (0..=loss.index).rev() {
            if matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            backprop_node(&nodes, i, g, &mut adj)?;
        }

        for (i, a) in adj.into_iter().enumerate() {
            if let Some(g) = a {
                let node = &mut nodes[i];
                if node.requires_grad && matches!(node.op, Op::Leaf) {
                    check_finite(&g, "backward")?;
                    match node.grad.as_mut() {
                        Some(acc) => *acc += &g,
                        None => node.grad = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Array2<T>>], i: usize, delta: Array2<T>) {
    match adj[i].as_mut() {
        Some(a) => *a += &delta,
        None => adj[i] = Some(delta),
    }
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    i: usize,
    g: Array2<T>,
    adj: &mut [Option<Array2<T>>],
) -> TensorResult<()> {
    let needs = |j: usize| nodes[j].requires_grad;
    let val = |j: usize| -> &Array2<T> { &nodes[j].value };
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if needs(*a) {
                accumulate(adj, *a, g.dot(&val(*b).t()));
            }
            if needs(*b) {
                accumulate(adj, *b, val(*a).t().dot(&g));
            }
        }
        Op::Add(a, b) => {
            if needs(*b) {
                accumulate(adj, *b, reduce_generic(g.clone(), val(*b).dim()));
            }
            if needs(*a) {
                accumulate(adj, *a, g);
            }
        }
        Op::Sub(a, b) => {
            if needs(*b) {
                accumulate(adj, *b, reduce_generic(g.mapv(|v| -v), val(*b).dim()));
            }
            if needs(*a) {
                accumulate(adj, *a, g);
            }
        }
        Op::Mul(a, b) => {
            if needs(*b) {
                let gb = &g * val(*a);
                accumulate(adj, *b, reduce_generic(gb, val(*b).dim()));
            }
            if needs(*a) {
                accumulate(adj, *a, &g * val(*b));
            }
        }
        Op::Scale(a, c) => {
            if needs(*a) {
                let c = *c;
                accumulate(adj, *a, g.mapv(|v| v * c));
            }
        }
        Op::AddScalar(a) => {
            if needs(*a) {
                accumulate(adj, *a, g);
            }
        }
        Op::Sum(a, axis) => {
            if needs(*a) {
                let shape = val(*a).dim();
                let full = match axis {
                    None => Array2::from_elem(shape, g[[0, 0]]),
                    Some(_) => g.broadcast(shape).expect("sum broadcast").to_owned(),
                };
                accumulate(adj, *a, full);
            }
        }
        Op::Concat(parts) => {
            let mut col = 0;
            for &p in parts {
                let w = val(p).ncols();
                if needs(p) {
                    accumulate(adj, p, g.slice(s![.., col..col + w]).to_owned());
                }
                col += w;
            }
        }
        Op::SliceRows(a, start) => {
            if needs(*a) {
                let mut full = Array2::zeros(val(*a).raw_dim());
                let n = g.nrows();
                full.slice_mut(s![*start..*start + n, ..]).assign(&g);
                accumulate(adj, *a, full);
            }
        }
        Op::Relu(a) => {
            if needs(*a) {
                let mut ga = g;
                Zip::from(&mut ga).and(val(*a)).for_each(|gv, &x| {
                    if x <= T::zero() {
                        *gv = T::zero();
                    }
                });
                accumulate(adj, *a, ga);
            }
        }
        Op::Sigmoid(a) => {
            if needs(*a) {
                let mut ga = g;
                Zip::from(&mut ga)
                    .and(out)
                    .for_each(|gv, &y| *gv = *gv * y * (T::one() - y));
                accumulate(adj, *a, ga);
            }
        }
        Op::Tanh(a) => {
            if needs(*a) {
                let mut ga = g;
                Zip::from(&mut ga).and(out).for_each(|gv, &y| *gv *= T::one() - y * y);
                accumulate(adj, *a, ga);
            }
        }
        Op::Softmax(a, axis) => {
            if needs(*a) {
                let mut ga = g;
                for (mut gl, yl) in ga.lanes_mut(*axis).into_iter().zip(out.lanes(*axis)) {
                    let dot: T = gl.iter().zip(yl.iter()).map(|(&gv, &y)| gv * y).sum();
                    gl.zip_mut_with(&yl, |gv, &y| *gv = y * (*gv - dot));
                }
                accumulate(adj, *a, ga);
            }
        }
        Op::Log(a) => {
            if needs(*a) {
                accumulate(adj, *a, &g / val(*a));
            }
        }
        Op::Pow(a, e) => {
            if needs(*a) {
                let e = *e;
                let mut ga = g;
                if e == T::zero() {
                    ga.fill(T::zero());
                } else {
                    Zip::from(&mut ga)
                        .and(val(*a))
                        .for_each(|gv, &x| *gv = *gv * e * x.powf(e - T::one()));
                }
                accumulate(adj, *a, ga);
            }
        }
        Op::Clamp(a, lo, hi) => {
            if needs(*a) {
                let (lo, hi) = (*lo, *hi);
                let mut ga = g;
                Zip::from(&mut ga).and(val(*a)).for_each(|gv, &x| {
                    if x < lo || x > hi {
                        *gv = T::zero();
                    }
                });
                accumulate(adj, *a, ga);
            }
        }
        Op::SpMM { edges, weights, x } => {
            let xv = val(*x);
            if needs(*x) {
                let mut gx = Array2::zeros(xv.raw_dim());
                for row in 0..edges.num_nodes() {
                    let gi = g.row(row);
                    for e in edges.edge_range(row) {
                        let w = weights.map_or(T::one(), |w| val(w)[[e, 0]]);
                        gx.row_mut(edges.cols()[e]).scaled_add(w, &gi);
                    }
                }
                accumulate(adj, *x, gx);
            }
            if let Some(w) = weights {
                if needs(*w) {
                    let mut gw = Array2::zeros((edges.num_edges(), 1));
                    for row in 0..edges.num_nodes() {
                        let gi = g.row(row);
                        for e in edges.edge_range(row) {
                            gw[[e, 0]] = gi.dot(&xv.row(edges.cols()[e]));
                        }
                    }
                    accumulate(adj, *w, gw);
                }
            }
        }
        Op::EdgeDot { edges, p, q } => {
            let (pv, qv) = (val(*p), val(*q));
            if needs(*p) {
                let mut gp = Array2::zeros(pv.raw_dim());
                for row in 0..edges.num_nodes() {
                    for e in edges.edge_range(row) {
                        gp.row_mut(row).scaled_add(g[[e, 0]], &qv.row(edges.cols()[e]));
                    }
                }
                accumulate(adj, *p, gp);
            }
            if needs(*q) {
                let mut gq = Array2::zeros(qv.raw_dim());
                for row in 0..edges.num_nodes() {
                    for e in edges.edge_range(row) {
                        gq.row_mut(edges.cols()[e]).scaled_add(g[[e, 0]], &pv.row(row));
                    }
                }
                accumulate(adj, *q, gq);
            }
        }
        Op::SegmentSum(segments, a) => {
            if needs(*a) {
                let mut ga = Array2::zeros(val(*a).raw_dim());
                for sgm in 0..segments.len() {
                    for r in segments.range(sgm) {
                        ga.row_mut(r).assign(&g.row(sgm));
                    }
                }
                accumulate(adj, *a, ga);
            }
        }
        Op::SegmentSoftmax(segments, a) => {
            if needs(*a) {
                let mut ga = g;
                for sgm in 0..segments.len() {
                    let range = segments.range(sgm);
                    let dot: T = range.clone().map(|r| ga[[r, 0]] * out[[r, 0]]).sum();
                    for r in range {
                        ga[[r, 0]] = out[[r, 0]] * (ga[[r, 0]] - dot);
                    }
                }
                accumulate(adj, *a, ga);
            }
        }
    }
    Ok(())
}

/// Sums `g` down to `shape`, which is `g`'s shape with some axes set to 1.
fn reduce_generic<T: Scalar>(g: Array2<T>, shape: (usize, usize)) -> Array2<T> {
    let mut out = g;
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn node_value(&self) -> Ref<'_, Array2<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.index].value)
    }

    fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.index].requires_grad
    }

    fn same_tape(&self, other: &Var<'_, T>) -> TensorResult<()> {
        if self.tape.id == other.tape.id {
            Ok(())
        } else {
            Err(TensorError::Tape("operands recorded on different tapes".into()))
        }
    }

    /// Copy of the current value.
    pub fn value(&self) -> Array2<T> {
        self.node_value().clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.node_value().dim()
    }

    /// The single entry of a `1 x 1` value.
    pub fn item(&self) -> T {
        let v = self.node_value();
        assert_eq!(v.dim(), (1, 1), "item() on non-scalar");
        v[[0, 0]]
    }

    pub fn backward(&self) -> TensorResult<()> {
        self.tape.backward(*self)
    }

    pub fn grad(&self) -> Option<Array2<T>> {
        self.tape.grad(*self)
    }

    fn unary(
        &self,
        op: Op<T>,
        name: &'static str,
        f: impl FnOnce(ArrayView2<'_, T>) -> Array2<T>,
    ) -> TensorResult<Var<'t, T>> {
        let value = f(self.node_value().view());
        self.tape.push(value, op, self.requires_grad(), name)
    }

    pub fn matmul(&self, rhs: Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.same_tape(&rhs)?;
        let value = {
            let a = self.node_value();
            let b = rhs.node_value();
            if a.ncols() != b.nrows() {
                return Err(shape_err("matmul", a.dim(), b.dim()));
            }
            a.dot(&*b)
        };
        let rg = self.requires_grad() || rhs.requires_grad();
        self.tape.push(value, Op::MatMul(self.index, rhs.index), rg, "matmul")
    }

    fn broadcast_binary(
        &self,
        rhs: Var<'_, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> TensorResult<Var<'t, T>> {
        self.same_tape(&rhs)?;
        let value = {
            let a = self.node_value();
            let b = rhs.node_value();
            if !broadcastable(a.dim(), b.dim()) {
                return Err(shape_err(name, a.dim(), b.dim()));
            }
            let bb = b.broadcast(a.dim()).expect("checked broadcast");
            let mut out = a.clone();
            Zip::from(&mut out).and(&bb).for_each(|x, &y| *x = f(*x, y));
            out
        };
        let rg = self.requires_grad() || rhs.requires_grad();
        self.tape.push(value, op, rg, name)
    }

    /// Elementwise sum; `rhs` may be a `1 x m` row, `n x 1` column or `1 x 1` scalar.
    pub fn add(&self, rhs: Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.broadcast_binary(rhs, "add", |a, b| a + b, Op::Add(self.index, rhs.index))
    }

    pub fn sub(&self, rhs: Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.broadcast_binary(rhs, "sub", |a, b| a - b, Op::Sub(self.index, rhs.index))
    }

    pub fn mul(&self, rhs: Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.broadcast_binary(rhs, "mul", |a, b| a * b, Op::Mul(self.index, rhs.index))
    }

    pub fn scalar_mul(&self, c: T) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Scale(self.index, c), "scalar_mul", |a| a.mapv(|v| v * c))
    }

    pub fn add_scalar(&self, c: T) -> TensorResult<Var<'t, T>> {
        self.unary(Op::AddScalar(self.index), "add_scalar", |a| a.mapv(|v| v + c))
    }

    pub fn neg(&self) -> TensorResult<Var<'t, T>> {
        self.scalar_mul(-T::one())
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&self) -> TensorResult<Var<'t, T>> {
        self.neg()?.add_scalar(T::one())
    }

    /// Sum along `axis`, keeping it as a length-1 dimension.
    pub fn sum_axis(&self, axis: Axis) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Sum(self.index, Some(axis)), "sum", |a| {
            a.sum_axis(axis).insert_axis(axis)
        })
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&self) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Sum(self.index, None), "sum", |a| Array2::from_elem((1, 1), a.sum()))
    }

    /// Concatenates values side by side (along columns).
    pub fn concat_cols(parts: &[Var<'t, T>]) -> TensorResult<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Tape("concat of zero tensors".into()))?;
        for p in parts {
            first.same_tape(p)?;
        }
        let value = {
            let vals: Vec<Ref<'_, Array2<T>>> = parts.iter().map(|p| p.node_value()).collect();
            let rows = vals[0].nrows();
            for v in &vals {
                if v.nrows() != rows {
                    return Err(shape_err("concat", vals[0].dim(), v.dim()));
                }
            }
            let views: Vec<ArrayView2<'_, T>> = vals.iter().map(|v| v.view()).collect();
            concatenate(Axis(1), &views).expect("row counts checked")
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        first
            .tape
            .push(value, Op::Concat(parts.iter().map(|p| p.index).collect()), rg, "concat")
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> TensorResult<Var<'t, T>> {
        let dim = self.shape();
        if start > end || end > dim.0 {
            return Err(shape_err("slice_rows", dim, (start, end)));
        }
        self.unary(Op::SliceRows(self.index, start), "slice_rows", |a| {
            a.slice(s![start..end, ..]).to_owned()
        })
    }

    pub fn relu(&self) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Relu(self.index), "relu", |a| a.mapv(|v| v.max(T::zero())))
    }

    pub fn sigmoid(&self) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Sigmoid(self.index), "sigmoid", |a| a.mapv(sigmoid))
    }

    pub fn tanh(&self) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Tanh(self.index), "tanh", |a| a.mapv(|v| v.tanh()))
    }

    /// Softmax normalizing along `axis` (`Axis(1)`: each row sums to one).
    pub fn softmax(&self, axis: Axis) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Softmax(self.index, axis), "softmax", |a| {
            let mut out = a.to_owned();
            for lane in out.lanes_mut(axis) {
                softmax_in_place(lane);
            }
            out
        })
    }

    /// Natural logarithm; non-positive inputs raise a numerical error.
    pub fn log(&self) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Log(self.index), "log", |a| a.mapv(|v| v.ln()))
    }

    pub fn powf(&self, exponent: T) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Pow(self.index, exponent), "powf", |a| a.mapv(|v| v.powf(exponent)))
    }

    pub fn clamp(&self, lo: T, hi: T) -> TensorResult<Var<'t, T>> {
        self.unary(Op::Clamp(self.index, lo, hi), "clamp", |a| {
            a.mapv(|v| v.max(lo).min(hi))
        })
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: T, training: bool, rng: &mut R) -> TensorResult<Var<'t, T>> {
        if !training || rate == T::zero() {
            return Ok(*self);
        }
        let keep = T::one() - rate;
        let scale = T::one() / keep;
        let rate64 = rate.as_f64();
        let mask = Array2::from_shape_simple_fn(self.shape(), || {
            if rng.random::<f64>() < rate64 {
                T::zero()
            } else {
                scale
            }
        });
        let mask = self.tape.constant(mask)?;
        self.mul(mask)
    }

    /// Sparse aggregation: row `i` of the result is `sum_e w_e * x[cols[e]]`
    /// over the edges targeting `i`. `weights` is an `E x 1` column; `None`
    /// means every weight is one.
    pub fn spmm(edges: &Arc<EdgeList>, weights: Option<Var<'t, T>>, x: Var<'t, T>) -> TensorResult<Var<'t, T>> {
        let value = {
            let xv = x.node_value();
            if xv.nrows() != edges.num_nodes() {
                return Err(shape_err("spmm", xv.dim(), (edges.num_nodes(), edges.num_nodes())));
            }
            let wv = weights.as_ref().map(|w| w.node_value());
            if let Some(w) = &wv {
                if w.dim() != (edges.num_edges(), 1) {
                    return Err(shape_err("spmm", w.dim(), (edges.num_edges(), 1)));
                }
            }
            let mut out = Array2::zeros(xv.raw_dim());
            for row in 0..edges.num_nodes() {
                let mut acc = out.row_mut(row);
                for e in edges.edge_range(row) {
                    let w = wv.as_ref().map_or(T::one(), |w| w[[e, 0]]);
                    acc.scaled_add(w, &xv.row(edges.cols()[e]));
                }
            }
            out
        };
        if let Some(w) = weights {
            x.same_tape(&w)?;
        }
        let rg = x.requires_grad() || weights.is_some_and(|w| w.requires_grad());
        x.tape.push(
            value,
            Op::SpMM {
                edges: Arc::clone(edges),
                weights: weights.map(|w| w.index),
                x: x.index,
            },
            rg,
            "spmm",
        )
    }

    /// Per-edge dot product `p[i] . q[cols[e]]` as an `E x 1` column.
    pub fn edge_dot(edges: &Arc<EdgeList>, p: Var<'t, T>, q: Var<'t, T>) -> TensorResult<Var<'t, T>> {
        p.same_tape(&q)?;
        let value = {
            let pv = p.node_value();
            let qv = q.node_value();
            if pv.dim() != qv.dim() || pv.nrows() != edges.num_nodes() {
                return Err(shape_err("edge_dot", pv.dim(), qv.dim()));
            }
            let mut out = Array2::zeros((edges.num_edges(), 1));
            for row in 0..edges.num_nodes() {
                let pr = pv.row(row);
                for e in edges.edge_range(row) {
                    out[[e, 0]] = pr.dot(&qv.row(edges.cols()[e]));
                }
            }
            out
        };
        let rg = p.requires_grad() || q.requires_grad();
        p.tape.push(
            value,
            Op::EdgeDot {
                edges: Arc::clone(edges),
                p: p.index,
                q: q.index,
            },
            rg,
            "edge_dot",
        )
    }

    /// Sums the rows of each segment, giving one row per segment.
    pub fn segment_sum(&self, segments: &Arc<Segments>) -> TensorResult<Var<'t, T>> {
        let dim = self.shape();
        if dim.0 != segments.total_rows() {
            return Err(shape_err("segment_sum", dim, (segments.total_rows(), dim.1)));
        }
        self.unary(Op::SegmentSum(Arc::clone(segments), self.index), "segment_sum", |a| {
            let mut out = Array2::zeros((segments.len(), a.ncols()));
            for sgm in 0..segments.len() {
                let mut acc = out.row_mut(sgm);
                for r in segments.range(sgm) {
                    acc += &a.row(r);
                }
            }
            out
        })
    }

    /// Softmax over the rows of each segment of an `n x 1` column.
    pub fn segment_softmax(&self, segments: &Arc<Segments>) -> TensorResult<Var<'t, T>> {
        let dim = self.shape();
        if dim != (segments.total_rows(), 1) {
            return Err(shape_err("segment_softmax", dim, (segments.total_rows(), 1)));
        }
        self.unary(
            Op::SegmentSoftmax(Arc::clone(segments), self.index),
            "segment_softmax",
            |a| {
                let mut out = a.to_owned();
                for sgm in 0..segments.len() {
                    let range = segments.range(sgm);
                    softmax_in_place(out.slice_mut(s![range, 0]));
                }
                out
            },
        )
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_in_place<T: Scalar>(mut values: ArrayViewMut1<'_, T>) {
    let max = values.fold(T::neg_infinity(), |m, &v| m.max(v));
    values.mapv_inplace(|v| (v - max).exp());
    let total = values.sum();
    values.mapv_inplace(|v| v / total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity() {
        let tape = Tape::<f64>::new();
        let i2 = tape.constant(Array2::eye(2)).unwrap();
        let m = tape.constant(array![[1.5, -2.0], [0.25, 4.0]]).unwrap();
        assert_eq!(i2.matmul(m).unwrap().value(), array![[1.5, -2.0], [0.25, 4.0]]);
    }

    #[test]
    fn sums_along_axes() {
        let tape = Tape::<f64>::new();
        let ones = tape.constant(Array2::ones((2, 3))).unwrap();
        assert_eq!(ones.sum_axis(Axis(1)).unwrap().value(), array![[3.0], [3.0]]);
        assert_eq!(ones.sum_axis(Axis(0)).unwrap().value(), array![[2.0, 2.0, 2.0]]);
        assert_eq!(ones.sum().unwrap().item(), 6.0);
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Array2::ones((2, 3))).unwrap();
        let b = tape.constant(Array2::ones((2, 3))).unwrap();
        assert!(matches!(a.matmul(b), Err(TensorError::Shape { .. })));
        let c = tape.constant(Array2::ones((3, 3))).unwrap();
        assert!(matches!(a.add(c), Err(TensorError::Shape { .. })));
        let row = tape.constant(Array2::ones((1, 3))).unwrap();
        assert_eq!(a.add(row).unwrap().value(), Array2::from_elem((2, 3), 2.0));
    }

    #[test]
    fn activations_at_known_points() {
        let tape = Tape::<f64>::new();
        let z = tape.variable(array![[0.0]]).unwrap();
        assert_eq!(z.sigmoid().unwrap().item(), 0.5);
        let t = z.tanh().unwrap();
        t.backward().unwrap();
        assert_eq!(tape.grad(z).unwrap()[[0, 0]], 1.0);
        let logits = tape.constant(array![[0.3, 0.3, 0.3, 0.3]]).unwrap();
        let sm = logits.softmax(Axis(1)).unwrap().value();
        assert!(sm.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(array![[1.0, -3.0, 20.0], [700.0, 699.0, -5.0]]).unwrap();
        let y = x.softmax(Axis(1)).unwrap().value();
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_of_nonpositive_is_numerical_error() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(array![[0.0]]).unwrap();
        assert!(matches!(x.log(), Err(TensorError::Numerical { .. })));
        let y = tape.constant(array![[-1.0]]).unwrap();
        assert!(matches!(y.log(), Err(TensorError::Numerical { .. })));
    }

    #[test]
    fn square_gradient_and_accumulation() {
        let tape = Tape::<f64>::new();
        let x = tape.variable(array![[3.0]]).unwrap();
        let y = x.mul(x).unwrap();
        assert_eq!(y.item(), 9.0);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap()[[0, 0]], 6.0);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap()[[0, 0]], 12.0);
        tape.zero_grad();
        assert_eq!(tape.grad(x).unwrap()[[0, 0]], 0.0);
    }

    #[test]
    fn backward_rejects_foreign_or_non_scalar_loss() {
        let t1 = Tape::<f64>::new();
        let t2 = Tape::<f64>::new();
        let x = t2.variable(array![[1.0]]).unwrap();
        assert!(matches!(t1.backward(x), Err(TensorError::Tape(_))));
        let v = t1.variable(array![[1.0, 2.0]]).unwrap();
        assert!(matches!(t1.backward(v), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Array2::ones((4, 4))).unwrap();
        assert_eq!(
            x.dropout(0.0, true, &mut rng).unwrap().value(),
            Array2::<f64>::ones((4, 4))
        );
        assert_eq!(
            x.dropout(0.5, false, &mut rng).unwrap().value(),
            Array2::<f64>::ones((4, 4))
        );
        let y = x.dropout(0.5, true, &mut rng).unwrap().value();
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Array2::ones((100_000, 1))).unwrap();
        let mean = x.dropout(0.5, true, &mut rng).unwrap().value().mean().unwrap();
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn stable_sigmoid_extremes() {
        assert_eq!(sigmoid(-800.0f64), 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert!((sigmoid(2.0f64) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-16);
    }
}
