use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::kernels;
use crate::math::{sigmoid, softplus};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf { differentiable: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Elementwise `a / b`, defined as 0 where `b == 0`.
    DivSafe(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Shift(usize, T),
    /// `op(a) . op(b)` where `op` transposes when the flag is set.
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    BroadcastScalar(usize),
    SumAll(usize),
    BroadcastRows(usize),
    SumRows(usize),
    BroadcastCols(usize),
    SumCols(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Square(usize),
    Sqrt(usize),
    RowNorm(usize),
    ConcatRows(Vec<usize>),
    SliceRows { a: usize, start: usize },
    PadRows { a: usize, start: usize },
    RowwiseMatvec(usize, usize),
    RowwiseMatvecT(usize, usize),
    RowwiseOuter(usize, usize),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf { .. } => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | DivSafe(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            RowwiseMatvec(a, b) | RowwiseMatvecT(a, b) | RowwiseOuter(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Shift(a, _) | Transpose(a) | BroadcastScalar(a) | SumAll(a)
            | BroadcastRows(a) | SumRows(a) | BroadcastCols(a) | SumCols(a) | Tanh(a)
            | Sigmoid(a) | Softplus(a) | Square(a) | Sqrt(a) | RowNorm(a) => vec![*a],
            SliceRows { a, .. } | PadRows { a, .. } => vec![*a],
            ConcatRows(parts) => parts.clone(),
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Rc<Array2<T>>,
    requires_grad: bool,
}

/// Append-only record of matrix operations.
///
/// A tape is single-threaded. Build one per forward pass (or call
/// [`Tape::reset`] between passes); independent tapes may live on
/// different threads.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({}x{})", self.id, r, c)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node so the tape can record a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Registers a differentiable leaf (a parameter block or an input that
    /// gradients are requested for).
    pub fn leaf(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(Op::Leaf { differentiable: true }, value)
    }

    /// Records a constant; gradients never flow into it.
    pub fn constant(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(Op::Leaf { differentiable: false }, value)
    }

    pub fn scalar(&self, x: T) -> Var<'_, T> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Stacks the rows of `parts` (all with equal column counts).
    pub fn concat_rows(&self, parts: &[Var<'_, T>]) -> Var<'_, T> {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let views: Vec<Rc<Array2<T>>> = parts.iter().map(|p| p.value()).collect();
        let cols = views[0].ncols();
        assert!(
            views.iter().all(|v| v.ncols() == cols),
            "concat_rows: column mismatch"
        );
        let refs: Vec<_> = views.iter().map(|v| v.view()).collect();
        let value = ndarray::concatenate(Axis(0), &refs).expect("concat_rows: shapes checked");
        self.push(Op::ConcatRows(parts.iter().map(|p| p.id).collect()), value)
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Array2<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, op: Op<T>, value: Array2<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = match &op {
            Op::Leaf { differentiable } => *differentiable,
            other => other.inputs().iter().any(|&i| nodes[i].requires_grad),
        };
        nodes.push(Node {
            op,
            value: Rc::new(value),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn owns(&self, v: &Var<'_, T>) -> bool {
        std::ptr::eq(self, v.tape) && v.id < self.len()
    }

    /// Gradients of the scalar `output` with respect to each leaf in `wrt`.
    ///
    /// The returned nodes live on the tape and can be differentiated again.
    /// Leaves with no path to `output` get an exact zero.
    pub fn grad<'t>(&'t self, output: Var<'t, T>, wrt: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        if !self.owns(&output) {
            return Err(Error::invalid("objective was not recorded on this tape"));
        }
        if output.shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "objective must be a scalar, got shape {:?}",
                output.shape()
            )));
        }
        for w in wrt {
            if !self.owns(w) {
                return Err(Error::invalid("gradient requested for a foreign node"));
            }
            let is_leaf = matches!(
                self.nodes.borrow()[w.id].op,
                Op::Leaf { differentiable: true }
            );
            if !is_leaf {
                return Err(Error::invalid(format!(
                    "node {} is not a registered differentiable leaf",
                    w.id
                )));
            }
        }

        let top = output.id;
        let mut needed = vec![false; top + 1];
        for w in wrt {
            if w.id <= top {
                needed[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..=top {
                if !needed[i] && nodes[i].requires_grad {
                    needed[i] = nodes[i].op.inputs().iter().any(|&j| needed[j]);
                }
            }
        }

        let mut adjoint: Vec<Option<usize>> = vec![None; top + 1];
        if needed[top] {
            adjoint[top] = Some(self.scalar(T::one()).id);
        }
        for i in (0..=top).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            if matches!(op, Op::Leaf { .. }) {
                continue;
            }
            let contributions = self.vjp(&op, self.var(i), self.var(g), &|j| needed[j]);
            for (j, c) in contributions {
                adjoint[j] = Some(match adjoint[j] {
                    None => c.id,
                    Some(prev) => (self.var(prev) + c).id,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.id).copied().flatten() {
                Some(id) => self.var(id),
                None => {
                    let (r, c) = w.shape();
                    self.constant(Array2::zeros((r, c)))
                }
            })
            .collect())
    }

    /// Gradient values of `output` with respect to `wrt`.
    pub fn gradients<'t>(&'t self, output: Var<'t, T>, wrt: &[Var<'t, T>]) -> Result<Vec<Array2<T>>> {
        Ok(self
            .grad(output, wrt)?
            .into_iter()
            .map(|g| g.value().as_ref().clone())
            .collect())
    }

    /// Row-wise Euclidean norms of `d output / d input` as an `r x 1` node.
    ///
    /// When `output` sums a function applied to each row of `input`, row `i`
    /// of the result is the input-gradient norm at sample `i`. The result
    /// remains differentiable with respect to every other leaf.
    pub fn grad_norm<'t>(&'t self, output: Var<'t, T>, input: Var<'t, T>) -> Result<Var<'t, T>> {
        let g = self.grad(output, &[input])?;
        Ok(g[0].row_norm())
    }

    fn vjp<'t>(
        &'t self,
        op: &Op<T>,
        out: Var<'t, T>,
        g: Var<'t, T>,
        want: &dyn Fn(usize) -> bool,
    ) -> Vec<(usize, Var<'t, T>)> {
        let v = |id| self.var(id);
        let mut res = Vec::new();
        let mut emit = |id: usize, f: &dyn Fn() -> Var<'t, T>| {
            if want(id) {
                res.push((id, f()));
            }
        };
        match *op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g);
            }
            Op::Sub(a, b) => {
                emit(a, &|| g);
                emit(b, &|| -g);
            }
            Op::Mul(a, b) => {
                emit(a, &|| g * v(b));
                emit(b, &|| g * v(a));
            }
            Op::DivSafe(a, b) => {
                emit(a, &|| g.div_safe(v(b)));
                emit(b, &|| -(g * out).div_safe(v(b)));
            }
            Op::Neg(a) => emit(a, &|| -g),
            Op::Scale(a, c) => emit(a, &|| g.scale(c)),
            Op::Shift(a, _) => emit(a, &|| g),
            Op::MatMul { a, b, ta, tb } => {
                emit(a, &|| {
                    if ta {
                        self.matmul_raw(v(b), g, tb, true)
                    } else {
                        self.matmul_raw(g, v(b), false, !tb)
                    }
                });
                emit(b, &|| {
                    if tb {
                        self.matmul_raw(g, v(a), true, ta)
                    } else {
                        self.matmul_raw(v(a), g, !ta, false)
                    }
                });
            }
            Op::Transpose(a) => emit(a, &|| g.t()),
            Op::BroadcastScalar(a) => emit(a, &|| g.sum()),
            Op::SumAll(a) => {
                let (r, c) = v(a).shape();
                emit(a, &|| g.broadcast_scalar(r, c));
            }
            Op::BroadcastRows(a) => emit(a, &|| g.sum_rows()),
            Op::SumRows(a) => {
                let r = v(a).shape().0;
                emit(a, &|| g.broadcast_rows(r));
            }
            Op::BroadcastCols(a) => emit(a, &|| g.sum_cols()),
            Op::SumCols(a) => {
                let c = v(a).shape().1;
                emit(a, &|| g.broadcast_cols(c));
            }
            Op::Tanh(a) => emit(a, &|| g - g * (out * out)),
            Op::Sigmoid(a) => emit(a, &|| g * (out - out * out)),
            Op::Softplus(a) => emit(a, &|| g * v(a).sigmoid()),
            Op::Square(a) => emit(a, &|| (g * v(a)).scale(T::of(2.0))),
            Op::Sqrt(a) => emit(a, &|| g.scale(T::of(0.5)).div_safe(out)),
            Op::RowNorm(a) => {
                let c = v(a).shape().1;
                emit(a, &|| g.div_safe(out).broadcast_cols(c) * v(a));
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = v(p).shape().0;
                    let start = offset;
                    emit(p, &|| g.slice_rows(start, rows));
                    offset += rows;
                }
            }
            Op::SliceRows { a, start } => {
                let total = v(a).shape().0;
                emit(a, &|| g.pad_rows(start, total));
            }
            Op::PadRows { a, start } => {
                let rows = v(a).shape().0;
                emit(a, &|| g.slice_rows(start, rows));
            }
            Op::RowwiseMatvec(w, x) => {
                emit(w, &|| g.rowwise_outer(v(x)));
                emit(x, &|| v(w).rowwise_matvec_t(g));
            }
            Op::RowwiseMatvecT(w, gin) => {
                emit(w, &|| v(gin).rowwise_outer(g));
                emit(gin, &|| v(w).rowwise_matvec(g));
            }
            Op::RowwiseOuter(a, b) => {
                emit(a, &|| g.rowwise_matvec(v(b)));
                emit(b, &|| g.rowwise_matvec_t(v(a)));
            }
        }
        res
    }

    fn matmul_raw<'t>(&'t self, a: Var<'t, T>, b: Var<'t, T>, ta: bool, tb: bool) -> Var<'t, T> {
        let av = a.value();
        let bv = b.value();
        let left = if ta { av.t() } else { av.view() };
        let right = if tb { bv.t() } else { bv.view() };
        assert_eq!(
            left.ncols(),
            right.nrows(),
            "matmul: inner dimensions {:?} x {:?}",
            left.dim(),
            right.dim()
        );
        let value = left.dot(&right);
        self.push(
            Op::MatMul {
                a: a.id,
                b: b.id,
                ta,
                tb,
            },
            value,
        )
    }
}

fn same_shape<T>(op: &str, a: &Array2<T>, b: &Array2<T>) {
    assert_eq!(a.dim(), b.dim(), "{op}: shape mismatch {:?} vs {:?}", a.dim(), b.dim());
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Array2<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar node");
        v[[0, 0]]
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let value = self.value().mapv(f);
        self.tape.push(op, value)
    }

    fn binary(self, other: Var<'t, T>, name: &str, op: Op<T>, f: impl Fn(T, T) -> T) -> Var<'t, T> {
        let a = self.value();
        let b = other.value();
        same_shape(name, &a, &b);
        let value = Zip::from(&*a).and(&*b).map_collect(|&x, &y| f(x, y));
        self.tape.push(op, value)
    }

    pub fn div_safe(self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary(other, "div_safe", Op::DivSafe(self.id, other.id), |x, y| {
            if y == T::zero() {
                T::zero()
            } else {
                x / y
            }
        })
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn shift(self, c: T) -> Var<'t, T> {
        self.unary(Op::Shift(self.id, c), |x| x + c)
    }

    /// Matrix product `self . other`.
    pub fn matmul(self, other: Var<'t, T>) -> Var<'t, T> {
        self.tape.matmul_raw(self, other, false, false)
    }

    /// `self . other^T`.
    pub fn matmul_t(self, other: Var<'t, T>) -> Var<'t, T> {
        self.tape.matmul_raw(self, other, false, true)
    }

    /// `self^T . other`.
    pub fn t_matmul(self, other: Var<'t, T>) -> Var<'t, T> {
        self.tape.matmul_raw(self, other, true, false)
    }

    pub fn t(self) -> Var<'t, T> {
        let value = self.value().t().to_owned();
        self.tape.push(Op::Transpose(self.id), value)
    }

    /// Expands a `1 x 1` node to `rows x cols`.
    pub fn broadcast_scalar(self, rows: usize, cols: usize) -> Var<'t, T> {
        let x = self.item();
        self.tape
            .push(Op::BroadcastScalar(self.id), Array2::from_elem((rows, cols), x))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(self) -> Var<'t, T> {
        let total = self.value().sum();
        self.tape
            .push(Op::SumAll(self.id), Array2::from_elem((1, 1), total))
    }

    pub fn mean(self) -> Var<'t, T> {
        let (r, c) = self.shape();
        self.sum().scale(T::one() / T::of_usize(r * c))
    }

    /// Repeats a `1 x c` row `rows` times.
    pub fn broadcast_rows(self, rows: usize) -> Var<'t, T> {
        let v = self.value();
        assert_eq!(v.nrows(), 1, "broadcast_rows needs a single row");
        let value = v
            .broadcast((rows, v.ncols()))
            .expect("row broadcast")
            .to_owned();
        self.tape.push(Op::BroadcastRows(self.id), value)
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(self) -> Var<'t, T> {
        let value = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        self.tape.push(Op::SumRows(self.id), value)
    }

    /// Repeats an `r x 1` column `cols` times.
    pub fn broadcast_cols(self, cols: usize) -> Var<'t, T> {
        let v = self.value();
        assert_eq!(v.ncols(), 1, "broadcast_cols needs a single column");
        let value = v
            .broadcast((v.nrows(), cols))
            .expect("column broadcast")
            .to_owned();
        self.tape.push(Op::BroadcastCols(self.id), value)
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(self) -> Var<'t, T> {
        let value = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.tape.push(Op::SumCols(self.id), value)
    }

    /// Adds a `1 x c` row to every row.
    pub fn add_row(self, row: Var<'t, T>) -> Var<'t, T> {
        let rows = self.shape().0;
        self + row.broadcast_rows(rows)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(self) -> Var<'t, T> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.unary(Op::Sqrt(self.id), |x| x.sqrt())
    }

    /// Euclidean norm of each row, as an `r x 1` column.
    pub fn row_norm(self) -> Var<'t, T> {
        let value = self
            .value()
            .map_axis(Axis(1), |row| row.iter().map(|&x| x * x).sum::<T>().sqrt())
            .insert_axis(Axis(1));
        self.tape.push(Op::RowNorm(self.id), value)
    }

    pub fn slice_rows(self, start: usize, rows: usize) -> Var<'t, T> {
        let value = self.value().slice(s![start..start + rows, ..]).to_owned();
        self.tape.push(Op::SliceRows { a: self.id, start }, value)
    }

    /// Embeds `self` at row `start` of a zero matrix with `total` rows.
    pub fn pad_rows(self, start: usize, total: usize) -> Var<'t, T> {
        let v = self.value();
        assert!(start + v.nrows() <= total, "pad_rows: out of range");
        let mut value = Array2::zeros((total, v.ncols()));
        value
            .slice_mut(s![start..start + v.nrows(), ..])
            .assign(&*v);
        self.tape.push(Op::PadRows { a: self.id, start }, value)
    }

    /// Per-row matrix-vector product. Row `s` of `self` holds a `p x q`
    /// matrix flattened row-major; row `s` of `x` holds a `q`-vector.
    pub fn rowwise_matvec(self, x: Var<'t, T>) -> Var<'t, T> {
        let value = kernels::rowwise_matvec(&self.value(), &x.value());
        self.tape.push(Op::RowwiseMatvec(self.id, x.id), value)
    }

    /// Per-row transposed product: row `s` of the result is `W_s^T g_s`.
    pub fn rowwise_matvec_t(self, g: Var<'t, T>) -> Var<'t, T> {
        let value = kernels::rowwise_matvec_t(&self.value(), &g.value());
        self.tape.push(Op::RowwiseMatvecT(self.id, g.id), value)
    }

    /// Per-row outer product flattened row-major.
    pub fn rowwise_outer(self, other: Var<'t, T>) -> Var<'t, T> {
        let value = kernels::rowwise_outer(&self.value(), &other.value());
        self.tape.push(Op::RowwiseOuter(self.id, other.id), value)
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self::Output {
        self.binary(rhs, "add", Op::Add(self.id, rhs.id), |x, y| x + y)
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.binary(rhs, "sub", Op::Sub(self.id, rhs.id), |x, y| x - y)
    }
}

/// Elementwise (Hadamard) product.
impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.binary(rhs, "mul", Op::Mul(self.id, rhs.id), |x, y| x * y)
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self::Output {
        self.unary(Op::Neg(self.id), |x| -x)
    }
}
