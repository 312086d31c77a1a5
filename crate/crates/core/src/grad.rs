//! Scalar reverse-mode differentiation.
//!
//! A [`Tape`] records every scalar operation as a node holding its forward
//! value and the local partial derivatives with respect to (at most two)
//! operands. [`Tape::backward`] then sweeps the node list once in reverse and
//! accumulates adjoints.
//!
//! Numerical code in this crate is written against the [`Real`] trait, which
//! is implemented both by plain `f64` and by taped [`Var`]s. The same code path
//! therefore produces the untaped and the taped evaluation, and the two are
//! bit-identical.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Margin applied to the argument of `atanh` so the result stays finite.
pub const ATANH_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Offset,
    Exp,
    Tanh,
    Atanh,
    Relu,
    Sigmoid,
    Square,
    Clamp,
}

impl Op {
    fn arity(self) -> usize {
        match self {
            Op::Leaf | Op::Const => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    args: [u32; 2],
    partials: [f64; 2],
    value: f64,
}

/// Append-only record of a scalar computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node while keeping the allocation. Requires exclusive
    /// access, so no `Var` of this tape can outlive the call.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Registers an independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, [u32::MAX; 2], [0.0; 2], value)
    }

    /// Registers a constant; it receives an adjoint but is not meant to be read.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, [u32::MAX; 2], [0.0; 2], value)
    }

    /// Opcode and operand indices of node `index`.
    pub fn node(&self, index: usize) -> (Op, Vec<usize>) {
        let nodes = self.nodes.borrow();
        let node = &nodes[index];
        let args = node.args[..node.op.arity()]
            .iter()
            .map(|&a| a as usize)
            .collect();
        (node.op, args)
    }

    /// Cached forward value of node `index`.
    pub fn value_at(&self, index: usize) -> f64 {
        self.nodes.borrow()[index].value
    }

    fn push(&self, op: Op, args: [u32; 2], partials: [f64; 2], value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(Node {
            op,
            args,
            partials,
            value,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Reverse sweep from `output`. The output adjoint is seeded with 1.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(self, output.tape),
            "backward called with a variable from another tape"
        );
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let g = adjoint[i];
            if g == 0.0 {
                continue;
            }
            let node = &nodes[i];
            match node.op.arity() {
                0 => {}
                1 => adjoint[node.args[0] as usize] += g * node.partials[0],
                _ => {
                    adjoint[node.args[0] as usize] += g * node.partials[0];
                    adjoint[node.args[1] as usize] += g * node.partials[1];
                }
            }
        }
        Gradients { adjoint }
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoint: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoint[var.index as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adjoint
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    pub fn index(self) -> usize {
        self.index as usize
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, partial: f64, value: f64) -> Var<'t> {
        self.tape.push(op, [self.index, u32::MAX], [partial, 0.0], value)
    }

    fn binary(self, other: Var<'t>, op: Op, partials: [f64; 2], value: f64) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
        self.tape.push(op, [self.index, other.index], partials, value)
    }
}

/// Scalar arithmetic shared by `f64` and [`Var`].
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn scale(self, c: f64) -> Self;
    fn offset(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    /// Inverse hyperbolic tangent of the argument clipped to
    /// `[-1 + ATANH_MARGIN, 1 - ATANH_MARGIN]`.
    fn atanh(self) -> Self;
    /// `max(0, x)`, with derivative 0 at 0.
    fn relu(self) -> Self;
    fn sigmoid(self) -> Self;
    fn square(self) -> Self;
    /// Clip into `[lo, hi]`; derivative 1 strictly inside, 0 when clipped.
    fn clamp(self, lo: f64, hi: f64) -> Self;
}

pub(crate) fn clipped_atanh_arg(x: f64) -> f64 {
    x.clamp(-1.0 + ATANH_MARGIN, 1.0 - ATANH_MARGIN)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn offset(self, c: f64) -> Self {
        self + c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn atanh(self) -> Self {
        f64::atanh(clipped_atanh_arg(self))
    }
    fn relu(self) -> Self {
        if self > 0.0 || self.is_nan() {
            self
        } else {
            0.0
        }
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn square(self) -> Self {
        self * self
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }
    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn scale(self, c: f64) -> Self {
        self.unary(Op::Scale, c, self.value * c)
    }
    fn offset(self, c: f64) -> Self {
        self.unary(Op::Offset, 1.0, self.value + c)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(Op::Exp, e, e)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(Op::Tanh, 1.0 - t * t, t)
    }
    fn atanh(self) -> Self {
        let x = clipped_atanh_arg(self.value);
        let partial = if x == self.value { 1.0 / (1.0 - x * x) } else { 0.0 };
        self.unary(Op::Atanh, partial, x.atanh())
    }
    fn relu(self) -> Self {
        let v = Real::relu(self.value);
        let partial = if self.value > 0.0 { 1.0 } else { 0.0 };
        self.unary(Op::Relu, partial, v)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        self.unary(Op::Sigmoid, s * (1.0 - s), s)
    }
    fn square(self) -> Self {
        self.unary(Op::Square, 2.0 * self.value, self.value * self.value)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        let v = self.value.clamp(lo, hi);
        let partial = if self.value > lo && self.value < hi { 1.0 } else { 0.0 };
        self.unary(Op::Clamp, partial, v)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, [1.0, 1.0], self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, [1.0, -1.0], self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, [rhs.value, self.value], self.value * rhs.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.binary(rhs, Op::Div, [1.0 / rhs.value, -q / rhs.value], q)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -1.0, -self.value)
    }
}

/// Checks the taped gradient of `f` at `x` against central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`. NaN anywhere yields NaN.
pub fn grad_check<F>(f: F, x: &[f64], h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    assert!(h > 0.0, "step must be positive");
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = x.iter().map(|&v| tape.var(v)).collect();
        let out = f(&tape, &vars);
        let grads = tape.backward(out);
        vars.iter().map(|&v| grads.wrt(v)).collect::<Vec<_>>()
    };
    let eval = |point: &[f64]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|&v| tape.var(v)).collect();
        f(&tape, &vars).value()
    };
    let mut worst = 0.0f64;
    let mut point = x.to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        point[i] = x[i] + h;
        let up = eval(&point);
        point[i] = x[i] - h;
        let down = eval(&point);
        point[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_value_and_gradient() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x;
        assert_eq!(y.value(), 9.0);
        assert_eq!(tape.backward(y).wrt(x), 6.0);
    }

    #[test]
    fn tanh_at_zero() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        assert_eq!(Real::tanh(x).value(), 0.0);
    }

    #[test]
    fn relu_flat_region_and_kink() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let y = x.relu();
        assert_eq!(tape.backward(y).wrt(x), 0.0);
        let z = tape.var(0.0);
        let r = z.relu();
        assert_eq!(tape.backward(r).wrt(z), 0.0);
    }

    #[test]
    fn sigmoid_slope_at_origin() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = x.sigmoid();
        assert_eq!(y.value(), 0.5);
        assert_eq!(tape.backward(y).wrt(x), 0.25);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = x * x + x.scale(3.0);
        assert_eq!(tape.backward(y).wrt(x), 7.0);
    }

    #[test]
    fn atanh_is_clipped_and_flat_outside() {
        let tape = Tape::new();
        let x = tape.var(1.0);
        let y = x.atanh();
        assert!(y.value().is_finite());
        assert_eq!(tape.backward(y).wrt(x), 0.0);
    }

    #[test]
    fn tanh_grad_check() {
        let err = grad_check(|_, x| Real::tanh(x[0]), &[0.7], 1e-6);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(|tape, _| tape.constant(4.0), &[0.3, -2.0], 1e-6);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn nan_propagates_through_grad_check() {
        let err = grad_check(|_, x| x[0] / x[0].lift(0.0) * x[0].lift(0.0), &[1.0], 1e-6);
        assert!(err.is_nan());
    }

    #[test]
    fn operands_precede_nodes() {
        let tape = Tape::new();
        let a = tape.var(0.4);
        let b = tape.var(-1.3);
        let c = (a * b).exp() + Real::tanh(a - b) / b.square();
        let _ = c.sigmoid().clamp(-1.0, 1.0);
        for i in 0..tape.len() {
            let (_, args) = tape.node(i);
            assert!(args.iter().all(|&a| a < i));
        }
    }

    #[test]
    #[should_panic(expected = "different tapes")]
    fn mixing_tapes_is_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let _ = t1.var(1.0) + t2.var(2.0);
    }

    fn expr<S: Real>(a: S, b: S) -> S {
        let u = (a * b).scale(0.5).exp() - a.offset(1.5).relu();
        let v = Real::tanh(u) / (b.square().offset(1.0));
        (v.sigmoid() + (a.scale(0.3)).atanh()).clamp(-5.0, 5.0) - -a
    }

    proptest! {
        #[test]
        fn taping_is_bit_identical(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let tape = Tape::new();
            let taped = expr(tape.var(a), tape.var(b)).value();
            prop_assert_eq!(taped.to_bits(), expr(a, b).to_bits());
        }
    }

    type Unary = for<'t> fn(Var<'t>) -> Var<'t>;

    #[test]
    fn primitive_adjoints_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let unary: [(&str, Unary); 8] = [
            ("exp", |x| x.exp()),
            ("tanh", |x| Real::tanh(x)),
            ("atanh", |x| x.scale(0.45).atanh()),
            ("relu", |x| x.relu()),
            ("sigmoid", |x| x.sigmoid()),
            ("square", |x| x.square()),
            ("neg", |x| -x),
            ("scale_offset", |x| x.scale(-2.5).offset(0.75)),
        ];
        for (name, op) in unary {
            for _ in 0..100 {
                let mut x: f64 = rng.random_range(-2.0..2.0);
                if name == "relu" && x.abs() < 1e-3 {
                    x += 0.01;
                }
                let err = grad_check(|_, v| op(v[0]), &[x], 1e-6);
                assert!(err < 1e-6, "{name} at {x}: {err}");
            }
        }
        for _ in 0..100 {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let point = [a, b];
            for err in [
                grad_check(|_, v| v[0] + v[1], &point, 1e-6),
                grad_check(|_, v| v[0] - v[1], &point, 1e-6),
                grad_check(|_, v| v[0] * v[1], &point, 1e-6),
                grad_check(|_, v| v[0] / v[1], &point, 1e-6),
            ] {
                assert!(err < 1e-6, "binary at {point:?}: {err}");
            }
        }
    }
}
