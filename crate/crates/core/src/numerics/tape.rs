//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Nodes are appended in evaluation order, so insertion order is already a
//! topological order and the backward pass is a single reverse sweep. Each
//! node stores its parents together with the local partial derivative of the
//! node with respect to that parent. Constants are never recorded: a [`Var`]
//! without a node id is a plain number carried alongside the graph.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

const CONST: u32 = u32::MAX;

#[derive(Default)]
struct TapeData {
    // Partials of node i live in entries offsets[i]..offsets[i + 1].
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

/// Recording context for [`Var`]s. Confined to one thread (`!Sync`).
pub struct Tape {
    data: RefCell<TapeData>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        let data = TapeData {
            offsets: vec![0],
            ..Default::default()
        };
        Self {
            data: RefCell::new(data),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.data.borrow().offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        let id = self.push(std::iter::empty());
        Var {
            tape: self,
            id,
            val: value,
        }
    }

    /// Registers one leaf per entry of `values`.
    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// An untracked constant.
    pub fn constant(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            id: CONST,
            val: value,
        }
    }

    fn push(&self, entries: impl IntoIterator<Item = (u32, f64)>) -> u32 {
        let mut d = self.data.borrow_mut();
        for (p, g) in entries {
            if p != CONST {
                d.parents.push(p);
                d.partials.push(g);
            }
        }
        let end = d.parents.len() as u32;
        d.offsets.push(end);
        let id = d.offsets.len() - 2;
        assert!(id < CONST as usize, "tape overflow");
        id as u32
    }

    fn node(&self, val: f64, entries: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        Var {
            tape: self,
            id: self.push(entries),
            val,
        }
    }

    /// Reverse sweep from `output`. Constants (and outputs from a different
    /// tape) yield an all-zero gradient.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        let d = self.data.borrow();
        let n = d.offsets.len() - 1;
        let mut adj = vec![0.0; n];
        if output.id != CONST && std::ptr::eq(output.tape, self) {
            adj[output.id as usize] = 1.0;
            for i in (0..=output.id as usize).rev() {
                let a = adj[i];
                if a == 0.0 {
                    continue;
                }
                let (s, e) = (d.offsets[i] as usize, d.offsets[i + 1] as usize);
                for k in s..e {
                    adj[d.parents[k] as usize] += a * d.partials[k];
                }
            }
        }
        Gradients { adj }
    }
}

/// Adjoints of every node from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// Derivative of the output with respect to `v` (zero for constants).
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        if v.id == CONST {
            0.0
        } else {
            self.adj.get(v.id as usize).copied().unwrap_or(0.0)
        }
    }

    pub fn collect(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(v)).collect()
    }

    /// Raw adjoint by node id.
    pub fn by_id(&self, id: usize) -> Option<f64> {
        self.adj.get(id).copied()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.id == CONST {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.id, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> Option<usize> {
        (self.id != CONST).then_some(self.id as usize)
    }

    pub fn is_const(&self) -> bool {
        self.id == CONST
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn pick_tape(a: &Var<'t>, b: &Var<'t>) -> &'t Tape {
        debug_assert!(
            a.id == CONST || b.id == CONST || std::ptr::eq(a.tape, b.tape),
            "mixing vars from different tapes"
        );
        if a.id == CONST {
            b.tape
        } else {
            a.tape
        }
    }

    fn unary(self, val: f64, partial: f64) -> Self {
        if self.id == CONST {
            self.tape.constant(val)
        } else {
            self.tape.node(val, [(self.id, partial)])
        }
    }

    fn many<'a>(xs: &'a [Var<'t>]) -> Option<&'t Tape> {
        xs.iter().find(|x| x.id != CONST).map(|x| x.tape)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        let tape = Self::pick_tape(&self, &rhs);
        let val = self.val + rhs.val;
        match (self.id == CONST, rhs.id == CONST) {
            (true, true) => tape.constant(val),
            (false, true) => Var { val, ..self },
            (true, false) => Var { val, ..rhs },
            _ => tape.node(val, [(self.id, 1.0), (rhs.id, 1.0)]),
        }
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        let tape = Self::pick_tape(&self, &rhs);
        let val = self.val - rhs.val;
        match (self.id == CONST, rhs.id == CONST) {
            (true, true) => tape.constant(val),
            (false, true) => Var { val, ..self },
            _ => tape.node(val, [(self.id, 1.0), (rhs.id, -1.0)]),
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        let tape = Self::pick_tape(&self, &rhs);
        let val = self.val * rhs.val;
        if self.id == CONST && rhs.id == CONST {
            tape.constant(val)
        } else {
            tape.node(val, [(self.id, rhs.val), (rhs.id, self.val)])
        }
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let tape = Self::pick_tape(&self, &rhs);
        let inv = 1.0 / rhs.val;
        let val = self.val * inv;
        if self.id == CONST && rhs.id == CONST {
            tape.constant(val)
        } else {
            tape.node(val, [(self.id, inv), (rhs.id, -val * inv)])
        }
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

// Shifting by a constant keeps the node: d(x + c) = dx.
impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        Var {
            val: self.val + rhs,
            ..self
        }
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        Var {
            val: self.val - rhs,
            ..self
        }
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        if rhs == 1.0 {
            return self;
        }
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(&self) -> f64 {
        self.val
    }

    fn lift(&self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn is_zero_const(&self) -> bool {
        self.id == CONST && self.val == 0.0
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }

    fn abs(self) -> Self {
        let g = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.val.abs(), g)
    }

    fn sigmoid(self) -> Self {
        let s = 1.0 / (1.0 + (-self.val).exp());
        self.unary(s, s * (1.0 - s))
    }

    fn square(self) -> Self {
        self.unary(self.val * self.val, 2.0 * self.val)
    }

    fn lincomb(coefs: &[f64], xs: &[Self]) -> Self {
        assert!(!xs.is_empty() && coefs.len() == xs.len());
        let val: f64 = coefs.iter().zip(xs).map(|(c, x)| c * x.val).sum();
        match Self::many(xs) {
            None => xs[0].tape.constant(val),
            Some(tape) => tape.node(
                val,
                xs.iter()
                    .zip(coefs)
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(x, &c)| (x.id, c)),
            ),
        }
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert!(!a.is_empty() && a.len() == b.len());
        let val: f64 = a.iter().zip(b).map(|(x, y)| x.val * y.val).sum();
        let tape = Self::many(a).or_else(|| Self::many(b));
        match tape {
            None => a[0].tape.constant(val),
            Some(tape) => tape.node(
                val,
                a.iter()
                    .zip(b)
                    .flat_map(|(x, y)| [(x.id, y.val), (y.id, x.val)]),
            ),
        }
    }

    fn sum_squares(xs: &[Self]) -> Self {
        assert!(!xs.is_empty());
        let val: f64 = xs.iter().map(|x| x.val * x.val).sum();
        match Self::many(xs) {
            None => xs[0].tape.constant(val),
            Some(tape) => tape.node(val, xs.iter().map(|x| (x.id, 2.0 * x.val))),
        }
    }

    fn sum(xs: &[Self]) -> Self {
        assert!(!xs.is_empty());
        let val: f64 = xs.iter().map(|x| x.val).sum();
        match Self::many(xs) {
            None => xs[0].tape.constant(val),
            Some(tape) => tape.node(val, xs.iter().map(|x| (x.id, 1.0))),
        }
    }
}
