//! Reverse-mode automatic differentiation over `f64` scalars.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! local partial derivatives with respect to its parents. Because nodes are
//! appended in evaluation order, a single reverse sweep over the node array
//! is a valid topological traversal for [`Tape::backward`].
//!
//! Numerical code in this crate is written against the [`Arith`] trait so
//! the same routine runs either on the tape (differentiable) or on plain
//! `f64` values through [`Plain`] (fast, values only).

use std::cell::RefCell;
use std::fmt::Debug;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Handle to a node on a [`Tape`]. Carries a copy of the forward value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Var {
    id: u32,
    value: f64,
}

impl Var {
    pub fn id(&self) -> NodeId {
        self.id as NodeId
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    value: f64,
    edges_start: u32,
    edges_end: u32,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    edges: Vec<(u32, f64)>,
}

/// Position on a tape that can later be restored with [`Tape::truncate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    nodes: usize,
    edges: usize,
}

/// Append-only computation record. Single-threaded; use one tape per worker.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(edges),
            }),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf node (parameter or input) with no parents.
    pub fn leaf(&self, value: f64) -> Var {
        self.push(value, &[])
    }

    pub fn leaves(&self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let inner = self.inner.borrow();
        Checkpoint {
            nodes: inner.nodes.len(),
            edges: inner.edges.len(),
        }
    }

    /// Drops every node recorded after `cp`. Nodes below it are untouched.
    pub fn truncate(&self, cp: Checkpoint) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.truncate(cp.nodes);
        inner.edges.truncate(cp.edges);
    }

    pub fn clear(&self) {
        self.truncate(Checkpoint { nodes: 0, edges: 0 });
    }

    fn push(&self, value: f64, parents: &[(Var, f64)]) -> Var {
        let mut inner = self.inner.borrow_mut();
        let edges_start = inner.edges.len() as u32;
        inner
            .edges
            .extend(parents.iter().map(|(p, d)| (p.id, *d)));
        let edges_end = inner.edges.len() as u32;
        let id = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            value,
            edges_start,
            edges_end,
        });
        Var { id, value }
    }

    fn push_iter<I>(&self, value: f64, parents: I) -> Var
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut inner = self.inner.borrow_mut();
        let edges_start = inner.edges.len() as u32;
        inner.edges.extend(parents);
        let edges_end = inner.edges.len() as u32;
        let id = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            value,
            edges_start,
            edges_end,
        });
        Var { id, value }
    }

    /// Propagates d(root)/d(node) to every node at or below `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let n = root.id() + 1;
        debug_assert!(n <= inner.nodes.len(), "root is not on this tape");
        let mut grads = vec![0.0f64; n];
        grads[root.id()] = 1.0;
        for i in (0..n).rev() {
            let g = grads[i];
            if g == 0.0 {
                continue;
            }
            if !g.is_finite() {
                return Err(Error::NanGradient { node: i });
            }
            let node = inner.nodes[i];
            for &(p, d) in &inner.edges[node.edges_start as usize..node.edges_end as usize] {
                grads[p as usize] += g * d;
            }
        }
        Ok(Gradients { grads })
    }

    /// Value of an arbitrary node id, mostly useful in tests.
    pub fn value_of(&self, id: NodeId) -> f64 {
        self.inner.borrow().nodes[id].value
    }

    /// Local partials recorded for `v`, in parent order.
    pub fn partials(&self, v: Var) -> Vec<(NodeId, f64)> {
        let inner = self.inner.borrow();
        let node = inner.nodes[v.id()];
        inner.edges[node.edges_start as usize..node.edges_end as usize]
            .iter()
            .map(|&(p, d)| (p as NodeId, d))
            .collect()
    }
}

/// Result of [`Tape::backward`]: adjoints indexed by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> f64 {
        self.grads.get(v.id()).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// Scalar arithmetic shared by the tape and by plain `f64` evaluation.
///
/// Fallible ops (`div`, `ln`, `sqrt`) reject arguments outside their domain
/// instead of producing NaN or infinities.
pub trait Arith {
    type S: Copy + Debug;

    fn constant(&self, c: f64) -> Self::S;
    fn value(&self, s: Self::S) -> f64;

    fn add(&self, a: Self::S, b: Self::S) -> Self::S;
    fn sub(&self, a: Self::S, b: Self::S) -> Self::S;
    fn mul(&self, a: Self::S, b: Self::S) -> Self::S;
    fn div(&self, a: Self::S, b: Self::S) -> Result<Self::S>;
    fn neg(&self, a: Self::S) -> Self::S;
    fn tanh(&self, a: Self::S) -> Self::S;
    fn exp(&self, a: Self::S) -> Self::S;
    fn ln(&self, a: Self::S) -> Result<Self::S>;
    fn abs(&self, a: Self::S) -> Self::S;
    fn sqrt(&self, a: Self::S) -> Result<Self::S>;
    fn max(&self, a: Self::S, b: Self::S) -> Self::S;
    fn square(&self, a: Self::S) -> Self::S;

    fn add_c(&self, a: Self::S, c: f64) -> Self::S;
    fn mul_c(&self, a: Self::S, c: f64) -> Self::S;

    /// `Σ a_i b_i + bias`, recorded as a single node.
    fn affine(&self, a: &[Self::S], b: &[Self::S], bias: Option<Self::S>) -> Self::S;

    /// `Σ a_i c_i` with constant coefficients, recorded as a single node.
    fn lin_comb(&self, a: &[Self::S], c: &[f64]) -> Self::S;

    fn dot(&self, a: &[Self::S], b: &[Self::S]) -> Self::S {
        self.affine(a, b, None)
    }

    fn sum(&self, a: &[Self::S]) -> Self::S {
        let ones = vec![1.0; a.len()];
        self.lin_comb(a, &ones)
    }

    fn values(&self, s: &[Self::S]) -> Vec<f64> {
        s.iter().map(|&x| self.value(x)).collect()
    }
}

fn check_div(b: f64) -> Result<()> {
    if b == 0.0 || !b.is_finite() {
        return Err(Error::Domain { op: "div", value: b });
    }
    Ok(())
}

fn check_positive(op: &'static str, a: f64) -> Result<()> {
    // NaN fails the comparison as well
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain { op, value: a });
    }
    Ok(())
}

impl Arith for Tape {
    type S = Var;

    fn constant(&self, c: f64) -> Var {
        self.leaf(c)
    }

    fn value(&self, s: Var) -> f64 {
        s.value
    }

    fn add(&self, a: Var, b: Var) -> Var {
        self.push(a.value + b.value, &[(a, 1.0), (b, 1.0)])
    }

    fn sub(&self, a: Var, b: Var) -> Var {
        self.push(a.value - b.value, &[(a, 1.0), (b, -1.0)])
    }

    fn mul(&self, a: Var, b: Var) -> Var {
        self.push(a.value * b.value, &[(a, b.value), (b, a.value)])
    }

    fn div(&self, a: Var, b: Var) -> Result<Var> {
        check_div(b.value)?;
        let inv = 1.0 / b.value;
        Ok(self.push(
            a.value / b.value,
            &[(a, inv), (b, -a.value * inv * inv)],
        ))
    }

    fn neg(&self, a: Var) -> Var {
        self.push(-a.value, &[(a, -1.0)])
    }

    fn tanh(&self, a: Var) -> Var {
        let t = a.value.tanh();
        self.push(t, &[(a, 1.0 - t * t)])
    }

    fn exp(&self, a: Var) -> Var {
        let e = a.value.exp();
        self.push(e, &[(a, e)])
    }

    fn ln(&self, a: Var) -> Result<Var> {
        check_positive("ln", a.value)?;
        Ok(self.push(a.value.ln(), &[(a, 1.0 / a.value)]))
    }

    fn abs(&self, a: Var) -> Var {
        let d = if a.value > 0.0 {
            1.0
        } else if a.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.push(a.value.abs(), &[(a, d)])
    }

    fn sqrt(&self, a: Var) -> Result<Var> {
        check_positive("sqrt", a.value)?;
        let s = a.value.sqrt();
        Ok(self.push(s, &[(a, 0.5 / s)]))
    }

    fn max(&self, a: Var, b: Var) -> Var {
        if a.value >= b.value {
            self.push(a.value, &[(a, 1.0), (b, 0.0)])
        } else {
            self.push(b.value, &[(a, 0.0), (b, 1.0)])
        }
    }

    fn square(&self, a: Var) -> Var {
        self.push(a.value * a.value, &[(a, 2.0 * a.value)])
    }

    fn add_c(&self, a: Var, c: f64) -> Var {
        self.push(a.value + c, &[(a, 1.0)])
    }

    fn mul_c(&self, a: Var, c: f64) -> Var {
        self.push(a.value * c, &[(a, c)])
    }

    fn affine(&self, a: &[Var], b: &[Var], bias: Option<Var>) -> Var {
        debug_assert_eq!(a.len(), b.len());
        let mut value = 0.0;
        for (x, y) in a.iter().zip(b) {
            value += x.value * y.value;
        }
        if let Some(bias) = bias {
            value += bias.value;
        }
        let pairs = a
            .iter()
            .zip(b)
            .flat_map(|(x, y)| [(x.id, y.value), (y.id, x.value)]);
        match bias {
            Some(bias) => self.push_iter(value, pairs.chain(std::iter::once((bias.id, 1.0)))),
            None => self.push_iter(value, pairs),
        }
    }

    fn lin_comb(&self, a: &[Var], c: &[f64]) -> Var {
        debug_assert_eq!(a.len(), c.len());
        let mut value = 0.0;
        for (x, k) in a.iter().zip(c) {
            value += x.value * k;
        }
        self.push_iter(value, a.iter().zip(c).map(|(x, &k)| (x.id, k)))
    }
}

/// Values-only evaluation; no graph is recorded.
#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl Arith for Plain {
    type S = f64;

    #[inline]
    fn constant(&self, c: f64) -> f64 {
        c
    }
    #[inline]
    fn value(&self, s: f64) -> f64 {
        s
    }
    #[inline]
    fn add(&self, a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline]
    fn sub(&self, a: f64, b: f64) -> f64 {
        a - b
    }
    #[inline]
    fn mul(&self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn div(&self, a: f64, b: f64) -> Result<f64> {
        check_div(b)?;
        Ok(a / b)
    }
    #[inline]
    fn neg(&self, a: f64) -> f64 {
        -a
    }
    #[inline]
    fn tanh(&self, a: f64) -> f64 {
        a.tanh()
    }
    #[inline]
    fn exp(&self, a: f64) -> f64 {
        a.exp()
    }
    fn ln(&self, a: f64) -> Result<f64> {
        check_positive("ln", a)?;
        Ok(a.ln())
    }
    #[inline]
    fn abs(&self, a: f64) -> f64 {
        a.abs()
    }
    fn sqrt(&self, a: f64) -> Result<f64> {
        check_positive("sqrt", a)?;
        Ok(a.sqrt())
    }
    #[inline]
    fn max(&self, a: f64, b: f64) -> f64 {
        if a >= b {
            a
        } else {
            b
        }
    }
    #[inline]
    fn square(&self, a: f64) -> f64 {
        a * a
    }
    #[inline]
    fn add_c(&self, a: f64, c: f64) -> f64 {
        a + c
    }
    #[inline]
    fn mul_c(&self, a: f64, c: f64) -> f64 {
        a * c
    }
    #[inline]
    fn affine(&self, a: &[f64], b: &[f64], bias: Option<f64>) -> f64 {
        let mut value = 0.0;
        for (x, y) in a.iter().zip(b) {
            value += x * y;
        }
        match bias {
            Some(c) => value + c,
            None => value,
        }
    }
    #[inline]
    fn lin_comb(&self, a: &[f64], c: &[f64]) -> f64 {
        let mut value = 0.0;
        for (x, k) in a.iter().zip(c) {
            value += x * k;
        }
        value
    }
}

/// Central-difference gradient of `f` at `p`.
pub fn central_difference<F>(f: F, p: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let coords: Vec<usize> = (0..p.len()).collect();
    central_difference_at(&f, p, h, &coords)
}

fn central_difference_at<F>(f: &F, p: &[f64], h: f64, coords: &[usize]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step h must be positive, got {h}")));
    }
    let mut x = p.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x)?;
        x[i] = orig - h;
        let down = f(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { step: i });
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the tape gradient of `f` against central differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_diff_check<F>(f: F, p: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<usize> = (0..p.len()).collect();
    finite_diff_check_coords(f, p, h, &coords)
}

/// [`finite_diff_check`] restricted to a subset of coordinates.
pub fn finite_diff_check_coords<F>(f: F, p: &[f64], h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let leaves = tape.leaves(p);
    let root = f(&tape, &leaves)?;
    if !root.value().is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let grads = tape.backward(root)?;

    let eval = |x: &[f64]| -> Result<f64> {
        let t = Tape::new();
        let l = t.leaves(x);
        Ok(f(&t, &l)?.value())
    };
    let numeric = central_difference_at(&eval, p, h, coords)?;

    let mut worst: f64 = 0.0;
    for (&i, num) in coords.iter().zip(&numeric) {
        let ana = grads.wrt(leaves[i]);
        let err = (ana - num).abs() / num.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_records_product_rule_partials() {
        let t = Tape::new();
        let a = t.leaf(2.0);
        let b = t.leaf(5.0);
        let c = t.mul(a, b);
        assert_eq!(c.value(), 10.0);
        assert_eq!(t.partials(c), vec![(a.id(), 5.0), (b.id(), 2.0)]);
    }

    #[test]
    fn tanh_and_ln_at_reference_points() {
        let t = Tape::new();
        let z = t.leaf(0.0);
        let th = t.tanh(z);
        assert_eq!(th.value(), 0.0);
        assert_eq!(t.partials(th)[0].1, 1.0);

        let one = t.leaf(1.0);
        let l = t.ln(one).unwrap();
        assert_eq!(l.value(), 0.0);
        assert_eq!(t.partials(l)[0].1, 1.0);
    }

    #[test]
    fn domain_violations_are_errors() {
        let t = Tape::new();
        let z = t.leaf(0.0);
        let n = t.leaf(-1.0);
        let one = t.leaf(1.0);
        assert!(matches!(t.ln(z), Err(Error::Domain { op: "ln", .. })));
        assert!(matches!(t.ln(n), Err(Error::Domain { .. })));
        assert!(matches!(t.sqrt(n), Err(Error::Domain { op: "sqrt", .. })));
        assert!(matches!(t.div(one, z), Err(Error::Domain { op: "div", .. })));
        assert!(Plain.ln(0.0).is_err());
        assert!(Plain.sqrt(-2.0).is_err());
        assert!(Plain.div(1.0, 0.0).is_err());
        assert!(Plain.ln(f64::NAN).is_err());
    }

    #[test]
    fn backward_power_and_product_rules() {
        let t = Tape::new();
        let x = t.leaf(3.0);
        let f = t.mul(x, x);
        let g = t.backward(f).unwrap();
        assert_eq!(g.wrt(x), 6.0);
        assert_eq!(g.wrt(f), 1.0);

        let t = Tape::new();
        let x = t.leaf(2.0);
        let y = t.leaf(5.0);
        let f = t.mul(x, y);
        let g = t.backward(f).unwrap();
        assert_eq!((g.wrt(x), g.wrt(y)), (5.0, 2.0));
    }

    #[test]
    fn backward_composite_matches_central_difference() {
        let f = |t: &Tape, p: &[Var]| {
            let th = t.tanh(p[0]);
            t.ln(t.add_c(th, 2.0))
        };
        let t = Tape::new();
        let x = t.leaf(0.7);
        let root = f(&t, &[x]).unwrap();
        let ana = t.backward(root).unwrap().wrt(x);
        let num = central_difference(|p| Ok((p[0].tanh() + 2.0).ln()), &[0.7], 1e-6).unwrap()[0];
        assert!(((ana - num) / num).abs() < 1e-8, "{ana} vs {num}");
    }

    #[test]
    fn accumulation_over_shared_paths() {
        let t = Tape::new();
        let x = t.leaf(1.7);
        let s = t.add(x, x);
        assert_eq!(t.backward(s).unwrap().wrt(x), 2.0);
        let p = t.mul(x, x);
        assert_eq!(t.backward(p).unwrap().wrt(x), 2.0 * 1.7);
        let d = t.dot(&[x, x], &[x, x]);
        assert_eq!(t.backward(d).unwrap().wrt(x), 4.0 * 1.7);
    }

    #[test]
    fn abs_subgradient_is_zero_at_origin() {
        let t = Tape::new();
        let x = t.leaf(0.0);
        let a = t.abs(x);
        assert_eq!(t.backward(a).unwrap().wrt(x), 0.0);
    }

    #[test]
    fn nan_gradient_names_offending_node() {
        let t = Tape::new();
        let x = t.leaf(1.0);
        let big = t.mul_c(x, f64::INFINITY);
        let y = t.mul_c(big, 0.5);
        match t.backward(y) {
            // adjoint of y is 1, of big is 0.5, of x is inf*0.5 -> reported at x
            Err(Error::NanGradient { node }) => assert_eq!(node, x.id()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncate_keeps_nodes_below_checkpoint() {
        let t = Tape::new();
        let w = t.leaf(1.5);
        let cp = t.checkpoint();
        let run = || {
            let y = t.tanh(t.mul(w, w));
            let g = t.backward(y).unwrap();
            (y.value(), g.wrt(w))
        };
        let first = run();
        t.truncate(cp);
        assert_eq!(t.len(), 1);
        assert_eq!(t.value_of(w.id()), 1.5);
        let second = run();
        assert_eq!(first.0.to_bits(), second.0.to_bits());
        assert_eq!(first.1.to_bits(), second.1.to_bits());
    }

    #[test]
    fn finite_diff_check_reference_cases() {
        let sum_sq = |t: &Tape, p: &[Var]| Ok(t.dot(p, p));
        let err = finite_diff_check(sum_sq, &[1.0, 2.0, 3.0], 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");

        let constant = |t: &Tape, _p: &[Var]| Ok(t.constant(4.0));
        assert_eq!(finite_diff_check(constant, &[1.0, -2.0], 1e-6).unwrap(), 0.0);

        let blows_up = |t: &Tape, p: &[Var]| t.ln(p[0]);
        assert!(finite_diff_check(blows_up, &[1e-9], 1e-6).is_err());
        assert!(finite_diff_check(sum_sq, &[1.0], 0.0).is_err());
    }
}
