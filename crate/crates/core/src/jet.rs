//! Order-2 truncated Taylor jets in the PDE coordinates `(x_1, .., x_d, t)`.
//!
//! A jet stores a value, its gradient with respect to the `d` spatial
//! coordinates and time, and a chosen set of *spatial* second derivatives.
//! Cross space-time and time-time second derivatives are never carried.
//!
//! Internally a jet is a flat slice of `f64` laid out as
//!
//! ```text
//! [ value | d/dx_1 .. d/dx_d, d/dt | h_(k1,l1) .. h_(kn,ln) ]
//! ```
//!
//! where the Hessian pairs `(k, l)` with `k <= l` are fixed by a
//! [`JetLayout`]. Every Hessian entry evolves under composition using only
//! itself and the first derivatives, so a layout that drops unneeded pairs is
//! still exact for the pairs it keeps.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Which derivative components a jet carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JetLayout {
    dim: usize,
    grad: bool,
    pairs: Vec<(usize, usize)>,
}

impl JetLayout {
    /// Value, full gradient and the full symmetric spatial Hessian.
    pub fn full(dim: usize) -> Self {
        let mut pairs = Vec::with_capacity(dim * (dim + 1) / 2);
        for k in 0..dim {
            for l in k..dim {
                pairs.push((k, l));
            }
        }
        JetLayout {
            dim,
            grad: true,
            pairs,
        }
    }

    /// Value only; used for plain evaluation and for initial-condition points.
    pub fn value_only(dim: usize) -> Self {
        JetLayout {
            dim,
            grad: false,
            pairs: Vec::new(),
        }
    }

    /// Value, gradient and only the listed spatial Hessian entries.
    pub fn with_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<(usize, usize)> = pairs
            .into_iter()
            .map(|(i, j)| (i.min(j), i.max(j)))
            .inspect(|&(_, l)| assert!(l < dim, "hessian index {l} out of range for dim {dim}"))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        JetLayout {
            dim,
            grad: true,
            pairs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_grad(&self) -> bool {
        self.grad
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of gradient slots (`d + 1`, or 0 for value-only layouts).
    pub fn n_grad(&self) -> usize {
        if self.grad {
            self.dim + 1
        } else {
            0
        }
    }

    pub fn width(&self) -> usize {
        1 + self.n_grad() + self.pairs.len()
    }

    /// Slot of `d/dx_k` (k < d) or `d/dt` (k == d).
    pub fn grad_slot(&self, k: usize) -> Option<usize> {
        (self.grad && k <= self.dim).then_some(1 + k)
    }

    /// Slot of the Hessian entry `(i, j)` if carried.
    pub fn hess_slot(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.pairs
            .binary_search(&key)
            .ok()
            .map(|p| 1 + self.n_grad() + p)
    }

    #[inline]
    fn h0(&self) -> usize {
        1 + self.n_grad()
    }

    /// Writes a constant jet.
    pub fn constant(&self, value: f64, out: &mut [f64]) {
        out.fill(0.0);
        out[0] = value;
    }

    /// Writes the jet of input coordinate `coord` (`d` selects time).
    pub fn seed(&self, value: f64, coord: usize, out: &mut [f64]) {
        self.constant(value, out);
        if let Some(s) = self.grad_slot(coord) {
            out[s] = 1.0;
        }
    }

    #[inline]
    pub fn add(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = x + y;
        }
    }

    #[inline]
    pub fn sub(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = x - y;
        }
    }

    /// `out = scale * a + shift`.
    #[inline]
    pub fn affine(&self, a: &[f64], scale: f64, shift: f64, out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(a) {
            *o = scale * x;
        }
        out[0] += shift;
    }

    /// Product rule on value and gradient, Leibniz rule on the Hessian.
    pub fn mul(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (av, bv) = (a[0], b[0]);
        out[0] = av * bv;
        let h0 = self.h0();
        for s in 1..h0 {
            out[s] = a[s] * bv + b[s] * av;
        }
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            let s = h0 + p;
            out[s] = a[s] * bv + b[s] * av + a[1 + k] * b[1 + l] + b[1 + k] * a[1 + l];
        }
    }

    /// Applies a scalar function given `[phi, phi', phi'']` at `a[0]`.
    pub fn unary(&self, a: &[f64], phi: [f64; 3], out: &mut [f64]) {
        let [f0, f1, f2] = phi;
        out[0] = f0;
        let h0 = self.h0();
        for s in 1..h0 {
            out[s] = f1 * a[s];
        }
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            let s = h0 + p;
            out[s] = f1 * a[s] + f2 * a[1 + k] * a[1 + l];
        }
    }

    /// Contractions `(c0, c1, c2)` of an output adjoint against a unary op's
    /// input such that `d<adj, out>/d phi^(n) = c_n`.
    pub fn unary_contract(&self, a: &[f64], adj: &[f64]) -> [f64; 3] {
        let h0 = self.h0();
        let mut c1 = 0.0;
        for s in 1..adj.len() {
            c1 += adj[s] * a[s];
        }
        let mut c2 = 0.0;
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            c2 += adj[h0 + p] * a[1 + k] * a[1 + l];
        }
        [adj[0], c1, c2]
    }

    /// Accumulates the input adjoint of a unary op given
    /// `[phi', phi'', phi''']` at `a[0]`.
    pub fn unary_backward(&self, a: &[f64], adj: &[f64], dphi: [f64; 3], a_adj: &mut [f64]) {
        let [f1, f2, f3] = dphi;
        let [c0, c1, c2] = self.unary_contract(a, adj);
        a_adj[0] += c0 * f1 + c1 * f2 + c2 * f3;
        let h0 = self.h0();
        for s in 1..h0 {
            a_adj[s] += f1 * adj[s];
        }
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            let s = h0 + p;
            let w = adj[s];
            a_adj[s] += f1 * w;
            a_adj[1 + k] += f2 * w * a[1 + l];
            a_adj[1 + l] += f2 * w * a[1 + k];
        }
    }

    /// Accumulates the adjoint of `a` in `out = a * b` (call with swapped
    /// arguments for `b`).
    pub fn mul_backward(&self, a: &[f64], b: &[f64], adj: &[f64], a_adj: &mut [f64]) {
        let _ = a;
        let bv = b[0];
        let mut v = 0.0;
        for s in 0..adj.len() {
            v += adj[s] * b[s];
        }
        a_adj[0] += v;
        let h0 = self.h0();
        for s in 1..adj.len() {
            a_adj[s] += adj[s] * bv;
        }
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            let w = adj[h0 + p];
            a_adj[1 + k] += w * b[1 + l];
            a_adj[1 + l] += w * b[1 + k];
        }
    }
}

/// Derivative table `[phi, phi', phi'', phi''']` of the elementwise
/// primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Exp,
    Ln,
    Recip,
    Square,
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Recip => "recip",
            Unary::Square => "pow2",
        }
    }

    pub fn check(self, v: f64) -> Result<()> {
        let bad = match self {
            Unary::Ln => !(v > 0.0),
            Unary::Recip => v == 0.0,
            _ => false,
        };
        if bad {
            return Err(Error::Domain {
                primitive: self.name(),
                detail: format!("argument {v} outside the domain"),
            });
        }
        Ok(())
    }

    pub fn derivs(self, v: f64) -> [f64; 4] {
        match self {
            Unary::Tanh => {
                let y = v.tanh();
                let f1 = 1.0 - y * y;
                [y, f1, -2.0 * y * f1, f1 * (4.0 * y * y - 2.0 * f1)]
            }
            Unary::Exp => {
                let e = v.exp();
                [e; 4]
            }
            Unary::Ln => {
                let r = 1.0 / v;
                [v.ln(), r, -r * r, 2.0 * r * r * r]
            }
            Unary::Recip => {
                let r = 1.0 / v;
                let r2 = r * r;
                [r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2]
            }
            Unary::Square => [v * v, 2.0 * v, 2.0, 0.0],
        }
    }
}

/// An owned order-2 jet with the full spatial Hessian.
#[derive(Clone, PartialEq)]
pub struct Jet2 {
    layout: Arc<JetLayout>,
    data: Vec<f64>,
}

impl fmt::Debug for Jet2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet2")
            .field("value", &self.value())
            .field("grad", &self.grad())
            .field("hess", &self.hess_matrix())
            .finish()
    }
}

impl Jet2 {
    /// Wraps raw components laid out per `layout`.
    pub fn from_parts(layout: Arc<JetLayout>, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), layout.width(), "jet data does not match layout");
        Jet2 { layout, data }
    }

    pub fn constant(layout: Arc<JetLayout>, value: f64) -> Self {
        let mut data = vec![0.0; layout.width()];
        layout.constant(value, &mut data);
        Jet2 { layout, data }
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn components(&self) -> &[f64] {
        &self.data
    }

    pub fn value(&self) -> f64 {
        self.data[0]
    }

    /// `(d/dx_1, .., d/dx_d, d/dt)`; empty for value-only layouts.
    pub fn grad(&self) -> &[f64] {
        &self.data[1..1 + self.layout.n_grad()]
    }

    pub fn dt(&self) -> f64 {
        self.layout.grad_slot(self.layout.dim()).map_or(0.0, |s| self.data[s])
    }

    /// Spatial second derivative; zero when the entry is not carried.
    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.layout.hess_slot(i, j).map_or(0.0, |s| self.data[s])
    }

    pub fn hess_matrix(&self) -> Vec<Vec<f64>> {
        let d = self.layout.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.hess(i, j)).collect())
            .collect()
    }

    fn map_unary(&self, op: Unary) -> Result<Jet2> {
        op.check(self.value())?;
        let [f0, f1, f2, _] = op.derivs(self.value());
        let mut out = vec![0.0; self.data.len()];
        self.layout.unary(&self.data, [f0, f1, f2], &mut out);
        Ok(Jet2 {
            layout: self.layout.clone(),
            data: out,
        })
    }

    pub fn tanh(&self) -> Jet2 {
        self.map_unary(Unary::Tanh).expect("tanh is total")
    }

    pub fn exp(&self) -> Jet2 {
        self.map_unary(Unary::Exp).expect("exp is total")
    }

    pub fn pow2(&self) -> Jet2 {
        self.map_unary(Unary::Square).expect("square is total")
    }

    pub fn ln(&self) -> Result<Jet2> {
        self.map_unary(Unary::Ln)
    }

    pub fn recip(&self) -> Result<Jet2> {
        self.map_unary(Unary::Recip)
    }

    pub fn div(&self, rhs: &Jet2) -> Result<Jet2> {
        if rhs.value() == 0.0 {
            return Err(Error::Domain {
                primitive: "div",
                detail: "division by a jet with zero value".into(),
            });
        }
        Ok(self * &rhs.recip()?)
    }

    /// `scale * self + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Jet2 {
        let mut out = vec![0.0; self.data.len()];
        self.layout.affine(&self.data, scale, shift, &mut out);
        Jet2 {
            layout: self.layout.clone(),
            data: out,
        }
    }

    fn zip(&self, rhs: &Jet2, f: impl Fn(&JetLayout, &[f64], &[f64], &mut [f64])) -> Jet2 {
        assert_eq!(self.layout, rhs.layout, "jets with different layouts");
        let mut out = vec![0.0; self.data.len()];
        f(&self.layout, &self.data, &rhs.data, &mut out);
        Jet2 {
            layout: self.layout.clone(),
            data: out,
        }
    }
}

impl Add for &Jet2 {
    type Output = Jet2;
    fn add(self, rhs: &Jet2) -> Jet2 {
        self.zip(rhs, JetLayout::add)
    }
}

impl Sub for &Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: &Jet2) -> Jet2 {
        self.zip(rhs, JetLayout::sub)
    }
}

impl Mul for &Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: &Jet2) -> Jet2 {
        self.zip(rhs, JetLayout::mul)
    }
}

/// Seeds one jet per input coordinate: `x_1 .. x_d` followed by `t`.
pub fn jet_seed(x: &[f64], t: f64) -> Vec<Jet2> {
    let layout = Arc::new(JetLayout::full(x.len()));
    x.iter()
        .chain(std::iter::once(&t))
        .enumerate()
        .map(|(k, &v)| {
            let mut data = vec![0.0; layout.width()];
            layout.seed(v, k, &mut data);
            Jet2 {
                layout: layout.clone(),
                data,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_origin() {
        let jets = jet_seed(&[0.0, 0.0], 0.0);
        assert_eq!(jets.len(), 3);
        for (k, j) in jets.iter().enumerate() {
            assert_eq!(j.value(), 0.0);
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            assert_eq!(j.grad(), &e[..]);
            assert!(j.hess_matrix().iter().flatten().all(|&h| h == 0.0));
        }
    }

    #[test]
    fn seed_values() {
        let jets = jet_seed(&[4.0, 4.0], 1.0);
        assert_eq!(jets[0].value(), 4.0);
        assert_eq!(jets[0].grad(), &[1.0, 0.0, 0.0]);
        assert_eq!(jets[2].value(), 1.0);
        assert_eq!(jets[2].dt(), 1.0);

        let jets = jet_seed(&[2.0], 3.0);
        assert_eq!(jets.len(), 2);
        assert_eq!((jets[0].value(), jets[1].value()), (2.0, 3.0));
    }

    #[test]
    fn square_of_x() {
        let x = &jet_seed(&[3.0], 0.0)[0];
        let y = x * x;
        assert_eq!(y.value(), 9.0);
        assert_eq!(y.grad()[0], 6.0);
        assert_eq!(y.hess(0, 0), 2.0);
    }

    #[test]
    fn tanh_at_origin() {
        let x = &jet_seed(&[0.0], 0.0)[0];
        let y = x.tanh();
        assert_eq!(y.value(), 0.0);
        assert_eq!(y.grad()[0], 1.0);
        assert_eq!(y.hess(0, 0), 0.0);
    }

    #[test]
    fn exp_ln_round_trip() {
        let seeds = jet_seed(&[2.5, -0.7], 0.3);
        // a mixes coordinates so the Hessian is non-trivial
        let a = &(&seeds[0] + &(&seeds[1] * &seeds[1])) + &seeds[2].affine(0.1, 0.0);
        let back = a.ln().unwrap().exp();
        for (u, v) in back.components().iter().zip(a.components()) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let (qa, qb, qc) = (1.7, -0.3, 2.0);
        let x = &jet_seed(&[0.37], 0.0)[0];
        let q = &(&(x * x).affine(qa, 0.0) + &x.affine(qb, qc)) + &Jet2::constant(x.layout().clone(), 0.0);
        assert_eq!(q.hess(0, 0), 2.0 * qa);
    }

    #[test]
    fn domain_errors_name_the_primitive() {
        let x = &jet_seed(&[0.0], 0.0)[0];
        match x.ln() {
            Err(Error::Domain { primitive, .. }) => assert_eq!(primitive, "ln"),
            other => panic!("expected domain error, got {other:?}"),
        }
        let one = Jet2::constant(x.layout().clone(), 1.0);
        match one.div(x) {
            Err(Error::Domain { primitive, .. }) => assert_eq!(primitive, "div"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn hessian_is_symmetric() {
        let s = jet_seed(&[0.4, -1.2, 0.9], 0.2);
        let f = (&(&s[0] * &s[1]) + &(&s[2] * &s[0]).tanh()).exp();
        let h = f.hess_matrix();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h[i][j], h[j][i]);
            }
        }
    }

    #[test]
    fn sparse_layout_matches_full() {
        let full = Arc::new(JetLayout::full(2));
        let sparse = Arc::new(JetLayout::with_pairs(2, [(1, 1)]));
        let eval = |layout: &Arc<JetLayout>| {
            let mut xs = Vec::new();
            for (k, v) in [0.3, -0.8, 0.5].into_iter().enumerate() {
                let mut d = vec![0.0; layout.width()];
                layout.seed(v, k, &mut d);
                xs.push(Jet2::from_parts(layout.clone(), d));
            }
            (&(&xs[0] * &xs[1]).tanh() * &xs[1].exp()).affine(2.0, 1.0)
        };
        let (f, s) = (eval(&full), eval(&sparse));
        assert_eq!(f.value(), s.value());
        assert_eq!(f.grad(), s.grad());
        assert_eq!(f.hess(1, 1), s.hess(1, 1));
        assert_eq!(s.hess(0, 0), 0.0);
    }
}
