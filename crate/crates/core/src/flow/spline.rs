//! Monotone piecewise-quadratic spline with linear tails.
//!
//! On the unit interval the map is the CDF of a continuous piecewise-linear
//! density with knot values `k_0 .. k_m` on uniform knots `l_j = j / m`. The
//! end weights are pinned to the tail slope `gamma`, the interior weights are
//! a softmax of the trainable logits. The CDF is divided by its total mass
//! so that it maps `[0, 1]` onto `[0, 1]` exactly. On the real line,
//!
//! ```text
//! G(x) = gamma (x + c) - c            x < -c
//!        2c Ghat((x + c) / 2c) - c    -c <= x <= c
//!        gamma (x - c) + c            x > c
//! ```

use crate::error::{Error, Result};
use crate::tape::{NodeId, ParamTape};

/// Fixed hyperparameters of a spline layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineShape {
    /// Number of knot intervals `m`.
    pub intervals: usize,
    /// Tail slope, also the pinned end weight of the density.
    pub gamma: f64,
    /// Half-width `c` of the nonlinear range.
    pub half_width: f64,
}

impl SplineShape {
    pub fn new(intervals: usize, gamma: f64, half_width: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::invalid("spline.intervals", "must be at least 1"));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid("gamma", "must be finite and nonnegative"));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::invalid("spline.half_width", "must be positive"));
        }
        Ok(SplineShape {
            intervals,
            gamma,
            half_width,
        })
    }

    /// Trainable logits for the interior knots.
    pub fn n_params(&self) -> usize {
        self.intervals - 1
    }

    /// Knot weights `k_0 .. k_m` from the interior logits.
    pub fn weights(&self, logits: &[f64]) -> Vec<f64> {
        assert_eq!(logits.len(), self.n_params());
        let m = self.intervals;
        // the two end logits are fixed at zero and only enter the denominator
        let max = logits.iter().copied().fold(0.0_f64, f64::max);
        let denom = 2.0 * (-max).exp() + logits.iter().map(|r| (r - max).exp()).sum::<f64>();
        let mut k = Vec::with_capacity(m + 1);
        k.push(self.gamma);
        k.extend(logits.iter().map(|r| (r - max).exp() / denom));
        k.push(self.gamma);
        k
    }

    pub fn prepare(&self, logits: &[f64]) -> SplineEval {
        let k = self.weights(logits);
        let m = self.intervals;
        let h = 1.0 / m as f64;
        let mut cum = Vec::with_capacity(m + 1);
        cum.push(0.0);
        for j in 0..m {
            let next = cum[j] + 0.5 * (k[j] + k[j + 1]) * h;
            cum.push(next);
        }
        let mass = cum[m];
        SplineEval {
            shape: *self,
            k,
            cum,
            mass,
            h,
        }
    }
}

/// A spline with its weights resolved, ready for evaluation.
#[derive(Clone, Debug)]
pub struct SplineEval {
    shape: SplineShape,
    k: Vec<f64>,
    cum: Vec<f64>,
    mass: f64,
    h: f64,
}

/// Location of a point relative to the nonlinear range.
enum Region {
    Below,
    Inside { seg: usize, s: f64 },
    Above,
}

impl SplineEval {
    pub fn shape(&self) -> &SplineShape {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.k
    }

    /// Total trapezoid mass of the unnormalized density.
    pub fn raw_mass(&self) -> f64 {
        self.mass
    }

    fn segment(&self, u: f64) -> (usize, f64) {
        let m = self.shape.intervals;
        let seg = ((u / self.h).floor().max(0.0) as usize).min(m - 1);
        (seg, u - seg as f64 * self.h)
    }

    fn region(&self, x: f64) -> Region {
        let c = self.shape.half_width;
        if x < -c {
            Region::Below
        } else if x > c {
            Region::Above
        } else {
            let (seg, s) = self.segment((x + c) / (2.0 * c));
            Region::Inside { seg, s }
        }
    }

    fn raw_cdf(&self, seg: usize, s: f64) -> f64 {
        let (k0, k1) = (self.k[seg], self.k[seg + 1]);
        self.cum[seg] + k0 * s + (k1 - k0) * s * s / (2.0 * self.h)
    }

    fn raw_pdf(&self, seg: usize, s: f64) -> f64 {
        let (k0, k1) = (self.k[seg], self.k[seg + 1]);
        k0 + (k1 - k0) * s / self.h
    }

    /// Normalized CDF on the unit interval.
    pub fn cdf(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid("u", format!("{u} is outside [0, 1]")));
        }
        let (seg, s) = self.segment(u);
        Ok(self.raw_cdf(seg, s) / self.mass)
    }

    /// Inverse of [`cdf`](Self::cdf).
    pub fn cdf_inv(&self, v: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid("v", format!("{v} is outside [0, 1]")));
        }
        if !(self.mass > 0.0) {
            return Err(Error::Domain {
                primitive: "spline_inverse",
                detail: "spline density has zero mass".into(),
            });
        }
        let target = v * self.mass;
        let m = self.shape.intervals;
        // last segment whose cumulative start is <= target
        let seg = self.cum[..m].partition_point(|&c| c <= target).saturating_sub(1);
        let rem = target - self.cum[seg];
        let (k0, k1) = (self.k[seg], self.k[seg + 1]);
        let a = (k1 - k0) / (2.0 * self.h);
        let disc = (k0 * k0 + 4.0 * a * rem).max(0.0);
        let denom = k0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * rem / denom } else { 0.0 };
        Ok(seg as f64 * self.h + s.clamp(0.0, self.h))
    }

    /// The forward map `G` on the real line.
    pub fn g(&self, x: f64) -> f64 {
        let SplineShape {
            gamma,
            half_width: c,
            ..
        } = self.shape;
        match self.region(x) {
            Region::Below => gamma * (x + c) - c,
            Region::Above => gamma * (x - c) + c,
            Region::Inside { seg, s } => 2.0 * c * self.raw_cdf(seg, s) / self.mass - c,
        }
    }

    /// `G'(x)`.
    pub fn slope(&self, x: f64) -> f64 {
        match self.region(x) {
            Region::Below | Region::Above => self.shape.gamma,
            Region::Inside { seg, s } => self.raw_pdf(seg, s) / self.mass,
        }
    }

    /// Inverse of [`g`](Self::g).
    pub fn g_inv(&self, y: f64) -> Result<f64> {
        let SplineShape {
            gamma,
            half_width: c,
            ..
        } = self.shape;
        if y < -c || y > c {
            if !(gamma > 0.0) {
                return Err(Error::Domain {
                    primitive: "spline_inverse",
                    detail: format!("tail slope gamma = {gamma} makes the tail at {y} non-invertible"),
                });
            }
            return Ok(if y < -c {
                (y + c) / gamma - c
            } else {
                (y - c) / gamma + c
            });
        }
        let u = self.cdf_inv(((y + c) / (2.0 * c)).clamp(0.0, 1.0))?;
        Ok(2.0 * c * u - c)
    }

    /// `[phi, phi', phi'', phi''']` of `G` (or of `ln G'` when `log_slope`).
    pub fn derivs(&self, x: f64, log_slope: bool) -> [f64; 4] {
        let c = self.shape.half_width;
        match self.region(x) {
            Region::Below | Region::Above => {
                if log_slope {
                    [self.shape.gamma.ln(), 0.0, 0.0, 0.0]
                } else {
                    [self.g(x), self.shape.gamma, 0.0, 0.0]
                }
            }
            Region::Inside { seg, s } => {
                let g0 = 2.0 * c * self.raw_cdf(seg, s) / self.mass - c;
                let g1 = self.raw_pdf(seg, s) / self.mass;
                let g2 = (self.k[seg + 1] - self.k[seg]) / (self.h * self.mass * 2.0 * c);
                if log_slope {
                    let l1 = g2 / g1;
                    [g1.ln(), l1, -l1 * l1, 2.0 * l1 * l1 * l1]
                } else {
                    [g0, g1, g2, 0.0]
                }
            }
        }
    }

    /// Partials of `[phi, phi', phi'']` with respect to every logit,
    /// written into `out` (one row per logit).
    pub fn param_partials(&self, x: f64, log_slope: bool, out: &mut [[f64; 3]]) {
        let n = self.shape.n_params();
        debug_assert_eq!(out.len(), n);
        let (seg, s) = match self.region(x) {
            Region::Inside { seg, s } => (seg, s),
            _ => {
                out.fill([0.0; 3]);
                return;
            }
        };
        let c = self.shape.half_width;
        let (h, mass) = (self.h, self.mass);
        let ghat = self.raw_cdf(seg, s) / mass;
        let g1 = self.raw_pdf(seg, s) / mass;
        let dpdf = (self.k[seg + 1] - self.k[seg]) / h;
        let g1p = dpdf / mass;
        let g2 = g1p / (2.0 * c);

        // partials with respect to the knot weights k_1 .. k_{m-1}
        let mut dk = vec![[0.0; 3]; n];
        for (idx, row) in dk.iter_mut().enumerate() {
            let i = idx + 1;
            let mut d_raw = 0.0;
            let mut d_pdf = 0.0;
            let mut d_dpdf = 0.0;
            if i < seg {
                d_raw = h;
            } else if i == seg {
                d_raw = 0.5 * h + s - s * s / (2.0 * h);
                d_pdf = 1.0 - s / h;
                d_dpdf = -1.0 / h;
            } else if i == seg + 1 {
                d_raw = s * s / (2.0 * h);
                d_pdf = s / h;
                d_dpdf = 1.0 / h;
            }
            let d_ghat = (d_raw - ghat * h) / mass;
            let d_g1 = (d_pdf - g1 * h) / mass;
            let d_g2 = (d_dpdf - g1p * h) / mass / (2.0 * c);
            *row = if log_slope {
                let d_l0 = d_g1 / g1;
                let d_l1 = d_g2 / g1 - g2 * d_g1 / (g1 * g1);
                [d_l0, d_l1, -2.0 * (g2 / g1) * d_l1]
            } else {
                [2.0 * c * d_ghat, d_g1, d_g2]
            };
        }

        // chain through the softmax: dk_j/dr_i = k_j (delta_ij - k_i)
        let mut weighted = [0.0; 3];
        for (idx, row) in dk.iter().enumerate() {
            let kj = self.k[idx + 1];
            for q in 0..3 {
                weighted[q] += kj * row[q];
            }
        }
        for (idx, o) in out.iter_mut().enumerate() {
            let ki = self.k[idx + 1];
            for q in 0..3 {
                o[q] = ki * (dk[idx][q] - weighted[q]);
            }
        }
    }
}

/// Elementwise spline applied to every spatial coordinate with shared
/// logits and time-independent knots.
#[derive(Clone, Debug)]
pub struct SplineLayer {
    pub(crate) shape: SplineShape,
    pub(crate) offset: usize,
    pub(crate) dim: usize,
}

impl SplineLayer {
    pub(crate) fn new(dim: usize, shape: SplineShape, params: &mut Vec<f64>) -> Self {
        let offset = params.len();
        params.resize(offset + shape.n_params(), 0.0);
        SplineLayer { shape, offset, dim }
    }

    pub fn shape(&self) -> &SplineShape {
        &self.shape
    }

    pub fn logits<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.shape.n_params()]
    }

    pub fn eval(&self, params: &[f64]) -> SplineEval {
        self.shape.prepare(self.logits(params))
    }

    pub(crate) fn record(
        &self,
        tape: &mut ParamTape,
        params: &[f64],
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let y = tape.spline(params, x, self.offset, self.shape, false)?;
        let ls = tape.spline(params, x, self.offset, self.shape, true)?;
        let logdet = tape.sum(ls);
        Ok((y, logdet))
    }

    pub(crate) fn apply(&self, params: &[f64], x: &mut [f64]) -> f64 {
        let ev = self.eval(params);
        let mut logdet = 0.0;
        for v in x.iter_mut().take(self.dim) {
            logdet += ev.slope(*v).ln();
            *v = ev.g(*v);
        }
        logdet
    }

    pub(crate) fn invert(&self, params: &[f64], y: &mut [f64]) -> Result<()> {
        let ev = self.eval(params);
        for v in y.iter_mut().take(self.dim) {
            *v = ev.g_inv(*v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> SplineShape {
        SplineShape::new(8, 1e-6, 3.0).unwrap()
    }

    fn logits() -> Vec<f64> {
        vec![0.3, -0.5, 1.2, 0.0, -1.0, 0.7, 0.2]
    }

    #[test]
    fn uniform_weights_give_identity() {
        let m = 6;
        // interior weights 1/(m+1) from zero logits; matching gamma makes the
        // density flat
        let sh = SplineShape::new(m, 1.0 / (m as f64 + 1.0), 2.0).unwrap();
        let ev = sh.prepare(&vec![0.0; m - 1]);
        for i in 0..=20 {
            let u = i as f64 / 20.0;
            assert!((ev.cdf(u).unwrap() - u).abs() < 1e-14);
            let x = -2.0 + 4.0 * u;
            assert!((ev.g(x) - x).abs() < 1e-13);
        }
    }

    #[test]
    fn cdf_endpoints() {
        let ev = shape().prepare(&logits());
        assert_eq!(ev.cdf(0.0).unwrap(), 0.0);
        assert!((ev.cdf(1.0).unwrap() - 1.0).abs() < 1e-15);
        // raw endpoint equals the trapezoid mass
        let k = ev.weights();
        let h = 1.0 / 8.0;
        let trap: f64 = k.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum();
        assert!((ev.raw_mass() - trap).abs() < 1e-15);
    }

    #[test]
    fn cdf_rejects_out_of_range() {
        let ev = shape().prepare(&logits());
        assert!(ev.cdf(-0.1).is_err());
        assert!(ev.cdf(1.5).is_err());
    }

    #[test]
    fn tail_inverse_is_linear() {
        let ev = shape().prepare(&logits());
        let c = 3.0;
        let z = 3.5;
        let x = ev.g_inv(z).unwrap();
        assert!((x - ((z - c) / 1e-6 + c)).abs() < 1e-6);
        assert_eq!(ev.slope(c + 1.0), 1e-6);
    }

    #[test]
    fn zero_gamma_tail_is_not_invertible() {
        let sh = SplineShape::new(4, 0.0, 1.0).unwrap();
        let ev = sh.prepare(&[0.0; 3]);
        assert!(ev.g_inv(1.5).is_err());
    }

    #[test]
    fn derivs_match_finite_differences() {
        let ev = shape().prepare(&logits());
        for &x in &[-2.9, -1.3, 0.1, 0.77, 2.2] {
            for log_slope in [false, true] {
                let f = |y: f64| ev.derivs(y, log_slope)[0];
                let d = ev.derivs(x, log_slope);
                let h = 1e-6;
                let fd1 = (f(x + h) - f(x - h)) / (2.0 * h);
                assert!((fd1 - d[1]).abs() <= 1e-6 * (1.0 + d[1].abs()), "x={x}");
            }
        }
    }

    #[test]
    fn param_partials_match_finite_differences() {
        let sh = shape();
        let base = logits();
        for &x in &[-2.5, -0.4, 0.9, 2.8] {
            for log_slope in [false, true] {
                let mut pp = vec![[0.0; 3]; sh.n_params()];
                sh.prepare(&base).param_partials(x, log_slope, &mut pp);
                for i in 0..sh.n_params() {
                    let eps = 1e-6;
                    let mut hi = base.clone();
                    hi[i] += eps;
                    let mut lo = base.clone();
                    lo[i] -= eps;
                    let dh = sh.prepare(&hi).derivs(x, log_slope);
                    let dl = sh.prepare(&lo).derivs(x, log_slope);
                    for q in 0..3 {
                        let fd = (dh[q] - dl[q]) / (2.0 * eps);
                        assert!(
                            (fd - pp[i][q]).abs() <= 1e-6 * (1.0 + fd.abs()),
                            "x={x} i={i} q={q}: fd {fd} vs {}",
                            pp[i][q]
                        );
                    }
                }
            }
        }
    }
}
