//! Fokker-Planck problem definitions and the built-in registry.
//!
//! A problem is `p_t = -sum_i d/dx_i (mu_i p) + sum_ij D_ij d2 p / dx_i dx_j`
//! with a constant diffusion matrix `D`, an initial density, a horizon, and
//! the boxes used for initial collocation and for evaluation.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::jet::{jet_seed, Jet2, JetLayout};

/// A time-dependent density that can be evaluated and sampled.
pub trait Density: Send + Sync {
    fn dim(&self) -> usize;

    fn density(&self, x: &[f64], t: f64) -> f64;

    fn log_density(&self, x: &[f64], t: f64) -> f64 {
        self.density(x, t).ln()
    }

    /// One draw from `p(., t)`.
    fn sample(&self, t: f64, rng: &mut dyn RngCore) -> Vec<f64>;

    /// The density as a jet with exact derivatives, when available in
    /// closed form.
    fn jet(&self, _x: &[f64], _t: f64) -> Option<Jet2> {
        None
    }
}

/// `N(mean0 + velocity t, (var0 + var_rate t) I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropicGaussian {
    pub mean0: Vec<f64>,
    pub velocity: Vec<f64>,
    pub var0: f64,
    pub var_rate: f64,
}

impl IsotropicGaussian {
    pub fn stationary(mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        IsotropicGaussian {
            mean0: mean,
            velocity: vec![0.0; d],
            var0: var,
            var_rate: 0.0,
        }
    }

    pub fn mean(&self, t: f64) -> Vec<f64> {
        self.mean0
            .iter()
            .zip(&self.velocity)
            .map(|(m, v)| m + v * t)
            .collect()
    }

    pub fn var(&self, t: f64) -> f64 {
        self.var0 + self.var_rate * t
    }

    /// Differential entropy at time `t`.
    pub fn entropy(&self, t: f64) -> f64 {
        0.5 * self.dim() as f64 * (2.0 * PI * std::f64::consts::E * self.var(t)).ln()
    }
}

impl Density for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean0.len()
    }

    fn density(&self, x: &[f64], t: f64) -> f64 {
        self.log_density(x, t).exp()
    }

    fn log_density(&self, x: &[f64], t: f64) -> f64 {
        let v = self.var(t);
        let r2: f64 = x
            .iter()
            .zip(self.mean(t))
            .map(|(a, m)| (a - m) * (a - m))
            .sum();
        -0.5 * self.dim() as f64 * (2.0 * PI * v).ln() - r2 / (2.0 * v)
    }

    fn sample(&self, t: f64, rng: &mut dyn RngCore) -> Vec<f64> {
        let s = self.var(t).sqrt();
        self.mean(t)
            .into_iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }

    fn jet(&self, x: &[f64], t: f64) -> Option<Jet2> {
        let d = self.dim();
        let seeds = jet_seed(x, t);
        let layout = seeds[0].layout().clone();
        let time = &seeds[d];
        let var = time.affine(self.var_rate, self.var0);
        let mut r2 = Jet2::constant(layout.clone(), 0.0);
        for k in 0..d {
            let centered = &seeds[k] - &time.affine(self.velocity[k], self.mean0[k]);
            r2 = &r2 + &(&centered * &centered);
        }
        let inv_var = var.recip().ok()?;
        // log p = -(d/2) ln(2 pi var) - r2 / (2 var)
        let log_var = var.ln().ok()?;
        let logp = &log_var.affine(-0.5 * d as f64, -0.5 * d as f64 * (2.0 * PI).ln())
            - &(&r2 * &inv_var).affine(0.5, 0.0);
        Some(logp.exp())
    }
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        BoxDomain {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| rng.random_range(a..b))
            .collect()
    }
}

pub type DriftFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
pub type DriftDivFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A time-dependent Fokker-Planck problem with constant diffusion.
#[derive(Clone)]
pub struct TfpProblem {
    pub name: String,
    pub dim: usize,
    pub drift: DriftFn,
    /// Divergence of the drift, supplied analytically.
    pub drift_div: DriftDivFn,
    /// Row-major `dim x dim` diffusion matrix `D = sigma sigma^T / 2`.
    pub diffusion: Vec<f64>,
    pub p0: Arc<dyn Density>,
    pub horizon: f64,
    /// Box for the initial uniform collocation points.
    pub init_box: BoxDomain,
    /// Box covering the solution over `[0, T]`, used for grids and the
    /// finite-difference reference.
    pub reference_box: BoxDomain,
    pub exact: Option<Arc<dyn Density>>,
}

impl fmt::Debug for TfpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TfpProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("diffusion", &self.diffusion)
            .field("horizon", &self.horizon)
            .field("init_box", &self.init_box)
            .field("reference_box", &self.reference_box)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["toy2d", "linear_osc", "nonlinear_osc", "advdiff_nd"];

impl TfpProblem {
    /// Checks the structural invariants of a problem.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if self.diffusion.len() != d * d {
            return Err(Error::invalid("diffusion", format!("expected {} entries", d * d)));
        }
        for i in 0..d {
            if !(self.diffusion[i * d + i] >= 0.0) {
                return Err(Error::invalid("diffusion", "diagonal must be nonnegative"));
            }
            for j in 0..d {
                if self.diffusion[i * d + j] != self.diffusion[j * d + i] {
                    return Err(Error::invalid("diffusion", "matrix must be symmetric"));
                }
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        if self.p0.dim() != d || self.init_box.dim() != d || self.reference_box.dim() != d {
            return Err(Error::invalid("dim", "components disagree on the dimension"));
        }
        Ok(())
    }

    pub fn diffusion_at(&self, i: usize, j: usize) -> f64 {
        self.diffusion[i * self.dim + j]
    }

    /// Spatial Hessian entries `(k, l)`, `k <= l`, that the operator reads.
    pub fn hessian_pairs(&self) -> Vec<(usize, usize)> {
        let d = self.dim;
        let mut pairs = Vec::new();
        for k in 0..d {
            for l in k..d {
                if self.diffusion_at(k, l) != 0.0 || self.diffusion_at(l, k) != 0.0 {
                    pairs.push((k, l));
                }
            }
        }
        pairs
    }

    /// Jet layout carrying exactly what the residual needs.
    pub fn jet_layout(&self) -> JetLayout {
        JetLayout::with_pairs(self.dim, self.hessian_pairs())
    }

    pub fn exact_eval(&self, x: &[f64], t: f64) -> Result<f64> {
        self.exact
            .as_ref()
            .map(|e| e.density(x, t))
            .ok_or(Error::NoExactSolution)
    }
}

fn diag(values: &[f64]) -> Vec<f64> {
    let d = values.len();
    let mut m = vec![0.0; d * d];
    for (i, v) in values.iter().enumerate() {
        m[i * d + i] = *v;
    }
    m
}

/// Heat equation `p_t = 0.5 Lap p` in 2-d started from `N(4 * 1, I)`.
pub fn toy2d() -> TfpProblem {
    let exact = IsotropicGaussian {
        mean0: vec![4.0, 4.0],
        velocity: vec![0.0, 0.0],
        var0: 1.0,
        var_rate: 1.0,
    };
    TfpProblem {
        name: "toy2d".into(),
        dim: 2,
        drift: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
        drift_div: Arc::new(|_, _| 0.0),
        diffusion: diag(&[0.5, 0.5]),
        p0: Arc::new(IsotropicGaussian::stationary(vec![4.0, 4.0], 1.0)),
        horizon: 1.0,
        init_box: BoxDomain::cube(2, -3.0, 3.0),
        reference_box: BoxDomain::cube(2, -3.0, 11.0),
        exact: Some(Arc::new(exact)),
    }
}

/// Damped linear oscillator, `mu = (x2, -0.2 x2 - x1)`, `D = diag(0, 0.2)`.
pub fn linear_osc() -> TfpProblem {
    TfpProblem {
        name: "linear_osc".into(),
        dim: 2,
        drift: Arc::new(|x: &[f64], _, out: &mut [f64]| {
            out[0] = x[1];
            out[1] = -0.2 * x[1] - x[0];
        }),
        drift_div: Arc::new(|_, _| -0.2),
        diffusion: diag(&[0.0, 0.2]),
        p0: Arc::new(IsotropicGaussian::stationary(vec![1.0, 1.0], 1.0 / 9.0)),
        horizon: 3.0,
        init_box: BoxDomain::cube(2, -5.0, 5.0),
        reference_box: BoxDomain::cube(2, -5.0, 5.0),
        exact: None,
    }
}

/// Duffing-type oscillator, `mu = (x2, x1 - 0.4 x2 - 0.1 x1^3)`,
/// `D = diag(0, 0.4)`.
pub fn nonlinear_osc() -> TfpProblem {
    TfpProblem {
        name: "nonlinear_osc".into(),
        dim: 2,
        drift: Arc::new(|x: &[f64], _, out: &mut [f64]| {
            out[0] = x[1];
            out[1] = x[0] - 0.4 * x[1] - 0.1 * x[0] * x[0] * x[0];
        }),
        drift_div: Arc::new(|_, _| -0.4),
        diffusion: diag(&[0.0, 0.4]),
        p0: Arc::new(IsotropicGaussian::stationary(vec![0.0, 5.0], 1.0)),
        horizon: 3.0,
        init_box: BoxDomain::cube(2, -10.0, 10.0),
        reference_box: BoxDomain::cube(2, -10.0, 10.0),
        exact: None,
    }
}

/// `p_t - 0.5 Lap p + 2 div p = 0` in `dim` dimensions: drift `2 * 1`,
/// `D = I / 2`, started from the standard normal.
pub fn advdiff(dim: usize) -> Result<TfpProblem> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    let exact = IsotropicGaussian {
        mean0: vec![0.0; dim],
        velocity: vec![2.0; dim],
        var0: 1.0,
        var_rate: 1.0,
    };
    let half = if dim <= 4 { 3.0 } else { 5.0 };
    Ok(TfpProblem {
        name: format!("advdiff_{dim}d"),
        dim,
        drift: Arc::new(|_, _, out: &mut [f64]| out.fill(2.0)),
        drift_div: Arc::new(|_, _| 0.0),
        diffusion: diag(&vec![0.5; dim]),
        p0: Arc::new(IsotropicGaussian::stationary(vec![0.0; dim], 1.0)),
        horizon: 1.0,
        init_box: BoxDomain::cube(dim, -half, half),
        reference_box: BoxDomain::cube(dim, -4.0, 6.0),
        exact: Some(Arc::new(exact)),
    })
}

/// Looks up a built-in problem; `dim` is required for `advdiff_nd` only.
pub fn builtin(name: &str, dim: Option<usize>) -> Result<TfpProblem> {
    let p = match name {
        "toy2d" => toy2d(),
        "linear_osc" => linear_osc(),
        "nonlinear_osc" => nonlinear_osc(),
        "advdiff_nd" | "advdiff" => {
            let d = dim.ok_or_else(|| Error::invalid("dim", "advdiff_nd requires a dimension"))?;
            advdiff(d)?
        }
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    if let Some(d) = dim {
        if d != p.dim {
            return Err(Error::invalid("dim", format!("{name} is {}-dimensional", p.dim)));
        }
    }
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_exact_peaks() {
        let p = builtin("toy2d", None).unwrap();
        let v0 = p.exact_eval(&[4.0, 4.0], 0.0).unwrap();
        assert!((v0 - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let v1 = p.exact_eval(&[4.0, 4.0], 1.0).unwrap();
        assert!((v1 - 1.0 / (4.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn drift_divergences() {
        let x = [0.3, -1.2];
        assert_eq!((builtin("linear_osc", None).unwrap().drift_div)(&x, 0.5), -0.2);
        assert_eq!((builtin("nonlinear_osc", None).unwrap().drift_div)(&x, 0.5), -0.4);
        let ad = builtin("advdiff_nd", Some(4)).unwrap();
        assert_eq!((ad.drift_div)(&[0.0; 4], 0.1), 0.0);
    }

    #[test]
    fn drift_divergence_matches_finite_differences() {
        for name in ["linear_osc", "nonlinear_osc"] {
            let p = builtin(name, None).unwrap();
            let x = [0.7, -0.4];
            let h = 1e-6;
            let mut div = 0.0;
            for i in 0..2 {
                let mut hi = x;
                hi[i] += h;
                let mut lo = x;
                lo[i] -= h;
                let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
                (p.drift)(&hi, 0.0, &mut a);
                (p.drift)(&lo, 0.0, &mut b);
                div += (a[i] - b[i]) / (2.0 * h);
            }
            assert!((div - (p.drift_div)(&x, 0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn advdiff_exact_values() {
        let p = builtin("advdiff_nd", Some(4)).unwrap();
        let t = 0.3;
        let v = p.exact_eval(&[2.0 * t; 4], t).unwrap();
        assert!((v - (2.0 * PI * (t + 1.0)).powi(-2)).abs() < 1e-15);

        let p = builtin("advdiff_nd", Some(8)).unwrap();
        let mut x = [0.0; 8];
        x[0] = 10.0;
        let v = p.exact_eval(&x, 0.0).unwrap();
        let want = (2.0 * PI).powi(-4) * (-50.0f64).exp();
        assert!((v - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn registry_errors() {
        assert!(matches!(builtin("nope", None), Err(Error::UnknownProblem(_))));
        assert!(builtin("advdiff_nd", None).is_err());
        assert!(builtin("linear_osc", None).unwrap().exact_eval(&[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn oscillators_have_rank_one_diffusion() {
        for name in ["linear_osc", "nonlinear_osc"] {
            let p = builtin(name, None).unwrap();
            assert_eq!(p.hessian_pairs(), vec![(1, 1)]);
            assert_eq!(p.jet_layout().hess_slot(0, 0), None);
        }
    }

    #[test]
    fn gaussian_jet_matches_density() {
        let g = IsotropicGaussian {
            mean0: vec![0.5, -1.0],
            velocity: vec![1.0, 0.3],
            var0: 0.8,
            var_rate: 0.4,
        };
        let (x, t) = ([0.2, -0.1], 0.7);
        let j = g.jet(&x, t).unwrap();
        assert!((j.value() - g.density(&x, t)).abs() < 1e-15);
        let h = 1e-5;
        let mut xp = x;
        xp[0] += h;
        let mut xm = x;
        xm[0] -= h;
        let fd = (g.density(&xp, t) - g.density(&xm, t)) / (2.0 * h);
        assert!((fd - j.grad()[0]).abs() < 1e-9);
        let fdt = (g.density(&x, t + h) - g.density(&x, t - h)) / (2.0 * h);
        assert!((fdt - j.dt()).abs() < 1e-9);
    }

    #[test]
    fn sampler_moments() {
        let g = IsotropicGaussian::stationary(vec![1.0, 1.0], 1.0 / 9.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let mut m = [0.0; 2];
        for _ in 0..n {
            let s = g.sample(0.0, &mut rng);
            m[0] += s[0] / n as f64;
            m[1] += s[1] / n as f64;
        }
        assert!((m[0] - 1.0).abs() < 4.0 / 3.0 / (n as f64).sqrt());
    }
}
