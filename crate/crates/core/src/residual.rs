//! Fokker-Planck residual of the flow density and the composite loss.
//!
//! For constant diffusion the operator expands to
//!
//! ```text
//! r = p_t + (div mu) p + mu . grad p - sum_ij D_ij p_{x_i x_j}
//! ```
//!
//! which is a fixed linear functional of the density jet at each point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::TemporalFlow;
use crate::jet::{Jet2, JetLayout};
use crate::problem::TfpProblem;
use crate::tape::{NodeId, ParamTape};

/// Points handled by one worker; fixed so the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_ic: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_r) || !ok(self.lambda_ic) {
            return Err(Error::invalid("weights", "lambda_r and lambda_ic must be finite and nonnegative"));
        }
        if self.lambda_r == 0.0 && self.lambda_ic == 0.0 {
            return Err(Error::invalid("weights", "lambda_r and lambda_ic cannot both be zero"));
        }
        Ok(())
    }
}

/// Coefficients `c` with `r = sum_c c[c] * jet[c]` in `layout`.
pub fn residual_coeffs(problem: &TfpProblem, layout: &JetLayout, x: &[f64], t: f64) -> Vec<f64> {
    let d = problem.dim;
    let mut c = vec![0.0; layout.width()];
    let mut mu = vec![0.0; d];
    (problem.drift)(x, t, &mut mu);
    c[0] = (problem.drift_div)(x, t);
    for (k, m) in mu.iter().enumerate() {
        if let Some(s) = layout.grad_slot(k) {
            c[s] = *m;
        }
    }
    if let Some(s) = layout.grad_slot(d) {
        c[s] = 1.0;
    }
    for &(k, l) in layout.pairs() {
        let dkl = if k == l {
            problem.diffusion_at(k, k)
        } else {
            problem.diffusion_at(k, l) + problem.diffusion_at(l, k)
        };
        c[layout.hess_slot(k, l).expect("pair is carried")] = -dkl;
    }
    c
}

/// Applies the operator to an arbitrary density jet (e.g. an exact solution).
pub fn residual_of_jet(problem: &TfpProblem, x: &[f64], t: f64, p: &Jet2) -> f64 {
    let d = problem.dim;
    let mut mu = vec![0.0; d];
    (problem.drift)(x, t, &mut mu);
    let mut r = p.dt() + (problem.drift_div)(x, t) * p.value();
    for (k, m) in mu.iter().enumerate() {
        r += m * p.grad()[k];
    }
    for i in 0..d {
        for j in 0..d {
            let dij = problem.diffusion_at(i, j);
            if dij != 0.0 {
                r -= dij * p.hess(i, j);
            }
        }
    }
    r
}

/// Records the scalar residual at `(x, t)` on `tape`, whose layout must carry
/// the problem's Hessian pairs.
pub fn record_residual(
    tape: &mut ParamTape,
    flow: &TemporalFlow,
    params: &[f64],
    problem: &TfpProblem,
    x: &[f64],
    t: f64,
) -> Result<NodeId> {
    let (xs, ts) = tape.seed(x, t);
    let p = flow.record_density(tape, params, xs, ts)?;
    let coeffs = residual_coeffs(problem, tape.layout(), x, t);
    Ok(tape.contract(p, &coeffs))
}

/// Residual of the flow density at one point.
pub fn residual(flow: &TemporalFlow, problem: &TfpProblem, x: &[f64], t: f64) -> Result<f64> {
    let mut tape = ParamTape::new(problem.jet_layout());
    let r = record_residual(&mut tape, flow, flow.params(), problem, x, t)?;
    let v = tape.value(r, 0);
    if !v.is_finite() {
        return Err(Error::NonFiniteResidual { x: x.to_vec(), t });
    }
    Ok(v)
}

/// Loss value, its two terms, and the parameter gradient.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    /// Mean squared residual.
    pub loss_r: f64,
    /// Mean squared initial-condition mismatch.
    pub loss_ic: f64,
    pub grad: Vec<f64>,
}

struct Partial {
    sum_r: f64,
    sum_ic: f64,
    grad: Vec<f64>,
}

/// `lambda_r mean(r^2) + lambda_ic mean((p(x, 0) - p0(x))^2)` and its
/// gradient.
///
/// `xr` and `xic` are row-major with `dim` columns; `tr` holds one time per
/// residual row. A term with no points contributes zero; both empty is an
/// error.
pub fn loss_pde(
    flow: &TemporalFlow,
    problem: &TfpProblem,
    xr: &[f64],
    tr: &[f64],
    xic: &[f64],
    weights: LossWeights,
) -> Result<LossEval> {
    let d = problem.dim;
    if flow.dim() != d {
        return Err(Error::Shape("flow and problem dimensions differ".into()));
    }
    if xr.len() != tr.len() * d || xic.len() % d != 0 {
        return Err(Error::Shape("batch arrays do not match the dimension".into()));
    }
    let (nr, nic) = (tr.len(), xic.len() / d);
    if nr == 0 && nic == 0 {
        return Err(Error::EmptyBatch("both residual and initial-condition batches are empty"));
    }
    let params = flow.params();
    let np = params.len();
    let seed_r = if nr > 0 { 2.0 * weights.lambda_r / nr as f64 } else { 0.0 };
    let seed_ic = if nic > 0 { 2.0 * weights.lambda_ic / nic as f64 } else { 0.0 };
    let layout = problem.jet_layout();

    let residual_parts: Vec<Partial> = xr
        .par_chunks(CHUNK * d)
        .zip(tr.par_chunks(CHUNK))
        .map(|(xs, ts)| -> Result<Partial> {
            let mut tape = ParamTape::new(layout.clone());
            let mut part = Partial {
                sum_r: 0.0,
                sum_ic: 0.0,
                grad: vec![0.0; np],
            };
            for (x, &t) in xs.chunks(d).zip(ts) {
                tape.clear();
                let r = record_residual(&mut tape, flow, params, problem, x, t)?;
                let v = tape.value(r, 0);
                if !v.is_finite() {
                    return Err(Error::NonFiniteResidual { x: x.to_vec(), t });
                }
                part.sum_r += v * v;
                if seed_r != 0.0 {
                    // d(r^2) = 2 r dr
                    tape.backward(params, r, seed_r * v, &mut part.grad)?;
                }
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;

    let ic_parts: Vec<Partial> = xic
        .par_chunks(CHUNK * d)
        .map(|xs| -> Result<Partial> {
            let mut tape = ParamTape::new(JetLayout::value_only(d));
            let mut part = Partial {
                sum_r: 0.0,
                sum_ic: 0.0,
                grad: vec![0.0; np],
            };
            for x in xs.chunks(d) {
                tape.clear();
                let (xn, tn) = tape.seed(x, 0.0);
                let p = flow.record_density(&mut tape, params, xn, tn)?;
                let diff = tape.value(p, 0) - problem.p0.density(x, 0.0);
                if !diff.is_finite() {
                    return Err(Error::NonFiniteResidual { x: x.to_vec(), t: 0.0 });
                }
                part.sum_ic += diff * diff;
                if seed_ic != 0.0 {
                    tape.backward(params, p, seed_ic * diff, &mut part.grad)?;
                }
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;

    let mut grad = vec![0.0; np];
    let (mut sum_r, mut sum_ic) = (0.0, 0.0);
    for part in residual_parts.iter().chain(&ic_parts) {
        sum_r += part.sum_r;
        sum_ic += part.sum_ic;
        for (g, p) in grad.iter_mut().zip(&part.grad) {
            *g += p;
        }
    }
    let loss_r = if nr > 0 { sum_r / nr as f64 } else { 0.0 };
    let loss_ic = if nic > 0 { sum_ic / nic as f64 } else { 0.0 };
    let loss = weights.lambda_r * loss_r + weights.lambda_ic * loss_ic;
    Ok(LossEval {
        loss,
        loss_r,
        loss_ic,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowSpec;
    use crate::problem::{builtin, BoxDomain, Density, IsotropicGaussian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn identity(dim: usize) -> TemporalFlow {
        TemporalFlow::new(FlowSpec::new(dim, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn identity_flow_advdiff_1d() {
        let problem = builtin("advdiff_nd", Some(1)).unwrap();
        let r = residual(&identity(1), &problem, &[0.0], 0.0).unwrap();
        let want = (2.0 * PI).powf(-0.5) / 2.0;
        assert!((r - want).abs() < 1e-15, "{r} vs {want}");
    }

    #[test]
    fn exact_toy_solution_has_zero_residual() {
        let problem = builtin("toy2d", None).unwrap();
        let exact = problem.exact.clone().unwrap();
        for (x, t) in [([4.0, 4.0], 0.0), ([3.1, 5.2], 0.5), ([2.0, 6.0], 1.0)] {
            let j = exact.jet(&x, t).unwrap();
            assert!(residual_of_jet(&problem, &x, t, &j).abs() < 1e-12);
        }
    }

    fn degenerate(dim: usize) -> TfpProblem {
        TfpProblem {
            name: "pure_time".into(),
            dim,
            drift: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
            drift_div: Arc::new(|_, _| 0.0),
            diffusion: vec![0.0; dim * dim],
            p0: Arc::new(IsotropicGaussian::stationary(vec![0.0; dim], 1.0)),
            horizon: 1.0,
            init_box: BoxDomain::cube(dim, -1.0, 1.0),
            reference_box: BoxDomain::cube(dim, -1.0, 1.0),
            exact: None,
        }
    }

    #[test]
    fn zero_coefficients_reduce_to_time_derivative() {
        let problem = degenerate(2);
        let g = IsotropicGaussian {
            mean0: vec![0.0, 0.0],
            velocity: vec![1.0, -1.0],
            var0: 1.0,
            var_rate: 0.5,
        };
        let (x, t) = ([0.3, 0.1], 0.4);
        let j = g.jet(&x, t).unwrap();
        assert_eq!(residual_of_jet(&problem, &x, t, &j), j.dt());
    }

    #[test]
    fn residual_is_linear_in_the_jet() {
        let problem = builtin("linear_osc", None).unwrap();
        let g = IsotropicGaussian::stationary(vec![1.0, 1.0], 0.2);
        let (x, t) = ([0.8, 1.3], 0.2);
        let j = g.jet(&x, t).unwrap();
        let doubled = j.affine(2.0, 0.0);
        let (r1, r2) = (residual_of_jet(&problem, &x, t, &j), residual_of_jet(&problem, &x, t, &doubled));
        assert!((r2 - 2.0 * r1).abs() <= 1e-15 * r1.abs().max(1.0));
    }

    #[test]
    fn tape_residual_matches_jet_residual() {
        let problem = builtin("nonlinear_osc", None).unwrap();
        let mut flow = identity(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        for p in flow.params_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let (x, t) = ([0.4, 1.9], 0.6);
        let via_tape = residual(&flow, &problem, &x, t).unwrap();
        let j = flow.density_jet(&x, t).unwrap();
        let via_jet = residual_of_jet(&problem, &x, t, &j);
        assert!((via_tape - via_jet).abs() < 1e-14 * via_jet.abs().max(1e-3));
    }

    #[test]
    fn ic_only_loss() {
        let problem = builtin("toy2d", None).unwrap();
        let flow = identity(2);
        let xr = [0.1, 0.2];
        let tr = [0.5];
        let xic = [0.0, 0.0, 1.0, -1.0, 3.0, 4.0];
        let w = LossWeights {
            lambda_r: 0.0,
            lambda_ic: 1.0,
        };
        let l = loss_pde(&flow, &problem, &xr, &tr, &xic, w).unwrap();
        let direct: f64 = xic
            .chunks(2)
            .map(|x| {
                let diff = flow.density(x, 0.0).unwrap() - problem.p0.density(x, 0.0);
                diff * diff
            })
            .sum::<f64>()
            / 3.0;
        assert!((l.loss - direct).abs() < 1e-16);
    }

    #[test]
    fn empty_batches_are_rejected() {
        let problem = builtin("toy2d", None).unwrap();
        let flow = identity(2);
        assert!(matches!(
            loss_pde(&flow, &problem, &[], &[], &[], LossWeights::default()),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights { lambda_r: 0.0, lambda_ic: 0.0 }.validate().is_err());
        assert!(LossWeights { lambda_r: -1.0, lambda_ic: 1.0 }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
