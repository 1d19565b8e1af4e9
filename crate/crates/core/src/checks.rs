//! Self-checks run by `tnf validate`: derivatives against finite
//! differences, flow invertibility and log-determinants, and the residual of
//! closed-form solutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::flow::{standard_normal_log_density, FlowSpec, TemporalFlow};
use crate::jet::Jet2;
use crate::problem::TfpProblem;
use crate::residual::{loss_pde, residual_of_jet, LossWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

/// Residual operator applied to a density jet.
pub type ResidualOp = fn(&TfpProblem, &[f64], f64, &Jet2) -> f64;

/// A flow with every parameter shifted by `U(-scale, scale)`, so it is far
/// from the identity.
pub fn random_flow<R: Rng + ?Sized>(spec: FlowSpec, scale: f64, rng: &mut R) -> Result<TemporalFlow> {
    let mut flow = TemporalFlow::new(spec, rng)?;
    for p in flow.params_mut() {
        *p += rng.random_range(-scale..scale);
    }
    flow.enforce_constraints();
    Ok(flow)
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-300)
}

/// Richardson-extrapolated central difference of `f` along a direction,
/// with error `O(h^4)`.
fn richardson(f: impl Fn(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let c = |h: f64| -> Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    Ok((4.0 * c(0.5 * h)? - c(h)?) / 3.0)
}

/// Jet derivatives of the flow density against finite differences.
///
/// The spline layer is only piecewise smooth, so a stencil straddling a knot
/// is not a valid oracle. Such points are detected by disagreement between
/// two step sizes and redrawn.
pub fn check_density_jet(spec: &FlowSpec, points: usize, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let flow = random_flow(spec.clone(), 0.2, rng)?;
    let d = spec.dim;
    let h = 4e-4;
    let mut worst = 0.0f64;
    let (mut done, mut redrawn) = (0, 0);
    while done < points {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let t = rng.random_range(0.0..1.0);
        let j = flow.density_jet(&x, t)?;
        let scale = j.value().abs();
        // density at x + a e_k + b e_l, with index d standing for time
        let at = |k: usize, a: f64, l: usize, b: f64| {
            let mut y = x.clone();
            let mut tt = t;
            for (i, s) in [(k, a), (l, b)] {
                if i < d {
                    y[i] += s;
                } else {
                    tt += s;
                }
            }
            flow.density(&y, tt)
        };
        let mut pairs = Vec::new();
        for k in 0..=d {
            let fd = |h| richardson(|s| at(k, s, k, 0.0), h);
            let ad = if k < d { j.grad()[k] } else { j.dt() };
            pairs.push((ad, fd(h)?, fd(0.5 * h)?));
        }
        for k in 0..d {
            for l in 0..d {
                let fd = |h| richardson(|s| richardson(|r| at(k, s, l, r), h), h);
                pairs.push((j.hess(k, l), fd(h)?, fd(0.5 * h)?));
            }
        }
        if pairs.iter().any(|&(_, a, b)| rel(a, b, scale) > 1e-6) && redrawn < 20 * points {
            redrawn += 1;
            continue;
        }
        for (ad, fd, _) in pairs {
            worst = worst.max(rel(ad, fd, scale));
        }
        done += 1;
    }
    Ok(CheckResult::new(
        "density_jet_vs_finite_differences",
        worst < 1e-4,
        format!("worst relative error {worst:.2e} over {points} points, {redrawn} non-smooth points redrawn (tolerance 1e-4)"),
    ))
}

/// Parameter gradient of the loss against central differences.
pub fn check_loss_gradient(spec: &FlowSpec, problem: &TfpProblem, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut flow = random_flow(spec.clone(), 0.2, rng)?;
    let d = problem.dim;
    let n = 8;
    let xr: Vec<f64> = (0..n).flat_map(|_| problem.init_box.sample(rng)).map(|v| 0.3 * v).collect();
    let tr: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..problem.horizon)).collect();
    let xic: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = LossWeights::default();
    let base = loss_pde(&flow, problem, &xr, &tr, &xic, w)?;
    let gmax = base.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let i = rng.random_range(0..flow.n_params());
        let orig = flow.params()[i];
        flow.params_mut()[i] = orig + h;
        let up = loss_pde(&flow, problem, &xr, &tr, &xic, w)?.loss;
        flow.params_mut()[i] = orig - h;
        let down = loss_pde(&flow, problem, &xr, &tr, &xic, w)?.loss;
        flow.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel(base.grad[i], fd, gmax.max(base.grad[i].abs())));
    }
    Ok(CheckResult::new(
        "loss_gradient_vs_finite_differences",
        worst < 1e-4,
        format!("worst relative error {worst:.2e} over 12 parameters (tolerance 1e-4)"),
    ))
}

/// `f^-1(f(x)) = x`, including points in the spline tails.
pub fn check_round_trip(spec: &FlowSpec, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let flow = random_flow(spec.clone(), 0.2, rng)?;
    let reach = spec.spline.half_width * 1.5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-reach..reach)).collect();
        let t = rng.random_range(0.0..1.0);
        let (z, _) = flow.forward(&x, t)?;
        let back = match flow.inverse(&z, t) {
            Ok(b) => b,
            Err(e) => {
                return Ok(CheckResult::new("flow_round_trip", false, format!("inverse failed: {e}")));
            }
        };
        for (a, b) in x.iter().zip(&back) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(CheckResult::new(
        "flow_round_trip",
        worst <= 1e-9,
        format!("max |x - f^-1(f(x))| = {worst:.2e} (tolerance 1e-9)"),
    ))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .expect("nonempty");
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

/// Log-determinant against the finite-difference Jacobian.
pub fn check_logdet(spec: &FlowSpec, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let flow = random_flow(spec.clone(), 0.2, rng)?;
    let d = spec.dim;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(0.0..1.0);
        let (_, logdet) = flow.forward(&x, t)?;
        let mut jac = vec![vec![0.0; d]; d];
        for k in 0..d {
            let mut a = x.clone();
            a[k] += h;
            let mut b = x.clone();
            b[k] -= h;
            let (za, _) = flow.forward(&a, t)?;
            let (zb, _) = flow.forward(&b, t)?;
            for i in 0..d {
                jac[i][k] = (za[i] - zb[i]) / (2.0 * h);
            }
        }
        let det = determinant(jac).abs();
        worst = worst.max(rel(logdet.exp(), det, det));
    }
    Ok(CheckResult::new(
        "logdet_vs_finite_difference_jacobian",
        worst < 1e-5,
        format!("worst relative error {worst:.2e} (tolerance 1e-5)"),
    ))
}

/// A freshly initialized flow without the spline layer is the identity with
/// a standard-normal density.
pub fn check_identity_prior(spec: &FlowSpec, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut spec = spec.clone();
    spec.spline.enabled = false;
    let flow = TemporalFlow::new(spec.clone(), rng)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t = rng.random_range(0.0..1.0);
        worst = worst.max((flow.log_density(&x, t)? - standard_normal_log_density(&x)).abs());
    }
    Ok(CheckResult::new(
        "identity_flow_is_standard_normal",
        worst == 0.0,
        format!("max log-density deviation {worst:.2e}"),
    ))
}

/// Tail points of the spline layer can be inverted.
pub fn check_spline_invertible(spec: &FlowSpec) -> Result<CheckResult> {
    if !spec.spline.enabled {
        return Ok(CheckResult::new("spline_invertible", true, "spline layer disabled"));
    }
    let flow = TemporalFlow::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let z = vec![spec.spline.half_width + 1.0; spec.dim];
    Ok(match flow.inverse(&z, 0.0) {
        Ok(_) => CheckResult::new("spline_invertible", true, format!("tail slope gamma = {}", spec.spline.gamma)),
        Err(e) => CheckResult::new(
            "spline_invertible",
            false,
            format!(
                "tail slope gamma = {}: the spline is not invertible outside [-{c}, {c}] ({e})",
                spec.spline.gamma,
                c = spec.spline.half_width
            ),
        ),
    })
}

/// The closed-form solution, pushed through `op`, leaves a residual below
/// `1e-8` at random points.
pub fn check_exact_residual(problem: &TfpProblem, op: ResidualOp, points: usize, rng: &mut ChaCha8Rng) -> CheckResult {
    let Some(exact) = problem.exact.as_ref() else {
        return CheckResult::new("exact_solution_residual", true, "skipped: no closed-form solution");
    };
    let mut worst = 0.0f64;
    for _ in 0..points {
        let t = rng.random_range(0.0..problem.horizon);
        let x = exact.sample(t, rng);
        let Some(j) = exact.jet(&x, t) else {
            return CheckResult::new("exact_solution_residual", true, "skipped: solution has no jet form");
        };
        worst = worst.max(op(problem, &x, t, &j).abs());
    }
    CheckResult::new(
        "exact_solution_residual",
        worst <= 1e-8,
        format!("max |r| = {worst:.2e} over {points} points (tolerance 1e-8)"),
    )
}

/// Every check for the given problem and flow architecture.
pub fn run_checks(spec: &FlowSpec, problem: &TfpProblem, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep the finite-difference checks cheap on wide configs
    let mut small = spec.clone();
    small.hidden = small.hidden.min(16);
    let mut out = vec![check_spline_invertible(spec)?];
    if !out[0].passed {
        return Ok(out);
    }
    out.push(check_identity_prior(spec, &mut rng)?);
    out.push(check_density_jet(&small, 10, &mut rng)?);
    out.push(check_loss_gradient(&small, problem, &mut rng)?);
    out.push(check_round_trip(spec, &mut rng)?);
    out.push(check_logdet(spec, &mut rng)?);
    out.push(check_exact_residual(problem, residual_of_jet, 1000, &mut rng));
    Ok(out)
}
