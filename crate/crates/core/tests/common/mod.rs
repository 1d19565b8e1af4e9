#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tnf::checks::random_flow;
use tnf::flow::FlowSpec;
use tnf::jet::{jet_seed, Jet2};
use tnf::problem::TfpProblem;
use tnf::residual::{loss_pde, LossWeights};

/// Random smooth test function, written once for jets and once for floats.
pub struct Case {
    a: [f64; 3],
    b: f64,
    c: [f64; 3],
    s: f64,
}

impl Case {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut r = || rng.random_range(-1.0..1.0);
        Case {
            a: [r(), r(), r()],
            b: r(),
            c: [r(), r(), r()],
            s: 0.5 + r().abs(),
        }
    }

    // tanh(a.x + b t) * exp(-s |x|^2 / 4) + ln(1 + (c.x)^2) / (2 + t)
    pub fn f(&self, x: &[f64], t: f64) -> f64 {
        let ax: f64 = x.iter().zip(&self.a).map(|(x, a)| x * a).sum();
        let cx: f64 = x.iter().zip(&self.c).map(|(x, c)| x * c).sum();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (ax + self.b * t).tanh() * (-self.s * r2 / 4.0).exp() + (1.0 + cx * cx).ln() / (2.0 + t)
    }

    pub fn jet(&self, x: &[f64], t: f64) -> Jet2 {
        let s = jet_seed(x, t);
        let d = x.len();
        let layout = s[0].layout().clone();
        let mut ax = s[d].affine(self.b, 0.0);
        let mut cx = Jet2::constant(layout.clone(), 0.0);
        let mut r2 = Jet2::constant(layout, 0.0);
        for k in 0..d {
            ax = &ax + &s[k].affine(self.a[k], 0.0);
            cx = &cx + &s[k].affine(self.c[k], 0.0);
            r2 = &r2 + &s[k].pow2();
        }
        let left = &ax.tanh() * &r2.affine(-self.s / 4.0, 0.0).exp();
        let right = cx.pow2().affine(1.0, 1.0).ln().unwrap().div(&s[d].affine(1.0, 2.0)).unwrap();
        &left + &right
    }
}

pub fn richardson(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let c = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * c(0.5 * h) - c(h)) / 3.0
}

/// Worst relative error of the jet of a random case against Richardson
/// differences, scaled by the largest jet component.
pub fn jet_case_error(rng: &mut ChaCha8Rng, d: usize) -> f64 {
    let c = Case::random(rng);
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let t = rng.random_range(0.0..1.0);
    let j = c.jet(&x, t);
    let h = 1e-3;
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
        c.f(&y, tt)
    };
    let scale = j.components().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let mut worst = (j.value() - c.f(&x, t)).abs() / scale;
    for k in 0..=d {
        let fd = richardson(|s| at(k, s, k, 0.0), h);
        let ad = if k < d { j.grad()[k] } else { j.dt() };
        worst = worst.max((ad - fd).abs() / scale);
    }
    for k in 0..d {
        for l in 0..d {
            let fd = richardson(|s| richardson(|r| at(k, s, l, r), h), h);
            worst = worst.max((j.hess(k, l) - fd).abs() / scale);
        }
    }
    worst
}

/// Relative error of one random loss-gradient component against a central
/// difference, scaled by the largest gradient component.
pub fn loss_gradient_case_error(rng: &mut ChaCha8Rng, problem: &TfpProblem, spline: bool) -> f64 {
    let d = problem.dim;
    let mut spec = FlowSpec::new(d, 2);
    spec.hidden = 6;
    spec.spline.enabled = spline;
    spec.spline.intervals = 8;
    let mut flow = random_flow(spec, 0.2, rng).unwrap();
    let n = 4;
    let xr: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let tr: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let xic: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let w = LossWeights {
        lambda_r: 1.0,
        lambda_ic: 0.5,
    };
    let base = loss_pde(&flow, problem, &xr, &tr, &xic, w).unwrap();
    let gmax = base.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let i = rng.random_range(0..flow.n_params());
    let h = 1e-6;
    let orig = flow.params()[i];
    flow.params_mut()[i] = orig + h;
    let up = loss_pde(&flow, problem, &xr, &tr, &xic, w).unwrap().loss;
    flow.params_mut()[i] = orig - h;
    let down = loss_pde(&flow, problem, &xr, &tr, &xic, w).unwrap().loss;
    (base.grad[i] - (up - down) / (2.0 * h)).abs() / gmax
}
