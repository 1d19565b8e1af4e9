//! Relative L2 error and relative KL divergence against a reference density.

use std::sync::Arc;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adi::GridSolution;
use crate::error::{Error, Result};
use crate::flow::TemporalFlow;
use crate::problem::{BoxDomain, Density};

/// `sqrt(sum (pred - ref)^2) / sqrt(sum ref^2)`.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Shape("prediction and reference differ in length".into()));
    }
    if pred.is_empty() {
        return Err(Error::invalid("eval_points", "must not be empty"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        num += (p - r) * (p - r);
        den += r * r;
    }
    if !(den > 0.0) {
        return Err(Error::invalid("reference", "identically zero on the evaluation set"));
    }
    Ok((num / den).sqrt())
}

/// Ground truth: a closed-form density or a finite-difference grid.
#[derive(Clone)]
pub enum Reference {
    Exact(Arc<dyn Density>),
    Grid(Arc<GridSolution>),
}

impl Reference {
    pub fn density(&self, x: &[f64], t: f64) -> Result<f64> {
        match self {
            Reference::Exact(d) => Ok(d.density(x, t)),
            Reference::Grid(g) => g.interpolate(x, t),
        }
    }

    pub fn log_density(&self, x: &[f64], t: f64) -> Result<f64> {
        match self {
            Reference::Exact(d) => Ok(d.log_density(x, t)),
            Reference::Grid(g) => Ok(g.interpolate(x, t)?.ln()),
        }
    }

    pub fn sample<R: RngCore>(&self, t: f64, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match self {
            Reference::Exact(d) => Ok((0..n).map(|_| d.sample(t, rng)).collect()),
            Reference::Grid(g) => g.sample(t, n, rng),
        }
    }
}

/// Relative L2 of the flow against `reference` over row-major `points`.
pub fn flow_relative_l2(flow: &TemporalFlow, reference: &Reference, points: &[f64], t: f64) -> Result<f64> {
    let d = flow.dim();
    let pred: Vec<f64> = points.par_chunks(d).map(|x| flow.density(x, t)).collect::<Result<_>>()?;
    let truth: Vec<f64> = points
        .par_chunks(d)
        .map(|x| reference.density(x, t))
        .collect::<Result<_>>()?;
    relative_l2(&pred, &truth)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    /// `mean(log p* - log p) / mean(-log p*)`.
    pub value: f64,
    /// Standard error of the numerator mean, divided by the denominator.
    pub stderr: f64,
    pub n: usize,
}

/// Monte Carlo relative KL divergence of `log_p` from `reference`, with
/// `n_v` draws from the reference at time `t`.
pub fn relative_kl<F, R>(log_p: F, reference: &Reference, t: f64, n_v: usize, rng: &mut R) -> Result<KlEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    R: RngCore,
{
    if n_v == 0 {
        return Err(Error::invalid("n_v", "must be at least 1"));
    }
    let xs = reference.sample(t, n_v, rng)?;
    let terms: Vec<(f64, f64)> = xs
        .par_iter()
        .map(|x| -> Result<(f64, f64)> {
            let lq = reference.log_density(x, t)?;
            let lp = log_p(x)?;
            if !lp.is_finite() {
                return Err(Error::NonFiniteResidual { x: x.clone(), t });
            }
            Ok((lq - lp, -lq))
        })
        .collect::<Result<_>>()?;
    let n = n_v as f64;
    let num = terms.iter().map(|v| v.0).sum::<f64>() / n;
    let den = terms.iter().map(|v| v.1).sum::<f64>() / n;
    let var = if n_v > 1 {
        terms.iter().map(|v| (v.0 - num) * (v.0 - num)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(KlEstimate {
        value: num / den,
        stderr: (var / n).sqrt() / den.abs(),
        n: n_v,
    })
}

/// Row-major points of an `n x n` tensor grid over a 2-d box.
pub fn grid_points(domain: &BoxDomain, n: usize) -> Vec<f64> {
    let step = |k: usize| (domain.hi[k] - domain.lo[k]) / (n - 1).max(1) as f64;
    let (hx, hy) = (step(0), step(1));
    let mut pts = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            pts.push(domain.lo[0] + hx * i as f64);
            pts.push(domain.lo[1] + hy * j as f64);
        }
    }
    pts
}

/// A 2-d slice of a higher-dimensional space: every coordinate except
/// `axes` is pinned to `fixed` (0-based indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub axes: [usize; 2],
    pub fixed: Vec<(usize, f64)>,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl SliceSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut seen = vec![false; dim];
        for &k in self.axes.iter().chain(self.fixed.iter().map(|(k, _)| k)) {
            if k >= dim || seen[k] {
                return Err(Error::invalid("eval.slices", format!("coordinate {k} repeated or out of range")));
            }
            seen[k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("eval.slices", "every coordinate must be an axis or fixed"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.fixed.iter().map(|(k, v)| format!("x{}={v}", k + 1)).collect();
        parts.join(";")
    }

    /// Embeds an `n x n` grid over the slice into full-dimensional points.
    pub fn points(&self, dim: usize, n: usize) -> Vec<f64> {
        let plane = grid_points(
            &BoxDomain {
                lo: self.lo.to_vec(),
                hi: self.hi.to_vec(),
            },
            n,
        );
        let mut out = Vec::with_capacity(dim * n * n);
        for p in plane.chunks(2) {
            let mut x = vec![0.0; dim];
            x[self.axes[0]] = p[0];
            x[self.axes[1]] = p[1];
            for &(k, v) in &self.fixed {
                x[k] = v;
            }
            out.extend(x);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub round: usize,
    pub t: f64,
    /// `grid`, `mc`, or `slice<k>`.
    pub set: String,
    pub relative_l2: f64,
    pub relative_kl: Option<f64>,
    pub n_eval_points: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub const HEADER: &'static str = "round,t,set,relative_l2,relative_kl,n_eval_points";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let kl = r.relative_kl.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round, r.t, r.set, r.relative_l2, kl, r.n_eval_points
            ));
        }
        s
    }

    pub fn row(&self, round: usize, t: f64, set: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.round == round && r.t == t && r.set == set)
    }
}

/// Draws `n` points from `reference` at `t`, row-major.
pub fn reference_points<R: RngCore>(reference: &Reference, t: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    Ok(reference.sample(t, n, rng)?.into_iter().flatten().collect())
}

/// Uniform points in a box, row-major.
pub fn uniform_points<R: Rng + ?Sized>(domain: &BoxDomain, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).flat_map(|_| domain.sample(rng)).collect()
}
