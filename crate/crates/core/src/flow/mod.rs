//! The temporal normalizing flow `z = f(x, t)`.
//!
//! A flow is `L` pairs of (actnorm, coupling) layers, coupling parity
//! alternating, optionally followed by an elementwise spline. Time is never
//! transformed; only the coupling conditioners see it, so the Jacobian of the
//! full space-time map reduces to the spatial block and
//!
//! ```text
//! log p(x, t) = log N(f(x, t); 0, I) + log |det d f(x, t) / dx|
//! ```

pub mod actnorm;
pub mod checkpoint;
pub mod coupling;
pub mod spline;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet2, JetLayout};
use crate::tape::{NodeId, ParamTape};

pub use actnorm::ActnormLayer;
pub use coupling::{ConditionerNet, CouplingLayer};
pub use spline::{SplineEval, SplineLayer, SplineShape};

/// Spline tail settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineSpec {
    pub enabled: bool,
    /// Number of knot intervals.
    pub intervals: usize,
    /// Tail slope `gamma`.
    pub gamma: f64,
    /// Half-width `c` of the nonlinear range.
    pub half_width: f64,
}

impl Default for SplineSpec {
    fn default() -> Self {
        SplineSpec {
            enabled: false,
            intervals: 50,
            gamma: 1e-6,
            half_width: 5.0,
        }
    }
}

/// Architecture of a [`TemporalFlow`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub dim: usize,
    /// Number of (actnorm, coupling) pairs.
    pub couplings: usize,
    /// Width of both hidden layers of each conditioner.
    pub hidden: usize,
    /// Coupling scale bound, `|beta| < 1`.
    pub beta: f64,
    #[serde(default)]
    pub spline: SplineSpec,
}

impl FlowSpec {
    pub fn new(dim: usize, couplings: usize) -> Self {
        FlowSpec {
            dim,
            couplings,
            hidden: 32,
            beta: 0.6,
            spline: SplineSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("flow.dim", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("flow.hidden", "must be at least 1"));
        }
        if !(self.beta.abs() < 1.0) {
            return Err(Error::invalid("flow.beta", "must satisfy |beta| < 1"));
        }
        if self.spline.enabled {
            SplineShape::new(
                self.spline.intervals,
                self.spline.gamma,
                self.spline.half_width,
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Actnorm(ActnormLayer),
    Coupling(CouplingLayer),
    Spline(SplineLayer),
}

/// Ordered stack of invertible layers with a standard normal prior.
#[derive(Clone, Debug)]
pub struct TemporalFlow {
    spec: FlowSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// `-(d/2) ln(2 pi)`.
fn log_norm_const(dim: usize) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI).ln()
}

impl TemporalFlow {
    /// Builds an identity-initialized flow: actnorm `a = 1, b = 0`, Glorot
    /// hidden weights, zero conditioner output layers and `zeta = 0`.
    pub fn new<R: Rng + ?Sized>(spec: FlowSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut layers = Vec::with_capacity(2 * spec.couplings + 1);
        for i in 0..spec.couplings {
            layers.push(Layer::Actnorm(ActnormLayer::new(spec.dim, &mut params)));
            layers.push(Layer::Coupling(CouplingLayer::new(
                spec.dim,
                i,
                spec.hidden,
                spec.beta,
                &mut params,
                rng,
            )));
        }
        if spec.spline.enabled {
            let shape = SplineShape::new(
                spec.spline.intervals,
                spec.spline.gamma,
                spec.spline.half_width,
            )?;
            layers.push(Layer::Spline(SplineLayer::new(spec.dim, shape, &mut params)));
        }
        Ok(TemporalFlow {
            spec,
            layers,
            params,
        })
    }

    pub(crate) fn from_parts(spec: FlowSpec, layers: Vec<Layer>, params: Vec<f64>) -> Self {
        TemporalFlow {
            spec,
            layers,
            params,
        }
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters; call [`enforce_constraints`](Self::enforce_constraints)
    /// after editing them.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Re-applies the actnorm scale floor.
    pub fn enforce_constraints(&mut self) {
        for layer in &self.layers {
            if let Layer::Actnorm(a) = layer {
                a.clamp(&mut self.params);
            }
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::Actnorm(a) => a.initialized,
            _ => true,
        })
    }

    /// Data-dependent actnorm initialization: each actnorm layer standardizes
    /// the batch as it arrives after the preceding layers. `batch` is
    /// row-major with `dim` columns; `t` is the time of each row.
    ///
    /// Layers already initialized are left alone. Returns
    /// `(layer index, dimension)` for every zero-variance fallback.
    pub fn init_actnorm(&mut self, batch: &[f64], times: &[f64]) -> Result<Vec<(usize, usize)>> {
        let d = self.dim();
        if batch.len() != times.len() * d {
            return Err(Error::Shape(format!(
                "init batch has {} values for {} times in dimension {d}",
                batch.len(),
                times.len()
            )));
        }
        let mut acts = batch.to_vec();
        let mut fallbacks = Vec::new();
        for idx in 0..self.layers.len() {
            if let Layer::Actnorm(a) = &mut self.layers[idx] {
                if !a.initialized {
                    for k in a.init_from_batch(&mut self.params, &acts) {
                        fallbacks.push((idx, k));
                    }
                }
            }
            let layer = &self.layers[idx];
            for (row, &t) in acts.chunks_mut(d).zip(times) {
                apply_layer(layer, &self.params, row, t);
            }
        }
        Ok(fallbacks)
    }

    /// Records `z = f(x, t)` and the log-determinant on `tape`.
    pub fn record(
        &self,
        tape: &mut ParamTape,
        params: &[f64],
        x: NodeId,
        t: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let mut cur = x;
        let mut logdet: Option<NodeId> = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            let (y, ld) = match layer {
                Layer::Actnorm(a) => a.record(tape, params, cur),
                Layer::Coupling(c) => c.record(tape, params, cur, t),
                Layer::Spline(s) => s.record(tape, params, cur),
            }
            .map_err(|e| match e {
                Error::Domain { .. } => Error::NonFiniteLayer { layer: idx },
                other => other,
            })?;
            let bad = (0..tape.node_len(y)).any(|i| !tape.value(y, i).is_finite())
                || !tape.value(ld, 0).is_finite();
            if bad {
                return Err(Error::NonFiniteLayer { layer: idx });
            }
            cur = y;
            logdet = Some(match logdet {
                None => ld,
                Some(acc) => tape.add(acc, ld),
            });
        }
        let logdet = match logdet {
            Some(l) => l,
            None => tape.constants(&[0.0]),
        };
        Ok((cur, logdet))
    }

    /// Records the density `p(x, t)` as a single jet.
    pub fn record_density(
        &self,
        tape: &mut ParamTape,
        params: &[f64],
        x: NodeId,
        t: NodeId,
    ) -> Result<NodeId> {
        let (z, logdet) = self.record(tape, params, x, t)?;
        let z2 = tape.square(z);
        let s = tape.sum(z2);
        let prior = tape.affine(s, -0.5, log_norm_const(self.dim()));
        let logp = tape.add(prior, logdet);
        Ok(tape.exp(logp))
    }

    /// `(z, log |det dz/dx|)`.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        self.check_point(x)?;
        let mut z = x.to_vec();
        let mut logdet = 0.0;
        for (idx, layer) in self.layers.iter().enumerate() {
            logdet += apply_layer(layer, &self.params, &mut z, t);
            if !logdet.is_finite() || z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer { layer: idx });
            }
        }
        Ok((z, logdet))
    }

    pub fn inverse(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_point(z)?;
        let mut x = z.to_vec();
        for layer in self.layers.iter().rev() {
            match layer {
                Layer::Actnorm(a) => a.invert(&self.params, &mut x),
                Layer::Coupling(c) => c.invert(&self.params, &mut x, t),
                Layer::Spline(s) => s.invert(&self.params, &mut x)?,
            }
        }
        Ok(x)
    }

    pub fn log_density(&self, x: &[f64], t: f64) -> Result<f64> {
        let (z, logdet) = self.forward(x, t)?;
        Ok(standard_normal_log_density(&z) + logdet)
    }

    pub fn density(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.log_density(x, t)?.exp())
    }

    /// The density with its exact first derivatives in `(x, t)` and full
    /// spatial Hessian.
    pub fn density_jet(&self, x: &[f64], t: f64) -> Result<Jet2> {
        let layout = Arc::new(JetLayout::full(self.dim()));
        let mut tape = ParamTape::new((*layout).clone());
        let (xs, ts) = tape.seed(x, t);
        let p = self.record_density(&mut tape, &self.params, xs, ts)?;
        Ok(Jet2::from_parts(layout, tape.jet(p, 0).to_vec()))
    }

    /// `n` draws from `p(., t)`, pushed through the inverse flow.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
                self.inverse(&z, t)
            })
            .collect()
    }

    /// One draw per entry of `times`, row-major.
    pub fn sample_at<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut z = vec![0.0; times.len() * d];
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut out = Vec::with_capacity(z.len());
        for (row, &t) in z.chunks(d).zip(times) {
            out.extend(self.inverse(row, t)?);
        }
        Ok(out)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, flow dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x", "point must be finite"));
        }
        Ok(())
    }
}

fn apply_layer(layer: &Layer, params: &[f64], x: &mut [f64], t: f64) -> f64 {
    match layer {
        Layer::Actnorm(a) => a.apply(params, x),
        Layer::Coupling(c) => c.apply(params, x, t),
        Layer::Spline(s) => s.apply(params, x),
    }
}

pub fn standard_normal_log_density(z: &[f64]) -> f64 {
    log_norm_const(z.len()) - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
}
