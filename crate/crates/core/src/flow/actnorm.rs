//! Per-dimension scale and bias with data-dependent initialization.

use log::warn;

use crate::error::Result;
use crate::tape::{NodeId, ParamTape};

/// Floor applied to `|a_i|` after initialization and every optimizer step.
pub const MIN_SCALE: f64 = 1e-8;

/// `y = a * x + b` on the spatial coordinates; time passes through.
#[derive(Clone, Debug)]
pub struct ActnormLayer {
    pub(crate) dim: usize,
    /// Offset of `a` in the flow's parameter vector; `b` follows it.
    pub(crate) offset: usize,
    pub(crate) initialized: bool,
}

impl ActnormLayer {
    pub(crate) fn new(dim: usize, params: &mut Vec<f64>) -> Self {
        let offset = params.len();
        params.extend(std::iter::repeat(1.0).take(dim));
        params.extend(std::iter::repeat(0.0).take(dim));
        ActnormLayer {
            dim,
            offset,
            initialized: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn scale<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.dim]
    }

    pub fn shift<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset + self.dim..self.offset + 2 * self.dim]
    }

    /// Sets `a, b` so that `batch` (row-major, `dim` columns) maps to zero
    /// mean and unit variance per dimension. Returns the dimensions whose
    /// variance was zero and fell back to `a = 1`.
    pub fn init_from_batch(&mut self, params: &mut [f64], batch: &[f64]) -> Vec<usize> {
        let d = self.dim;
        let n = batch.len() / d;
        let mut fallback = Vec::new();
        for k in 0..d {
            let col = batch.chunks(d).map(|p| p[k]);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let (a, b) = if n >= 2 && var > 0.0 && var.is_finite() {
                let a = 1.0 / var.sqrt();
                (a, -mean * a)
            } else {
                warn!("actnorm dimension {k} has zero variance on the init batch; using a = 1");
                fallback.push(k);
                (1.0, -mean)
            };
            params[self.offset + k] = a;
            params[self.offset + d + k] = b;
        }
        self.initialized = true;
        self.clamp(params);
        fallback
    }

    /// Enforces `|a_i| >= MIN_SCALE`.
    pub fn clamp(&self, params: &mut [f64]) {
        for a in &mut params[self.offset..self.offset + self.dim] {
            if a.abs() < MIN_SCALE {
                *a = if *a < 0.0 { -MIN_SCALE } else { MIN_SCALE };
            }
        }
    }

    pub(crate) fn record(
        &self,
        tape: &mut ParamTape,
        params: &[f64],
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let a = tape.param(params, self.offset, self.dim);
        let b = tape.param(params, self.offset + self.dim, self.dim);
        let ax = tape.mul(a, x);
        let y = tape.add(ax, b);
        // ln|a| = ln(a^2) / 2
        let a2 = tape.square(a);
        let la = tape.ln(a2)?;
        let s = tape.sum(la);
        let logdet = tape.affine(s, 0.5, 0.0);
        Ok((y, logdet))
    }

    pub(crate) fn apply(&self, params: &[f64], x: &mut [f64]) -> f64 {
        let (a, b) = (self.scale(params), self.shift(params));
        let mut logdet = 0.0;
        for k in 0..self.dim {
            x[k] = a[k] * x[k] + b[k];
            logdet += a[k].abs().ln();
        }
        logdet
    }

    pub(crate) fn invert(&self, params: &[f64], y: &mut [f64]) {
        let (a, b) = (self.scale(params), self.shift(params));
        for k in 0..self.dim {
            y[k] = (y[k] - b[k]) / a[k];
        }
    }
}
