//! Versioned JSON experiment configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowSpec, SplineSpec};
use crate::metrics::SliceSpec;
use crate::problem::{builtin, TfpProblem};
use crate::train::{SpatialSchedule, TimeGrid, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub problem: ProblemConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    /// Reduced settings applied by `--desk-scale`.
    #[serde(default)]
    pub desk: Option<DeskOverrides>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default)]
    pub dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub couplings: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub spline: SplineSpec,
}

fn default_hidden() -> usize {
    32
}

fn default_beta() -> f64 {
    0.6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// The problem's closed-form solution.
    Exact,
    /// Finite-difference solution on the problem's reference box.
    Adi {
        dh: f64,
        dt: f64,
        /// Grid dump reused when present, written otherwise.
        #[serde(default)]
        cache: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub times: Vec<f64>,
    pub reference: ReferenceConfig,
    /// Points per side of the 2-d evaluation grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Monte Carlo draws for the relative KL divergence.
    #[serde(default = "default_n_v")]
    pub n_v: usize,
    /// Monte Carlo points for the relative L2 error when `d > 2`.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub slices: Vec<SliceSpec>,
    /// Points per side of the density dumps.
    #[serde(default = "default_dump_grid")]
    pub dump_grid: usize,
    /// Model draws per evaluation time written to `samples.csv`.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

fn default_grid() -> usize {
    201
}

fn default_n_v() -> usize {
    100_000
}

fn default_n_mc() -> usize {
    20_000
}

fn default_dump_grid() -> usize {
    101
}

fn default_n_samples() -> usize {
    1000
}

/// Fields replaced under `--desk-scale`; absent fields keep their values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskOverrides {
    pub epochs: Option<usize>,
    pub alpha: Option<f64>,
    pub rounds: Option<usize>,
    pub batch: Option<usize>,
    pub couplings: Option<usize>,
    pub time_grid: Option<TimeGrid>,
    pub spatial: Option<SpatialSchedule>,
    pub n_ic: Option<usize>,
    pub n_v: Option<usize>,
    pub grid: Option<usize>,
    pub reference: Option<ReferenceConfig>,
}

fn as_config_error(e: Error) -> Error {
    match e {
        Error::InvalidArgument { field, reason } => Error::config(field, reason),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
            if v != u64::from(CONFIG_VERSION) {
                return Err(Error::VersionMismatch {
                    found: v as u32,
                    expected: CONFIG_VERSION,
                });
            }
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn problem(&self) -> Result<TfpProblem> {
        builtin(&self.problem.name, self.problem.dim)
    }

    pub fn flow_spec(&self, dim: usize) -> FlowSpec {
        FlowSpec {
            dim,
            couplings: self.flow.couplings,
            hidden: self.flow.hidden,
            beta: self.flow.beta,
            spline: self.flow.spline.clone(),
        }
    }

    /// Checks every section; validation failures name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        let problem = self.problem().map_err(as_config_error)?;
        self.flow_spec(problem.dim).validate().map_err(as_config_error)?;
        self.train.validate().map_err(as_config_error)?;
        self.train.time_grid.times(problem.horizon).map_err(as_config_error)?;
        let ev = &self.eval;
        if ev.times.is_empty() {
            return Err(Error::config("eval.times", "must not be empty"));
        }
        if ev.times.iter().any(|t| !(0.0..=problem.horizon).contains(t)) {
            return Err(Error::config("eval.times", "must lie in [0, T]"));
        }
        if ev.grid < 2 || ev.dump_grid < 2 {
            return Err(Error::config("eval.grid", "needs at least 2 points per side"));
        }
        if ev.n_v == 0 {
            return Err(Error::config("eval.n_v", "must be at least 1"));
        }
        if problem.dim > 2 && ev.n_mc == 0 {
            return Err(Error::config("eval.n_mc", "must be at least 1 when dim > 2"));
        }
        for s in &ev.slices {
            s.validate(problem.dim).map_err(as_config_error)?;
        }
        match &ev.reference {
            ReferenceConfig::Exact if problem.exact.is_none() => {
                return Err(Error::config(
                    "eval.reference",
                    format!("{} has no closed-form solution; use an adi reference", problem.name),
                ));
            }
            ReferenceConfig::Adi { dh, dt, .. } => {
                if problem.dim != 2 {
                    return Err(Error::config("eval.reference", "adi references are 2-d only"));
                }
                if !(*dh > 0.0) || !(*dt > 0.0) {
                    return Err(Error::config("eval.reference", "dh and dt must be positive"));
                }
                for t in &ev.times {
                    let k = (t / dt).round();
                    if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
                        return Err(Error::config("eval.times", format!("{t} is not a multiple of the adi dt")));
                    }
                }
            }
            _ => {}
        }
        if let Some(desk) = &self.desk {
            let mut probe = self.clone();
            probe.desk = None;
            probe.apply_overrides(desk);
            probe.validate()?;
        }
        Ok(())
    }

    fn apply_overrides(&mut self, d: &DeskOverrides) -> Vec<String> {
        let mut log = Vec::new();
        macro_rules! set {
            ($src:expr, $dst:expr, $name:literal) => {
                if let Some(v) = &$src {
                    log.push(format!("{}: {:?} -> {:?}", $name, $dst, v));
                    $dst = v.clone();
                }
            };
        }
        set!(d.epochs, self.train.epochs, "train.epochs");
        set!(d.alpha, self.train.alpha, "train.alpha");
        set!(d.rounds, self.train.rounds, "train.rounds");
        set!(d.batch, self.train.batch, "train.batch");
        set!(d.couplings, self.flow.couplings, "flow.couplings");
        set!(d.time_grid, self.train.time_grid, "train.time_grid");
        set!(d.spatial, self.train.spatial, "train.spatial");
        if let Some(n) = d.n_ic {
            log.push(format!("train.n_ic: {:?} -> {n}", self.train.n_ic));
            self.train.n_ic = Some(n);
        }
        set!(d.n_v, self.eval.n_v, "eval.n_v");
        set!(d.grid, self.eval.grid, "eval.grid");
        set!(d.reference, self.eval.reference, "eval.reference");
        log
    }

    /// Returns the desk-scale variant and the list of adjusted fields.
    pub fn desk_scaled(&self) -> Result<(ExperimentConfig, Vec<String>)> {
        let desk = self
            .desk
            .clone()
            .ok_or_else(|| Error::config("desk", "this config defines no desk-scale overrides"))?;
        let mut out = self.clone();
        out.desk = None;
        let log = out.apply_overrides(&desk);
        out.validate()?;
        Ok((out, log))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "version": 1,
        "problem": {"name": "toy2d"},
        "flow": {"couplings": 6},
        "train": {
            "epochs": 20, "alpha": 2.0, "rounds": 5, "batch": 1000, "lr": 0.001,
            "time_grid": {"kind": "uniform", "n": 20},
            "spatial": {"kind": "constant", "n0": 1000}
        },
        "eval": {"times": [0.0, 1.0], "reference": {"kind": "exact"}},
        "desk": {"rounds": 2}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(TOY).unwrap();
        assert_eq!(c.flow.hidden, 32);
        assert_eq!(c.train.eps1, 1e-5);
        assert_eq!(c.eval.grid, 201);
        let (d, log) = c.desk_scaled().unwrap();
        assert_eq!(d.train.rounds, 2);
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn zero_batch_names_the_field() {
        let bad = TOY.replace("\"batch\": 1000", "\"batch\": 0");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.batch"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let bad = TOY.replace("\"seed\"", "\"sed\"").replace("\"version\": 1,", "\"version\": 1, \"colour\": 3,");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = TOY.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn exact_reference_requires_a_solution() {
        let bad = TOY.replace("toy2d", "linear_osc");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config { .. })));
    }
}
