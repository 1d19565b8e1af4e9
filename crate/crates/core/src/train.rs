//! Adam, minibatching, early stopping and the adaptive resampling loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::TemporalFlow;
use crate::problem::TfpProblem;
use crate::residual::{loss_pde, LossWeights};

/// Residual time nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeGrid {
    /// `n` equidistant nodes `T i / n`, `i = 1..=n`.
    Uniform { n: usize },
    /// Geometric partition concentrating nodes near the horizon.
    Nonuniform { r: f64, n: usize },
    /// Consecutive segments `(previous end, end]`, each with `n`
    /// equidistant nodes. The last end must equal the horizon.
    Piecewise { segments: Vec<Segment> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub end: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn times(&self, horizon: f64) -> Result<Vec<f64>> {
        match self {
            TimeGrid::Uniform { n } => {
                if *n == 0 {
                    return Err(Error::invalid("time_grid.n", "must be at least 1"));
                }
                Ok((1..=*n).map(|i| horizon * i as f64 / *n as f64).collect())
            }
            TimeGrid::Nonuniform { r, n } => nonuniform_time_partition(*r, *n, horizon),
            TimeGrid::Piecewise { segments } => {
                if segments.is_empty() {
                    return Err(Error::invalid("time_grid.segments", "must not be empty"));
                }
                let mut out = Vec::new();
                let mut start = 0.0;
                for s in segments {
                    if s.n == 0 || !(s.end > start) || s.end > horizon {
                        return Err(Error::invalid(
                            "time_grid.segments",
                            "segment ends must increase within (0, T] and counts be positive",
                        ));
                    }
                    out.extend((1..=s.n).map(|j| start + (s.end - start) * j as f64 / s.n as f64));
                    start = s.end;
                }
                if start != horizon {
                    return Err(Error::invalid("time_grid.segments", "last segment must end at the horizon"));
                }
                Ok(out)
            }
        }
    }
}

/// `t_i = T (1 - (r^(n-i) + 1) / (r^n + 1))`, `i = 1..=n`.
///
/// Requires `r > 1`; at `r = 1` every node collapses to zero. Powers that
/// overflow are evaluated in log space.
pub fn nonuniform_time_partition(r: f64, n: usize, horizon: f64) -> Result<Vec<f64>> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::invalid("r", "ratio must be finite and greater than 1"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let big = i32::try_from(n).ok().map(|k| r.powi(k)).filter(|v| v.is_finite());
    let out = (1..=n)
        .map(|i| {
            let ratio = match big {
                Some(rn) => (r.powi((n - i) as i32) + 1.0) / (rn + 1.0),
                None => {
                    let a = (n - i) as f64 * r.ln();
                    let b = n as f64 * r.ln();
                    (a - b).exp() * (1.0 + (-a).exp()) / (1.0 + (-b).exp())
                }
            };
            horizon * (1.0 - ratio)
        })
        .collect();
    Ok(out)
}

/// Spatial points per time node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialSchedule {
    /// One shared set of `n0` points paired with every time.
    Constant { n0: usize },
    /// `n0 (1 + floor((i - 1) / period))` fresh points at the `i`-th time.
    Staircase { n0: usize, period: usize },
}

impl SpatialSchedule {
    pub fn base(&self) -> usize {
        match self {
            SpatialSchedule::Constant { n0 } | SpatialSchedule::Staircase { n0, .. } => *n0,
        }
    }

    /// Count at the 1-based time index `i`.
    pub fn count(&self, i: usize) -> Result<usize> {
        match *self {
            SpatialSchedule::Constant { n0 } => Ok(n0),
            SpatialSchedule::Staircase { n0, period } => spatial_count_schedule(n0, i, period),
        }
    }
}

/// `n0 (1 + floor((i - 1) / period))`.
pub fn spatial_count_schedule(n0: usize, i: usize, period: usize) -> Result<usize> {
    if i == 0 {
        return Err(Error::invalid("i", "time index is 1-based"));
    }
    if period == 0 {
        return Err(Error::invalid("period", "must be at least 1"));
    }
    Ok(n0 * (1 + (i - 1) / period))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Updates skipped because the gradient was not finite.
    pub skipped: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            skipped: 0,
            config,
        }
    }

    /// One bias-corrected update. Returns `false` (and leaves everything
    /// untouched) when `grads` has a non-finite entry.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("adam state, parameters and gradient differ in length".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Epoch budget of the first round.
    pub epochs: usize,
    /// Growth factor of the epoch budget per round.
    pub alpha: f64,
    /// Number of adaptive rounds.
    pub rounds: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_eps1")]
    pub eps1: f64,
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    pub time_grid: TimeGrid,
    pub spatial: SpatialSchedule,
    /// Initial-condition points; defaults to the spatial base count.
    #[serde(default)]
    pub n_ic: Option<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_eps1() -> f64 {
    1e-5
}

fn default_eps2() -> f64 {
    1e-7
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::invalid(format!("train.{field}"), reason));
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return bad("alpha", "must be finite and at least 1");
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch", "must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be positive");
        }
        if !(self.eps2 >= 0.0) || !(self.eps1 > self.eps2) {
            return bad("eps1", "requires eps1 > eps2 >= 0");
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return bad("adam", "betas must lie in [0, 1) and eps be positive");
        }
        self.weights.validate()?;
        if let SpatialSchedule::Staircase { period: 0, .. } = self.spatial {
            return bad("spatial.period", "must be at least 1");
        }
        if self.spatial.base() == 0 && self.n_ic() == 0 {
            return bad("spatial.n0", "no training points");
        }
        Ok(())
    }

    pub fn n_ic(&self) -> usize {
        self.n_ic.unwrap_or(self.spatial.base())
    }

    /// Epoch budget of the 1-based `round`: `floor(N_e alpha^(round - 1))`,
    /// at least 1.
    pub fn epoch_budget(&self, round: usize) -> usize {
        epoch_budget(self.epochs, self.alpha, round)
    }
}

pub fn epoch_budget(epochs: usize, alpha: f64, round: usize) -> usize {
    let e = epochs as f64 * alpha.powi(round.saturating_sub(1) as i32);
    (e.floor() as usize).max(1)
}

/// Residual pairs `C_r` and initial-condition points `C_ic`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub dim: usize,
    pub xr: Vec<f64>,
    pub tr: Vec<f64>,
    pub xic: Vec<f64>,
}

impl TrainingSet {
    pub fn n_r(&self) -> usize {
        self.tr.len()
    }

    pub fn n_ic(&self) -> usize {
        self.xic.len() / self.dim
    }

    pub fn residual_point(&self, i: usize) -> (&[f64], f64) {
        (&self.xr[i * self.dim..(i + 1) * self.dim], self.tr[i])
    }

    /// The time multiset `C_T`: every residual time plus a zero per
    /// initial-condition point.
    pub fn times(&self) -> Vec<f64> {
        let mut t = self.tr.clone();
        t.extend(std::iter::repeat_n(0.0, self.n_ic()));
        t
    }

    /// Residual points whose time equals `t` exactly.
    pub fn points_at(&self, t: f64) -> Vec<&[f64]> {
        (0..self.n_r())
            .filter(|&i| self.tr[i] == t)
            .map(|i| self.residual_point(i).0)
            .collect()
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.xr.len() != self.tr.len() * self.dim || self.xic.len() % self.dim != 0 {
            return Err(Error::Shape("training set arrays do not match the dimension".into()));
        }
        if self.tr.iter().any(|t| !(0.0..=horizon).contains(t)) {
            return Err(Error::invalid("training_set", "time outside [0, T]"));
        }
        if self.xr.iter().chain(&self.xic).any(|v| !v.is_finite()) {
            return Err(Error::invalid("training_set", "non-finite point"));
        }
        Ok(())
    }
}

/// Uniform points over the problem's initial box on the configured time grid.
pub fn init_training_set<R: Rng + ?Sized>(
    problem: &TfpProblem,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainingSet> {
    config.validate()?;
    let d = problem.dim;
    let times = config.time_grid.times(problem.horizon)?;
    let (mut xr, mut tr) = (Vec::new(), Vec::new());
    match config.spatial {
        SpatialSchedule::Constant { n0 } => {
            let shared: Vec<f64> = (0..n0).flat_map(|_| problem.init_box.sample(rng)).collect();
            for &t in &times {
                xr.extend_from_slice(&shared);
                tr.extend(std::iter::repeat_n(t, n0));
            }
        }
        SpatialSchedule::Staircase { .. } => {
            for (i, &t) in times.iter().enumerate() {
                let n = config.spatial.count(i + 1)?;
                for _ in 0..n {
                    xr.extend(problem.init_box.sample(rng));
                }
                tr.extend(std::iter::repeat_n(t, n));
            }
        }
    }
    let xic = (0..config.n_ic()).flat_map(|_| problem.init_box.sample(rng)).collect();
    let set = TrainingSet { dim: d, xr, tr, xic };
    set.validate(problem.horizon)?;
    Ok(set)
}

/// Replaces every spatial coordinate by a draw from the flow at the same
/// time; initial-condition points are drawn at `t = 0`.
pub fn resample<R: Rng + ?Sized>(flow: &TemporalFlow, set: &mut TrainingSet, rng: &mut R) -> Result<()> {
    set.xr = flow.sample_at(&set.tr, rng)?;
    let zeros = vec![0.0; set.n_ic()];
    set.xic = flow.sample_at(&zeros, rng)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub round: usize,
    pub epoch: usize,
    /// Mean minibatch loss.
    pub loss: f64,
    pub loss_r: f64,
    pub loss_ic: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    BelowEps1,
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub budget: usize,
    pub epochs_run: usize,
    pub stop: StopReason,
    pub final_loss: f64,
}

/// Callbacks invoked during [`train_adaptive`].
pub trait TrainHooks {
    fn on_epoch(&mut self, _record: &EpochRecord) {}

    /// Called after each round's resampling step: `flow` is the flow trained
    /// in that round, `set` the freshly drawn training set.
    fn on_round(&mut self, _record: &RoundRecord, _flow: &TemporalFlow, _set: &TrainingSet) -> Result<()> {
        Ok(())
    }
}

impl TrainHooks for () {}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub rounds: Vec<RoundRecord>,
    pub skipped_updates: u64,
    pub set: TrainingSet,
}

impl TrainReport {
    /// `round,epoch,loss,loss_r,loss_ic`, one row per epoch.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("round,epoch,loss,loss_r,loss_ic\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.round, e.epoch, e.loss, e.loss_r, e.loss_ic));
        }
        s
    }

    /// `round,epoch,wall_secs`.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("round,epoch,wall_secs\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{:.6}\n", e.round, e.epoch, e.wall_secs));
        }
        s
    }
}

/// Runs the adaptive training loop on a fresh training set.
pub fn train_adaptive<R: Rng + ?Sized>(
    flow: &mut TemporalFlow,
    problem: &TfpProblem,
    config: &TrainConfig,
    rng: &mut R,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainReport> {
    let set = init_training_set(problem, config, rng)?;
    train_on(flow, problem, config, set, rng, hooks)
}

/// Runs the adaptive training loop starting from `set`.
pub fn train_on<R: Rng + ?Sized>(
    flow: &mut TemporalFlow,
    problem: &TfpProblem,
    config: &TrainConfig,
    mut set: TrainingSet,
    rng: &mut R,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainReport> {
    config.validate()?;
    if flow.dim() != problem.dim || set.dim != problem.dim {
        return Err(Error::Shape("flow, problem and training set dimensions differ".into()));
    }
    set.validate(problem.horizon)?;
    let d = problem.dim;
    let mut adam = AdamState::new(flow.n_params(), config.adam);
    let mut epochs = Vec::new();
    let mut rounds = Vec::new();
    let (mut xr, mut tr, mut xic) = (Vec::new(), Vec::new(), Vec::new());

    for round in 1..=config.rounds {
        let budget = config.epoch_budget(round);
        let mut l_old = 0.0;
        let mut stop = StopReason::Budget;
        let mut run = 0;
        for epoch in 1..=budget {
            let start = Instant::now();
            let (nr, total) = (set.n_r(), set.n_r() + set.n_ic());
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(rng);
            let (mut sum, mut sum_r, mut sum_ic, mut batches) = (0.0, 0.0, 0.0, 0usize);
            for (b, chunk) in order.chunks(config.batch).enumerate() {
                xr.clear();
                tr.clear();
                xic.clear();
                for &i in chunk {
                    if i < nr {
                        let (x, t) = set.residual_point(i);
                        xr.extend_from_slice(x);
                        tr.push(t);
                    } else {
                        let j = i - nr;
                        xic.extend_from_slice(&set.xic[j * d..(j + 1) * d]);
                    }
                }
                if !flow.is_initialized() {
                    let fallbacks = if tr.is_empty() {
                        flow.init_actnorm(&xic, &vec![0.0; xic.len() / d])?
                    } else {
                        flow.init_actnorm(&xr, &tr)?
                    };
                    for (layer, k) in fallbacks {
                        log::warn!("actnorm layer {layer}: zero variance in dimension {k}, using unit scale");
                    }
                }
                let non_finite = || Error::NonFiniteLoss {
                    round,
                    epoch,
                    batch: b + 1,
                };
                let eval = match loss_pde(flow, problem, &xr, &tr, &xic, config.weights) {
                    Ok(e) => e,
                    Err(e @ (Error::NonFiniteResidual { .. } | Error::NonFiniteLayer { .. })) => {
                        log::error!("{e}");
                        return Err(non_finite());
                    }
                    Err(e) => return Err(e),
                };
                if !eval.loss.is_finite() {
                    return Err(non_finite());
                }
                if adam.update(flow.params_mut(), &eval.grad, config.lr)? {
                    flow.enforce_constraints();
                } else {
                    log::warn!("round {round} epoch {epoch} batch {}: non-finite gradient, update skipped", b + 1);
                }
                sum += eval.loss;
                sum_r += eval.loss_r;
                sum_ic += eval.loss_ic;
                batches += 1;
            }
            let m = batches as f64;
            let record = EpochRecord {
                round,
                epoch,
                loss: sum / m,
                loss_r: sum_r / m,
                loss_ic: sum_ic / m,
                wall_secs: start.elapsed().as_secs_f64(),
            };
            log::debug!("round {round} epoch {epoch} loss {:.6e}", record.loss);
            hooks.on_epoch(&record);
            epochs.push(record);
            run = epoch;
            let l_new = record.loss;
            if l_new < config.eps1 {
                stop = StopReason::BelowEps1;
                break;
            }
            if epoch >= 2 && (l_old - l_new).abs() < config.eps2 {
                stop = StopReason::Stalled;
                break;
            }
            l_old = l_new;
        }
        let record = RoundRecord {
            round,
            budget,
            epochs_run: run,
            stop,
            final_loss: epochs.last().map_or(f64::NAN, |e| e.loss),
        };
        log::info!(
            "round {round}: {run}/{budget} epochs, loss {:.6e}, stop {:?}",
            record.final_loss,
            stop
        );
        resample(flow, &mut set, rng)?;
        hooks.on_round(&record, flow, &set)?;
        rounds.push(record);
    }
    Ok(TrainReport {
        epochs,
        rounds,
        skipped_updates: adam.skipped,
        set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowSpec;
    use crate::problem::builtin;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            alpha: 2.0,
            rounds: 1,
            batch: 8,
            lr: 1e-3,
            weights: LossWeights::default(),
            eps1: 1e-5,
            eps2: 1e-7,
            time_grid: TimeGrid::Uniform { n: 2 },
            spatial: SpatialSchedule::Constant { n0: 6 },
            n_ic: Some(4),
            adam: AdamConfig::default(),
        }
    }

    #[test]
    fn nonuniform_last_node() {
        let t = nonuniform_time_partition(1.05, 100, 1.0).unwrap();
        assert_eq!(t[99], 1.0 - 2.0 / (1.05f64.powi(100) + 1.0));
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(t[0] > 0.0);
        assert!(nonuniform_time_partition(1.0, 10, 1.0).is_err());
        assert!(nonuniform_time_partition(0.5, 10, 1.0).is_err());
    }

    #[test]
    fn nonuniform_log_space_branch() {
        let t = nonuniform_time_partition(10.0, 400, 2.0).unwrap();
        assert!(t.iter().all(|v| v.is_finite() && *v > 0.0 && *v <= 2.0));
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!((t[399] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn staircase_counts() {
        assert_eq!(spatial_count_schedule(5000, 1, 20).unwrap(), 5000);
        assert_eq!(spatial_count_schedule(5000, 100, 20).unwrap(), 25000);
        let total: usize = (1..=100).map(|i| spatial_count_schedule(5000, i, 20).unwrap()).sum();
        assert_eq!(total, 1_500_000);
        assert!(spatial_count_schedule(5000, 0, 20).is_err());
    }

    #[test]
    fn piecewise_grid() {
        let g = TimeGrid::Piecewise {
            segments: vec![Segment { end: 1.5, n: 100 }, Segment { end: 3.0, n: 200 }],
        };
        let t = g.times(3.0).unwrap();
        assert_eq!(t.len(), 300);
        assert_eq!(t[99], 1.5);
        assert_eq!(t[299], 3.0);
        assert!((t[100] - 1.5075).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut p = [1.0];
        s.update(&mut p, &[0.5], 0.1).unwrap();
        // m_hat = g, v_hat = g^2
        let want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
        let mut p2 = p;
        s.update(&mut p2, &[0.0], 0.1).unwrap();
        assert_eq!(s.step, 2);
        assert!(!s.update(&mut p2, &[f64::NAN], 0.1).unwrap());
        assert_eq!((s.step, s.skipped), (2, 1));
    }

    #[test]
    fn adam_zero_gradient_from_rest() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = [0.3, -0.2];
        s.update(&mut p, &[0.0, 0.0], 0.01).unwrap();
        assert_eq!(p, [0.3, -0.2]);
    }

    #[test]
    fn epoch_budgets() {
        assert_eq!(epoch_budget(20, 2.0, 1), 20);
        assert_eq!(epoch_budget(20, 2.0, 5), 320);
        assert_eq!(epoch_budget(50, 1.5, 3), 112);
        assert_eq!(epoch_budget(1, 1.0, 9), 1);
    }

    #[test]
    fn toy_training_set_counts() {
        let p = builtin("toy2d", None).unwrap();
        let mut cfg = tiny_config();
        cfg.time_grid = TimeGrid::Uniform { n: 20 };
        cfg.spatial = SpatialSchedule::Constant { n0: 1000 };
        let set = init_training_set(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(set.n_r(), 20_000);
        assert_eq!(set.n_ic(), 4);
        assert_eq!(set.times().len(), 20_004);
        assert!(set.xr.iter().all(|v| (-3.0..3.0).contains(v)));
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.eps2 = c.eps1;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.alpha = 0.5;
        assert!(c.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn minimal_run_is_deterministic() {
        let p = builtin("toy2d", None).unwrap();
        let cfg = tiny_config();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut flow = TemporalFlow::new(
                FlowSpec {
                    hidden: 4,
                    ..FlowSpec::new(2, 2)
                },
                &mut rng,
            )
            .unwrap();
            let report = train_adaptive(&mut flow, &p, &cfg, &mut rng, &mut ()).unwrap();
            (report, flow)
        };
        let (a, fa) = run();
        let (b, fb) = run();
        assert_eq!(a.epochs.len(), 1);
        assert_eq!(a.rounds.len(), 1);
        assert_eq!(a.log_csv(), b.log_csv());
        assert_eq!(fa.params(), fb.params());
        assert_eq!(a.set, b.set);
        assert_eq!(a.set.tr, vec![0.5; 6].into_iter().chain(vec![1.0; 6]).collect::<Vec<_>>());
    }
}
