//! End-to-end experiment runs and the artifacts they write.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adi::{adi_solve, AdiConfig, GridSolution};
use crate::config::{EvalConfig, ExperimentConfig, ReferenceConfig};
use crate::error::{Error, Result};
use crate::flow::checkpoint::Checkpoint;
use crate::flow::TemporalFlow;
use crate::metrics::{flow_relative_l2, grid_points, reference_points, relative_kl, EvalReport, EvalRow, Reference};
use crate::problem::TfpProblem;
use crate::train::{train_adaptive, RoundRecord, TrainHooks, TrainReport, TrainingSet};

/// Deterministic per-time evaluation stream, independent of the round so a
/// reloaded checkpoint reproduces the in-run numbers.
pub fn eval_rng(seed: u64, time_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + time_index as u64);
    rng
}

/// Builds the reference, solving (or loading the cached) ADI grid if needed.
pub fn build_reference(problem: &TfpProblem, eval: &EvalConfig, base: Option<&Path>) -> Result<Reference> {
    match &eval.reference {
        ReferenceConfig::Exact => problem
            .exact
            .clone()
            .map(Reference::Exact)
            .ok_or(Error::NoExactSolution),
        ReferenceConfig::Adi { dh, dt, cache } => {
            let path = cache.as_ref().map(|c| match base {
                Some(b) if Path::new(c).is_relative() => b.join(c),
                _ => PathBuf::from(c),
            });
            if let Some(p) = &path {
                if p.exists() {
                    let g = GridSolution::load(p)?;
                    if eval.times.iter().all(|&t| g.snapshot_index(t).is_some()) {
                        log::info!("loaded reference grid {}", p.display());
                        return Ok(Reference::Grid(Arc::new(g)));
                    }
                    log::warn!("cached grid {} lacks some evaluation times; recomputing", p.display());
                }
            }
            let cfg = AdiConfig {
                dh: *dh,
                dt: *dt,
                domain: None,
                snapshots: eval.times.clone(),
            };
            log::info!("solving the reference with dh={dh}, dt={dt}");
            let g = adi_solve(problem, &cfg)?;
            if let Some(p) = &path {
                if let Some(dir) = p.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                g.save(p)?;
            }
            Ok(Reference::Grid(Arc::new(g)))
        }
    }
}

/// Metrics of `flow` at every evaluation time.
pub fn evaluate(
    flow: &TemporalFlow,
    problem: &TfpProblem,
    reference: &Reference,
    eval: &EvalConfig,
    seed: u64,
    round: usize,
) -> Result<Vec<EvalRow>> {
    let d = problem.dim;
    let mut rows = Vec::new();
    for (k, &t) in eval.times.iter().enumerate() {
        let mut rng = eval_rng(seed, k);
        let (set, points) = if d == 2 {
            ("grid", grid_points(&problem.reference_box, eval.grid))
        } else {
            ("mc", reference_points(reference, t, eval.n_mc, &mut rng)?)
        };
        let l2 = flow_relative_l2(flow, reference, &points, t)?;
        let kl = relative_kl(|x| flow.log_density(x, t), reference, t, eval.n_v, &mut rng)?;
        rows.push(EvalRow {
            round,
            t,
            set: set.into(),
            relative_l2: l2,
            relative_kl: Some(kl.value),
            n_eval_points: points.len() / d,
        });
        for (s, slice) in eval.slices.iter().enumerate() {
            let pts = slice.points(d, eval.grid);
            rows.push(EvalRow {
                round,
                t,
                set: format!("slice{s}"),
                relative_l2: flow_relative_l2(flow, reference, &pts, t)?,
                relative_kl: None,
                n_eval_points: pts.len() / d,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct EvalMeta<'a> {
    seed: u64,
    problem: &'a str,
    dim: usize,
    grid: usize,
    reference_box: (&'a [f64], &'a [f64]),
    n_v: usize,
    n_mc: usize,
    times: &'a [f64],
    slices: Vec<String>,
    reference: &'a ReferenceConfig,
}

pub fn eval_meta_json(cfg: &ExperimentConfig, problem: &TfpProblem) -> Result<String> {
    let meta = EvalMeta {
        seed: cfg.seed,
        problem: &problem.name,
        dim: problem.dim,
        grid: cfg.eval.grid,
        reference_box: (&problem.reference_box.lo, &problem.reference_box.hi),
        n_v: cfg.eval.n_v,
        n_mc: cfg.eval.n_mc,
        times: &cfg.eval.times,
        slices: cfg.eval.slices.iter().map(|s| s.label()).collect(),
        reference: &cfg.eval.reference,
    };
    Ok(serde_json::to_string_pretty(&meta)?)
}

/// `x,y,p` (2-d) or slice-plane rows of the flow density at `t`.
pub fn density_dump(flow: &TemporalFlow, problem: &TfpProblem, eval: &EvalConfig, t: f64) -> Result<Vec<(String, Vec<[f64; 3]>)>> {
    let d = problem.dim;
    let n = eval.dump_grid;
    let mut out = Vec::new();
    let planes: Vec<(String, Vec<f64>, [usize; 2])> = if d == 2 {
        vec![("".into(), grid_points(&problem.reference_box, n), [0, 1])]
    } else {
        eval.slices
            .iter()
            .enumerate()
            .map(|(s, sl)| (format!("_slice{s}"), sl.points(d, n), sl.axes))
            .collect()
    };
    for (suffix, pts, axes) in planes {
        let vals: Vec<[f64; 3]> = pts
            .par_chunks(d)
            .map(|x| Ok([x[axes[0]], x[axes[1]], flow.density(x, t)?]))
            .collect::<Result<_>>()?;
        out.push((suffix, vals));
    }
    Ok(out)
}

/// Binary PPM heatmap of an `n x n` dump, low values dark blue, high yellow.
pub fn heatmap_ppm(values: &[[f64; 3]], n: usize) -> Vec<u8> {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v[2]));
    let mut img = format!("P6\n{n} {n}\n255\n").into_bytes();
    // image rows run top to bottom, so flip the second axis
    for j in (0..n).rev() {
        for i in 0..n {
            let s = if max > 0.0 { (values[j * n + i][2] / max).clamp(0.0, 1.0) } else { 0.0 };
            let r = (255.0 * s) as u8;
            let g = (255.0 * s.sqrt()) as u8;
            let b = (255.0 * (1.0 - s) * 0.6) as u8;
            img.extend([r, g, b]);
        }
    }
    img
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub ppm: bool,
}

pub struct RunOutput {
    pub flow: TemporalFlow,
    pub train: TrainReport,
    pub report: EvalReport,
}

struct RunHooks<'a> {
    cfg: &'a ExperimentConfig,
    problem: &'a TfpProblem,
    reference: &'a Reference,
    out: &'a Path,
    report: EvalReport,
}

impl TrainHooks for RunHooks<'_> {
    fn on_round(&mut self, record: &RoundRecord, flow: &TemporalFlow, _set: &TrainingSet) -> Result<()> {
        let ck = self.out.join("checkpoints").join(format!("round_{}.json", record.round));
        Checkpoint::from_flow(flow).save(&ck)?;
        let rows = evaluate(flow, self.problem, self.reference, &self.cfg.eval, self.cfg.seed, record.round)?;
        for r in &rows {
            log::info!(
                "round {} t={} {}: relative L2 {:.4e}{}",
                r.round,
                r.t,
                r.set,
                r.relative_l2,
                r.relative_kl.map(|k| format!(", relative KL {k:.4e}")).unwrap_or_default()
            );
        }
        self.report.rows.extend(rows);
        write(&self.out.join("eval_report.csv"), self.report.to_csv())
    }
}

/// Trains and evaluates per `cfg`, writing every artifact under `out`.
///
/// Files: `config.json`, `train_log.csv`, `timing.csv`, `eval_report.csv`,
/// `eval_meta.json`, `checkpoints/round_<k>.json`, `checkpoint.json`,
/// `density_t<t>.csv` (and `.ppm` with `ppm`), `samples.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
    write(&out.join("config.json"), cfg.to_json()?)?;
    write(&out.join("eval_meta.json"), eval_meta_json(cfg, &problem)?)?;
    let reference = build_reference(&problem, &cfg.eval, Some(out))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flow = TemporalFlow::new(cfg.flow_spec(problem.dim), &mut rng)?;
    let mut hooks = RunHooks {
        cfg,
        problem: &problem,
        reference: &reference,
        out,
        report: EvalReport::default(),
    };
    let train = train_adaptive(&mut flow, &problem, &cfg.train, &mut rng, &mut hooks)?;
    let report = hooks.report;
    write(&out.join("train_log.csv"), train.log_csv())?;
    write(&out.join("timing.csv"), train.timing_csv())?;
    Checkpoint::from_flow(&flow).save(&out.join("checkpoint.json"))?;

    for &t in &cfg.eval.times {
        for (suffix, vals) in density_dump(&flow, &problem, &cfg.eval, t)? {
            let mut s = String::from("x,y,p\n");
            for v in &vals {
                s.push_str(&format!("{},{},{}\n", v[0], v[1], v[2]));
            }
            write(&out.join(format!("density_t{t}{suffix}.csv")), s)?;
            if opts.ppm {
                write(&out.join(format!("density_t{t}{suffix}.ppm")), heatmap_ppm(&vals, cfg.eval.dump_grid))?;
            }
        }
    }
    write(&out.join("samples.csv"), samples_csv(&flow, &cfg.eval.times, cfg.eval.n_samples, &mut rng)?)?;
    Ok(RunOutput { flow, train, report })
}

/// `t,x1,..,xd` rows of model draws.
pub fn samples_csv<R: rand::Rng + ?Sized>(flow: &TemporalFlow, times: &[f64], n: usize, rng: &mut R) -> Result<String> {
    let d = flow.dim();
    let mut s = String::from("t");
    for k in 1..=d {
        s.push_str(&format!(",x{k}"));
    }
    s.push('\n');
    for &t in times {
        for x in flow.sample(t, n, rng)? {
            s.push_str(&t.to_string());
            for v in x {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// Recomputes the metrics of a saved flow.
pub fn eval_checkpoint(checkpoint: &Path, cfg: &ExperimentConfig, round: usize, base: Option<&Path>) -> Result<EvalReport> {
    let flow = Checkpoint::load(checkpoint)?.to_flow()?;
    let problem = cfg.problem()?;
    if flow.dim() != problem.dim {
        return Err(Error::Shape(format!(
            "checkpoint is {}-dimensional, problem {} is {}-dimensional",
            flow.dim(),
            problem.name,
            problem.dim
        )));
    }
    let reference = build_reference(&problem, &cfg.eval, base)?;
    Ok(EvalReport {
        rows: evaluate(&flow, &problem, &reference, &cfg.eval, cfg.seed, round)?,
    })
}

/// `samples.csv`-style draws from a saved flow, seeded by `seed`.
pub fn sample_checkpoint(checkpoint: &Path, times: &[f64], n: usize, seed: u64) -> Result<String> {
    let flow = Checkpoint::load(checkpoint)?.to_flow()?;
    samples_csv(&flow, times, n, &mut ChaCha8Rng::seed_from_u64(seed))
}
