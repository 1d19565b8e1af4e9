//! Finite-difference reference solutions for 2-d problems.
//!
//! Douglas splitting with `theta = 1/2`: each step is an explicit predictor
//! followed by one implicit correction per axis, each a set of tridiagonal
//! solves. Diffusion uses centered differences, drift uses conservative
//! first-order upwind fluxes, and the box boundary is held at zero. A mixed
//! diffusion term `D_12`, if present, stays explicit.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BoxDomain, TfpProblem};

pub const GRID_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AdiConfig {
    /// Mesh size in both directions.
    pub dh: f64,
    pub dt: f64,
    /// Defaults to the problem's reference box.
    pub domain: Option<BoxDomain>,
    /// Times at which to keep a snapshot; each must be a multiple of `dt`.
    pub snapshots: Vec<f64>,
}

/// Density snapshots on a uniform 2-d grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSolution {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    /// Increasing snapshot times.
    pub times: Vec<f64>,
    /// One row-major `ny x nx` grid per snapshot (`x` varies fastest).
    pub values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridMeta {
    format_version: u32,
    lo: [f64; 2],
    hi: [f64; 2],
    nx: usize,
    ny: usize,
    dt: f64,
    times: Vec<f64>,
}

fn nodes(lo: f64, hi: f64, dh: f64) -> Result<usize> {
    let cells = (hi - lo) / dh;
    let n = cells.round();
    if !(n >= 2.0) || (cells - n).abs() > 1e-6 * n {
        return Err(Error::invalid("dh", "box width must be a multiple of dh with at least two cells"));
    }
    Ok(n as usize + 1)
}

/// Line operator `l u_{i-1} + c u_i + r u_{i+1}` per interior node.
struct Stencil {
    l: Vec<f64>,
    c: Vec<f64>,
    r: Vec<f64>,
}

/// Weights of the left and right cell values in a face flux. Centered while
/// the cell Peclet number allows it, upwind otherwise (always where `diff = 0`).
fn face_weights(velocity: f64, h: f64, diff: f64) -> (f64, f64) {
    if velocity.abs() * h <= 2.0 * diff {
        (0.5, 0.5)
    } else if velocity > 0.0 {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    scratch[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * scratch[i - 1];
        scratch[i] = sup[i] / m;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

pub fn adi_solve(problem: &TfpProblem, config: &AdiConfig) -> Result<GridSolution> {
    if problem.dim != 2 {
        return Err(Error::invalid("problem", "the ADI solver is 2-d only"));
    }
    if !(config.dt > 0.0) || !(config.dh > 0.0) {
        return Err(Error::invalid("dt", "dh and dt must be positive"));
    }
    let domain = config.domain.clone().unwrap_or_else(|| problem.reference_box.clone());
    let (nx, ny) = (
        nodes(domain.lo[0], domain.hi[0], config.dh)?,
        nodes(domain.lo[1], domain.hi[1], config.dh)?,
    );
    let hx = (domain.hi[0] - domain.lo[0]) / (nx - 1) as f64;
    let hy = (domain.hi[1] - domain.lo[1]) / (ny - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|i| domain.lo[0] + hx * i as f64).collect();
    let ys: Vec<f64> = (0..ny).map(|j| domain.lo[1] + hy * j as f64).collect();

    let mut snaps: Vec<(usize, f64)> = Vec::new();
    for &t in &config.snapshots {
        let k = (t / config.dt).round();
        if !(t >= 0.0) || t > problem.horizon + 1e-12 || (k * config.dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::invalid("snapshots", format!("time {t} is not a step of dt within [0, T]")));
        }
        snaps.push((k as usize, t));
    }
    snaps.sort_by(|a, b| a.0.cmp(&b.0));
    snaps.dedup_by_key(|s| s.0);
    let steps = snaps.last().map_or(0, |s| s.0);

    let idx = |i: usize, j: usize| j * nx + i;
    let mut u = vec![0.0; nx * ny];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            u[idx(i, j)] = problem.p0.density(&[xs[i], ys[j]], 0.0);
        }
    }
    let max0 = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let d11 = problem.diffusion_at(0, 0);
    let d22 = problem.diffusion_at(1, 1);
    let d12 = problem.diffusion_at(0, 1) + problem.diffusion_at(1, 0);

    // Stencils along x (index i) and y (index j), evaluated at mid-step time.
    let build = |t: f64| -> (Stencil, Stencil) {
        let mut sx = Stencil {
            l: vec![0.0; nx * ny],
            c: vec![0.0; nx * ny],
            r: vec![0.0; nx * ny],
        };
        let mut sy = Stencil {
            l: vec![0.0; nx * ny],
            c: vec![0.0; nx * ny],
            r: vec![0.0; nx * ny],
        };
        let mut mu = [0.0; 2];
        let mut drift = |x: f64, y: f64, k: usize| {
            (problem.drift)(&[x, y], t, &mut mu);
            mu[k]
        };
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = idx(i, j);
                let (w, e) = (drift(xs[i] - 0.5 * hx, ys[j], 0), drift(xs[i] + 0.5 * hx, ys[j], 0));
                let dx = d11 / (hx * hx);
                let (wl, wr) = face_weights(w, hx, d11);
                let (el, er) = face_weights(e, hx, d11);
                sx.l[k] = dx + w * wl / hx;
                sx.c[k] = -2.0 * dx + (w * wr - e * el) / hx;
                sx.r[k] = dx - e * er / hx;
                let (s, n) = (drift(xs[i], ys[j] - 0.5 * hy, 1), drift(xs[i], ys[j] + 0.5 * hy, 1));
                let dy = d22 / (hy * hy);
                let (sl, sr) = face_weights(s, hy, d22);
                let (nl, nr) = face_weights(n, hy, d22);
                sy.l[k] = dy + s * sl / hy;
                sy.c[k] = -2.0 * dy + (s * sr - n * nl) / hy;
                sy.r[k] = dy - n * nr / hy;
            }
        }
        (sx, sy)
    };

    let apply_x = |s: &Stencil, u: &[f64], out: &mut [f64]| {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = idx(i, j);
                out[k] = s.l[k] * u[k - 1] + s.c[k] * u[k] + s.r[k] * u[k + 1];
            }
        }
    };
    let apply_y = |s: &Stencil, u: &[f64], out: &mut [f64]| {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = idx(i, j);
                out[k] = s.l[k] * u[k - nx] + s.c[k] * u[k] + s.r[k] * u[k + nx];
            }
        }
    };

    let dt = config.dt;
    let theta = 0.5;
    let mut ax = vec![0.0; nx * ny];
    let mut ay = vec![0.0; nx * ny];
    let mut y = vec![0.0; nx * ny];
    let line = nx.max(ny);
    let (mut sub, mut diag, mut sup, mut rhs, mut scratch) = (
        vec![0.0; line],
        vec![0.0; line],
        vec![0.0; line],
        vec![0.0; line],
        vec![0.0; line],
    );
    let mut values = Vec::with_capacity(snaps.len());
    let mut times = Vec::with_capacity(snaps.len());
    let mut next = 0;
    let mut stencils = build(0.5 * dt);
    let autonomous_probe = {
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        let p = [domain.lo[0] + 0.37 * hx, domain.lo[1] + 0.61 * hy];
        (problem.drift)(&p, 0.0, &mut a);
        (problem.drift)(&p, problem.horizon, &mut b);
        a == b
    };

    for step in 0..=steps {
        while next < snaps.len() && snaps[next].0 == step {
            times.push(snaps[next].1);
            values.push(u.iter().map(|v| v.max(0.0)).collect::<Vec<f64>>());
            next += 1;
        }
        if step == steps {
            break;
        }
        let t = step as f64 * dt;
        if step > 0 && !autonomous_probe {
            stencils = build(t + 0.5 * dt);
        }
        let (sx, sy) = &stencils;
        apply_x(sx, &u, &mut ax);
        apply_y(sy, &u, &mut ay);
        // predictor
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = idx(i, j);
                let mut cross = 0.0;
                if d12 != 0.0 {
                    cross = d12 * (u[k + nx + 1] - u[k - nx + 1] - u[k + nx - 1] + u[k - nx - 1]) / (4.0 * hx * hy);
                }
                y[k] = u[k] + dt * (ax[k] + ay[k] + cross);
            }
        }
        // x correction: (I - theta dt A_x) y1 = y0 - theta dt A_x u
        let m = nx - 2;
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = idx(i, j);
                let q = i - 1;
                sub[q] = -theta * dt * sx.l[k];
                diag[q] = 1.0 - theta * dt * sx.c[k];
                sup[q] = -theta * dt * sx.r[k];
                rhs[q] = y[k] - theta * dt * ax[k];
            }
            thomas(&sub[..m], &diag[..m], &sup[..m], &mut rhs[..m], &mut scratch[..m]);
            for i in 1..nx - 1 {
                y[idx(i, j)] = rhs[i - 1];
            }
        }
        // y correction
        let m = ny - 2;
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                let k = idx(i, j);
                let q = j - 1;
                sub[q] = -theta * dt * sy.l[k];
                diag[q] = 1.0 - theta * dt * sy.c[k];
                sup[q] = -theta * dt * sy.r[k];
                rhs[q] = y[k] - theta * dt * ay[k];
            }
            thomas(&sub[..m], &diag[..m], &sup[..m], &mut rhs[..m], &mut scratch[..m]);
            for j in 1..ny - 1 {
                u[idx(i, j)] = rhs[j - 1];
            }
        }
        let max_abs = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !max_abs.is_finite() || max_abs > 10.0 * max0 {
            return Err(Error::Unstable {
                step: step + 1,
                t: t + dt,
                max_abs,
            });
        }
    }
    Ok(GridSolution {
        lo: [domain.lo[0], domain.lo[1]],
        hi: [domain.hi[0], domain.hi[1]],
        nx,
        ny,
        dt,
        times,
        values,
    })
}

impl GridSolution {
    pub fn spacing(&self) -> [f64; 2] {
        [
            (self.hi[0] - self.lo[0]) / (self.nx - 1) as f64,
            (self.hi[1] - self.lo[1]) / (self.ny - 1) as f64,
        ]
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [self.lo[0] + h[0] * i as f64, self.lo[1] + h[1] * j as f64]
    }

    /// Index of the snapshot stored at exactly `t`.
    pub fn snapshot_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Trapezoid-rule mass of snapshot `k`.
    pub fn mass(&self, k: usize) -> f64 {
        let h = self.spacing();
        let v = &self.values[k];
        let mut s = 0.0;
        for j in 0..self.ny {
            let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..self.nx {
                let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
                s += wx * wy * v[j * self.nx + i];
            }
        }
        s * h[0] * h[1]
    }

    fn bilinear(&self, k: usize, x: &[f64]) -> f64 {
        let h = self.spacing();
        let fx = (x[0] - self.lo[0]) / h[0];
        let fy = (x[1] - self.lo[1]) / h[1];
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (self.nx - 1) as f64 && fy <= (self.ny - 1) as f64) {
            return 0.0;
        }
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (a, b) = (fx - i as f64, fy - j as f64);
        let v = &self.values[k];
        let at = |i: usize, j: usize| v[j * self.nx + i];
        (1.0 - a) * (1.0 - b) * at(i, j) + a * (1.0 - b) * at(i + 1, j) + (1.0 - a) * b * at(i, j + 1) + a * b * at(i + 1, j + 1)
    }

    /// Bilinear in space, linear in time; zero outside the box.
    pub fn interpolate(&self, x: &[f64], t: f64) -> Result<f64> {
        if x.len() != 2 {
            return Err(Error::Shape("grid solutions are 2-d".into()));
        }
        let (first, last) = (self.times[0], *self.times.last().expect("nonempty"));
        if !(t >= first - 1e-12 && t <= last + 1e-12) {
            return Err(Error::invalid("t", format!("{t} outside the stored range [{first}, {last}]")));
        }
        if let Some(k) = self.snapshot_index(t) {
            return Ok(self.bilinear(k, x));
        }
        let k = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        Ok((1.0 - w) * self.bilinear(k - 1, x) + w * self.bilinear(k, x))
    }

    /// Draws from the bilinear interpolant of the snapshot at `t` by choosing
    /// a cell in proportion to its mass and then a point inside the cell from
    /// the bilinear density by rejection.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let k = self
            .snapshot_index(t)
            .ok_or_else(|| Error::invalid("t", format!("no snapshot stored at {t}")))?;
        let v = &self.values[k];
        let at = |i: usize, j: usize| v[j * self.nx + i];
        let cells = (self.nx - 1) * (self.ny - 1);
        let mut cdf = Vec::with_capacity(cells);
        let mut acc = 0.0;
        for j in 0..self.ny - 1 {
            for i in 0..self.nx - 1 {
                acc += at(i, j) + at(i + 1, j) + at(i, j + 1) + at(i + 1, j + 1);
                cdf.push(acc);
            }
        }
        if !(acc > 0.0) {
            return Err(Error::invalid("grid", "snapshot has no mass"));
        }
        let h = self.spacing();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u = rng.random::<f64>() * acc;
            let c = cdf.partition_point(|&m| m < u).min(cells - 1);
            let (i, j) = (c % (self.nx - 1), c / (self.nx - 1));
            let corners = [at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)];
            let top = corners.iter().fold(0.0f64, |m, v| m.max(*v));
            loop {
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                let val = (1.0 - a) * (1.0 - b) * corners[0] + a * (1.0 - b) * corners[1] + (1.0 - a) * b * corners[2] + a * b * corners[3];
                if rng.random::<f64>() * top <= val {
                    let p = self.node(i, j);
                    out.push(vec![p[0] + a * h[0], p[1] + b * h[1]]);
                    break;
                }
            }
        }
        Ok(out)
    }

    fn sidecar(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes `t,x,y,p` rows to `path` and the grid header to a `.json`
    /// file next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("t,x,y,p\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let p = self.node(i, j);
                    s.push_str(&format!("{t},{},{},{}\n", p[0], p[1], v[j * self.nx + i]));
                }
            }
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))?;
        let meta = GridMeta {
            format_version: GRID_FORMAT_VERSION,
            lo: self.lo,
            hi: self.hi,
            nx: self.nx,
            ny: self.ny,
            dt: self.dt,
            times: self.times.clone(),
        };
        let side = Self::sidecar(path);
        fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = Self::sidecar(path);
        let parse = |p: &Path, reason: String| Error::Parse {
            path: p.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: GridMeta = serde_json::from_str(&text).map_err(|e| parse(&side, e.to_string()))?;
        if meta.format_version != GRID_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: meta.format_version,
                expected: GRID_FORMAT_VERSION,
            });
        }
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let per = meta.nx * meta.ny;
        let mut values = vec![Vec::with_capacity(per); meta.times.len()];
        let mut rows = body.lines();
        if rows.next() != Some("t,x,y,p") {
            return Err(parse(path, "missing header t,x,y,p".into()));
        }
        for (n, row) in rows.enumerate() {
            let k = n / per;
            if k >= values.len() {
                return Err(parse(path, "more rows than the header declares".into()));
            }
            let p = row
                .rsplit(',')
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| parse(path, format!("bad row {}", n + 2)))?;
            values[k].push(p);
        }
        if values.iter().any(|v| v.len() != per) {
            return Err(parse(path, "row count does not match the grid".into()));
        }
        Ok(GridSolution {
            lo: meta.lo,
            hi: meta.hi,
            nx: meta.nx,
            ny: meta.ny,
            dt: meta.dt,
            times: meta.times,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::builtin;

    fn toy(dh: f64, dt: f64, snaps: Vec<f64>) -> GridSolution {
        let p = builtin("toy2d", None).unwrap();
        adi_solve(
            &p,
            &AdiConfig {
                dh,
                dt,
                domain: None,
                snapshots: snaps,
            },
        )
        .unwrap()
    }

    fn rel_err(g: &GridSolution, t: f64) -> f64 {
        let p = builtin("toy2d", None).unwrap();
        let k = g.snapshot_index(t).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let e = p.exact_eval(&g.node(i, j), t).unwrap();
                let d = g.values[k][j * g.nx + i] - e;
                num += d * d;
                den += e * e;
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn coarse_toy_is_accurate_and_conserves_mass() {
        let g = toy(0.2, 0.05, vec![0.0, 0.5, 1.0]);
        assert!(rel_err(&g, 1.0) < 2e-2);
        for k in 0..3 {
            assert!((g.mass(k) - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn interpolation_hits_nodes_exactly() {
        let g = toy(0.5, 0.1, vec![0.0, 0.5]);
        let p = g.node(7, 9);
        assert_eq!(g.interpolate(&p, 0.5).unwrap(), g.values[1][9 * g.nx + 7]);
        let mid = g.interpolate(&p, 0.25).unwrap();
        let want = 0.5 * (g.values[0][9 * g.nx + 7] + g.values[1][9 * g.nx + 7]);
        assert!((mid - want).abs() < 1e-15);
        assert_eq!(g.interpolate(&[100.0, 0.0], 0.5).unwrap(), 0.0);
        assert!(g.interpolate(&p, 0.7).is_err());
    }

    #[test]
    fn snapshot_times_must_be_steps() {
        let p = builtin("toy2d", None).unwrap();
        let cfg = AdiConfig {
            dh: 0.5,
            dt: 0.1,
            domain: None,
            snapshots: vec![0.25],
        };
        assert!(adi_solve(&p, &cfg).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let g = toy(0.5, 0.1, vec![0.0, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.csv");
        g.save(&path).unwrap();
        assert_eq!(GridSolution::load(&path).unwrap(), g);
    }

    #[test]
    fn oscillator_stays_bounded() {
        let p = builtin("linear_osc", None).unwrap();
        let g = adi_solve(
            &p,
            &AdiConfig {
                dh: 0.1,
                dt: 0.01,
                domain: None,
                snapshots: vec![0.0, 1.5, 3.0],
            },
        )
        .unwrap();
        for k in 0..3 {
            assert!((g.mass(k) - 1.0).abs() < 1e-2, "mass {}", g.mass(k));
        }
    }
}
