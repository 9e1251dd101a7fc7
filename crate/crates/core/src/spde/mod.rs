//! Finite-difference solver for the reflected SPDE
//!
//! ```text
//! du = (u'' + f(x, u) + sigma(x, u) gdot) dt + sqrt(eps) sigma(x, u) dW + eta,   u >= 0
//! ```
//!
//! on `[0, L]` with `u(t, 0) = u(t, L) = 0`. One step is the explicit Euler
//! update with lattice white noise `xi sqrt(dt / dx)` followed by projection
//! onto `{u >= 0}`; the projection deficit times `dx` is the reflection mass
//! of the step. With `eps = 0` the same code path is the lattice skeleton.

mod noise;

pub use noise::{sample_noise, sample_noise_stream, NoisePath};

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::grid::{fmt17, Control, Field, Grid, WeightParams, Window};
use crate::obstacle::ReflectionMeasure;
use crate::skeleton::Coefficients;

use noise::{path_rng, NoiseSource};

/// One simulated path.
#[derive(Clone, Debug)]
pub struct SpdePath {
    pub u: Field,
    pub eta: ReflectionMeasure,
    pub epsilon: f64,
    /// `(master seed, stream)` of the driving noise, absent for `eps = 0`.
    pub seed: Option<(u64, u64)>,
}

fn check_run(grid: &Grid, epsilons: &[f64], coeffs: &Coefficients, u0: &[f64], g: Option<&Control>) -> Result<()> {
    if let Some(e) = epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(invalid(format!("noise intensity must be >= 0, got {e}")));
    }
    if !grid.explicit_stable() {
        return Err(Error::Refused(format!(
            "explicit SPDE stepper needs dt <= dx^2/2, got dt/dx^2 = {}",
            grid.courant()
        )));
    }
    if epsilons.iter().any(|&e| e > 0.0) && !coeffs.sigma_vanishes() && !(coeffs.delta() > 0.0) {
        return Err(Error::Refused("stochastic runs need delta > 0".into()));
    }
    if u0.len() != grid.n_nodes() {
        return Err(invalid(format!("u0 has {} nodes, grid has {}", u0.len(), grid.n_nodes())));
    }
    if u0[0] != 0.0 || u0.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("u0 must be finite, nonnegative and vanish at x = 0"));
    }
    if let Some(g) = g {
        grid.check_same(g.grid(), "control")?;
    }
    Ok(())
}

/// Steps one state per entry of `epsilons`, all driven by the same noise.
/// `observe(i, k, u_row, mass_row)` sees every time row of state `k`,
/// starting with `i = 0`.
fn run_reflected(
    grid: &Grid,
    epsilons: &[f64],
    coeffs: &Coefficients,
    u0: &[f64],
    g: Option<&Control>,
    mut noise: Option<NoiseSource<'_>>,
    mut observe: impl FnMut(usize, usize, &[f64], &[f64]),
) {
    let n = grid.n_nodes();
    let lam = grid.courant();
    let (dt, dx) = (grid.dt(), grid.dx());
    let noise_scale = (dt / dx).sqrt();
    let nc = coeffs.at_nodes(grid);
    let sqrt_eps: Vec<f64> = epsilons.iter().map(|e| e.sqrt()).collect();
    let mut states: Vec<Vec<f64>> = epsilons.iter().map(|_| u0.to_vec()).collect();
    let mut next = vec![0.0; n];
    let mut mass = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut gdot = vec![0.0; n];
    for (k, s) in states.iter().enumerate() {
        observe(0, k, s, &mass);
    }
    for i in 0..grid.nt() {
        if let Some(src) = noise.as_mut() {
            src.fill_row(i, &mut xi);
        }
        if let Some(g) = g {
            g.node_row(i, &mut gdot);
        }
        for (k, u) in states.iter_mut().enumerate() {
            let se = sqrt_eps[k];
            next[0] = 0.0;
            next[n - 1] = 0.0;
            for j in 1..n - 1 {
                let s = nc.sigma(j, u[j]);
                let mut v = u[j] + lam * (u[j + 1] - 2.0 * u[j] + u[j - 1]) + dt * nc.f(j, u[j]);
                if g.is_some() {
                    v += dt * s * gdot[j];
                }
                if se > 0.0 {
                    v += se * s * xi[j] * noise_scale;
                }
                next[j] = v;
            }
            for j in 0..n {
                let p = next[j].max(0.0);
                mass[j] = (p - next[j]) * dx;
                u[j] = p;
            }
            observe(i + 1, k, u, &mass);
        }
    }
}

/// Simulates the (controlled) reflected SPDE with intensity `epsilon` driven
/// by `noise`.
pub fn simulate(
    epsilon: f64,
    coeffs: &Coefficients,
    u0: &[f64],
    noise: &NoisePath,
    g: Option<&Control>,
) -> Result<SpdePath> {
    let grid = *noise.grid();
    check_run(&grid, &[epsilon], coeffs, u0, g)?;
    let src = (epsilon > 0.0).then_some(NoiseSource::Stored(noise));
    let (u, eta) = collect(&grid, epsilon, coeffs, u0, g, src);
    Ok(SpdePath { u, eta, epsilon, seed: (epsilon > 0.0).then_some((noise.seed(), noise.stream())) })
}

/// Simulates path `stream` of master seed `seed` without storing the noise.
pub fn simulate_stream(
    grid: &Grid,
    epsilon: f64,
    coeffs: &Coefficients,
    u0: &[f64],
    g: Option<&Control>,
    seed: u64,
    stream: u64,
) -> Result<SpdePath> {
    check_run(grid, &[epsilon], coeffs, u0, g)?;
    let src = (epsilon > 0.0).then(|| NoiseSource::Stream(path_rng(seed, stream)));
    let (u, eta) = collect(grid, epsilon, coeffs, u0, g, src);
    Ok(SpdePath { u, eta, epsilon, seed: (epsilon > 0.0).then_some((seed, stream)) })
}

/// The `eps = 0` path: lattice solution of the controlled skeleton
/// equation, used as finite-difference reference for the mild-form solver.
pub fn fd_skeleton(
    grid: &Grid,
    coeffs: &Coefficients,
    u0: &[f64],
    g: Option<&Control>,
) -> Result<(Field, ReflectionMeasure)> {
    check_run(grid, &[0.0], coeffs, u0, g)?;
    Ok(collect(grid, 0.0, coeffs, u0, g, None))
}

/// Streams paths `paths` of `seed` as CSV rows `path_id,t,x,u`, one path at
/// a time, so memory stays at one field regardless of the path count.
#[allow(clippy::too_many_arguments)]
pub fn write_paths_csv<W: Write>(
    grid: &Grid,
    epsilon: f64,
    coeffs: &Coefficients,
    u0: &[f64],
    g: Option<&Control>,
    seed: u64,
    paths: Range<u64>,
    mut out: W,
) -> Result<()> {
    writeln!(out, "path_id,t,x,u")?;
    for id in paths {
        let path = simulate_stream(grid, epsilon, coeffs, u0, g, seed, id)?;
        for i in 0..grid.n_times() {
            let t = fmt17(grid.t(i));
            for (j, v) in path.u.row(i).iter().enumerate() {
                writeln!(out, "{id},{t},{},{}", fmt17(grid.x(j)), fmt17(*v))?;
            }
        }
    }
    Ok(())
}

fn collect(
    grid: &Grid,
    epsilon: f64,
    coeffs: &Coefficients,
    u0: &[f64],
    g: Option<&Control>,
    src: Option<NoiseSource<'_>>,
) -> (Field, ReflectionMeasure) {
    let n = grid.n_nodes();
    let mut u = vec![0.0; grid.n_times() * n];
    let mut m = vec![0.0; grid.n_times() * n];
    run_reflected(grid, &[epsilon], coeffs, u0, g, src, |i, _, row, mass| {
        u[i * n..(i + 1) * n].copy_from_slice(row);
        m[i * n..(i + 1) * n].copy_from_slice(mass);
    });
    let u = Field::from_values(*grid, u).expect("explicit stepper stays finite on stable grids");
    let eta = ReflectionMeasure::from_values(*grid, m).expect("projection deficits are nonnegative");
    (u, eta)
}

/// Monte Carlo ensemble over paths `0..n_paths` of `master_seed`, each
/// simulated at every intensity in `epsilons` with common noise.
#[derive(Clone, Debug)]
pub struct Ensemble<'a> {
    pub grid: Grid,
    pub epsilons: Vec<f64>,
    pub coeffs: &'a Coefficients,
    pub u0: &'a [f64],
    pub control: Option<&'a Control>,
    /// Distances are measured from this field (zero when absent).
    pub reference: Option<&'a Field>,
    pub weight: WeightParams,
    pub window: Window,
    /// Lattice points `(i, j)` whose values are recorded per path.
    pub probes: Vec<(usize, usize)>,
    pub master_seed: u64,
    pub n_paths: usize,
    pub exec: Exec,
}

/// Per-path output of an [`Ensemble`] run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub path_id: u64,
    /// `sup_window e^{-r x} |u - reference|` per intensity.
    pub distance: Vec<f64>,
    /// `probes[k][q]`: value of `u` at probe `q` for intensity `k`.
    pub probes: Vec<Vec<f64>>,
}

impl Ensemble<'_> {
    /// Runs all paths; the output is ordered by path id and does not depend
    /// on the execution mode.
    pub fn run(&self) -> Result<Vec<PathSummary>> {
        self.run_range(0..self.n_paths as u64)
    }

    /// Runs the paths with ids in `paths`, in order. Splitting `0..n_paths`
    /// into batches gives the same summaries as one call to [`Ensemble::run`].
    pub fn run_range(&self, paths: Range<u64>) -> Result<Vec<PathSummary>> {
        let grid = self.grid;
        check_run(&grid, &self.epsilons, self.coeffs, self.u0, self.control)?;
        if let Some(r) = self.reference {
            grid.check_same(r.grid(), "ensemble reference")?;
        }
        if self.window.times.is_empty()
            || self.window.nodes.is_empty()
            || self.window.times.end > grid.n_times()
            || self.window.nodes.end > grid.n_nodes()
        {
            return Err(invalid(format!("window {:?} outside the grid", self.window)));
        }
        if let Some(&(i, j)) = self.probes.iter().find(|&&(i, j)| i >= grid.n_times() || j >= grid.n_nodes()) {
            return Err(invalid(format!("probe ({i}, {j}) outside the grid")));
        }
        let weights = self.weight.weights(&grid);
        let n = grid.n_nodes();
        let first = paths.start;
        let count = paths.end.saturating_sub(paths.start) as usize;
        Ok(self.exec.map(count, |p| {
            let id = first + p as u64;
            let mut distance = vec![0.0f64; self.epsilons.len()];
            let mut probes = vec![vec![0.0; self.probes.len()]; self.epsilons.len()];
            let src = NoiseSource::Stream(path_rng(self.master_seed, id));
            run_reflected(&grid, &self.epsilons, self.coeffs, self.u0, self.control, Some(src), |i, k, row, _| {
                if self.window.times.contains(&i) {
                    let base = self.reference.map(|r| &r.values()[i * n..(i + 1) * n]);
                    let mut m = distance[k];
                    for j in self.window.nodes.clone() {
                        let d = row[j] - base.map_or(0.0, |b| b[j]);
                        m = m.max(weights[j] * d.abs());
                    }
                    distance[k] = m;
                }
                for (q, &(pi, pj)) in self.probes.iter().enumerate() {
                    if pi == i {
                        probes[k][q] = row[pj];
                    }
                }
            });
            PathSummary { path_id: id, distance, probes }
        }))
    }
}

/// Monte Carlo estimate of `E X^p` from samples of `X >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    /// A single sample: the standard error is not meaningful.
    pub degenerate: bool,
}

/// `E X^p` and its standard error from the samples `norms`.
pub fn moment_of(norms: &[f64], p: f64) -> Result<MomentEstimate> {
    if norms.is_empty() {
        return Err(invalid("moment of an empty sample"));
    }
    if !(p >= 1.0) {
        return Err(invalid(format!("moment order must be >= 1, got {p}")));
    }
    let xs: Vec<f64> = norms.iter().map(|v| v.powf(p)).collect();
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(MomentEstimate { p, mean, std_error, n, degenerate: n == 1 })
}

/// `E ||u - reference||^p` over the lattice `C_r^T` norm restricted to
/// `window`, from a collection of fields.
pub fn moment_norms(
    fields: &[Field],
    reference: Option<&Field>,
    weight: WeightParams,
    window: &Window,
    p: f64,
) -> Result<MomentEstimate> {
    if fields.is_empty() {
        return Err(invalid("moment of an empty collection"));
    }
    let norms = fields
        .iter()
        .map(|f| match reference {
            Some(r) => f.try_sub(r)?.weighted_sup_norm_in(weight, window),
            None => f.weighted_sup_norm_in(weight, window),
        })
        .collect::<Result<Vec<_>>>()?;
    moment_of(&norms, p)
}
