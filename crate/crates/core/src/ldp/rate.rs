use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::grid::{Control, Field, Grid, WeightParams};
use crate::skeleton::{solve_skeleton, Coefficients, SkeletonOptions};
use crate::spde::fd_skeleton;

/// Controls that are bilinear interpolants of values on a coarse
/// `(time_cells + 1) x (space_cells + 1)` node lattice, sampled at the
/// midpoints of the fine cells.
#[derive(Clone, Debug)]
pub struct ControlLattice {
    grid: Grid,
    time_cells: usize,
    space_cells: usize,
    stencil: Vec<[(usize, f64); 4]>,
}

impl ControlLattice {
    pub fn new(grid: Grid, time_cells: usize, space_cells: usize) -> Result<Self> {
        if time_cells == 0 || space_cells == 0 || time_cells > grid.nt() || space_cells > grid.nx() {
            return Err(invalid(format!(
                "coarse lattice {time_cells}x{space_cells} must be nonempty and no finer than the grid"
            )));
        }
        let cols = space_cells + 1;
        let locate = |frac: f64, cells: usize| {
            let s = frac * cells as f64;
            let a = (s.floor() as usize).min(cells - 1);
            (a, s - a as f64)
        };
        let mut stencil = Vec::with_capacity(grid.nt() * grid.nx());
        for i in 0..grid.nt() {
            let (a, ft) = locate((i as f64 + 0.5) / grid.nt() as f64, time_cells);
            for j in 0..grid.nx() {
                let (b, fx) = locate((j as f64 + 0.5) / grid.nx() as f64, space_cells);
                let k = a * cols + b;
                stencil.push([
                    (k, (1.0 - ft) * (1.0 - fx)),
                    (k + 1, (1.0 - ft) * fx),
                    (k + cols, ft * (1.0 - fx)),
                    (k + cols + 1, ft * fx),
                ]);
            }
        }
        Ok(ControlLattice { grid, time_cells, space_cells, stencil })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_params(&self) -> usize {
        (self.time_cells + 1) * (self.space_cells + 1)
    }

    /// Coarse values `f(tau_a, xi_b)` at the coarse nodes, time-major.
    pub fn sample(&self, mut f: impl FnMut(f64, f64) -> f64) -> Vec<f64> {
        let (tf, len) = (self.grid.t_final(), self.grid.length());
        let mut out = Vec::with_capacity(self.n_params());
        for a in 0..=self.time_cells {
            for b in 0..=self.space_cells {
                out.push(f(tf * a as f64 / self.time_cells as f64, len * b as f64 / self.space_cells as f64));
            }
        }
        out
    }

    pub fn control(&self, theta: &[f64]) -> Result<Control> {
        if theta.len() != self.n_params() {
            return Err(invalid(format!("expected {} lattice values, got {}", self.n_params(), theta.len())));
        }
        let values = self.stencil.iter().map(|st| st.iter().map(|&(k, w)| w * theta[k]).sum()).collect();
        Control::from_values(self.grid, values)
    }

    /// `M` with `|control(theta)|_H^2 = theta^T M theta`.
    pub fn gram(&self) -> DMatrix<f64> {
        let p = self.n_params();
        let mut m = DMatrix::zeros(p, p);
        let cell = self.grid.dt() * self.grid.dx();
        for st in &self.stencil {
            for &(a, wa) in st {
                for &(b, wb) in st {
                    m[(a, b)] += cell * wa * wb;
                }
            }
        }
        m
    }

    /// Least-squares coarse values of `g` in the Cameron–Martin inner product.
    pub fn fit(&self, g: &Control) -> Result<Vec<f64>> {
        self.grid.check_same(g.grid(), "lattice fit")?;
        let cell = self.grid.dt() * self.grid.dx();
        let mut rhs = DVector::zeros(self.n_params());
        for (st, v) in self.stencil.iter().zip(g.values()) {
            for &(k, w) in st {
                rhs[k] += cell * w * v;
            }
        }
        let x = solve_spd(self.gram(), &rhs)?;
        Ok(x.iter().copied().collect())
    }
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.lu().solve(b).ok_or_else(|| invalid("singular normal equations"))
}

/// The skeleton map used by the rate computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ForwardMap {
    /// Mild-form Picard solver.
    Picard { options: SkeletonOptions },
    /// Explicit finite-difference skeleton on the same lattice as the SPDE.
    Lattice,
}

impl Default for ForwardMap {
    fn default() -> Self {
        ForwardMap::Picard { options: SkeletonOptions { tol: 1e-12, ..SkeletonOptions::default() } }
    }
}

impl ForwardMap {
    pub fn apply(&self, g: &Control, u0: &[f64], coeffs: &Coefficients) -> Result<Field> {
        match self {
            ForwardMap::Picard { options } => Ok(solve_skeleton(g, u0, coeffs, options)?.u),
            ForwardMap::Lattice => Ok(fd_skeleton(g.grid(), coeffs, u0, Some(g))?.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateOptions {
    pub time_cells: usize,
    pub space_cells: usize,
    /// Increasing penalty weights.
    pub schedule: Vec<f64>,
    /// Controls are kept in the ball `S_{n_max}`.
    pub n_max: f64,
    /// Largest target gap accepted as feasible.
    pub gap_tol: f64,
    /// Damped Gauss-Newton iterations per penalty weight.
    pub max_inner: usize,
    /// Relative step of the finite-difference Jacobian.
    pub fd_step: f64,
    pub forward: ForwardMap,
    /// Norm of the target gap; the coefficient rate `r` when absent.
    pub weight: Option<WeightParams>,
    pub exec: Exec,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            time_cells: 4,
            space_cells: 4,
            schedule: (0..=8).map(|k| 10f64.powi(k)).collect(),
            n_max: 10.0,
            gap_tol: 1e-3,
            max_inner: 12,
            fd_step: 1e-5,
            forward: ForwardMap::default(),
            weight: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RateResult {
    /// `|argmin|_H^2 / 2`.
    pub value: f64,
    pub argmin: Control,
    /// `||Gamma0(argmin) - h||` in the weighted sup norm.
    pub target_gap: f64,
    /// `(lambda, |g|^2 / 2 + lambda gap^2)` at the end of each penalty stage.
    pub penalty_trace: Vec<(f64, f64)>,
    /// `target_gap <= gap_tol`.
    pub feasible: bool,
    /// Forward solves performed.
    pub evaluations: usize,
}

struct Candidate {
    control: Control,
    value: f64,
    gap: f64,
}

impl Candidate {
    fn better_than(&self, other: &Candidate, gap_tol: f64) -> bool {
        match (self.gap <= gap_tol, other.gap <= gap_tol) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.value < other.value || (self.value == other.value && self.gap < other.gap),
            (false, false) => self.gap < other.gap,
        }
    }
}

struct Problem<'a> {
    h: &'a Field,
    u0: &'a [f64],
    coeffs: &'a Coefficients,
    lattice: ControlLattice,
    opts: &'a RateOptions,
    row_weights: Vec<f64>,
}

impl Problem<'_> {
    fn forward(&self, theta: &[f64]) -> Result<(Control, Field)> {
        let g = self.lattice.control(theta)?;
        let u = self.opts.forward.apply(&g, self.u0, self.coeffs)?;
        Ok((g, u))
    }

    /// `e^{-r x} (u - h) sqrt(dt dx)` at interior nodes after time zero.
    fn residual(&self, u: &Field) -> Vec<f64> {
        let g = self.lattice.grid();
        let scale = (g.dt() * g.dx()).sqrt();
        let mut out = Vec::with_capacity(g.nt() * (g.nx() - 1));
        for i in 1..g.n_times() {
            let (a, b) = (u.row(i), self.h.row(i));
            for j in 1..g.nx() {
                out.push(self.row_weights[j] * (a[j] - b[j]) * scale);
            }
        }
        out
    }

    fn jacobian(&self, theta: &[f64], base: &[f64]) -> Result<DMatrix<f64>> {
        let cols = self.opts.exec.map(theta.len(), |k| -> Result<Vec<f64>> {
            let step = self.opts.fd_step * (1.0 + theta[k].abs());
            let mut t = theta.to_vec();
            t[k] += step;
            let (_, u) = self.forward(&t)?;
            Ok(self.residual(&u).iter().zip(base).map(|(a, b)| (a - b) / step).collect())
        });
        let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(base.len(), theta.len(), |r, c| cols[c][r]))
    }
}

fn quad(m: &DMatrix<f64>, theta: &[f64]) -> f64 {
    let t = DVector::from_column_slice(theta);
    0.5 * t.dot(&(m * &t))
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_target(h: &Field, u0: &[f64]) -> Result<()> {
    let g = h.grid();
    if u0.len() != g.n_nodes() {
        return Err(invalid(format!("u0 has {} nodes, grid has {}", u0.len(), g.n_nodes())));
    }
    if !h.is_finite() {
        return Err(invalid("target must be finite"));
    }
    let tol = 1e-12 * h.max_abs().max(1.0);
    if h.min_value() < -tol {
        return Err(invalid(format!("target must be nonnegative, min is {}", h.min_value())));
    }
    if (0..g.n_times()).any(|i| h.get(i, 0).abs() > tol) {
        return Err(invalid("target must vanish at x = 0"));
    }
    if h.row(0).iter().zip(u0).any(|(a, b)| (a - b).abs() > tol) {
        return Err(invalid("target must start from u0"));
    }
    Ok(())
}

/// Upper estimate of `I(h)` by penalty continuation
///
/// ```text
/// min_theta  |g(theta)|_H^2 / 2 + lambda |e^{-r x} (Gamma0(g(theta)) - h)|_{L^2}^2
/// ```
///
/// over the coarse control lattice, for each `lambda` of the schedule, with a
/// damped Gauss-Newton method on finite-difference Jacobians. Every trial
/// control is scored by its value and its target gap in the weighted sup
/// norm; the result is the cheapest feasible one (the closest one when none
/// is feasible). A supplied `g0` is itself a candidate, so a feasible `g0`
/// bounds the returned value by `|g0|_H^2 / 2`.
pub fn rate_function(
    h: &Field,
    u0: &[f64],
    coeffs: &Coefficients,
    opts: &RateOptions,
    g0: Option<&Control>,
) -> Result<RateResult> {
    check_target(h, u0)?;
    if opts.schedule.is_empty() || opts.schedule.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(invalid("penalty schedule must be a nonempty list of positive weights"));
    }
    if !(opts.n_max > 0.0) || !(opts.gap_tol > 0.0) || !(opts.fd_step > 0.0) {
        return Err(invalid("rate options need n_max, gap_tol and fd_step positive"));
    }
    let grid = *h.grid();
    let weight = opts.weight.unwrap_or(WeightParams { r: coeffs.r() });
    let lattice = ControlLattice::new(grid, opts.time_cells, opts.space_cells)?;
    let m = lattice.gram();
    let pb = Problem { h, u0, coeffs, lattice, opts, row_weights: weight.weights(&grid) };
    let ball = |theta: &mut Vec<f64>| {
        let n = (2.0 * quad(&m, theta)).sqrt();
        if n > opts.n_max {
            theta.iter_mut().for_each(|v| *v *= opts.n_max / n);
        }
    };

    let mut evaluations = 0usize;
    let mut best: Option<Candidate> = None;
    let consider = |c: Candidate, best: &mut Option<Candidate>| {
        if best.as_ref().is_none_or(|b| c.better_than(b, opts.gap_tol)) {
            *best = Some(c);
        }
    };

    let mut theta = vec![0.0; pb.lattice.n_params()];
    if let Some(g) = g0 {
        grid.check_same(g.grid(), "initial control")?;
        let u = opts.forward.apply(g, u0, coeffs)?;
        evaluations += 1;
        let c = Candidate { control: g.clone(), value: 0.5 * g.cm_norm().powi(2), gap: u.distance(h, weight)? };
        consider(c, &mut best);
        theta = pb.lattice.fit(g)?;
        ball(&mut theta);
    }

    let score = |g: Control, u: &Field| -> Result<Candidate> {
        let value = 0.5 * g.cm_norm().powi(2);
        Ok(Candidate { control: g, value, gap: u.distance(h, weight)? })
    };
    let (g, u) = pb.forward(&theta)?;
    evaluations += 1;
    let mut res = pb.residual(&u);
    let mut gap = u.distance(h, weight)?;
    consider(score(g, &u)?, &mut best);

    let mut trace = Vec::with_capacity(opts.schedule.len());
    for &lam in &opts.schedule {
        let mut obj = quad(&m, &theta) + lam * sq(&res);
        let mut damping = 1e-3;
        for _ in 0..opts.max_inner {
            let jac = pb.jacobian(&theta, &res)?;
            evaluations += theta.len();
            let r = DVector::from_column_slice(&res);
            let t = DVector::from_column_slice(&theta);
            let a = &m + (jac.transpose() * &jac) * (2.0 * lam);
            let grad = &m * &t + jac.transpose() * r * (2.0 * lam);
            let mut accepted = false;
            for _ in 0..12 {
                let mut lhs = a.clone();
                for d in 0..theta.len() {
                    lhs[(d, d)] += damping * a[(d, d)].max(1e-300);
                }
                let step = solve_spd(lhs, &(-&grad))?;
                let mut trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                ball(&mut trial);
                let (g, u) = pb.forward(&trial)?;
                evaluations += 1;
                let trial_res = pb.residual(&u);
                let trial_obj = quad(&m, &trial) + lam * sq(&trial_res);
                let trial_gap = u.distance(h, weight)?;
                consider(score(g, &u)?, &mut best);
                if trial_obj < obj {
                    let gain = obj - trial_obj;
                    theta = trial;
                    res = trial_res;
                    gap = trial_gap;
                    obj = trial_obj;
                    damping = (damping / 3.0).max(1e-12);
                    accepted = gain > 1e-13 * obj.max(1e-300);
                    break;
                }
                damping *= 4.0;
            }
            if !accepted {
                break;
            }
        }
        trace.push((lam, quad(&m, &theta) + lam * gap * gap));
    }

    let best = best.expect("at least one candidate is scored");
    Ok(RateResult {
        value: best.value,
        feasible: best.gap <= opts.gap_tol,
        target_gap: best.gap,
        argmin: best.control,
        penalty_trace: trace,
        evaluations,
    })
}
