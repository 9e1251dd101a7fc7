//! Heat equation on `[0, L]` constrained to stay above an obstacle `v`:
//! find `(z, eta)` with `z >= v`, `eta >= 0`, `int (z - v) d eta = 0` and
//! `dz/dt = z'' + eta`, `z(0, .) = 0`, `z(t, 0) = z(t, L) = 0`.
//!
//! Two steppers are provided. The explicit one projects the Euler step onto
//! `{z >= v}` and records the projection deficit as the reflection mass. The
//! implicit one solves the linear complementarity problem of a backward
//! Euler step by projected successive over-relaxation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{fmt17, Field, Grid, WeightParams};

/// Convergence target of the projected relaxation.
pub const PSOR_TOL: f64 = 1e-10;
const PSOR_MAX_SWEEPS: usize = 200_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    /// Projected forward Euler; needs `dt <= dx^2 / 2`.
    #[default]
    Explicit,
    /// Backward Euler complementarity step solved by projected relaxation.
    Implicit,
}

impl Stepper {
    /// Explicit on stable grids, implicit otherwise.
    pub fn for_grid(grid: &Grid) -> Stepper {
        if grid.explicit_stable() {
            Stepper::Explicit
        } else {
            Stepper::Implicit
        }
    }
}

/// Per-node reflection masses; row `i` holds the mass added during the step
/// ending at `t_i`, so row 0 is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionMeasure {
    grid: Grid,
    mass: Vec<f64>,
}

impl ReflectionMeasure {
    pub fn zeros(grid: Grid) -> Self {
        ReflectionMeasure { grid, mass: vec![0.0; grid.n_times() * grid.n_nodes()] }
    }

    pub fn from_values(grid: Grid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.n_times() * grid.n_nodes() {
            return Err(invalid("reflection mass has the wrong size"));
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(invalid("reflection mass must be finite and nonnegative"));
        }
        Ok(ReflectionMeasure { grid, mass })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.mass
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.grid.n_nodes() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.mass[i * n..(i + 1) * n]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.n_nodes();
        &mut self.mass[i * n..(i + 1) * n]
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.mass.iter().all(|&m| m == 0.0)
    }

    /// Concatenates measures of consecutive time windows; the first row of
    /// every later piece overlaps the last row of the previous one.
    pub(crate) fn concat(grid: Grid, pieces: &[ReflectionMeasure]) -> Result<ReflectionMeasure> {
        let n = grid.n_nodes();
        let mut mass = Vec::with_capacity(grid.n_times() * n);
        for (k, p) in pieces.iter().enumerate() {
            let skip = if k == 0 { 0 } else { n };
            mass.extend_from_slice(&p.mass[skip..]);
        }
        ReflectionMeasure::from_values(grid, mass)
    }

    /// Writes `t,x,mass` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,mass")?;
        for i in 0..self.grid.n_times() {
            for (j, m) in self.row(i).iter().enumerate() {
                writeln!(out, "{},{},{}", fmt17(self.grid.t(i)), fmt17(self.grid.x(j)), fmt17(*m))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleProblem {
    v: Field,
    weight: WeightParams,
    stepper: Stepper,
}

impl ObstacleProblem {
    /// Checks `v(t, 0) = 0` and `v(0, .) <= 0`.
    pub fn new(v: Field, weight: WeightParams, stepper: Stepper) -> Result<Self> {
        let g = *v.grid();
        for i in 0..g.n_times() {
            if v.get(i, 0) != 0.0 {
                return Err(invalid(format!("obstacle must vanish at x = 0, got {} at t index {i}", v.get(i, 0))));
            }
        }
        if let Some(j) = v.row(0).iter().position(|&x| x > 0.0) {
            return Err(invalid(format!("obstacle must be <= 0 at t = 0, got {} at node {j}", v.get(0, j))));
        }
        Ok(ObstacleProblem { v, weight, stepper })
    }

    pub fn grid(&self) -> &Grid {
        self.v.grid()
    }
    pub fn obstacle(&self) -> &Field {
        &self.v
    }
    pub fn weight(&self) -> WeightParams {
        self.weight
    }
    pub fn stepper(&self) -> Stepper {
        self.stepper
    }
}

/// Solves the obstacle problem on the lattice of `problem`.
pub fn solve_obstacle(problem: &ObstacleProblem) -> Result<(Field, ReflectionMeasure)> {
    let g = *problem.grid();
    match problem.stepper {
        Stepper::Explicit => {
            if !g.explicit_stable() {
                return Err(Error::Refused(format!(
                    "explicit obstacle stepper needs dt <= dx^2/2, got dt/dx^2 = {}",
                    g.courant()
                )));
            }
            Ok(explicit(&problem.v))
        }
        Stepper::Implicit => implicit(&problem.v),
    }
}

fn explicit(v: &Field) -> (Field, ReflectionMeasure) {
    let g = *v.grid();
    let n = g.n_nodes();
    let lam = g.courant();
    let dx = g.dx();
    let mut z = Field::zeros(g);
    let mut eta = ReflectionMeasure::zeros(g);
    let mut free = vec![0.0; n];
    for i in 0..g.nt() {
        let cur = z.row(i);
        for j in 1..n - 1 {
            free[j] = cur[j] + lam * (cur[j + 1] - 2.0 * cur[j] + cur[j - 1]);
        }
        free[0] = 0.0;
        free[n - 1] = 0.0;
        let obst = v.row(i + 1);
        let mass = eta.row_mut(i + 1);
        let next = z.row_mut(i + 1);
        for j in 0..n {
            let zn = free[j].max(obst[j]);
            next[j] = zn;
            mass[j] = (zn - free[j]) * dx;
        }
    }
    (z, eta)
}

fn implicit(v: &Field) -> Result<(Field, ReflectionMeasure)> {
    let g = *v.grid();
    let n = g.n_nodes();
    let lam = g.courant();
    let dx = g.dx();
    let diag = 1.0 + 2.0 * lam;
    // near-optimal SOR factor for the 1d Laplacian-type matrix
    let rho = 2.0 * lam / diag * (std::f64::consts::PI / (n - 1) as f64).cos();
    let omega = 2.0 / (1.0 + (1.0 - rho * rho).max(0.0).sqrt());
    let mut z = Field::zeros(g);
    let mut eta = ReflectionMeasure::zeros(g);
    let mut w = vec![0.0; n];
    for i in 0..g.nt() {
        let b: Vec<f64> = z.row(i).to_vec();
        let obst = v.row(i + 1);
        for j in 0..n {
            w[j] = b[j].max(obst[j]);
        }
        w[0] = 0.0;
        w[n - 1] = obst[n - 1].max(0.0);
        let mut sweeps = 0;
        loop {
            for j in 1..n - 1 {
                let gs = (b[j] + lam * (w[j - 1] + w[j + 1])) / diag;
                w[j] = (w[j] + omega * (gs - w[j])).max(obst[j]);
            }
            sweeps += 1;
            let res = lcp_residual(&w, &b, obst, lam);
            if res < PSOR_TOL {
                break;
            }
            if sweeps >= PSOR_MAX_SWEEPS {
                return Err(Error::NonConvergence { iterations: sweeps, last_gap: res, gaps: vec![res] });
            }
        }
        let mass = eta.row_mut(i + 1);
        for j in 1..n - 1 {
            let aw = diag * w[j] - lam * (w[j - 1] + w[j + 1]);
            // off the contact set the residual bound makes A w - b negligible
            mass[j] = if w[j] - obst[j] <= PSOR_TOL { (aw - b[j]).max(0.0) * dx } else { 0.0 };
        }
        mass[n - 1] = w[n - 1] * dx;
        z.row_mut(i + 1).copy_from_slice(&w);
    }
    Ok((z, eta))
}

/// Natural residual `max_j |min(w - v, A w - b)|` of the step complementarity problem.
fn lcp_residual(w: &[f64], b: &[f64], obst: &[f64], lam: f64) -> f64 {
    let diag = 1.0 + 2.0 * lam;
    let mut r = 0.0f64;
    for j in 1..w.len() - 1 {
        let aw = diag * w[j] - lam * (w[j - 1] + w[j + 1]) - b[j];
        r = r.max((w[j] - obst[j]).min(aw).abs());
    }
    r
}

/// Growing tent obstacle `v(t, x) = a t max(0, 1 - |x - c| / w)`.
pub fn bump_obstacle(grid: Grid, amplitude: f64, center: f64, width: f64) -> Result<Field> {
    if !(width > 0.0) || !amplitude.is_finite() || !center.is_finite() {
        return Err(invalid("bump obstacle needs finite amplitude and center and a positive width"));
    }
    Ok(Field::from_fn(grid, |t, x| amplitude * t * (1.0 - (x - center).abs() / width).max(0.0)))
}

/// `sum (z - v) * mass` over the lattice.
pub fn complementarity_residual(z: &Field, v: &Field, eta: &ReflectionMeasure) -> Result<f64> {
    z.grid().check_same(v.grid(), "complementarity z/v")?;
    z.grid().check_same(eta.grid(), "complementarity z/eta")?;
    Ok(z.values().iter().zip(v.values()).zip(eta.values()).map(|((a, b), m)| (a - b) * m).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum StabilityOutcome {
    /// The two obstacles coincide; the ratio is undefined.
    ExactMatch,
    Ratio(f64),
}

impl StabilityOutcome {
    pub fn ratio(self) -> Option<f64> {
        match self {
            StabilityOutcome::Ratio(r) => Some(r),
            StabilityOutcome::ExactMatch => None,
        }
    }
}

/// `||z1 - z2|| / ||v1 - v2||` in the lattice `C_r^T` norm.
pub fn stability_check(v1: &Field, v2: &Field, weight: WeightParams, stepper: Stepper) -> Result<StabilityOutcome> {
    let dv = v1.distance(v2, weight)?;
    if dv == 0.0 {
        return Ok(StabilityOutcome::ExactMatch);
    }
    let (z1, _) = solve_obstacle(&ObstacleProblem::new(v1.clone(), weight, stepper)?)?;
    let (z2, _) = solve_obstacle(&ObstacleProblem::new(v2.clone(), weight, stepper)?)?;
    Ok(StabilityOutcome::Ratio(z1.distance(&z2, weight)? / dv))
}

/// Weak-form defect of the heat dynamics against a test function `phi`
/// vanishing at both ends:
///
/// ```text
/// R(t_i) = int z(t_i) phi dx - int_0^{t_i} int z phi'' dx ds - sum_{k <= i} sum_j phi(x_j) mass[k][j]
/// ```
///
/// with trapezoidal quadrature in both variables. Returns `max_i |R(t_i)|`.
/// `test` returns `(phi(x), phi''(x))`.
pub fn weak_form_residual(z: &Field, eta: &ReflectionMeasure, test: impl Fn(f64) -> (f64, f64)) -> Result<f64> {
    let g = *z.grid();
    g.check_same(eta.grid(), "weak form")?;
    let n = g.n_nodes();
    let (dt, dx) = (g.dt(), g.dx());
    let (phi, phi2): (Vec<f64>, Vec<f64>) = g.nodes().into_iter().map(&test).unzip();
    let trap = |row: &[f64], w: &[f64]| -> f64 {
        let inner: f64 = (1..n - 1).map(|j| row[j] * w[j]).sum();
        dx * (inner + 0.5 * (row[0] * w[0] + row[n - 1] * w[n - 1]))
    };
    let mut time_int = 0.0;
    let mut prev = trap(z.row(0), &phi2);
    let mut eta_int = 0.0;
    let mut worst = trap(z.row(0), &phi).abs();
    for i in 1..g.n_times() {
        let cur = trap(z.row(i), &phi2);
        time_int += 0.5 * dt * (prev + cur);
        prev = cur;
        eta_int += eta.row(i).iter().zip(&phi).map(|(m, p)| m * p).sum::<f64>();
        let r = trap(z.row(i), &phi) - time_int - eta_int;
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bump(g: Grid) -> Field {
        bump_obstacle(g, 1.0, 2.0, 1.0).unwrap()
    }

    #[test]
    fn nonpositive_obstacle_gives_zero_solution() {
        let g = Grid::new(0.5, 4.0, 200, 40).unwrap();
        let v = Field::from_fn(g, |t, x| -t * x * (4.0 - x));
        for stepper in [Stepper::Explicit, Stepper::Implicit] {
            let (z, eta) =
                solve_obstacle(&ObstacleProblem::new(v.clone(), WeightParams::default(), stepper).unwrap()).unwrap();
            assert!(z.values().iter().all(|&x| x == 0.0));
            assert!(eta.is_zero());
        }
    }

    #[test]
    fn invalid_obstacles_are_rejected() {
        let g = Grid::new(0.5, 4.0, 200, 40).unwrap();
        let w = WeightParams::default();
        let at_zero = Field::from_fn(g, |t, _| t);
        assert!(ObstacleProblem::new(at_zero, w, Stepper::Explicit).is_err());
        let initial = Field::from_fn(g, |_, x| x * (4.0 - x));
        assert!(ObstacleProblem::new(initial, w, Stepper::Explicit).is_err());
    }

    #[test]
    fn unstable_explicit_grid_is_refused() {
        let g = Grid::new(1.0, 4.0, 10, 40).unwrap();
        let p = ObstacleProblem::new(Field::zeros(g), WeightParams::default(), Stepper::Explicit).unwrap();
        assert!(matches!(solve_obstacle(&p), Err(Error::Refused(_))));
        let p = ObstacleProblem::new(Field::zeros(g), WeightParams::default(), Stepper::Implicit).unwrap();
        assert!(solve_obstacle(&p).is_ok());
    }

    #[test]
    fn bump_obstacle_contact_and_complementarity() {
        let g = Grid::new(1.0, 5.0, 1000, 50).unwrap();
        let v = bump(g);
        for stepper in [Stepper::Explicit, Stepper::Implicit] {
            let (z, eta) =
                solve_obstacle(&ObstacleProblem::new(v.clone(), WeightParams::default(), stepper).unwrap()).unwrap();
            assert!(z.values().iter().zip(v.values()).all(|(a, b)| a - b >= -1e-10));
            assert!(eta.total_mass() > 0.0);
            let res = complementarity_residual(&z, &v, &eta).unwrap();
            let scale = eta.total_mass() * z.distance(&v, WeightParams::default()).unwrap();
            assert!(res.abs() < 1e-8 * scale, "{stepper:?}: {res}");
        }
    }

    #[test]
    fn explicit_and_implicit_agree_on_bump() {
        let g = Grid::new(1.0, 5.0, 2000, 50).unwrap();
        let v = bump(g);
        let w = WeightParams::default();
        let (ze, _) = solve_obstacle(&ObstacleProblem::new(v.clone(), w, Stepper::Explicit).unwrap()).unwrap();
        let (zi, _) = solve_obstacle(&ObstacleProblem::new(v, w, Stepper::Implicit).unwrap()).unwrap();
        assert!(ze.distance(&zi, w).unwrap() < 1e-2 * ze.norm(w));
    }

    #[test]
    fn identical_obstacles_signal_exact_match() {
        let g = Grid::new(1.0, 5.0, 200, 20).unwrap();
        let v = bump(g);
        let out = stability_check(&v, &v, WeightParams::default(), Stepper::Explicit).unwrap();
        assert_eq!(out, StabilityOutcome::ExactMatch);
    }

    #[test]
    fn complementarity_of_empty_measure_is_zero() {
        let g = Grid::new(1.0, 5.0, 10, 20).unwrap();
        let z = Field::from_fn(g, |t, x| t * x);
        let eta = ReflectionMeasure::zeros(g);
        assert_eq!(complementarity_residual(&z, &Field::zeros(g), &eta).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn solution_dominates_obstacle_with_nonnegative_mass(
            amp in -2.0f64..2.0, center in 1.0f64..3.0, width in 0.2f64..0.9, implicit in any::<bool>()
        ) {
            let g = Grid::new(0.5, 4.0, 200, 20).unwrap();
            let v = Field::from_fn(g, |t, x| amp * t * (1.0 - (x - center).abs() / width).max(0.0));
            let stepper = if implicit { Stepper::Implicit } else { Stepper::Explicit };
            let (z, eta) = solve_obstacle(&ObstacleProblem::new(v.clone(), WeightParams::default(), stepper).unwrap()).unwrap();
            for ((a, b), m) in z.values().iter().zip(v.values()).zip(eta.values()) {
                prop_assert!(a - b >= -1e-10);
                prop_assert!(*m >= 0.0);
                if a - b > 1e-10 {
                    prop_assert!(*m == 0.0);
                }
            }
        }
    }
}
