//! Picard solver for the controlled skeleton equation
//!
//! ```text
//! u = P u0 + D[f(., u) + sigma(., u) gdot] + z,   z = obstacle solution for -v
//! ```
//!
//! Each iterate forms the mild-form field `v_n` from the previous iterate,
//! solves the obstacle problem with obstacle `-v_n` and sets `u_n = z_n + v_n`.
//! The fixed point is `Gamma0(g)`.

mod coefficients;

pub use coefficients::{CoefficientParams, Coefficients, Constants, NodeCoefficients};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::grid::{Control, Field, Grid, WeightParams};
use crate::heat_kernel::HeatPropagator;
use crate::obstacle::{solve_obstacle, ObstacleProblem, ReflectionMeasure, Stepper};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkeletonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Picard iterations restart on consecutive windows of this length.
    pub window: f64,
    /// Obstacle stepper; explicit on stable grids when absent.
    pub stepper: Option<Stepper>,
    /// Weight of the convergence norm; the coefficient rate `r` when absent.
    pub weight: Option<WeightParams>,
    /// Start from the zero field instead of `u0` held constant.
    pub zero_seed: bool,
    pub exec: Exec,
}

impl Default for SkeletonOptions {
    fn default() -> Self {
        SkeletonOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            window: 1.0,
            stepper: None,
            weight: None,
            zero_seed: false,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkeletonSolution {
    pub u: Field,
    pub eta: ReflectionMeasure,
    /// Picard iterations summed over windows.
    pub iterates: usize,
    /// Largest final increment over windows.
    pub final_gap: f64,
    /// Increment sequence of every window.
    pub gaps: Vec<Vec<f64>>,
}

/// One Picard iterate.
#[derive(Clone, Debug)]
pub struct PicardStep {
    pub v: Field,
    pub u: Field,
    pub eta: ReflectionMeasure,
}

fn check_u0(grid: &Grid, u0: &[f64]) -> Result<()> {
    if u0.len() != grid.n_nodes() {
        return Err(invalid(format!("u0 has {} nodes, grid has {}", u0.len(), grid.n_nodes())));
    }
    if u0[0] != 0.0 || u0.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("u0 must be finite, nonnegative and vanish at x = 0"));
    }
    Ok(())
}

/// Solver bound to one grid; keeps the heat propagator across iterations.
struct Picard<'a> {
    prop: HeatPropagator,
    g: &'a Control,
    coeffs: &'a Coefficients,
    weight: WeightParams,
    stepper: Stepper,
}

impl Picard<'_> {
    fn step(&self, u0: &[f64], u_prev: &Field) -> Result<PicardStep> {
        let grid = *self.prop.grid();
        let n = grid.n_nodes();
        let nc = self.coeffs.at_nodes(&grid);
        let mut source = Field::zeros(grid);
        let mut gdot = vec![0.0; n];
        for i in 0..grid.nt() {
            self.g.node_row(i, &mut gdot);
            let prev = u_prev.row(i);
            for (j, s) in source.row_mut(i).iter_mut().enumerate() {
                *s = nc.f(j, prev[j]) + nc.sigma(j, prev[j]) * gdot[j];
            }
        }
        let v = self.prop.convolve(u0, &source)?;
        let problem = ObstacleProblem::new(v.scaled(-1.0), self.weight, self.stepper)?;
        let (z, eta) = solve_obstacle(&problem)?;
        let u = z.try_add(&v)?;
        Ok(PicardStep { v, u, eta })
    }

    fn solve(
        &self,
        u0: &[f64],
        tol: f64,
        max_iter: usize,
        zero_seed: bool,
    ) -> Result<(Field, ReflectionMeasure, Vec<f64>)> {
        let grid = *self.prop.grid();
        let mut prev = if zero_seed { Field::zeros(grid) } else { Field::constant_in_time(grid, u0)? };
        let mut gaps = Vec::new();
        for _ in 0..max_iter {
            let step = self.step(u0, &prev)?;
            let gap = step.u.distance(&prev, self.weight)?;
            gaps.push(gap);
            if gap < tol {
                return Ok((step.u, step.eta, gaps));
            }
            prev = step.u;
        }
        Err(Error::NonConvergence { iterations: max_iter, last_gap: *gaps.last().unwrap_or(&f64::NAN), gaps })
    }
}

/// A single Picard iterate from `u_prev`.
pub fn picard_step(
    u_prev: &Field,
    g: &Control,
    u0: &[f64],
    coeffs: &Coefficients,
    opts: &SkeletonOptions,
) -> Result<PicardStep> {
    let grid = *u_prev.grid();
    grid.check_same(g.grid(), "picard control")?;
    check_u0(&grid, u0)?;
    let picard = Picard {
        prop: HeatPropagator::with_exec(grid, opts.exec),
        g,
        coeffs,
        weight: opts.weight.unwrap_or(WeightParams { r: coeffs.r() }),
        stepper: opts.stepper.unwrap_or_else(|| Stepper::for_grid(&grid)),
    };
    picard.step(u0, u_prev)
}

/// Fixed point of the Picard map, restarted on windows of length
/// `opts.window`.
pub fn solve_skeleton(
    g: &Control,
    u0: &[f64],
    coeffs: &Coefficients,
    opts: &SkeletonOptions,
) -> Result<SkeletonSolution> {
    let grid = *g.grid();
    check_u0(&grid, u0)?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(invalid("skeleton solver needs tol > 0 and max_iter >= 1"));
    }
    if !(opts.window > 0.0) {
        return Err(invalid("restart window must be positive"));
    }
    let weight = opts.weight.unwrap_or(WeightParams { r: coeffs.r() });
    let stepper = opts.stepper.unwrap_or_else(|| Stepper::for_grid(&grid));
    let per_window = ((opts.window / grid.dt()) * (1.0 + 1e-12)).floor().max(1.0) as usize;

    let n = grid.n_nodes();
    let mut u_values = Vec::with_capacity(grid.n_times() * n);
    let mut pieces = Vec::new();
    let mut gaps = Vec::new();
    let mut start_state = u0.to_vec();
    let mut start = 0;
    while start < grid.nt() {
        let end = (start + per_window).min(grid.nt());
        let sub = if start == 0 && end == grid.nt() { g.clone() } else { g.time_slice(start..end)? };
        let picard =
            Picard { prop: HeatPropagator::with_exec(*sub.grid(), opts.exec), g: &sub, coeffs, weight, stepper };
        let (u, eta, window_gaps) = picard.solve(&start_state, opts.tol, opts.max_iter, opts.zero_seed)?;
        let skip = if start == 0 { 0 } else { n };
        u_values.extend_from_slice(&u.values()[skip..]);
        start_state = u.row(u.grid().nt()).to_vec();
        // restarted windows begin from the clipped end state
        start_state[0] = 0.0;
        start_state.iter_mut().for_each(|v| *v = v.max(0.0));
        pieces.push(eta);
        gaps.push(window_gaps);
        start = end;
    }
    let u = Field::from_values(grid, u_values)?;
    let eta = ReflectionMeasure::concat(grid, &pieces)?;
    let iterates = gaps.iter().map(Vec::len).sum();
    let final_gap = gaps.iter().filter_map(|g| g.last().copied()).fold(0.0, f64::max);
    Ok(SkeletonSolution { u, eta, iterates, final_gap, gaps })
}

/// `Gamma0(g)` with default tolerances.
pub fn gamma0(g: &Control, u0: &[f64], coeffs: &Coefficients) -> Result<Field> {
    Ok(solve_skeleton(g, u0, coeffs, &SkeletonOptions::default())?.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_kernel::HeatPropagator;
    use crate::obstacle::complementarity_residual;

    fn grid() -> Grid {
        Grid::new(0.5, 4.0, 100, 20).unwrap()
    }

    fn u0(g: &Grid) -> Vec<f64> {
        g.nodes().iter().map(|x| x * (-x).exp()).collect()
    }

    fn affine() -> Coefficients {
        Coefficients::new(CoefficientParams { a: -0.8, b: 0.3, big_r: 0.6, delta: 0.0, c: 0.2, d: 0.5, r: 0.5 })
            .unwrap()
    }

    #[test]
    fn no_forcing_gives_heat_flow_in_two_iterations() {
        let g = grid();
        let u0 = u0(&g);
        let c = Coefficients::new(CoefficientParams { big_r: 0.7, c: 0.3, d: 1.0, ..Default::default() }).unwrap();
        let sol = solve_skeleton(&Control::zeros(g), &u0, &c, &SkeletonOptions::default()).unwrap();
        let heat = HeatPropagator::new(g).initial_part(&u0).unwrap();
        assert_eq!(sol.iterates, 2);
        assert_eq!(sol.u, heat);
        assert!(sol.eta.is_zero());
    }

    #[test]
    fn constant_pushdown_is_absorbed_by_reflection() {
        let g = grid();
        let c = Coefficients::new(CoefficientParams { b: -1.5, ..Default::default() }).unwrap();
        let zero = Field::zeros(g);
        let step =
            picard_step(&zero, &Control::zeros(g), &vec![0.0; g.n_nodes()], &c, &SkeletonOptions::default()).unwrap();
        assert!(step.u.max_abs() < 1e-12);
        // total pushdown c T over the interior nodes, modulo the boundary layer at x = L
        let expected = 1.5 * g.t_final() * g.length();
        let mass = step.eta.total_mass();
        assert!(mass > 0.8 * expected && mass < 1.05 * expected, "{mass} vs {expected}");
    }

    #[test]
    fn fixed_point_is_nonnegative_and_complementary() {
        let g = grid();
        let gd = Control::from_fn(g, |t, x| 3.0 * (6.0 * t).sin() * (-x).exp() - 1.0);
        let c = Coefficients::new(CoefficientParams { b: -0.6, ..*affine().params() }).unwrap();
        let sol = solve_skeleton(&gd, &u0(&g), &c, &SkeletonOptions::default()).unwrap();
        assert!(sol.u.min_value() >= -1e-10);
        assert!(sol.eta.total_mass() > 0.0);
        assert!((0..g.n_times()).all(|i| sol.u.get(i, 0) == 0.0));
        let res = complementarity_residual(&sol.u, &Field::zeros(g), &sol.eta).unwrap();
        let w = WeightParams::default();
        assert!(res.abs() <= 1e-8 * sol.eta.total_mass() * sol.u.norm(w));
        for w in sol.gaps[0].windows(2).skip(1) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn seeds_converge_to_the_same_point() {
        let g = grid();
        let gd = Control::from_fn(g, |t, x| (3.0 * t).cos() * x.min(1.0));
        let a = solve_skeleton(&gd, &u0(&g), &affine(), &SkeletonOptions::default()).unwrap();
        let opts = SkeletonOptions { zero_seed: true, ..Default::default() };
        let b = solve_skeleton(&gd, &u0(&g), &affine(), &opts).unwrap();
        assert!(a.u.distance(&b.u, WeightParams { r: 0.5 }).unwrap() < 2.0 * DEFAULT_TOL);
    }

    #[test]
    fn windows_restart_for_long_horizons() {
        let g = Grid::new(2.5, 4.0, 500, 20).unwrap();
        let gd = Control::from_fn(g, |t, _| t.sin());
        let sol = solve_skeleton(&gd, &u0(&g), &affine(), &SkeletonOptions::default()).unwrap();
        assert_eq!(sol.gaps.len(), 3);
        assert_eq!(sol.u.grid(), &g);
        let one = SkeletonOptions { window: 10.0, ..Default::default() };
        let whole = solve_skeleton(&gd, &u0(&g), &affine(), &one).unwrap();
        assert_eq!(whole.gaps.len(), 1);
        // restarting only changes the lattice quadrature of the history
        let w = WeightParams::default();
        assert!(sol.u.distance(&whole.u, w).unwrap() < 2e-2 * whole.u.norm(w));
    }

    #[test]
    fn gamma0_is_deterministic() {
        let g = grid();
        let gd = Control::from_fn(g, |t, x| t - x * 0.1);
        let a = gamma0(&gd, &u0(&g), &affine()).unwrap();
        let b = gamma0(&gd, &u0(&g), &affine()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_convergence_carries_gaps() {
        let g = grid();
        let gd = Control::from_fn(g, |t, _| t);
        let opts = SkeletonOptions { max_iter: 2, ..Default::default() };
        match solve_skeleton(&gd, &u0(&g), &affine(), &opts) {
            Err(Error::NonConvergence { iterations, gaps, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(gaps.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_initial_data_is_rejected() {
        let g = grid();
        let mut bad = u0(&g);
        bad[3] = -1.0;
        assert!(gamma0(&Control::zeros(g), &bad, &affine()).is_err());
    }
}
