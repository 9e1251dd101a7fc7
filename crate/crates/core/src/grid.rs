//! Space-time lattice, lattice fields, Cameron–Martin controls and weighted
//! sup-norms.
//!
//! The half-line is truncated to `[0, L]`. Nodes sit at `x_j = j dx` for
//! `j = 0..=nx` and times at `t_i = i dt` for `i = 0..=nt`. Fields live on
//! nodes; controls are piecewise constant on the `nt x nx` cells
//! `[t_i, t_{i+1}) x [x_j, x_{j+1})`.

use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    t_final: f64,
    length: f64,
    nt: usize,
    nx: usize,
}

/// Raw serialized form of a [`Grid`]; validated on conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_final: f64,
    pub length: f64,
    pub nt: usize,
    pub nx: usize,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        Grid::new(s.t_final, s.length, s.nt, s.nx)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec { t_final: g.t_final, length: g.length, nt: g.nt, nx: g.nx }
    }
}

impl Grid {
    pub fn new(t_final: f64, length: f64, nt: usize, nx: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(invalid(format!("final time must be positive, got {t_final}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid(format!("length must be positive, got {length}")));
        }
        if nt < 1 {
            return Err(invalid("nt must be at least 1"));
        }
        if nx < 2 {
            return Err(invalid("nx must be at least 2"));
        }
        Ok(Grid { t_final, length, nt, nx })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }
    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }
    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }
    pub fn n_times(&self) -> usize {
        self.nt + 1
    }
    pub fn n_nodes(&self) -> usize {
        self.nx + 1
    }

    /// `dt / dx^2`.
    pub fn courant(&self) -> f64 {
        let dx = self.dx();
        self.dt() / (dx * dx)
    }

    /// Whether the explicit stepper is stable, `dt <= dx^2 / 2`.
    pub fn explicit_stable(&self) -> bool {
        self.courant() <= 0.5 * (1.0 + 1e-12)
    }

    /// Grid with `nt * time_factor` steps and `nx * space_factor` cells.
    pub fn refined(&self, time_factor: usize, space_factor: usize) -> Grid {
        Grid { nt: self.nt * time_factor, nx: self.nx * space_factor, ..*self }
    }

    /// Same spatial lattice on `[0, nt' dt]`.
    pub fn with_steps(&self, nt: usize) -> Result<Grid> {
        Grid::new(nt as f64 * self.dt(), self.length, nt, self.nx)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.nx).map(|j| self.x(j)).collect()
    }

    pub(crate) fn same_as(&self, other: &Grid) -> bool {
        self.nt == other.nt
            && self.nx == other.nx
            && (self.t_final - other.t_final).abs() <= 1e-12 * self.t_final
            && (self.length - other.length).abs() <= 1e-12 * self.length
    }

    pub(crate) fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what}: {self:?} vs {other:?}")))
        }
    }
}

/// Exponential weight rate `r` of the norms `sup_x e^{-r x} |u(x)|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub r: f64,
}

impl WeightParams {
    pub fn new(r: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(invalid("weight rate must be finite"));
        }
        Ok(WeightParams { r })
    }

    pub fn weights(&self, grid: &Grid) -> Vec<f64> {
        (0..=grid.nx()).map(|j| (-self.r * grid.x(j)).exp()).collect()
    }
}

/// Sub-lattice over which a weighted sup-norm is taken.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub times: Range<usize>,
    pub nodes: Range<usize>,
}

impl Window {
    pub fn full(grid: &Grid) -> Self {
        Window { times: 0..grid.n_times(), nodes: 0..grid.n_nodes() }
    }

    pub fn point(i: usize, j: usize) -> Self {
        Window { times: i..i + 1, nodes: j..j + 1 }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if self.times.is_empty() || self.nodes.is_empty() {
            return Err(invalid("empty norm window"));
        }
        if self.times.end > grid.n_times() || self.nodes.end > grid.n_nodes() {
            return Err(invalid(format!("norm window {self:?} exceeds grid")));
        }
        Ok(())
    }
}

/// Scalar lattice on the nodes of a [`Grid`], row-major by time.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field { grid, values: vec![0.0; grid.n_times() * grid.n_nodes()] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = Field::zeros(grid);
        for i in 0..grid.n_times() {
            let t = grid.t(i);
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = f(t, grid.x(j));
            }
        }
        out
    }

    /// Field whose every time row equals `profile`.
    pub fn constant_in_time(grid: Grid, profile: &[f64]) -> Result<Self> {
        if profile.len() != grid.n_nodes() {
            return Err(invalid(format!("profile has {} nodes, grid has {}", profile.len(), grid.n_nodes())));
        }
        let mut values = Vec::with_capacity(grid.n_times() * grid.n_nodes());
        for _ in 0..grid.n_times() {
            values.extend_from_slice(profile);
        }
        Ok(Field { grid, values })
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_times() * grid.n_nodes() {
            return Err(invalid(format!("expected {} values, got {}", grid.n_times() * grid.n_nodes(), values.len())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite field value at flat index {k}")));
        }
        Ok(Field { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_nodes() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.grid.n_nodes();
        self.values[i * n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.n_nodes();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn try_add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid, "field arithmetic")?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Field { grid: self.grid, values })
    }

    /// `max_{i <= up_to, j} e^{-r x_j} |u[i][j]|`. With `up_to = nt` this is the
    /// lattice version of the `C_r^T` norm.
    pub fn weighted_sup_norm(&self, w: WeightParams, up_to: usize) -> Result<f64> {
        if up_to > self.grid.nt() {
            return Err(invalid(format!("time index {up_to} exceeds nt = {}", self.grid.nt())));
        }
        self.weighted_sup_norm_in(w, &Window { times: 0..up_to + 1, nodes: 0..self.grid.n_nodes() })
    }

    /// Lattice `C_r^T` norm over the whole grid.
    pub fn norm(&self, w: WeightParams) -> f64 {
        self.weighted_sup_norm_in(w, &Window::full(&self.grid)).expect("full window is valid")
    }

    /// Weighted sup-norm restricted to a sub-lattice.
    pub fn weighted_sup_norm_in(&self, w: WeightParams, window: &Window) -> Result<f64> {
        window.check(&self.grid)?;
        let weights = w.weights(&self.grid);
        let mut m = 0.0f64;
        for i in window.times.clone() {
            let row = self.row(i);
            for j in window.nodes.clone() {
                m = m.max(weights[j] * row[j].abs());
            }
        }
        Ok(m)
    }

    /// Weighted sup-norm of `self - other` without allocating the difference.
    pub fn distance(&self, other: &Field, w: WeightParams) -> Result<f64> {
        self.grid.check_same(&other.grid, "distance")?;
        let weights = w.weights(&self.grid);
        let n = self.grid.n_nodes();
        let mut m = 0.0f64;
        for (k, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            m = m.max(weights[k % n] * (a - b).abs());
        }
        Ok(m)
    }

    /// Restriction to the lattice of a grid refined by the given factors is
    /// the inverse of this: samples every `time_factor`-th row and
    /// `space_factor`-th node.
    pub fn coarsened(&self, time_factor: usize, space_factor: usize) -> Result<Field> {
        let g = self.grid;
        if time_factor == 0
            || space_factor == 0
            || !g.nt().is_multiple_of(time_factor)
            || !g.nx().is_multiple_of(space_factor)
        {
            return Err(invalid("coarsening factors must divide nt and nx"));
        }
        let coarse = Grid::new(g.t_final(), g.length(), g.nt() / time_factor, g.nx() / space_factor)?;
        Ok(Field::from_fn_indexed(coarse, |i, j| self.get(i * time_factor, j * space_factor)))
    }

    pub fn from_fn_indexed(grid: Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = grid.n_nodes();
        let values = (0..grid.n_times() * n).map(|k| f(k / n, k % n)).collect();
        Field { grid, values }
    }

    /// Writes `t,x,<column>` rows, row-major by time, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, column: &str) -> Result<()> {
        writeln!(out, "t,x,{column}")?;
        for i in 0..self.grid.n_times() {
            let t = self.grid.t(i);
            for (j, v) in self.row(i).iter().enumerate() {
                writeln!(out, "{},{},{}", fmt17(t), fmt17(self.grid.x(j)), fmt17(*v))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: Grid, input: R) -> Result<Field> {
        let values = read_value_column(input, grid.n_times() * grid.n_nodes())?;
        Field::from_values(grid, values)
    }
}

/// Piecewise-constant control density `gdot` on the `nt x nx` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    grid: Grid,
    gdot: Vec<f64>,
}

impl Control {
    pub fn zeros(grid: Grid) -> Self {
        Control { grid, gdot: vec![0.0; grid.nt() * grid.nx()] }
    }

    /// Samples `f(t, x)` at cell midpoints.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let (dt, dx) = (grid.dt(), grid.dx());
        let mut gdot = Vec::with_capacity(grid.nt() * grid.nx());
        for i in 0..grid.nt() {
            let t = (i as f64 + 0.5) * dt;
            for j in 0..grid.nx() {
                gdot.push(f(t, (j as f64 + 0.5) * dx));
            }
        }
        Control { grid, gdot }
    }

    /// Evaluates `f(i, j, t, x)` at the midpoint `(t, x)` of every cell `(i, j)`.
    pub fn from_fn_cells(grid: Grid, mut f: impl FnMut(usize, usize, f64, f64) -> f64) -> Self {
        let (dt, dx) = (grid.dt(), grid.dx());
        let mut gdot = Vec::with_capacity(grid.nt() * grid.nx());
        for i in 0..grid.nt() {
            for j in 0..grid.nx() {
                gdot.push(f(i, j, (i as f64 + 0.5) * dt, (j as f64 + 0.5) * dx));
            }
        }
        Control { grid, gdot }
    }

    pub fn from_values(grid: Grid, gdot: Vec<f64>) -> Result<Self> {
        if gdot.len() != grid.nt() * grid.nx() {
            return Err(invalid(format!("expected {} control cells, got {}", grid.nt() * grid.nx(), gdot.len())));
        }
        if gdot.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite control value"));
        }
        Ok(Control { grid, gdot })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.gdot
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.gdot[i * self.grid.nx() + j]
    }

    /// Mean of `gdot` over the dual cell `[x_j - dx/2, x_j + dx/2] ∩ [0, L]`
    /// during time step `i`; this is the forcing seen by node `j`.
    #[inline]
    pub fn node_value(&self, i: usize, j: usize) -> f64 {
        let nx = self.grid.nx();
        let row = &self.gdot[i * nx..(i + 1) * nx];
        if j == 0 {
            row[0]
        } else if j >= nx {
            row[nx - 1]
        } else {
            0.5 * (row[j - 1] + row[j])
        }
    }

    /// Node forcing for every node of time step `i`.
    pub fn node_row(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.node_value(i, j);
        }
    }

    /// Cameron–Martin norm: the exact `L^2` norm of the step function.
    pub fn cm_norm(&self) -> f64 {
        let s: f64 = self.gdot.iter().map(|v| v * v).sum();
        (s * self.grid.dt() * self.grid.dx()).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Control {
        Control { grid: self.grid, gdot: self.gdot.iter().map(|v| c * v).collect() }
    }

    pub fn try_add(&self, other: &Control) -> Result<Control> {
        self.grid.check_same(&other.grid, "control sum")?;
        Ok(Control { grid: self.grid, gdot: self.gdot.iter().zip(&other.gdot).map(|(a, b)| a + b).collect() })
    }

    /// Radial projection onto the ball `S_N = { ||g||_H <= N }`.
    pub fn project_to_sn(&self, n: f64) -> Result<Control> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid(format!("ball radius must be positive, got {n}")));
        }
        let norm = self.cm_norm();
        if norm <= n {
            return Ok(self.clone());
        }
        Ok(self.scaled(n / norm))
    }

    /// Restriction to time steps `range` on the correspondingly shortened grid.
    pub fn time_slice(&self, range: Range<usize>) -> Result<Control> {
        let grid = self.grid.with_steps(range.len())?;
        let nx = self.grid.nx();
        Control::from_values(grid, self.gdot[range.start * nx..range.end * nx].to_vec())
    }

    /// Writes `t,x,value` rows at cell midpoints.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,value")?;
        let (dt, dx) = (self.grid.dt(), self.grid.dx());
        for i in 0..self.grid.nt() {
            for j in 0..self.grid.nx() {
                let t = (i as f64 + 0.5) * dt;
                let x = (j as f64 + 0.5) * dx;
                writeln!(out, "{},{},{}", fmt17(t), fmt17(x), fmt17(self.cell(i, j)))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: Grid, input: R) -> Result<Control> {
        let values = read_value_column(input, grid.nt() * grid.nx())?;
        Control::from_values(grid, values)
    }
}

/// Decimal scientific notation with 17 significant digits; round-trips f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_value_column<R: BufRead>(input: R, expected: usize) -> Result<Vec<f64>> {
    let mut lines = input.lines();
    match lines.next() {
        Some(h) => {
            let h = h?;
            if h.split(',').count() != 3 {
                return Err(Error::Csv(format!("unexpected header {h:?}")));
            }
        }
        None => return Err(Error::Csv("empty input".into())),
    }
    let mut values = Vec::with_capacity(expected);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or_default();
        let v: f64 = last.trim().parse().map_err(|e| Error::Csv(format!("row {}: {e}", n + 2)))?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::Csv(format!("expected {expected} rows, found {}", values.len())));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn make_grid_examples() {
        let g = Grid::new(1.0, 10.0, 1000, 100).unwrap();
        assert!((g.dt() - 0.001).abs() < 1e-15);
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert!(g.explicit_stable());

        let g = Grid::new(1.0, 10.0, 10, 100).unwrap();
        assert!((g.dt() - 0.1).abs() < 1e-15);
        assert!(!g.explicit_stable());

        assert!(matches!(Grid::new(0.0, 1.0, 1, 2), Err(Error::InvalidArgument(_))));
        assert!(Grid::new(1.0, -1.0, 1, 2).is_err());
        assert!(Grid::new(1.0, 1.0, 0, 2).is_err());
        assert!(Grid::new(1.0, 1.0, 1, 1).is_err());
    }

    #[test]
    fn grid_serde_validates() {
        let g: Grid = serde_json::from_str(r#"{"t_final":1.0,"length":2.0,"nt":4,"nx":8}"#).unwrap();
        assert_eq!(g.nx(), 8);
        assert!(serde_json::from_str::<Grid>(r#"{"t_final":0.0,"length":2.0,"nt":4,"nx":8}"#).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        let g = Grid::new(1.0, 4.0, 5, 8).unwrap();
        let w = WeightParams::new(0.7).unwrap();
        assert_eq!(Field::zeros(g).weighted_sup_norm(w, 5).unwrap(), 0.0);
        let f = Field::from_fn(g, |_, x| (0.7 * x).exp());
        assert!((f.norm(w) - 1.0).abs() < 1e-14);
        assert!(f.weighted_sup_norm(w, 6).is_err());
    }

    #[test]
    fn weighted_norm_matches_exhaustive_scan() {
        let g = Grid::new(1.0, 1.0, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Field::from_fn(g, |_, _| rng.random_range(-5.0..5.0));
        for &r in &[-1.0, 0.0, 0.3, 2.0] {
            let w = WeightParams { r };
            for up_to in 0..=4 {
                let mut best = 0.0f64;
                for i in 0..=up_to {
                    for j in 0..=4 {
                        let x = j as f64 * 0.25;
                        best = best.max((-r * x).exp() * f.get(i, j).abs());
                    }
                }
                assert_eq!(f.weighted_sup_norm(w, up_to).unwrap(), best);
            }
        }
    }

    #[test]
    fn cm_norm_examples() {
        let g = Grid::new(2.0, 3.0, 40, 30).unwrap();
        assert_eq!(Control::zeros(g).cm_norm(), 0.0);
        let c = Control::from_fn(g, |_, _| 1.5);
        assert!((c.cm_norm() - 1.5 * (2.0f64 * 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_control_norm_is_independent_of_frequency() {
        let t_final = 2.0;
        for &nt in &[64usize, 128, 256] {
            let g = Grid::new(t_final, 4.0, nt, 40).unwrap();
            for n in [1usize, 2, 7, 16, 31] {
                let c = Control::from_fn(g, |t, x| {
                    if x <= 1.0 {
                        (n as f64 * std::f64::consts::PI * t / t_final).sin()
                    } else {
                        0.0
                    }
                });
                assert!((c.cm_norm() - (t_final / 2.0).sqrt()).abs() < 1e-12, "nt={nt} n={n}");
            }
        }
    }

    #[test]
    fn projection_examples() {
        let g = Grid::new(1.0, 1.0, 10, 10).unwrap();
        let zero = Control::zeros(g);
        assert_eq!(zero.project_to_sn(1.0).unwrap(), zero);
        let two = Control::from_fn(g, |_, _| 2.0);
        let p = two.project_to_sn(1.0).unwrap();
        assert!(p.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let half = Control::from_fn(g, |_, _| 0.5);
        assert_eq!(half.project_to_sn(1.0).unwrap().values(), half.values());
        assert!(half.project_to_sn(0.0).is_err());
    }

    #[test]
    fn node_value_averages_adjacent_cells() {
        let g = Grid::new(1.0, 1.0, 2, 4).unwrap();
        let c = Control::from_values(g, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 8.0]).unwrap();
        assert_eq!(c.node_value(0, 0), 1.0);
        assert_eq!(c.node_value(0, 2), 2.5);
        assert_eq!(c.node_value(0, 4), 4.0);
        assert_eq!(c.node_value(1, 3), 4.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = Grid::new(0.3, 1.7, 3, 5).unwrap();
        let f = Field::from_fn(g, |t, x| (t * 13.0).sin() * (x * 7.1).exp() / 3.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf, "value").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,value\n"));
        let back = Field::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);

        let c = Control::from_fn(g, |t, x| t - x);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(Control::read_csv(g, buf.as_slice()).unwrap(), c);
    }

    fn random_field(g: Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(g, |_, _| rng.random_range(-3.0..3.0))
    }

    proptest! {
        #[test]
        fn norm_is_absolutely_homogeneous(seed in 0u64..1000, c in -10.0f64..10.0, r in -1.0f64..1.0) {
            let g = Grid::new(1.0, 2.0, 6, 7).unwrap();
            let f = random_field(g, seed);
            let w = WeightParams { r };
            let lhs = f.scaled(c).norm(w);
            let rhs = c.abs() * f.norm(w);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn triangle_inequality(s1 in 0u64..1000, s2 in 0u64..1000, r in -1.0f64..1.0) {
            let g = Grid::new(1.0, 2.0, 6, 7).unwrap();
            let (a, b) = (random_field(g, s1), random_field(g, s2 + 5000));
            let w = WeightParams { r };
            prop_assert!(a.try_add(&b).unwrap().norm(w) <= a.norm(w) + b.norm(w) + 1e-12);
        }

        #[test]
        fn norm_nondecreasing_in_horizon(seed in 0u64..1000, r in -1.0f64..1.0) {
            let g = Grid::new(1.0, 2.0, 6, 7).unwrap();
            let f = random_field(g, seed);
            let w = WeightParams { r };
            let norms: Vec<f64> = (0..=6).map(|t| f.weighted_sup_norm(w, t).unwrap()).collect();
            prop_assert!(norms.windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn projection_lands_in_ball(seed in 0u64..1000, scale in 0.0f64..100.0, n in 0.01f64..10.0) {
            let g = Grid::new(1.0, 2.0, 6, 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Control::from_fn(g, |_, _| scale * rng.random_range(-1.0..1.0));
            let p = c.project_to_sn(n).unwrap();
            prop_assert!(p.cm_norm() <= n * (1.0 + 1e-12));
        }
    }
}
