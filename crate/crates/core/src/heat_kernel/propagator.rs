//! Lattice approximation of the mild-form operators
//!
//! ```text
//! (P u0)(t, x)  = int_0^L G_L(t, x, y) u0(y) dy
//! (D f)(t, x)   = int_0^t int_0^L G_L(t - s, x, y) f(s, y) dy ds
//! ```
//!
//! The kernel is that of `[0, L]` with Dirichlet conditions at both ends, so
//! the lattice fields vanish at `x = L` like the finite-difference solvers.
//! Space integrals use product trapezoidal weights: the kernel is integrated
//! exactly against the piecewise-linear interpolant of the data, which stays
//! accurate when the kernel is narrower than `dx`. Time integrals use the
//! left-endpoint value of the source on each step with the kernel evaluated
//! at the mid-step lag `t_i - t_m - dt/2`, which keeps the `s -> t`
//! singularity off the lattice.

use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::grid::{Field, Grid};

use std::f64::consts::PI;

use super::{normal_cdf_diff, normal_pdf};

/// Gaussian tails beyond this many standard deviations are dropped.
const TAIL_SIGMAS: f64 = 9.0;

/// Row-banded square operator on the spatial nodes.
#[derive(Clone, Debug)]
pub struct BandedOp {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl BandedOp {
    /// Product-trapezoid discretization of `y -> G_L(tau, x_j, y)` on the
    /// nodes of `grid`, where `G_L` is the Dirichlet kernel of `[0, L]`
    /// (image series of the half-line kernel; it agrees with `G` up to terms
    /// of order `exp(-(L - x)^2 / tau)`).
    pub fn kernel(grid: &Grid, tau: f64) -> BandedOp {
        let n = grid.n_nodes();
        let h = grid.dx();
        let len = grid.length();
        let s = (2.0 * tau).sqrt();
        let reach = TAIL_SIGMAS * s;
        let images = (reach / (2.0 * len)).ceil() as i64 + 1;
        let mut first = Vec::with_capacity(n);
        let mut start = Vec::with_capacity(n + 1);
        let mut data = Vec::new();
        let mut row = Vec::new();
        let mut term = Vec::new();
        for j in 0..n {
            let x = grid.x(j);
            start.push(data.len());
            if j == 0 || j == n - 1 {
                first.push(0);
                continue;
            }
            let (lo, hi) = band(x, s, h, n);
            row.clear();
            row.resize(hi - lo + 1, 0.0);
            for k in -images..=images {
                let shift = 2.0 * k as f64 * len;
                for (center, sign) in [(x + shift, 1.0), (-x + shift, -1.0)] {
                    if center < -reach || center > len + reach {
                        continue;
                    }
                    hat_weights(center, s, h, lo, hi, &mut term);
                    row.iter_mut().zip(&term).for_each(|(r, t)| *r += sign * t);
                }
            }
            first.push(lo);
            data.extend(row.iter().map(|v| v.max(0.0)));
        }
        start.push(data.len());
        BandedOp { first, start, data }
    }

    pub fn n_entries(&self) -> usize {
        self.data.len()
    }

    /// `out[j] += scale * sum_k K[j][k] input[k]`.
    #[inline]
    pub fn apply_add(&self, input: &[f64], scale: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.data[self.start[j]..self.start[j + 1]];
            let lo = self.first[j];
            let s: f64 = row.iter().zip(&input[lo..lo + row.len()]).map(|(a, b)| a * b).sum();
            *o += scale * s;
        }
    }

    /// Dense row `j` (zeros outside the band).
    pub fn row_dense(&self, j: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        let row = &self.data[self.start[j]..self.start[j + 1]];
        out[self.first[j]..self.first[j] + row.len()].copy_from_slice(row);
        out
    }
}

/// Node range touched by a Gaussian of mean `x` and std `s`.
fn band(x: f64, s: f64, h: f64, n: usize) -> (usize, usize) {
    let lo = ((x - TAIL_SIGMAS * s) / h).floor() - 1.0;
    let hi = ((x + TAIL_SIGMAS * s) / h).ceil() + 1.0;
    let lo = lo.max(0.0) as usize;
    let hi = (hi.max(0.0) as usize).min(n - 1);
    (lo.min(hi), hi)
}

/// `out[k - lo] = int N(y; mu, s^2) psi_k(y) dy` over `[0, (n-1) h]` for the
/// hat functions `psi_k` on the uniform nodes, `k = lo..=hi`. Mass outside
/// `[y_lo, y_hi]` is dropped.
fn hat_weights(mu: f64, s: f64, h: f64, lo: usize, hi: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(hi - lo + 1, 0.0);
    for i in lo..hi {
        let a = i as f64 * h;
        let b = a + h;
        let (za, zb) = ((a - mu) / s, (b - mu) / s);
        let p = normal_cdf_diff(za, zb);
        if p == 0.0 {
            continue;
        }
        let m = s * (normal_pdf(za) - normal_pdf(zb));
        out[i - lo] += ((b - mu) * p - m) / h;
        out[i + 1 - lo] += (m + (mu - a) * p) / h;
    }
}

/// Mild-form propagator bound to one grid.
///
/// The interval kernel is applied through its sine expansion
///
/// ```text
/// G_L(t, x, y) = (2 / L) sum_k sin(k pi x / L) sin(k pi y / L) exp(-(k pi / L)^2 t)
/// ```
///
/// Projecting the piecewise-linear interpolant of the data onto the modes is
/// exact, so this reproduces the product-trapezoid lag operators of
/// [`BandedOp`] up to the mode cutoff, while the Duhamel sum collapses to a
/// one-step recursion per mode.
pub struct HeatPropagator {
    grid: Grid,
    exec: Exec,
    decay: Vec<f64>,
    proj: Vec<f64>,
    eval: Vec<f64>,
}

/// Modes are kept until `exp(-mu_k tau_min)` drops below `e^-MODE_CUTOFF`.
const MODE_CUTOFF: f64 = 40.0;

impl HeatPropagator {
    pub fn new(grid: Grid) -> Self {
        Self::with_exec(grid, Exec::default())
    }

    pub fn with_exec(grid: Grid, exec: Exec) -> Self {
        let n = grid.n_nodes();
        let nx = grid.nx();
        let len = grid.length();
        let h = grid.dx();
        let tau_min = 0.5 * grid.dt();
        let modes = (((len / PI) * (MODE_CUTOFF / tau_min).sqrt()).ceil() as usize).max(nx);
        let decay = (1..=modes).map(|k| (k as f64 * PI / len).powi(2)).collect();
        // proj[k][m] = (2 / L) int sin(w_k y) psi_m(y) dy for the hat functions psi_m
        let mut proj = vec![0.0; modes * n];
        for (k, row) in proj.chunks_mut(n).enumerate() {
            let w = (k + 1) as f64 * PI / len;
            let interior = 2.0 * (1.0 - (w * h).cos()) / (w * w * h);
            let end = 1.0 / w - (w * h).sin() / (w * w * h);
            for (m, v) in row.iter_mut().enumerate().take(nx).skip(1) {
                *v = 2.0 / len * interior * (w * m as f64 * h).sin();
            }
            row[0] = 2.0 / len * end;
            row[nx] = if k % 2 == 0 { row[0] } else { -row[0] };
        }
        // sin(k pi j / nx) only depends on k mod 2 nx, so the mode sum folds
        // onto the first nx - 1 modes
        let mut eval = vec![0.0; n * nx.saturating_sub(1)];
        for j in 1..nx {
            for k in 1..nx {
                eval[j * (nx - 1) + k - 1] = (PI * (k * j) as f64 / nx as f64).sin();
            }
        }
        HeatPropagator { grid, exec, decay, proj, eval }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn n_modes(&self) -> usize {
        self.decay.len()
    }

    fn project(&self, data: &[f64], out: &mut [f64]) {
        let n = self.grid.n_nodes();
        for (o, row) in out.iter_mut().zip(self.proj.chunks(n)) {
            *o = row.iter().zip(data).map(|(a, b)| a * b).sum();
        }
    }

    /// Nodal values of `sum_k amp[k] sin(w_k x)`.
    fn evaluate(&self, amp: &[f64], out: &mut [f64]) {
        let nx = self.grid.nx();
        if nx < 2 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mut folded = vec![0.0; nx - 1];
        for (k, a) in amp.iter().enumerate() {
            let r = (k + 1) % (2 * nx);
            if r == 0 || r == nx {
                continue;
            }
            if r < nx {
                folded[r - 1] += a;
            } else {
                folded[2 * nx - r - 1] -= a;
            }
        }
        out[0] = 0.0;
        out[nx] = 0.0;
        for (j, slot) in out.iter_mut().enumerate().take(nx).skip(1) {
            let row = &self.eval[j * (nx - 1)..(j + 1) * (nx - 1)];
            *slot = row.iter().zip(&folded).map(|(a, b)| a * b).sum();
        }
    }

    /// Evaluates every row of a `n_times x modes` amplitude table.
    fn synthesize(&self, amps: &[f64]) -> Result<Field> {
        let g = self.grid;
        let n = g.n_nodes();
        let kk = self.n_modes();
        let mut values = vec![0.0; g.n_times() * n];
        self.exec.for_each_chunk_mut(&mut values, n, |i, row| {
            self.evaluate(&amps[i * kk..(i + 1) * kk], row);
        });
        Field::from_values(g, values)
    }

    /// `row 0 = u0`, `row i = P_{t_i} u0`.
    pub fn initial_part(&self, u0: &[f64]) -> Result<Field> {
        let g = self.grid;
        if u0.len() != g.n_nodes() {
            return Err(invalid(format!("u0 has {} nodes, grid has {}", u0.len(), g.n_nodes())));
        }
        let kk = self.n_modes();
        let mut coef = vec![0.0; kk];
        self.project(u0, &mut coef);
        let mut amps = vec![0.0; g.n_times() * kk];
        self.exec.for_each_chunk_mut(&mut amps, kk, |i, row| {
            let t = g.t(i);
            for ((a, c), mu) in row.iter_mut().zip(&coef).zip(&self.decay) {
                *a = c * (-mu * t).exp();
            }
        });
        let mut out = self.synthesize(&amps)?;
        out.row_mut(0).copy_from_slice(u0);
        Ok(out)
    }

    /// `row i = sum_{m < i} dt K_{(i - m - 1/2) dt} source[m]`; row `nt` of
    /// `source` is never read.
    pub fn duhamel(&self, source: &Field) -> Result<Field> {
        let g = self.grid;
        g.check_same(source.grid(), "duhamel source")?;
        let kk = self.n_modes();
        let nt = g.nt();
        let dt = g.dt();
        // amps row i + 1 holds the projection of source row i until the recursion
        let mut amps = vec![0.0; g.n_times() * kk];
        self.exec.for_each_chunk_mut(&mut amps[kk..], kk, |i, row| {
            self.project(source.row(i), row);
        });
        let step: Vec<f64> = self.decay.iter().map(|mu| (-mu * dt).exp()).collect();
        let half: Vec<f64> = self.decay.iter().map(|mu| dt * (-0.5 * mu * dt).exp()).collect();
        for i in 1..=nt {
            let (prev, cur) = amps[(i - 1) * kk..(i + 1) * kk].split_at_mut(kk);
            for k in 0..kk {
                cur[k] = step[k] * prev[k] + half[k] * cur[k];
            }
        }
        self.synthesize(&amps)
    }

    pub fn convolve(&self, u0: &[f64], source: &Field) -> Result<Field> {
        let a = self.initial_part(u0)?;
        let b = self.duhamel(source)?;
        a.try_add(&b)
    }
}

/// Lattice approximation of
/// `int G(t,x,y) u0(y) dy + int_0^t int G(t-s,x,y) source(s,y) dy ds`.
pub fn heat_convolve(grid: &Grid, u0: &[f64], source: &Field) -> Result<Field> {
    grid.check_same(source.grid(), "heat_convolve source")?;
    HeatPropagator::new(*grid).convolve(u0, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_kernel::{kernel_mass, kernel_unchecked};

    #[test]
    fn zero_data_gives_zero_field() {
        let g = Grid::new(1.0, 4.0, 20, 16).unwrap();
        let out = heat_convolve(&g, &[0.0; 17], &Field::zeros(g)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_reproduce_linear_data_exactly() {
        // hat weights integrate piecewise-linear data exactly
        let g = Grid::new(1.0, 6.0, 1, 60).unwrap();
        let op = BandedOp::kernel(&g, 0.05);
        let data: Vec<f64> = g.nodes().iter().map(|x| 2.0 * x + 1.0).collect();
        let mut out = vec![0.0; g.n_nodes()];
        op.apply_add(&data, 1.0, &mut out);
        for j in [10usize, 20, 30] {
            let x = g.x(j);
            let mut exact = 0.0;
            let m = 4000;
            let hq = 6.0 / m as f64;
            for k in 0..=m {
                let y = k as f64 * hq;
                let w = if k == 0 || k == m { 0.5 } else { 1.0 };
                exact += w * hq * kernel_unchecked(0.05, x, y) * (2.0 * y + 1.0);
            }
            assert!((out[j] - exact).abs() < 1e-6, "{j}: {} vs {exact}", out[j]);
        }
    }

    #[test]
    fn row_mass_is_exact_for_unit_data() {
        let g = Grid::new(1.0, 20.0, 1, 200).unwrap();
        let tau = 0.3;
        let op = BandedOp::kernel(&g, tau);
        let ones = vec![1.0; g.n_nodes()];
        let mut out = vec![0.0; g.n_nodes()];
        op.apply_add(&ones, 1.0, &mut out);
        for j in [1usize, 5, 40, 100] {
            assert!((out[j] - kernel_mass(tau, g.x(j))).abs() < 1e-12);
        }
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn tiny_lag_reduces_to_interpolation() {
        let g = Grid::new(1.0, 2.0, 1, 20).unwrap();
        let tau = 1e-12;
        let op = BandedOp::kernel(&g, tau);
        // the hat integral loses about 2 s phi(0) / h of the unit mass
        let loss = 2.0 * (2.0 * tau).sqrt() / (2.0 * std::f64::consts::PI).sqrt() / g.dx();
        for j in 1..20 {
            let row = op.row_dense(j, g.n_nodes());
            assert!((row[j] - (1.0 - loss)).abs() < 1e-9, "{}", row[j]);
        }
    }

    fn lag_sum(g: &Grid, u0: &[f64], src: &Field) -> Vec<f64> {
        let n = g.n_nodes();
        let mut out = vec![0.0; g.n_times() * n];
        out[..n].copy_from_slice(u0);
        for i in 1..=g.nt() {
            let row = &mut out[i * n..(i + 1) * n];
            BandedOp::kernel(g, g.t(i)).apply_add(u0, 1.0, row);
            for m in 0..i {
                BandedOp::kernel(g, (i - m) as f64 * g.dt() - 0.5 * g.dt()).apply_add(src.row(m), g.dt(), row);
            }
        }
        out
    }

    #[test]
    fn mode_recursion_matches_image_lag_operators() {
        for (nt, nx) in [(30usize, 12usize), (8, 40)] {
            let g = Grid::new(0.5, 3.0, nt, nx).unwrap();
            let src = Field::from_fn(g, |t, x| (3.0 * t).cos() * x * (-x).exp() + 0.3);
            let u0: Vec<f64> = g.nodes().iter().map(|x| x * (3.0 - x) + (5.0 * x).sin()).collect();
            let fast = HeatPropagator::new(g).convolve(&u0, &src).unwrap();
            let slow = lag_sum(&g, &u0, &src);
            let err = fast.values().iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{nt}x{nx}: {err}");
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let g = Grid::new(0.5, 3.0, 40, 30).unwrap();
        let src = Field::from_fn(g, |t, x| (3.0 * t).cos() * x * (-x).exp());
        let u0 = vec![1.0; g.n_nodes()];
        let a = HeatPropagator::with_exec(g, Exec::Sequential).convolve(&u0, &src).unwrap();
        let b = HeatPropagator::with_exec(g, Exec::Parallel).convolve(&u0, &src).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g = Grid::new(1.0, 4.0, 20, 16).unwrap();
        let other = Grid::new(1.0, 4.0, 10, 16).unwrap();
        assert!(heat_convolve(&g, &[0.0; 17], &Field::zeros(other)).is_err());
        assert!(HeatPropagator::new(g).initial_part(&[0.0; 3]).is_err());
    }
}
