use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ConditionEntry, ConditionReport, Verdict};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::grid::{Control, Field, Grid, WeightParams, Window};
use crate::heat_kernel::{gauss_legendre, least_squares_slope, normal_cdf_diff};
use crate::skeleton::{solve_skeleton, Coefficients, SkeletonOptions};
use crate::spde::{fd_skeleton, moment_of, Ensemble};

/// Paths simulated per ensemble batch.
const BATCH: u64 = 4096;

/// Sequences `g_n` converging to `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PerturbationFamily {
    /// `g_n = g + c sin(n pi t / T) 1_{x <= 1}`: fixed Cameron–Martin norm,
    /// weakly null perturbation.
    Oscillatory { amplitude: f64 },
    /// `g_n = (1 - 1/n) g`: strong convergence.
    Shrinking,
}

impl PerturbationFamily {
    pub fn member(&self, g: &Control, n: usize) -> Result<Control> {
        let grid = *g.grid();
        match *self {
            PerturbationFamily::Oscillatory { amplitude } => {
                let w = n as f64 * std::f64::consts::PI / grid.t_final();
                let psi = Control::from_fn(grid, |t, x| if x <= 1.0 { amplitude * (w * t).sin() } else { 0.0 });
                g.try_add(&psi)
            }
            PerturbationFamily::Shrinking => Ok(g.scaled(1.0 - 1.0 / n as f64)),
        }
    }

    /// Closed-form norm of the perturbation `g_n - g` for the oscillatory family.
    fn perturbation_norm(&self, grid: &Grid) -> Option<f64> {
        match *self {
            PerturbationFamily::Oscillatory { amplitude } => {
                Some(amplitude.abs() * (0.5 * grid.t_final() * grid.length().min(1.0)).sqrt())
            }
            PerturbationFamily::Shrinking => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionAConfig {
    pub n_list: Vec<usize>,
    pub family: PerturbationFamily,
    /// Declared radius `N` with `g in S_N`.
    pub n_bound: f64,
    pub skeleton: SkeletonOptions,
    /// Norm of the discrepancies; the coefficient rate `r` when absent.
    pub weight: Option<WeightParams>,
}

impl Default for ConditionAConfig {
    fn default() -> Self {
        ConditionAConfig {
            n_list: vec![2, 4, 8, 16, 32, 64],
            family: PerturbationFamily::Oscillatory { amplitude: 1.0 },
            n_bound: 10.0,
            skeleton: SkeletonOptions::default(),
            weight: None,
        }
    }
}

/// `d_n = ||Gamma0(g_n) - Gamma0(g)||_{C_r^T}` along `cfg.family`.
///
/// The oscillatory family is checked for `d_{n_max} < 0.1 d_{n_min}` and for
/// decrease past the first index; the shrinking family for a log-log slope
/// of `-1 +- 0.3`. When the drift vanishes and the diffusion does not depend
/// on `u`, and neither solution touches zero, the skeleton map is affine and
/// each `d_n` is also compared with [`oscillation_response_oracle`].
pub fn condition_a_suite(
    g: &Control,
    u0: &[f64],
    coeffs: &Coefficients,
    cfg: &ConditionAConfig,
) -> Result<ConditionReport> {
    let grid = *g.grid();
    if cfg.n_list.is_empty() || cfg.n_list.contains(&0) {
        return Err(invalid("n_list must hold positive indices"));
    }
    let mut ns = cfg.n_list.clone();
    ns.sort_unstable();
    ns.dedup();
    if !(g.cm_norm() <= cfg.n_bound) {
        return Err(invalid(format!("control norm {} exceeds the declared bound {}", g.cm_norm(), cfg.n_bound)));
    }
    let psi_norm = cfg.family.perturbation_norm(&grid);
    if let PerturbationFamily::Oscillatory { amplitude } = cfg.family {
        if !amplitude.is_finite() {
            return Err(invalid("perturbation amplitude must be finite"));
        }
        let n_max = *ns.last().unwrap();
        if grid.nt() < 4 * n_max {
            return Err(invalid(format!("{} time steps cannot resolve oscillation index {n_max}", grid.nt())));
        }
    }
    let weight = cfg.weight.unwrap_or(WeightParams { r: coeffs.r() });
    let base = solve_skeleton(g, u0, coeffs, &cfg.skeleton)?;
    let p = coeffs.params();
    let affine = p.a == 0.0 && p.b == 0.0 && p.d == 0.0 && p.r >= 0.0 && p.c.abs() <= 1.0;

    let mut entries = Vec::with_capacity(ns.len());
    let mut oracle_errors = Vec::new();
    for &n in &ns {
        let gn = cfg.family.member(g, n)?;
        let norm = gn.cm_norm();
        if let Some(pn) = psi_norm {
            let lattice = gn.try_add(&g.scaled(-1.0))?.cm_norm();
            // the lattice norm of the oscillation must match its closed form
            if (lattice - pn).abs() > 0.05 * pn + 1e-12 {
                return Err(invalid(format!("perturbation norm {lattice} at n = {n} departs from {pn}")));
            }
        }
        let sol = solve_skeleton(&gn, u0, coeffs, &cfg.skeleton)?;
        let d = sol.u.distance(&base.u, weight)?;
        let mut aux = BTreeMap::new();
        aux.insert("control_norm".to_string(), norm);
        aux.insert("reflection_mass".to_string(), sol.eta.total_mass() + base.eta.total_mass());
        if let (PerturbationFamily::Oscillatory { amplitude }, true) = (cfg.family, affine) {
            if sol.eta.is_zero() && base.eta.is_zero() {
                let oracle = oscillation_response_oracle(&grid, coeffs, amplitude, n, cfg.skeleton.exec)?.norm(weight);
                let err = if oracle > 0.0 { (d - oracle).abs() / oracle } else { d };
                aux.insert("oracle".to_string(), oracle);
                aux.insert("oracle_rel_err".to_string(), err);
                oracle_errors.push(err);
            }
        }
        entries.push(ConditionEntry { index: n as f64, p: None, value: d, std_error: None, aux });
    }

    let d: Vec<f64> = entries.iter().map(|e| e.value).collect();
    let positive = d.iter().all(|v| *v > 0.0);
    let decay_rate = if positive && d.len() > 1 {
        let lx: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
        let ly: Vec<f64> = d.iter().map(|v| v.ln()).collect();
        least_squares_slope(&lx, &ly)
    } else {
        f64::NAN
    };
    let monotone = d.windows(2).skip(1).all(|w| w[1] < w[0]);
    let mut verdicts = Vec::new();
    #[allow(clippy::redundant_guards)]
    match cfg.family {
        PerturbationFamily::Oscillatory { amplitude } if amplitude == 0.0 => {
            let worst = d.iter().cloned().fold(0.0, f64::max);
            verdicts.push(Verdict::new("zero perturbation gives zero discrepancy", worst == 0.0, worst, ""));
        }
        PerturbationFamily::Oscillatory { .. } => {
            verdicts.push(Verdict::new(
                "discrepancy decreasing beyond the first index",
                monotone,
                decay_rate,
                format!("d = {d:?}"),
            ));
            let ratio = d[d.len() - 1] / d[0];
            verdicts.push(Verdict::new(
                "d at largest n below 0.1 of d at smallest n",
                ratio < 0.1,
                ratio,
                format!("n = {} vs n = {}", ns[ns.len() - 1], ns[0]),
            ));
            if !oracle_errors.is_empty() {
                let worst = oracle_errors.iter().cloned().fold(0.0, f64::max);
                let all = oracle_errors.len() == ns.len();
                verdicts.push(Verdict::new(
                    "linear response matches the convolution oracle within 5%",
                    all && worst < 0.05,
                    worst,
                    format!("{} of {} indices without reflection", oracle_errors.len(), ns.len()),
                ));
            }
        }
        PerturbationFamily::Shrinking => {
            let ok = positive && (decay_rate + 1.0).abs() <= 0.3;
            verdicts.push(Verdict::new("strong family decays at rate 1/n", ok, decay_rate, "slope within -1 +- 0.3"));
        }
    }
    Ok(ConditionReport { entries, monotone, decay_rate, verdicts })
}

/// `int_0^1 G(tau, x, y) e^{-delta y} dy` for the half-line kernel.
fn strip_mass(tau: f64, x: f64, delta: f64) -> f64 {
    let s = (2.0 * tau).sqrt();
    let shift = 2.0 * delta * tau;
    let direct = (delta * delta * tau - delta * x).exp() * normal_cdf_diff((-x + shift) / s, (1.0 - x + shift) / s);
    let image = (delta * delta * tau + delta * x).exp() * normal_cdf_diff((x + shift) / s, (1.0 + x + shift) / s);
    direct - image
}

/// Linear response `int_0^t int_0^inf G(t-s, x, y) sigma(y) psi_n(s, y) dy ds`
/// to `psi_n = c sin(n pi s / T) 1_{y <= 1}` on the lattice, for
/// `sigma(y) = R c0 e^{-delta y}` (drift zero, diffusion independent of `u`).
///
/// With `w = n pi / T` the response is
/// `sin(w t) C(t, x) - cos(w t) S(t, x)`, where `C` and `S` are the running
/// cosine and sine transforms of [`strip_mass`]; these are accumulated step by
/// step by Gauss–Legendre quadrature in `sqrt(tau)`.
pub fn oscillation_response_oracle(
    grid: &Grid,
    coeffs: &Coefficients,
    amplitude: f64,
    n: usize,
    exec: Exec,
) -> Result<Field> {
    let p = coeffs.params();
    if p.a != 0.0 || p.b != 0.0 || p.d != 0.0 || p.r < 0.0 || p.c.abs() > 1.0 {
        return Err(invalid("the response oracle needs f = 0 and sigma = R c e^{-delta x} with |c| <= 1, r >= 0"));
    }
    if grid.length() <= 1.0 {
        return Err(invalid("the response oracle needs L > 1"));
    }
    let scale = amplitude * p.big_r * p.c;
    let w = n as f64 * std::f64::consts::PI / grid.t_final();
    let nx = grid.n_nodes();
    let columns = exec.map(nx, |j| {
        let x = grid.x(j);
        let mut col = vec![0.0; grid.n_times()];
        if j == 0 {
            return col;
        }
        let (mut c, mut s) = (0.0, 0.0);
        for (i, slot) in col.iter_mut().enumerate().skip(1) {
            let (a, b) = (grid.t(i - 1).sqrt(), grid.t(i).sqrt());
            c += gauss_legendre(|v| 2.0 * v * (w * v * v).cos() * strip_mass(v * v, x, p.delta), a, b, 2);
            s += gauss_legendre(|v| 2.0 * v * (w * v * v).sin() * strip_mass(v * v, x, p.delta), a, b, 2);
            let t = grid.t(i);
            *slot = scale * ((w * t).sin() * c - (w * t).cos() * s);
        }
        col
    });
    Ok(Field::from_fn_indexed(*grid, |i, j| columns[j][i]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionBConfig {
    pub epsilons: Vec<f64>,
    pub p_list: Vec<f64>,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Norm of the discrepancies; the coefficient rate `r` when absent.
    pub weight: Option<WeightParams>,
    /// Also check `m_2(eps) / eps` for constancy (linear equations without
    /// reflection).
    pub linear_check: bool,
    /// Smallest accepted log-log slope of `m_2`.
    pub min_slope: f64,
    pub exec: Exec,
}

impl Default for ConditionBConfig {
    fn default() -> Self {
        ConditionBConfig {
            epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4],
            p_list: vec![2.0],
            n_paths: 1000,
            master_seed: 0,
            weight: None,
            linear_check: false,
            min_slope: 0.8,
            exec: Exec::default(),
        }
    }
}

/// Monte Carlo moments `m_p(eps) = E ||u^eps - ubar||^p_{C_r^T}` of the
/// controlled SPDE around the lattice skeleton `ubar` (the same explicit
/// scheme with the noise switched off). All intensities share each path's
/// noise, so successive differences are judged on paired samples.
pub fn condition_b_suite(
    g: &Control,
    u0: &[f64],
    coeffs: &Coefficients,
    cfg: &ConditionBConfig,
) -> Result<ConditionReport> {
    let grid = *g.grid();
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(invalid("condition (b) needs positive noise intensities"));
    }
    if cfg.p_list.is_empty() || cfg.p_list.iter().any(|p| !(*p >= 1.0)) {
        return Err(invalid("moment orders must be >= 1"));
    }
    if cfg.n_paths < 2 {
        return Err(invalid("condition (b) needs at least two paths"));
    }
    if !coeffs.sigma_vanishes() && !(coeffs.delta() > 0.0) {
        return Err(Error::Refused("condition (b) needs delta > 0".into()));
    }
    let weight = cfg.weight.unwrap_or(WeightParams { r: coeffs.r() });
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();

    let (reference, _) = fd_skeleton(&grid, coeffs, u0, Some(g))?;
    let picard = solve_skeleton(g, u0, coeffs, &SkeletonOptions { exec: cfg.exec, ..SkeletonOptions::default() })?;
    let picard_gap = picard.u.distance(&reference, weight)?;

    let ens = Ensemble {
        grid,
        epsilons: eps.clone(),
        coeffs,
        u0,
        control: Some(g),
        reference: Some(&reference),
        weight,
        window: Window::full(&grid),
        probes: Vec::new(),
        master_seed: cfg.master_seed,
        n_paths: cfg.n_paths,
        exec: cfg.exec,
    };
    let mut dist = vec![Vec::with_capacity(cfg.n_paths); eps.len()];
    let mut start = 0u64;
    while start < cfg.n_paths as u64 {
        let end = (start + BATCH).min(cfg.n_paths as u64);
        for s in ens.run_range(start..end)? {
            for (k, d) in s.distance.iter().enumerate() {
                dist[k].push(*d);
            }
        }
        start = end;
    }

    let mut entries = Vec::new();
    let mut verdicts = Vec::new();
    let mut monotone = true;
    let mut decay_rate = f64::NAN;
    for &p in &cfg.p_list {
        let est = dist.iter().map(|d| moment_of(d, p)).collect::<Result<Vec<_>>>()?;
        for (k, m) in est.iter().enumerate() {
            let mut aux = BTreeMap::new();
            aux.insert("picard_gap".to_string(), picard_gap);
            aux.insert("paths".to_string(), m.n as f64);
            entries.push(ConditionEntry {
                index: eps[k],
                p: Some(p),
                value: m.mean,
                std_error: Some(m.std_error),
                aux,
            });
        }
        let means: Vec<f64> = est.iter().map(|m| m.mean).collect();
        if coeffs.sigma_vanishes() {
            let worst = means.iter().cloned().fold(0.0, f64::max);
            verdicts.push(Verdict::new(&format!("zero diffusion gives zero moments (p={p})"), worst == 0.0, worst, ""));
            continue;
        }
        // paired differences along decreasing eps
        let mut worst_z = f64::INFINITY;
        for k in 0..eps.len() - 1 {
            let diffs: Vec<f64> = dist[k].iter().zip(&dist[k + 1]).map(|(a, b)| a.powf(p) - b.powf(p)).collect();
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
            let z = if var > 0.0 {
                mean / (var / n).sqrt()
            } else if mean > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst_z = worst_z.min(z);
        }
        let decreasing = eps.len() < 2 || worst_z > 3.0;
        monotone &= decreasing;
        verdicts.push(Verdict::new(
            &format!("m_p strictly decreasing beyond Monte Carlo error (p={p})"),
            decreasing,
            worst_z,
            "smallest paired z-score, need > 3",
        ));
        let slope = if eps.len() > 1 && means.iter().all(|m| *m > 0.0) {
            let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
            let ly: Vec<f64> = means.iter().map(|m| m.ln()).collect();
            least_squares_slope(&lx, &ly)
        } else {
            f64::NAN
        };
        if p == 2.0 || decay_rate.is_nan() {
            decay_rate = slope;
        }
        if p == 2.0 {
            verdicts.push(Verdict::new(
                "m_2 log-log slope at least the minimum",
                slope >= cfg.min_slope,
                slope,
                format!("minimum {}", cfg.min_slope),
            ));
            if cfg.linear_check {
                let mut worst = 0.0f64;
                for a in 0..eps.len() {
                    for b in a + 1..eps.len() {
                        let (ra, rb) = (means[a] / eps[a], means[b] / eps[b]);
                        let se = ((est[a].std_error / eps[a]).powi(2) + (est[b].std_error / eps[b]).powi(2)).sqrt();
                        let z = if se > 0.0 {
                            (ra - rb).abs() / se
                        } else if ra == rb {
                            0.0
                        } else {
                            f64::INFINITY
                        };
                        worst = worst.max(z);
                    }
                }
                verdicts.push(Verdict::new(
                    "m_2 / eps constant within 3 standard errors",
                    worst <= 3.0,
                    worst,
                    "largest pairwise z-score",
                ));
            }
        }
    }
    Ok(ConditionReport { entries, monotone, decay_rate, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_kernel::kernel_unchecked;
    use crate::skeleton::CoefficientParams;

    fn linear(delta: f64) -> Coefficients {
        Coefficients::new(CoefficientParams { big_r: 1.0, c: 1.0, delta, ..Default::default() }).unwrap()
    }

    #[test]
    fn strip_mass_matches_quadrature() {
        for &(tau, x, delta) in &[(0.01, 0.5, 0.0), (0.2, 1.3, 0.7), (0.05, 0.02, 2.0)] {
            let q = gauss_legendre(|y| kernel_unchecked(tau, x, y) * (-delta * y).exp(), 0.0, 1.0, 200);
            assert!((strip_mass(tau, x, delta) - q).abs() < 1e-12, "{tau} {x}: {} vs {q}", strip_mass(tau, x, delta));
        }
    }

    #[test]
    fn oracle_matches_direct_double_integral() {
        let g = Grid::new(0.5, 3.0, 64, 30).unwrap();
        let c = linear(0.4);
        let n = 3;
        let f = oscillation_response_oracle(&g, &c, 1.5, n, Exec::Sequential).unwrap();
        let w = n as f64 * std::f64::consts::PI / 0.5;
        for &(i, j) in &[(10usize, 5usize), (64, 9), (40, 14)] {
            let (t, x) = (g.t(i), g.x(j));
            let direct =
                gauss_legendre(|v| 2.0 * v * (w * (t - v * v)).sin() * strip_mass(v * v, x, 0.4), 0.0, t.sqrt(), 400)
                    * 1.5;
            assert!((f.get(i, j) - direct).abs() < 1e-10, "({i},{j}) {} vs {direct}", f.get(i, j));
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_discrepancies() {
        let g = Grid::new(0.5, 3.0, 64, 15).unwrap();
        let u0: Vec<f64> = g.nodes().iter().map(|x| x * (3.0 - x)).collect();
        let cfg = ConditionAConfig {
            n_list: vec![2, 4, 8],
            family: PerturbationFamily::Oscillatory { amplitude: 0.0 },
            ..ConditionAConfig::default()
        };
        let r = condition_a_suite(&Control::zeros(g), &u0, &linear(0.0), &cfg).unwrap();
        assert!(r.entries.iter().all(|e| e.value == 0.0));
        assert!(r.passed());
    }

    #[test]
    fn unresolved_oscillations_and_oversized_controls_are_rejected() {
        let g = Grid::new(0.5, 3.0, 32, 15).unwrap();
        let u0: Vec<f64> = g.nodes().iter().map(|x| x * (3.0 - x)).collect();
        let cfg = ConditionAConfig { n_list: vec![2, 16], ..ConditionAConfig::default() };
        assert!(condition_a_suite(&Control::zeros(g), &u0, &linear(0.0), &cfg).is_err());
        let big = Control::from_fn(g, |_, _| 100.0);
        let cfg = ConditionAConfig { n_list: vec![2], ..ConditionAConfig::default() };
        assert!(condition_a_suite(&big, &u0, &linear(0.0), &cfg).is_err());
    }

    #[test]
    fn zero_diffusion_gives_zero_moments_and_undamped_noise_is_refused() {
        let g = Grid::new(0.1, 2.0, 40, 20).unwrap();
        let u0: Vec<f64> = g.nodes().iter().map(|x| x * (2.0 - x)).collect();
        let ctrl = Control::from_fn(g, |t, x| t - x);
        let drift = Coefficients::new(CoefficientParams { a: -1.0, b: 0.5, ..Default::default() }).unwrap();
        let cfg = ConditionBConfig { n_paths: 8, ..ConditionBConfig::default() };
        let r = condition_b_suite(&ctrl, &u0, &drift, &cfg).unwrap();
        assert!(r.entries.iter().all(|e| e.value == 0.0));
        assert!(r.passed());
        assert!(matches!(condition_b_suite(&ctrl, &u0, &linear(0.0), &cfg), Err(Error::Refused(_))));
    }
}
