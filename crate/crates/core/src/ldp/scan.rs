use serde::{Deserialize, Serialize};

use super::Verdict;
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::grid::{fmt17, Control, Field, Grid, WeightParams, Window};
use crate::heat_kernel::{gauss_legendre, kernel_unchecked};
use crate::skeleton::Coefficients;
use crate::spde::{fd_skeleton, Ensemble};

/// Fewest exceedances for which `log P` is reported.
pub const HIT_GUARD: usize = 30;

const BATCH: u64 = 1 << 14;

/// Where the exceedance `|u^eps - ubar| > c` is measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventWindow {
    /// Weighted sup norm over the whole lattice.
    Full,
    /// Final time, node nearest to `x`.
    Point { x: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub threshold: f64,
    pub window: EventWindow,
    pub epsilons: Vec<f64>,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Weight of the event norm; the coefficient rate `r` when absent.
    pub weight: Option<WeightParams>,
    /// Accepted relative deviation from the Gaussian rate.
    pub tolerance: f64,
    pub exec: Exec,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            threshold: 1.0,
            window: EventWindow::Full,
            epsilons: vec![1e-1, 3e-2, 1e-2],
            n_paths: 10_000,
            master_seed: 0,
            weight: None,
            tolerance: 0.2,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub epsilon: f64,
    pub hits: usize,
    pub n_paths: usize,
    pub probability: f64,
    /// Fewer than [`HIT_GUARD`] hits: no log-probability is reported.
    pub censored: bool,
    pub eps_log_p: Option<f64>,
    /// Delta-method standard error of `eps log P`.
    pub std_error: Option<f64>,
    /// `eps log P` over the Gaussian rate, when the oracle applies.
    pub oracle_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub entries: Vec<ScanEntry>,
    /// `-c^2 / (2 Var_1)` for a pointwise event of an additive linear equation.
    pub oracle_rate: Option<f64>,
    /// `Var_1` of the weighted pointwise value at unit intensity.
    pub unit_variance: Option<f64>,
    /// `|g|_H^2 / 2` of the cheapest control found that reaches the event,
    /// an upper bound for the rate of the event.
    pub control_cost: f64,
    /// `|eps log P|` does not increase as `eps` decreases (two standard errors
    /// of slack).
    pub monotone: bool,
    pub verdicts: Vec<Verdict>,
}

impl ScanReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,hits,n_paths,probability,censored,eps_log_p,std_error,oracle_ratio")?;
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fmt17(e.epsilon),
                e.hits,
                e.n_paths,
                fmt17(e.probability),
                e.censored,
                opt(e.eps_log_p),
                opt(e.std_error),
                opt(e.oracle_ratio)
            )?;
        }
        Ok(())
    }
}

/// `int_0^t int_0^inf G(s, x, y)^2 e^{-2 delta y} dy ds`.
pub(crate) fn damped_convolution_variance(t: f64, x: f64, delta: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    // s = w^2 removes the s^{-1/2} singularity of the inner integral
    let inner = |w: f64| {
        if w == 0.0 {
            return 0.0;
        }
        let s = w * w;
        let lo = (x - 12.0 * w).max(0.0);
        let hi = x + 12.0 * w;
        2.0 * w * gauss_legendre(|y| kernel_unchecked(s, x, y).powi(2) * (-2.0 * delta * y).exp(), lo, hi, 48)
    };
    gauss_legendre(inner, 0.0, t.sqrt(), 256)
}

fn event_window(grid: &Grid, window: EventWindow) -> Result<(Window, usize)> {
    match window {
        EventWindow::Full => Ok((Window::full(grid), grid.nx() / 2)),
        EventWindow::Point { x } => {
            if !(x > 0.0 && x < grid.length()) {
                return Err(invalid(format!("event point {x} must lie inside (0, L)")));
            }
            let j = ((x / grid.dx()).round() as usize).clamp(1, grid.nx() - 1);
            Ok((Window::point(grid.nt(), j), j))
        }
    }
}

/// Cheapest control along `sigma(y, ubar) G(T - s, x_j, y)` whose lattice
/// skeleton leaves `ubar` by at least `c` in the event window.
#[allow(clippy::too_many_arguments)]
fn cheapest_control(
    grid: &Grid,
    coeffs: &Coefficients,
    u0: &[f64],
    ubar: &Field,
    window: &Window,
    weight: WeightParams,
    j: usize,
    c: f64,
) -> Result<f64> {
    if c == 0.0 {
        return Ok(0.0);
    }
    let xs = grid.x(j);
    let tf = grid.t_final();
    let dir = Control::from_fn_cells(*grid, |i, jj, t, x| {
        let u = ubar.get(i, jj);
        coeffs.sigma(x, u) * kernel_unchecked(tf - t, xs, x)
    });
    let reach = |a: f64| -> Result<f64> {
        let (u, _) = fd_skeleton(grid, coeffs, u0, Some(&dir.scaled(a)))?;
        u.try_sub(ubar)?.weighted_sup_norm_in(weight, window)
    };
    let mut hi = 1.0;
    let mut tries = 0;
    while reach(hi)? < c {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if reach(mid)? >= c {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (hi * dir.cm_norm()).powi(2))
}

/// Monte Carlo estimate of `P_eps = P(||u^eps - ubar|| > c)` for every
/// intensity, where `ubar` is the uncontrolled lattice skeleton.
///
/// Intensities share each path's noise. Entries with fewer than
/// [`HIT_GUARD`] hits are censored. For a pointwise event of an equation
/// with `f = f(x)` and `sigma = R c e^{-delta x}` the Gaussian rate
/// `-c^2 / (2 Var_1)` is reported and compared with `eps log P_eps` at the
/// smallest uncensored intensity; this assumes the reflection stays inactive.
pub fn ldp_probability_scan(grid: &Grid, u0: &[f64], coeffs: &Coefficients, cfg: &ScanConfig) -> Result<ScanReport> {
    if !(cfg.threshold >= 0.0 && cfg.threshold.is_finite()) {
        return Err(invalid(format!("event threshold must be >= 0, got {}", cfg.threshold)));
    }
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(invalid("scan needs positive noise intensities"));
    }
    if cfg.n_paths == 0 {
        return Err(invalid("scan needs at least one path"));
    }
    let weight = cfg.weight.unwrap_or(WeightParams { r: coeffs.r() });
    let (window, j) = event_window(grid, cfg.window)?;
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let (ubar, _) = fd_skeleton(grid, coeffs, u0, None)?;

    let ens = Ensemble {
        grid: *grid,
        epsilons: eps.clone(),
        coeffs,
        u0,
        control: None,
        reference: Some(&ubar),
        weight,
        window: window.clone(),
        probes: Vec::new(),
        master_seed: cfg.master_seed,
        n_paths: cfg.n_paths,
        exec: cfg.exec,
    };
    let mut hits = vec![0usize; eps.len()];
    let mut start = 0u64;
    while start < cfg.n_paths as u64 {
        let end = (start + BATCH).min(cfg.n_paths as u64);
        for s in ens.run_range(start..end)? {
            for (k, d) in s.distance.iter().enumerate() {
                if *d > cfg.threshold {
                    hits[k] += 1;
                }
            }
        }
        start = end;
    }

    let p = coeffs.params();
    let oracle_applies = matches!(cfg.window, EventWindow::Point { .. })
        && p.a == 0.0
        && p.d == 0.0
        && p.r >= 0.0
        && p.c.abs() <= 1.0
        && !coeffs.sigma_vanishes();
    let unit_variance = oracle_applies.then(|| {
        let x = grid.x(j);
        let w = weight.weights(grid)[j];
        (p.big_r * p.c * w).powi(2) * damped_convolution_variance(grid.t_final(), x, p.delta)
    });
    let oracle_rate = unit_variance.map(|v| -cfg.threshold * cfg.threshold / (2.0 * v));

    let n = cfg.n_paths as f64;
    let entries: Vec<ScanEntry> = eps
        .iter()
        .zip(&hits)
        .map(|(&e, &h)| {
            let prob = h as f64 / n;
            let censored = h < HIT_GUARD;
            let eps_log_p = (!censored).then(|| e * prob.ln());
            let std_error = (!censored).then(|| e * ((1.0 - prob) / h as f64).sqrt());
            let oracle_ratio = match (eps_log_p, oracle_rate) {
                (Some(v), Some(o)) if o != 0.0 => Some(v / o),
                _ => None,
            };
            ScanEntry {
                epsilon: e,
                hits: h,
                n_paths: cfg.n_paths,
                probability: prob,
                censored,
                eps_log_p,
                std_error,
                oracle_ratio,
            }
        })
        .collect();

    let uncensored: Vec<&ScanEntry> = entries.iter().filter(|e| !e.censored).collect();
    let monotone = uncensored.windows(2).all(|w| {
        let (a, b) = (w[0].eps_log_p.unwrap().abs(), w[1].eps_log_p.unwrap().abs());
        b <= a + 2.0 * (w[0].std_error.unwrap().powi(2) + w[1].std_error.unwrap().powi(2)).sqrt()
    });
    let control_cost = cheapest_control(grid, coeffs, u0, &ubar, &window, weight, j, cfg.threshold)?;

    let mut verdicts = Vec::new();
    let flagged = entries.iter().all(|e| e.censored == (e.hits < HIT_GUARD) && e.censored == e.eps_log_p.is_none());
    verdicts.push(Verdict::new("censoring flagged below the hit guard", flagged, HIT_GUARD as f64, ""));
    verdicts.push(Verdict::new("eps log P monotone toward its limit", monotone, uncensored.len() as f64, ""));
    if oracle_rate.is_some() {
        let last = uncensored.last().and_then(|e| e.oracle_ratio);
        let dev = last.map_or(f64::INFINITY, |r| (r - 1.0).abs());
        verdicts.push(Verdict::new(
            "eps log P at the smallest uncensored eps matches the Gaussian rate",
            dev <= cfg.tolerance,
            dev,
            format!("ratio {last:?}, tolerance {}", cfg.tolerance),
        ));
    }
    Ok(ScanReport { entries, oracle_rate, unit_variance, control_cost, monotone, verdicts })
}
