//! Numerical check of the kernel-integral bounds used in the mild-form
//! estimates. For `p > 4`, `q = p / (p - 2)` and `e = (p - 2) / 2`:
//!
//! ```text
//! (i)   sup_x ( int_s^t [ int G_r(t-u,x,z)^2 dz ]^q du )^e                   ~ |t-s|^{(p-4)/4}
//! (ii)  sup_x ( int_0^s [ int |G_r(t-u,x,z) - G_r(s-u,x,z)|^2 dz ]^q du )^e  ~ |t-s|^{(p-4)/4}
//! (iii) sup_s ( int_0^s [ int |G_r(s-u,x,z) - G_r(s-u,y,z)|^2 dz ]^q du )^e  ~ |x-y|^{(p-4)/2}
//! ```
//!
//! All integrals are evaluated by composite Gauss–Legendre after
//! substitutions that remove the integrable endpoint singularities. The
//! suprema are taken over finite samples.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Exec;

use super::{gauss_legendre, kernel_unchecked};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateQuantity {
    TimeLocal,
    TimeIncrement,
    SpaceIncrement,
}

impl EstimateQuantity {
    pub const ALL: [EstimateQuantity; 3] =
        [EstimateQuantity::TimeLocal, EstimateQuantity::TimeIncrement, EstimateQuantity::SpaceIncrement];

    /// Accepted deviation of the fitted slope from [`EstimateQuantity::exponent`].
    pub fn slope_tolerance(self) -> f64 {
        match self {
            EstimateQuantity::TimeLocal | EstimateQuantity::TimeIncrement => 0.15,
            EstimateQuantity::SpaceIncrement => 0.2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EstimateQuantity::TimeLocal => "time_local",
            EstimateQuantity::TimeIncrement => "time_increment",
            EstimateQuantity::SpaceIncrement => "space_increment",
        }
    }

    /// Exponent of the lag in the bound.
    pub fn exponent(self, p: f64) -> f64 {
        match self {
            EstimateQuantity::TimeLocal | EstimateQuantity::TimeIncrement => (p - 4.0) / 4.0,
            EstimateQuantity::SpaceIncrement => (p - 4.0) / 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub p: f64,
    pub r: f64,
    pub t_final: f64,
    /// Quadrature panels per integration segment; doubling it is one
    /// refinement step.
    pub level: usize,
    /// Number of dyadic lags per quantity.
    pub n_lags: usize,
    pub exec: Exec,
}

impl EstimateConfig {
    pub fn new(p: f64, r: f64) -> Self {
        EstimateConfig { p, r, t_final: 1.0, level: 8, n_lags: 9, exec: Exec::default() }
    }

    pub fn refined(&self) -> Self {
        EstimateConfig { level: self.level * 2, ..self.clone() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatePoint {
    pub quantity: EstimateQuantity,
    pub lag: f64,
    /// Sampled supremum.
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantityFit {
    pub quantity: EstimateQuantity,
    pub expected_slope: f64,
    /// Least-squares slope of `log value` against `log lag`.
    pub slope: f64,
    /// `max value / lag^expected_slope` over the sampled lags.
    pub max_constant: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub p: f64,
    pub r: f64,
    pub level: usize,
    pub points: Vec<EstimatePoint>,
    pub fits: Vec<QuantityFit>,
    /// Empirical constant of `sup |e^{-rx} int int G u| <= C int ||u||` for `u = e^{r y}`.
    pub l1_constant: f64,
}

impl EstimateReport {
    pub fn fit(&self, q: EstimateQuantity) -> &QuantityFit {
        self.fits.iter().find(|f| f.quantity == q).expect("every quantity is fitted")
    }

    /// CSV with header `quantity,p,r,lag,value,fitted_slope,fitted_constant`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        use crate::grid::fmt17;
        writeln!(out, "quantity,p,r,lag,value,fitted_slope,fitted_constant")?;
        for pt in &self.points {
            let fit = self.fit(pt.quantity);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                pt.quantity.label(),
                fmt17(self.p),
                fmt17(self.r),
                fmt17(pt.lag),
                fmt17(pt.value),
                fmt17(fit.slope),
                fmt17(fit.max_constant)
            )?;
        }
        Ok(())
    }
}

struct Quad {
    r: f64,
    q: f64,
    e: f64,
    level: usize,
}

impl Quad {
    #[inline]
    fn gr(&self, tau: f64, x: f64, z: f64) -> f64 {
        (-self.r * (x - z)).exp() * kernel_unchecked(tau, x, z)
    }

    /// `int_0^inf G_r(ta, xa, z) G_r(tb, xb, z) dz` over the window where the
    /// product of the two Gaussians lives.
    fn cross(&self, ta: f64, xa: f64, tb: f64, xb: f64) -> f64 {
        let (va, vb) = (2.0 * ta, 2.0 * tb);
        let v = va * vb / (va + vb);
        let m = (xa * vb + xb * va) / (va + vb) + self.r * v;
        let w = 10.0 * v.sqrt() + 2.0 * self.r.abs() * v;
        let (a, b) = ((m - w).max(0.0), (m + w).max(0.0));
        if b <= a {
            return 0.0;
        }
        gauss_legendre(|z| self.gr(ta, xa, z) * self.gr(tb, xb, z), a, b, 2 * self.level)
    }

    fn sq_diff(&self, ta: f64, xa: f64, tb: f64, xb: f64) -> f64 {
        (self.cross(ta, xa, ta, xa) + self.cross(tb, xb, tb, xb) - 2.0 * self.cross(ta, xa, tb, xb)).max(0.0)
    }

    /// `int_0^c f(tau) dtau` for `f ~ tau^{-3/4}`-type singularities at 0,
    /// via `tau = c w^4`.
    fn singular_head(&self, f: impl Fn(f64) -> f64, c: f64) -> f64 {
        gauss_legendre(|w| if w == 0.0 { 0.0 } else { 4.0 * c * w.powi(3) * f(c * w.powi(4)) }, 0.0, 1.0, self.level)
    }

    /// `int_a^b f(tau) dtau` on a logarithmic scale.
    fn log_tail(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let panels = self.level * ((b / a).ln().ceil() as usize).max(1);
        gauss_legendre(|v| a * v.exp() * f(a * v.exp()), 0.0, (b / a).ln(), panels)
    }

    fn time_local(&self, h: f64, x: f64) -> f64 {
        let inner = |tau: f64| self.cross(tau, x, tau, x).powf(self.q);
        self.singular_head(inner, h).powf(self.e)
    }

    fn time_increment(&self, s: f64, h: f64, x: f64) -> f64 {
        let inner = |b: f64| self.sq_diff(b + h, x, b, x).powf(self.q);
        let total = self.singular_head(inner, h.min(s)) + self.log_tail(inner, h.min(s), s);
        total.powf(self.e)
    }

    fn space_increment(&self, s: f64, x: f64, d: f64) -> f64 {
        let inner = |tau: f64| self.sq_diff(tau, x, tau, x + d).powf(self.q);
        let split = (d * d).min(s);
        (self.singular_head(inner, split) + self.log_tail(inner, split, s)).powf(self.e)
    }

    fn l1_ratio(&self, t: f64, x: f64) -> f64 {
        // int_0^t int G_r(sigma, x, y) dy dsigma, with u = e^{ry} so ||u||_{L_r} = 1
        let mass = |sigma: f64| {
            let s = (2.0 * sigma).sqrt();
            let w = 10.0 * s + 2.0 * self.r.abs() * sigma;
            let (a, b) = ((x - w).max(0.0), x + w);
            gauss_legendre(|y| self.gr(sigma, x, y), a, b, 2 * self.level)
        };
        self.singular_head(mass, t) / t
    }
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Sampled bound `sup_{tau, x} |e^{-rx} int_0^tau int G u| / int_0^t ||u||_{L_r}`
/// for `u(s, y) = e^{r y}`.
pub fn l1_convolution_constant(r: f64, t_final: f64, level: usize) -> f64 {
    let quad = Quad { r, q: 1.0, e: 1.0, level };
    let st = t_final.sqrt();
    let mut best = 0.0f64;
    for k in 0..4 {
        let tau = t_final * 0.25 * (k + 1) as f64;
        for &xm in &[0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            // the ratio is normalized by the full horizon
            best = best.max(quad.l1_ratio(tau, xm * st) * tau / t_final);
        }
    }
    best
}

/// Evaluates the three kernel-integral quantities over dyadic lags, fits
/// log-log slopes and reports empirical constants.
pub fn estimate_suite(cfg: &EstimateConfig) -> Result<EstimateReport> {
    if !(cfg.p > 4.0) {
        return Err(invalid(format!("estimate suite needs p > 4, got {}", cfg.p)));
    }
    if !(cfg.t_final > 0.0) || cfg.level == 0 || cfg.n_lags < 2 {
        return Err(invalid("estimate suite needs t_final > 0, level >= 1, n_lags >= 2"));
    }
    let p = cfg.p;
    let quad = Quad { r: cfg.r, q: p / (p - 2.0), e: (p - 2.0) / 2.0, level: cfg.level };
    let t = cfg.t_final;
    let st = t.sqrt();
    let x_samples: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|m| m * st).collect();

    let time_lags: Vec<f64> = (0..cfg.n_lags).map(|k| t * 0.125 * 0.5f64.powi(k as i32)).collect();
    let space_lags: Vec<f64> = (0..cfg.n_lags).map(|k| st * 0.25 * 0.5f64.powi(k as i32)).collect();

    let mut jobs: Vec<(EstimateQuantity, f64, f64)> = Vec::new();
    for &h in &time_lags {
        for &x in &x_samples {
            jobs.push((EstimateQuantity::TimeLocal, h, x));
            jobs.push((EstimateQuantity::TimeIncrement, h, x));
        }
    }
    for &d in &space_lags {
        for &x in &x_samples[2..] {
            jobs.push((EstimateQuantity::SpaceIncrement, d, x));
        }
    }
    let values = cfg.exec.map(jobs.len(), |k| {
        let (qty, lag, x) = jobs[k];
        match qty {
            EstimateQuantity::TimeLocal => quad.time_local(lag, x),
            EstimateQuantity::TimeIncrement => quad.time_increment(0.5 * t, lag, x),
            EstimateQuantity::SpaceIncrement => quad.space_increment(t, x, lag),
        }
    });

    let mut points = Vec::new();
    let mut fits = Vec::new();
    for qty in [EstimateQuantity::TimeLocal, EstimateQuantity::TimeIncrement, EstimateQuantity::SpaceIncrement] {
        let lags = if qty == EstimateQuantity::SpaceIncrement { &space_lags } else { &time_lags };
        let mut sup = Vec::with_capacity(lags.len());
        for &lag in lags {
            let v = jobs
                .iter()
                .zip(&values)
                .filter(|((q, l, _), _)| *q == qty && *l == lag)
                .fold(0.0f64, |m, (_, v)| m.max(*v));
            sup.push(v);
            points.push(EstimatePoint { quantity: qty, lag, value: v });
        }
        let lx: Vec<f64> = lags.iter().map(|l| l.ln()).collect();
        let ly: Vec<f64> = sup.iter().map(|v| v.ln()).collect();
        let expected = qty.exponent(p);
        let max_constant = lags.iter().zip(&sup).fold(0.0f64, |m, (l, v)| m.max(v / l.powf(expected)));
        fits.push(QuantityFit {
            quantity: qty,
            expected_slope: expected,
            slope: least_squares_slope(&lx, &ly),
            max_constant,
        });
    }

    Ok(EstimateReport {
        p,
        r: cfg.r,
        level: cfg.level,
        points,
        fits,
        l1_constant: l1_convolution_constant(cfg.r, t, cfg.level),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rejects_small_p() {
        assert!(estimate_suite(&EstimateConfig::new(4.0, 0.0)).is_err());
        assert!(estimate_suite(&EstimateConfig::new(3.0, 0.0)).is_err());
    }

    #[test]
    fn time_local_far_from_boundary_matches_closed_form() {
        // r = 0, x >> sqrt(h): int G^2 dz = (8 pi tau)^{-1/2}, so
        // int_0^h (8 pi tau)^{-q/2} dtau = (8 pi)^{-q/2} h^{1-q/2} / (1 - q/2)
        let quad = Quad { r: 0.0, q: 1.5, e: 2.0, level: 8 };
        let h: f64 = 0.01;
        let exact = ((8.0 * PI).powf(-0.75) * h.powf(0.25) / 0.25).powf(2.0);
        let got = quad.time_local(h, 10.0);
        assert!((got / exact - 1.0).abs() < 1e-8, "{got} vs {exact}");
    }

    #[test]
    fn l1_constant_is_at_most_one_without_tilt() {
        let c = l1_convolution_constant(0.0, 1.0, 8);
        assert!(c <= 1.0 + 1e-9 && c > 0.9, "{c}");
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs: Vec<f64> = (1..6).map(|k| (k as f64).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 * x + 2.0).collect();
        assert!((least_squares_slope(&xs, &ys) - 0.7).abs() < 1e-12);
    }
}
