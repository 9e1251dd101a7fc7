//! Dirichlet heat kernel on the half-line and the mild-form operators built
//! from it.
//!
//! ```text
//! G(t, x, y)    = (4 pi t)^{-1/2} [exp(-(x-y)^2 / 4t) - exp(-(x+y)^2 / 4t)]
//! G_r(t, x, y)  = e^{-r (x - y)} G(t, x, y)
//! ```

mod estimates;
mod propagator;

pub(crate) use estimates::least_squares_slope;
pub use estimates::{
    estimate_suite, l1_convolution_constant, EstimateConfig, EstimatePoint, EstimateQuantity, EstimateReport,
    QuantityFit,
};
pub use propagator::{heat_convolve, BandedOp, HeatPropagator};

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Dirichlet heat kernel `G(t, x, y)` for `t > 0`, `x, y >= 0`.
pub fn kernel(t: f64, x: f64, y: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("kernel time must be positive, got {t}")));
    }
    if x < 0.0 || y < 0.0 {
        return Err(invalid(format!("kernel arguments must be nonnegative, got x={x}, y={y}")));
    }
    Ok(kernel_unchecked(t, x, y))
}

/// Exponentially tilted kernel `G_r(t, x, y) = e^{-r(x-y)} G(t, x, y)`.
pub fn kernel_r(t: f64, x: f64, y: f64, r: f64) -> Result<f64> {
    Ok((-r * (x - y)).exp() * kernel(t, x, y)?)
}

/// `G(t, x, y)` without argument checks. The image difference is written as
/// `e^{-(x-y)^2/4t} (1 - e^{-xy/t})` to avoid cancellation near the boundary.
#[inline]
pub fn kernel_unchecked(t: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    let g = (-d * d / (4.0 * t)).exp() * -(-x * y / t).exp_m1();
    (g / (4.0 * PI * t).sqrt()).max(0.0)
}

/// Mass `int_0^inf G(t, x, y) dy = erf(x / (2 sqrt t))`.
pub fn kernel_mass(t: f64, x: f64) -> f64 {
    libm::erf(x / (2.0 * t.sqrt()))
}

/// `int_0^inf G(t, x, y)^2 dy = (1 - e^{-x^2 / 2t}) / sqrt(8 pi t)`.
pub fn kernel_l2_mass(t: f64, x: f64) -> f64 {
    -(-x * x / (2.0 * t)).exp_m1() / (8.0 * PI * t).sqrt()
}

/// Variance of the stochastic convolution `int_0^t int_0^inf G(t-s, x, y) sigma dW`
/// for constant `sigma = 1`, i.e. `int_0^t int_0^inf G(s, x, y)^2 dy ds`.
///
/// The substitution `s = w^2` removes the `s^{-1/2}` singularity; the
/// remaining smooth integrand is integrated by composite Gauss–Legendre.
pub fn stochastic_convolution_variance(t: f64, x: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let integrand = |w: f64| {
        if w == 0.0 {
            return 2.0 / (8.0 * PI).sqrt();
        }
        2.0 * w * kernel_l2_mass(w * w, x)
    };
    gauss_legendre(integrand, 0.0, t.sqrt(), 256)
}

/// Composite 8-point Gauss–Legendre rule over `panels` equal panels.
pub(crate) fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const NODES: [f64; 4] =
        [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    const WEIGHTS: [f64; 4] =
        [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for k in 0..4 {
            s += WEIGHTS[k] * (f(mid - half * NODES[k]) + f(mid + half * NODES[k]));
        }
        total += s * half;
    }
    total
}

/// `Phi(zb) - Phi(za)` for the standard normal CDF, evaluated on the tail
/// that avoids cancellation.
#[inline]
pub(crate) fn normal_cdf_diff(za: f64, zb: f64) -> f64 {
    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
    if za >= 0.0 {
        0.5 * (libm::erfc(za * S) - libm::erfc(zb * S))
    } else if zb <= 0.0 {
        0.5 * (libm::erfc(-zb * S) - libm::erfc(-za * S))
    } else {
        0.5 * (libm::erf(zb * S) - libm::erf(za * S))
    }
}

#[inline]
pub(crate) fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}
