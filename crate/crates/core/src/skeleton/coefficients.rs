use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Grid;

const VALIDATION_SAMPLES: usize = 10_000;
const VALIDATION_SEED: u64 = 0x5eed_c0ef;

/// Parameters of the drift and diffusion families
///
/// ```text
/// f(x, u)     = a u + b e^{r x}
/// sigma(x, u) = R e^{-delta x} clamp(c + d u, -(e^{r x} + |u|), e^{r x} + |u|)
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientParams {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub delta: f64,
    pub c: f64,
    pub d: f64,
    pub r: f64,
}

impl Default for CoefficientParams {
    fn default() -> Self {
        CoefficientParams { a: 0.0, b: 0.0, big_r: 0.0, delta: 0.0, c: 0.0, d: 0.0, r: 0.0 }
    }
}

/// Growth and Lipschitz constants of a validated family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c11: f64,
    pub c12: f64,
    pub c13: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub delta: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefficientParams", into = "CoefficientParams")]
pub struct Coefficients {
    p: CoefficientParams,
    k: Constants,
}

impl TryFrom<CoefficientParams> for Coefficients {
    type Error = crate::error::Error;
    fn try_from(p: CoefficientParams) -> Result<Self> {
        Coefficients::new(p)
    }
}

impl From<Coefficients> for CoefficientParams {
    fn from(c: Coefficients) -> Self {
        c.p
    }
}

impl Coefficients {
    /// Builds the family and checks the Lipschitz and growth bounds on
    /// random `(x, u, v)` samples.
    pub fn new(p: CoefficientParams) -> Result<Self> {
        let all = [p.a, p.b, p.big_r, p.delta, p.c, p.d, p.r];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("coefficient parameters must be finite"));
        }
        if p.big_r < 0.0 || p.delta < 0.0 {
            return Err(invalid(format!("need R >= 0 and delta >= 0, got R={}, delta={}", p.big_r, p.delta)));
        }
        let k = Constants {
            c11: p.a.abs(),
            c12: p.a.abs().max(p.b.abs()),
            c13: p.big_r * p.d.abs().max(1.0),
            big_r: p.big_r,
            delta: p.delta,
            r: p.r,
        };
        let out = Coefficients { p, k };
        out.validate()?;
        Ok(out)
    }

    /// `f = 0`, `sigma = 0`.
    pub fn zero() -> Self {
        Coefficients::new(CoefficientParams::default()).expect("zero family is valid")
    }

    /// `f = 0`, `sigma(x, u) = R e^{-delta x}` (independent of `u` for `r >= 0`).
    pub fn additive(big_r: f64, delta: f64) -> Result<Self> {
        Coefficients::new(CoefficientParams { big_r, delta, c: 1.0, ..Default::default() })
    }

    pub fn params(&self) -> &CoefficientParams {
        &self.p
    }

    pub fn constants(&self) -> &Constants {
        &self.k
    }

    pub fn r(&self) -> f64 {
        self.p.r
    }

    pub fn delta(&self) -> f64 {
        self.p.delta
    }

    pub fn sigma_vanishes(&self) -> bool {
        self.p.big_r == 0.0 || (self.p.c == 0.0 && self.p.d == 0.0)
    }

    /// Same family with `sigma` switched off.
    pub fn without_noise(&self) -> Self {
        Coefficients::new(CoefficientParams { big_r: 0.0, ..self.p }).expect("dropping sigma keeps validity")
    }

    #[inline]
    pub fn f(&self, x: f64, u: f64) -> f64 {
        self.f_with(u, (self.p.r * x).exp())
    }

    #[inline]
    pub fn sigma(&self, x: f64, u: f64) -> f64 {
        self.sigma_with(u, (self.p.r * x).exp(), (-self.p.delta * x).exp())
    }

    #[inline]
    fn f_with(&self, u: f64, grow: f64) -> f64 {
        self.p.a * u + self.p.b * grow
    }

    #[inline]
    fn sigma_with(&self, u: f64, grow: f64, damp: f64) -> f64 {
        let env = grow + u.abs();
        self.p.big_r * damp * (self.p.c + self.p.d * u).clamp(-env, env)
    }

    /// Tables of `e^{r x_j}` and `e^{-delta x_j}` on the nodes of `grid`.
    pub fn at_nodes(&self, grid: &Grid) -> NodeCoefficients<'_> {
        let grow = grid.nodes().iter().map(|x| (self.p.r * x).exp()).collect();
        let damp = grid.nodes().iter().map(|x| (-self.p.delta * x).exp()).collect();
        NodeCoefficients { c: self, grow, damp }
    }

    fn validate(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
        let k = self.k;
        let rel = 1e-12;
        for _ in 0..VALIDATION_SAMPLES {
            let x = rng.random_range(0.0..30.0);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let u = scale * rng.random_range(-1.0..1.0);
            let v = scale * rng.random_range(-1.0..1.0);
            let grow = (self.p.r * x).exp();
            let damp = (-self.p.delta * x).exp();
            let (fu, fv) = (self.f(x, u), self.f(x, v));
            let (su, sv) = (self.sigma(x, u), self.sigma(x, v));
            // absolute slack covers rounding of the evaluated values
            let slack = |bound: f64, size: f64| bound * (1.0 + rel) + 8.0 * f64::EPSILON * size;
            let fsize = fu.abs() + fv.abs();
            let ssize = su.abs() + sv.abs();
            let checks = [
                ((fu - fv).abs(), slack(k.c11 * (u - v).abs(), fsize), "drift Lipschitz"),
                (fu.abs(), slack(k.c12 * (grow + u.abs()), fsize), "drift growth"),
                ((su - sv).abs(), slack(k.c13 * damp * (u - v).abs(), ssize), "diffusion Lipschitz"),
                (su.abs(), slack(k.big_r * damp * (grow + u.abs()), ssize), "diffusion growth"),
            ];
            for (lhs, rhs, what) in checks {
                if !(lhs <= rhs) {
                    return Err(invalid(format!("{what} bound violated at x={x}, u={u}, v={v}: {lhs} > {rhs}")));
                }
            }
        }
        Ok(())
    }
}

/// Coefficients with the exponential factors tabulated on a grid's nodes.
pub struct NodeCoefficients<'a> {
    c: &'a Coefficients,
    grow: Vec<f64>,
    damp: Vec<f64>,
}

impl NodeCoefficients<'_> {
    #[inline]
    pub fn f(&self, j: usize, u: f64) -> f64 {
        self.c.f_with(u, self.grow[j])
    }

    #[inline]
    pub fn sigma(&self, j: usize, u: f64) -> f64 {
        self.c.sigma_with(u, self.grow[j], self.damp[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CoefficientParams {
        CoefficientParams { a: -0.7, b: 0.3, big_r: 0.8, delta: 0.5, c: 0.4, d: 1.6, r: 0.5 }
    }

    #[test]
    fn constants_follow_parameters() {
        let c = Coefficients::new(params()).unwrap();
        let k = c.constants();
        assert_eq!(k.c11, 0.7);
        assert_eq!(k.c12, 0.7);
        assert!((k.c13 - 1.28).abs() < 1e-15);
    }

    #[test]
    fn negative_scale_or_damping_is_rejected() {
        assert!(Coefficients::new(CoefficientParams { big_r: -1.0, ..params() }).is_err());
        assert!(Coefficients::new(CoefficientParams { delta: -0.1, ..params() }).is_err());
        assert!(Coefficients::new(CoefficientParams { a: f64::NAN, ..params() }).is_err());
    }

    #[test]
    fn diffusion_is_clipped_to_growth_envelope() {
        let c = Coefficients::new(CoefficientParams { big_r: 1.0, c: 50.0, d: 0.0, ..Default::default() }).unwrap();
        assert_eq!(c.sigma(0.0, 0.0), 1.0);
        assert_eq!(c.sigma(0.0, 3.0), 4.0);
    }

    #[test]
    fn node_tables_match_direct_evaluation() {
        let c = Coefficients::new(params()).unwrap();
        let g = Grid::new(1.0, 5.0, 10, 25).unwrap();
        let nc = c.at_nodes(&g);
        for j in [0usize, 7, 25] {
            assert_eq!(nc.f(j, 0.3), c.f(g.x(j), 0.3));
            assert_eq!(nc.sigma(j, -1.1), c.sigma(g.x(j), -1.1));
        }
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let c = Coefficients::new(params()).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: Coefficients = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let bad = s.replace("\"delta\":0.5", "\"delta\":-0.5");
        assert!(serde_json::from_str::<Coefficients>(&bad).is_err());
    }
}
