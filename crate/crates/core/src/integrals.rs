//! One-dimensional Gaussian integrals
//! `∫_lo^hi x^k exp(-(x-ξ)²/(2ν²) - (x-μ)²/(2σ²)) dx / (σ√(2π))` for `k ≤ 2`,
//! in closed form and by adaptive quadrature.

use crate::error::{Error, Result};
use crate::special::{erf_diff, FRAC_1_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralSpec {
    pub xi: f64,
    pub mu: f64,
    pub nu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
    pub order: u8,
}

impl IntegralSpec {
    pub fn new(xi: f64, mu: f64, nu: f64, sigma: f64, lo: f64, hi: f64, order: u8) -> Result<Self> {
        let spec = Self {
            xi,
            mu,
            nu,
            sigma,
            lo,
            hi,
            order,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi.is_finite() && self.mu.is_finite()) {
            return Err(Error::usage("xi and mu must be finite"));
        }
        if !(self.nu > 0.0 && self.nu.is_finite() && self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::usage("nu and sigma must be positive"));
        }
        if self.lo.is_nan() || self.hi.is_nan() || self.lo >= self.hi {
            return Err(Error::usage("integration bounds must satisfy lo < hi"));
        }
        if self.order > 2 {
            return Err(Error::usage("order must be 0, 1 or 2"));
        }
        Ok(())
    }

    pub fn integrand(&self, x: f64) -> f64 {
        let a = (x - self.xi) / self.nu;
        let b = (x - self.mu) / self.sigma;
        x.powi(i32::from(self.order)) * (-0.5 * (a * a + b * b)).exp() * FRAC_1_SQRT_2PI / self.sigma
    }

    /// Mean and scale of the Gaussian proportional to the integrand at order 0.
    fn shrunk(&self) -> (f64, f64) {
        let (s2, v2) = (self.sigma * self.sigma, self.nu * self.nu);
        let m = (v2 * self.mu + s2 * self.xi) / (v2 + s2);
        (m, self.nu * self.sigma / self.nu.hypot(self.sigma))
    }

    /// Total mass of the integrand over the real line at order 0.
    fn full_mass(&self) -> f64 {
        let t = self.nu * self.nu + self.sigma * self.sigma;
        let d = self.xi - self.mu;
        self.nu / t.sqrt() * (-d * d / (2.0 * t)).exp()
    }
}

/// Closed form. Order 2 is available on the whole line only.
pub fn gauss_closed(spec: &IntegralSpec) -> Result<f64> {
    spec.validate()?;
    let k = spec.full_mass();
    let (m, s) = spec.shrunk();
    match spec.order {
        0 | 1 => {
            let r = s * std::f64::consts::SQRT_2;
            let mass = 0.5 * erf_diff((spec.lo - m) / r, (spec.hi - m) / r);
            if spec.order == 0 {
                return Ok(k * mass);
            }
            let g = |x: f64| {
                if x.is_infinite() {
                    0.0
                } else {
                    let u = (x - m) / s;
                    s * FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
                }
            };
            Ok(k * (m * mass - (g(spec.hi) - g(spec.lo))))
        }
        _ => {
            if spec.lo != f64::NEG_INFINITY || spec.hi != f64::INFINITY {
                return Err(Error::Unsupported(
                    "second-order integral has a closed form on the whole line only".into(),
                ));
            }
            Ok(k * (m * m + s * s))
        }
    }
}

/// Smallest accepted absolute tolerance.
pub const MIN_TOLERANCE: f64 = 1e-13;

/// Bisection depth after which an interval is reported as not converged.
const MAX_DEPTH: u32 = 40;

/// Adaptive Gauss–Kronrod (7/15) quadrature over the part of `(lo, hi)`
/// within 12 scales of `ξ` and `μ`. Outside that window the integrand is
/// below `e^{-72}` relative to its peak.
pub fn gauss_quadrature(spec: &IntegralSpec, tol: f64) -> Result<f64> {
    spec.validate()?;
    if !(tol >= MIN_TOLERANCE) {
        return Err(Error::usage(format!("tolerance must be at least {MIN_TOLERANCE:e}")));
    }
    let reach = 12.0 * spec.nu.max(spec.sigma);
    let a = spec.lo.max(spec.xi.min(spec.mu) - reach);
    let b = spec.hi.min(spec.xi.max(spec.mu) + reach);
    if a >= b {
        return Ok(0.0);
    }

    // break at the peak so narrow integrands are seen by the first rule
    let (m, s) = spec.shrunk();
    let mut points = vec![a, b];
    for k in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
        let x = m + k * s;
        if x > a && x < b {
            points.push(x);
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();

    let width = b - a;
    let f = |x: f64| spec.integrand(x);
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut failed = false;
    let mut stack: Vec<(f64, f64, u32)> = points.windows(2).rev().map(|w| (w[0], w[1], 0)).collect();
    while let Some((l, r, depth)) = stack.pop() {
        let (est, err) = kronrod15(&f, l, r);
        let budget = tol * (r - l) / width;
        if err <= budget || depth >= MAX_DEPTH || r - l <= f64::EPSILON * l.abs().max(r.abs()) {
            if err > budget {
                failed = true;
            }
            total += est;
            total_err += err;
        } else {
            let mid = 0.5 * (l + r);
            stack.push((mid, r, depth + 1));
            stack.push((l, mid, depth + 1));
        }
    }
    if failed && total_err > tol {
        return Err(Error::NoConvergence {
            estimate: total,
            error: total_err,
        });
    }
    Ok(total)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Kronrod estimate and `|K15 - G7|` on `[l, r]`.
fn kronrod15(f: &impl Fn(f64) -> f64, l: f64, r: f64) -> (f64, f64) {
    let c = 0.5 * (l + r);
    let h = 0.5 * (r - l);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const INF: f64 = f64::INFINITY;

    fn spec(xi: f64, mu: f64, nu: f64, sigma: f64, lo: f64, hi: f64, order: u8) -> IntegralSpec {
        IntegralSpec::new(xi, mu, nu, sigma, lo, hi, order).unwrap()
    }

    #[test]
    fn full_line_values() {
        let s0 = spec(0.4, 0.4, 1.7, 1.7, -INF, INF, 0);
        assert!((gauss_closed(&s0).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);

        let (xi, mu, nu, sigma) = (1.3, -0.2, 0.8, 1.1);
        let zero = gauss_closed(&spec(xi, mu, nu, sigma, -INF, INF, 0)).unwrap();
        let one = gauss_closed(&spec(xi, mu, nu, sigma, -INF, INF, 1)).unwrap();
        let m = (sigma * sigma * xi + nu * nu * mu) / (nu * nu + sigma * sigma);
        assert!((one - m * zero).abs() < 1e-15);

        let two = gauss_closed(&spec(0.0, 0.0, 1.0, 1.0, -INF, INF, 2)).unwrap();
        assert!((two - 2f64.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn second_order_on_interval_is_unsupported() {
        assert!(matches!(
            gauss_closed(&spec(0.0, 0.0, 1.0, 1.0, -1.0, INF, 2)),
            Err(Error::Unsupported(_))
        ));
        // quadrature still works there
        assert!(gauss_quadrature(&spec(0.0, 0.0, 1.0, 1.0, -1.0, INF, 2), 1e-12).is_ok());
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(IntegralSpec::new(0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0).is_err());
        assert!(IntegralSpec::new(0.0, 0.0, -1.0, 1.0, 0.0, 1.0, 0).is_err());
        assert!(IntegralSpec::new(0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 3).is_err());
        let s = spec(0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0);
        assert!(gauss_quadrature(&s, 1e-14).is_err());
    }

    #[test]
    fn vanishing_interval() {
        let s = spec(0.3, 0.0, 1.0, 1.0, 0.5 - 1e-15, 0.5, 0);
        assert!(gauss_quadrature(&s, 1e-13).unwrap().abs() < 1e-14);
        assert!(gauss_closed(&s).unwrap().abs() < 1e-14);
    }

    #[test]
    fn interval_outside_window_is_zero() {
        let s = spec(0.0, 0.0, 1.0, 1.0, 50.0, INF, 0);
        assert_eq!(gauss_quadrature(&s, 1e-13).unwrap(), 0.0);
        assert!(gauss_closed(&s).unwrap() < 1e-300);
    }

    #[test]
    fn narrow_peak_is_resolved() {
        // σ̃ ≈ 1e-3 inside a window of width ~ 240
        let s = spec(3.0, 0.0, 1e-3, 10.0, -INF, INF, 1);
        let closed = gauss_closed(&s).unwrap();
        let quad = gauss_quadrature(&s, 1e-13).unwrap();
        assert!((closed - quad).abs() < 1e-12, "{closed} vs {quad}");
    }

    fn random_bound(rng: &mut ChaCha8Rng) -> (f64, f64) {
        let a = rng.random_range(-4.0..4.0);
        let b = a + rng.random_range(0.01..5.0);
        match rng.random_range(0..4) {
            0 => (a, b),
            1 => (-INF, b),
            2 => (a, INF),
            _ => (-INF, INF),
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let (lo, hi) = random_bound(&mut rng);
            let order = rng.random_range(0..3u8);
            let (lo, hi) = if order == 2 { (-INF, INF) } else { (lo, hi) };
            let s = spec(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.1..3.0),
                rng.random_range(0.1..3.0),
                lo,
                hi,
                order,
            );
            let c = gauss_closed(&s).unwrap();
            let q = gauss_quadrature(&s, 1e-12).unwrap();
            assert!((c - q).abs() < 1e-10, "{s:?}: {c} vs {q}");
        }
    }

    proptest::proptest! {
        #[test]
        fn additivity(xi in -3.0f64..3.0, mu in -3.0f64..3.0, nu in 0.1f64..3.0, sigma in 0.1f64..3.0,
                      a in -5.0f64..5.0, w1 in 0.01f64..3.0, w2 in 0.01f64..3.0, order in 0u8..2) {
            let (b, c) = (a + w1, a + w1 + w2);
            let left = gauss_closed(&spec(xi, mu, nu, sigma, a, b, order)).unwrap();
            let right = gauss_closed(&spec(xi, mu, nu, sigma, b, c, order)).unwrap();
            let whole = gauss_closed(&spec(xi, mu, nu, sigma, a, c, order)).unwrap();
            proptest::prop_assert!((left + right - whole).abs() <= 1e-12);
        }

        #[test]
        fn order_zero_positive(xi in -2.0f64..2.0, mu in -2.0f64..2.0, nu in 0.3f64..3.0, sigma in 0.3f64..3.0,
                               a in -3.0f64..3.0, w in 1e-6f64..3.0) {
            proptest::prop_assert!(gauss_closed(&spec(xi, mu, nu, sigma, a, a + w, 0)).unwrap() > 0.0);
        }
    }
}
