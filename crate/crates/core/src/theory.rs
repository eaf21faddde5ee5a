//! Closed-form expectations of the surrogate fit for a linear black box
//! sampled on the theoretical quantile grid.
//!
//! Every quantity is expressed through the shrunk Gaussian `N(μ̃, σ̃²I)`, the
//! product of the sampling density and the weight kernel, normalized by the
//! expected weight `C_d`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BlackBox, LinearModel};
use crate::sampling::{theoretical_grid, GridSource, QuantileGrid, SamplingConfig};
use crate::special::{erf_diff, FRAC_1_SQRT_2PI};

/// Distance from 0 or 1 below which a bin mass makes `Σ` numerically singular.
pub const ALPHA_GUARD: f64 = 1e-12;

/// Denominators of `V_crit` smaller than this are treated as zero.
const VCRIT_GUARD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrunkParams {
    pub mu_tilde: Vec<f64>,
    pub sigma_tilde: f64,
    /// Expected weight `E[π]`.
    pub c_d: f64,
    /// `max_j 1/(α_j(1-α_j))`.
    pub a_d: f64,
}

/// `(ν²μ + σ²ξ)/(ν²+σ²)`, componentwise, written as `μ + σ²/(ν²+σ²)·(ξ-μ)`
/// so that `ξ = μ` gives `μ` exactly.
pub fn mu_tilde(config: &SamplingConfig) -> Vec<f64> {
    let (s2, v2) = (config.sigma * config.sigma, config.nu * config.nu);
    let pull = s2 / (v2 + s2);
    config
        .mu
        .iter()
        .zip(&config.xi)
        .map(|(m, x)| m + pull * (x - m))
        .collect()
}

/// `νσ/√(ν²+σ²)`.
pub fn sigma_tilde(sigma: f64, nu: f64) -> f64 {
    nu * sigma / nu.hypot(sigma)
}

/// `C_d = (ν²/(ν²+σ²))^{d/2} exp(-‖ξ-μ‖²/(2(ν²+σ²)))`.
pub fn scaling_constant(config: &SamplingConfig) -> f64 {
    let (s2, v2) = (config.sigma * config.sigma, config.nu * config.nu);
    let dist2: f64 = config.xi.iter().zip(&config.mu).map(|(x, m)| (x - m) * (x - m)).sum();
    let d = config.dim() as f64;
    (0.5 * d * (v2 / (v2 + s2)).ln() - dist2 / (2.0 * (v2 + s2))).exp()
}

/// Mass of `N(center, scale²)` on `(lo, hi)`.
pub fn bin_alpha(center: f64, scale: f64, lo: f64, hi: f64) -> f64 {
    let k = scale * std::f64::consts::SQRT_2;
    0.5 * erf_diff((lo - center) / k, (hi - center) / k)
}

/// `[scale/√(2π) · exp(-(x-center)²/(2 scale²))]` evaluated from `lo` to `hi`.
/// Infinite limits contribute zero.
pub fn bin_theta(center: f64, scale: f64, lo: f64, hi: f64) -> f64 {
    let g = |x: f64| {
        if x.is_infinite() {
            0.0
        } else {
            let u = (x - center) / scale;
            scale * FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
        }
    };
    g(hi) - g(lo)
}

/// `C_d [[1, αᵀ], [α, M]]` with `M_jj = α_j` and `M_jk = α_j α_k`.
pub fn sigma_matrix_from(alpha: &[f64], c_d: f64) -> DMatrix<f64> {
    let d = alpha.len();
    DMatrix::from_fn(d + 1, d + 1, |r, c| {
        let v = match (r, c) {
            (0, 0) => 1.0,
            (0, k) | (k, 0) => alpha[k - 1],
            (j, k) if j == k => alpha[j - 1],
            (j, k) => alpha[j - 1] * alpha[k - 1],
        };
        c_d * v
    })
}

/// Arrowhead inverse of [`sigma_matrix_from`].
pub fn sigma_inverse_from(alpha: &[f64], c_d: f64) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    let d = alpha.len();
    let mut inv = DMatrix::zeros(d + 1, d + 1);
    inv[(0, 0)] = 1.0 + alpha.iter().map(|a| a / (1.0 - a)).sum::<f64>();
    for (j, &a) in alpha.iter().enumerate() {
        inv[(0, j + 1)] = -1.0 / (1.0 - a);
        inv[(j + 1, 0)] = -1.0 / (1.0 - a);
        inv[(j + 1, j + 1)] = 1.0 / (a * (1.0 - a));
    }
    Ok(inv / c_d)
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    match alpha.iter().position(|&a| !(a > ALPHA_GUARD && a < 1.0 - ALPHA_GUARD)) {
        Some(j) => Err(Error::NearDegenerateBin {
            feature: j + 1,
            alpha: alpha[j],
        }),
        None => Ok(()),
    }
}

/// Intercept and coefficients of the limit surrogate for a function with value
/// `f_mu` at `μ̃` and gradient `a`.
pub fn beta_from_parts(f_mu: f64, a: &[f64], alpha: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let mut beta = Vec::with_capacity(a.len() + 1);
    let shift: f64 = a
        .iter()
        .zip(theta)
        .zip(alpha)
        .map(|((a, t), al)| a * t / (1.0 - al))
        .sum();
    beta.push(f_mu + shift);
    beta.extend(
        a.iter()
            .zip(theta)
            .zip(alpha)
            .map(|((a, t), al)| -a * t / (al * (1.0 - al))),
    );
    Ok(beta)
}

/// `f(μ̃) - Σ a_j θ_j / α_j`.
pub fn local_error_center_from_parts(f_mu: f64, a: &[f64], alpha: &[f64], theta: &[f64]) -> f64 {
    f_mu - a
        .iter()
        .zip(theta)
        .zip(alpha)
        .map(|((a, t), al)| a * t / al)
        .sum::<f64>()
}

/// Per-feature quantities of one configuration: the bin containing `ξ_j`
/// and its `α_j`, `θ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    config: SamplingConfig,
    bins: Vec<(f64, f64)>,
    mu_tilde: Vec<f64>,
    sigma_tilde: f64,
    c_d: f64,
    alpha: Vec<f64>,
    theta: Vec<f64>,
}

impl Oracle {
    /// The grid must be the theoretical grid of `(μ, σ, p)`: the closed forms
    /// rely on the samples being exactly `N(μ, σ²I)`.
    pub fn new(config: &SamplingConfig, grid: &QuantileGrid) -> Result<Self> {
        config.check_grid(grid)?;
        if grid.source() != GridSource::Theoretical {
            return Err(Error::usage(
                "closed forms need the theoretical grid of the sampling distribution",
            ));
        }
        let expected = theoretical_grid(&config.mu, config.sigma, config.p)?;
        for j in 0..config.dim() {
            let same = expected
                .boundaries(j)
                .iter()
                .zip(grid.boundaries(j))
                .all(|(a, b)| a == b || (a - b).abs() <= 1e-12 * config.sigma.max(a.abs()));
            if !same {
                return Err(Error::usage(format!(
                    "feature {}: grid is not the quantile grid of N(mu, sigma^2)",
                    j + 1
                )));
            }
        }
        let bins = (0..config.dim())
            .map(|j| grid.bin_of(j, config.xi[j]))
            .enumerate()
            .map(|(j, k)| grid.bin_bounds(j, k))
            .collect();
        Ok(Self::with_bins(config, bins))
    }

    /// Uses the given bin of `ξ_j` for every feature, for any bin layout.
    pub fn with_bins(config: &SamplingConfig, bins: Vec<(f64, f64)>) -> Self {
        let mu_tilde = mu_tilde(config);
        let sigma_tilde = sigma_tilde(config.sigma, config.nu);
        let alpha = bins
            .iter()
            .zip(&mu_tilde)
            .map(|(&(lo, hi), &m)| bin_alpha(m, sigma_tilde, lo, hi))
            .collect();
        let theta = bins
            .iter()
            .zip(&mu_tilde)
            .map(|(&(lo, hi), &m)| bin_theta(m, sigma_tilde, lo, hi))
            .collect();
        Self {
            config: config.clone(),
            c_d: scaling_constant(config),
            bins,
            mu_tilde,
            sigma_tilde,
            alpha,
            theta,
        }
    }

    pub fn config(&self) -> &SamplingConfig {
        &self.config
    }

    /// Bin `(q_{j-}, q_{j+})` containing `ξ_j`.
    pub fn bins(&self) -> &[(f64, f64)] {
        &self.bins
    }

    pub fn mu_tilde(&self) -> &[f64] {
        &self.mu_tilde
    }

    pub fn sigma_tilde(&self) -> f64 {
        self.sigma_tilde
    }

    pub fn c_d(&self) -> f64 {
        self.c_d
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn a_d(&self) -> f64 {
        self.alpha
            .iter()
            .map(|a| 1.0 / (a * (1.0 - a)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn shrunk(&self) -> ShrunkParams {
        ShrunkParams {
            mu_tilde: self.mu_tilde.clone(),
            sigma_tilde: self.sigma_tilde,
            c_d: self.c_d,
            a_d: self.a_d(),
        }
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        sigma_matrix_from(&self.alpha, self.c_d)
    }

    pub fn sigma_inverse(&self) -> Result<DMatrix<f64>> {
        sigma_inverse_from(&self.alpha, self.c_d)
    }

    /// `Γ = C_d (f(μ̃), α_j f(μ̃) - a_j θ_j)`.
    pub fn gamma(&self, model: &LinearModel) -> Result<Vec<f64>> {
        let a = self.gradient(model)?;
        let f_mu = model.predict(&self.mu_tilde);
        let mut gamma = vec![self.c_d * f_mu];
        gamma.extend(
            self.alpha
                .iter()
                .zip(&self.theta)
                .zip(a)
                .map(|((al, t), a)| self.c_d * (al * f_mu - a * t)),
        );
        Ok(gamma)
    }

    pub fn beta(&self, model: &LinearModel) -> Result<Vec<f64>> {
        let a = self.gradient(model)?;
        beta_from_parts(model.predict(&self.mu_tilde), a, &self.alpha, &self.theta)
    }

    /// β computed from an arbitrary gradient, as a first-order approximation
    /// for non-linear models.
    pub fn beta_with_gradient(&self, f_mu: f64, gradient: &[f64]) -> Result<Vec<f64>> {
        self.check_len(gradient.len())?;
        beta_from_parts(f_mu, gradient, &self.alpha, &self.theta)
    }

    pub fn local_error_center(&self, model: &LinearModel) -> Result<f64> {
        let a = self.gradient(model)?;
        Ok(local_error_center_from_parts(
            model.predict(&self.mu_tilde),
            a,
            &self.alpha,
            &self.theta,
        ))
    }

    /// Squared bandwidth at which `θ_j` vanishes, when one exists.
    pub fn v_crit(&self, j: usize) -> Option<f64> {
        let (lo, hi) = self.bins[j];
        if !(lo.is_finite() && hi.is_finite()) {
            return None;
        }
        let den = lo + hi - 2.0 * self.config.mu[j];
        if den.abs() < VCRIT_GUARD {
            return None;
        }
        let s2 = self.config.sigma * self.config.sigma;
        let v = s2 * (2.0 * self.config.xi[j] - lo - hi) / den;
        (v > 0.0 && v.is_finite()).then_some(v)
    }

    pub fn sample_size_bound(&self, model: &LinearModel, epsilon: f64, eta: f64) -> Result<SampleSizeBound> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::usage("epsilon must be positive"));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::usage("eta must lie in (0, 1)"));
        }
        self.gradient(model)?;
        check_alpha(&self.alpha)?;
        let d = self.config.dim() as f64;
        let grad2 = model.gradient_norm().powi(2);
        let s2 = self.config.sigma * self.config.sigma;
        let a_d = self.a_d();
        let c2 = self.c_d * self.c_d;
        let e2 = epsilon * epsilon;
        let f_mu = model.predict(&self.mu_tilde);
        let st2 = self.sigma_tilde * self.sigma_tilde;

        let first = 288.0 * grad2 * s2 * d * d * a_d * a_d / (e2 * c2) * (12.0 * d / eta).ln();
        let second = 18.0 * d * d * a_d * a_d / c2 * (24.0 * d * d / eta).ln();
        let third =
            648.0 * d.powi(5) * a_d.powi(4) * (3.0 * f_mu * f_mu + st2 * grad2) / (c2 * e2) * (24.0 * d * d / eta).ln();
        let max = first.max(second).max(third);
        if max.is_nan() {
            return Err(Error::Numerical("sample-size bound is not a number".into()));
        }
        // `as` saturates, so an overflowing bound becomes u64::MAX
        let n = max.ceil() as u64;
        Ok(SampleSizeBound {
            n,
            terms: [first, second, third],
        })
    }

    pub fn report(&self, model: &LinearModel) -> Result<TheoryReport> {
        let to_rows =
            |m: DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect() };
        Ok(TheoryReport {
            shrunk: self.shrunk(),
            alpha: self.alpha.clone(),
            theta: self.theta.clone(),
            sigma_matrix: to_rows(self.sigma_matrix()),
            sigma_inverse: to_rows(self.sigma_inverse()?),
            gamma: self.gamma(model)?,
            beta: self.beta(model)?,
            local_error_center: self.local_error_center(model)?,
            v_crit: (0..self.config.dim()).map(|j| self.v_crit(j)).collect(),
        })
    }

    fn gradient<'a>(&self, model: &'a LinearModel) -> Result<&'a [f64]> {
        self.check_len(model.coefficients.len())?;
        Ok(&model.coefficients)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.config.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim(),
                got,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeBound {
    /// Ceiling of the largest term, saturating at `u64::MAX`.
    pub n: u64,
    pub terms: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub shrunk: ShrunkParams,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma_matrix: Vec<Vec<f64>>,
    pub sigma_inverse: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub local_error_center: f64,
    /// `null` where the bin of `ξ_j` admits no switch-off bandwidth.
    pub v_crit: Vec<Option<f64>>,
}

pub fn shrunk_params(config: &SamplingConfig, grid: &QuantileGrid) -> Result<ShrunkParams> {
    Ok(Oracle::new(config, grid)?.shrunk())
}

pub fn alpha(j: usize, config: &SamplingConfig, grid: &QuantileGrid) -> Result<f64> {
    let oracle = Oracle::new(config, grid)?;
    oracle.check_index(j)?;
    Ok(oracle.alpha[j])
}

pub fn theta(j: usize, config: &SamplingConfig, grid: &QuantileGrid) -> Result<f64> {
    let oracle = Oracle::new(config, grid)?;
    oracle.check_index(j)?;
    Ok(oracle.theta[j])
}

pub fn sigma_matrix(config: &SamplingConfig, grid: &QuantileGrid) -> Result<DMatrix<f64>> {
    Ok(Oracle::new(config, grid)?.sigma_matrix())
}

pub fn sigma_inverse(config: &SamplingConfig, grid: &QuantileGrid) -> Result<DMatrix<f64>> {
    Oracle::new(config, grid)?.sigma_inverse()
}

pub fn gamma_vector(model: &LinearModel, config: &SamplingConfig, grid: &QuantileGrid) -> Result<Vec<f64>> {
    Oracle::new(config, grid)?.gamma(model)
}

pub fn beta_closed_form(model: &LinearModel, config: &SamplingConfig, grid: &QuantileGrid) -> Result<Vec<f64>> {
    Oracle::new(config, grid)?.beta(model)
}

pub fn local_error_center(model: &LinearModel, config: &SamplingConfig, grid: &QuantileGrid) -> Result<f64> {
    Oracle::new(config, grid)?.local_error_center(model)
}

pub fn v_crit(j: usize, config: &SamplingConfig, grid: &QuantileGrid) -> Result<Option<f64>> {
    let oracle = Oracle::new(config, grid)?;
    oracle.check_index(j)?;
    Ok(oracle.v_crit(j))
}

pub fn sample_size_bound(
    model: &LinearModel,
    config: &SamplingConfig,
    grid: &QuantileGrid,
    epsilon: f64,
    eta: f64,
) -> Result<SampleSizeBound> {
    Oracle::new(config, grid)?.sample_size_bound(model, epsilon, eta)
}

pub fn theory_report(model: &LinearModel, config: &SamplingConfig, grid: &QuantileGrid) -> Result<TheoryReport> {
    Oracle::new(config, grid)?.report(model)
}

/// `E[π ‖x-ξ‖²] = C_d [ν⁴/(ν²+σ²)² ‖ξ-μ‖² + ν²σ²d/(ν²+σ²)]`.
pub fn expected_weighted_sqnorm(config: &SamplingConfig) -> f64 {
    let (s2, v2) = (config.sigma * config.sigma, config.nu * config.nu);
    let dist2: f64 = config.xi.iter().zip(&config.mu).map(|(x, m)| (x - m) * (x - m)).sum();
    let t = v2 + s2;
    scaling_constant(config) * (v2 * v2 / (t * t) * dist2 + v2 * s2 * config.dim() as f64 / t)
}

impl Oracle {
    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.config.dim() {
            return Err(Error::usage(format!(
                "feature index {j} out of range for dimension {}",
                self.config.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrals::{gauss_quadrature, IntegralSpec};
    use crate::special::norm_quantile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(xi: Vec<f64>, mu: Vec<f64>, sigma: f64, nu: f64, p: usize) -> SamplingConfig {
        SamplingConfig {
            xi,
            mu,
            sigma,
            nu,
            p,
            n: 1000,
            seed: 0,
        }
    }

    fn oracle(c: &SamplingConfig) -> Oracle {
        Oracle::new(c, &theoretical_grid(&c.mu, c.sigma, c.p).unwrap()).unwrap()
    }

    #[test]
    fn shrunk_params_at_equal_scales() {
        let c = config(vec![0.4, -1.0], vec![0.4, -1.0], 1.3, 1.3, 4);
        let s = oracle(&c).shrunk();
        assert!((s.c_d - 0.5).abs() < 1e-15);
        assert_eq!(s.mu_tilde, c.mu);
        assert!((s.sigma_tilde.powi(2) - 1.3 * 1.3 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn scaling_constant_limits() {
        let c = config(vec![0.3, 2.0], vec![0.0, 0.0], 1.0, 1e9, 4);
        assert!((scaling_constant(&c) - 1.0).abs() < 1e-9);
        let c = config(vec![1.0, 0.0], vec![0.0, 0.0], 1.0, 1.0, 4);
        assert!((scaling_constant(&c) - 0.5 * (-0.25f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn scaling_constant_is_expected_weight() {
        // E[π] factorizes over coordinates into full-line order-0 integrals
        let c = config(vec![1.0, 0.0], vec![0.0, 0.0], 1.0, 1.0, 4);
        let e: f64 = (0..2)
            .map(|j| {
                let spec =
                    IntegralSpec::new(c.xi[j], c.mu[j], c.nu, c.sigma, f64::NEG_INFINITY, f64::INFINITY, 0).unwrap();
                gauss_quadrature(&spec, 1e-13).unwrap()
            })
            .product();
        assert!((e - scaling_constant(&c)).abs() < 1e-12);
    }

    #[test]
    fn sigma_tilde_below_both_scales() {
        for &(s, v) in &[(1.0, 1.0), (0.3, 3.0), (5.0, 0.01)] {
            let st = sigma_tilde(s, v);
            assert!(st < s && st < v);
        }
    }

    #[test]
    fn alpha_whole_line_and_wide_bandwidth() {
        assert_eq!(bin_alpha(0.3, 0.7, f64::NEG_INFINITY, f64::INFINITY), 1.0);
        assert_eq!(bin_theta(0.3, 0.7, f64::NEG_INFINITY, f64::INFINITY), 0.0);
        let c = config(vec![0.3, -0.2], vec![0.0, 0.0], 1.0, 1e9, 4);
        for a in oracle(&c).alpha() {
            assert!((a - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn alpha_matches_quadrature() {
        let c = config(vec![0.3], vec![0.0], 1.0, 1.0, 4);
        let o = oracle(&c);
        assert_eq!(o.bins()[0], (0.0, norm_quantile(0.75)));
        let spec = IntegralSpec::new(0.3, 0.0, 1.0, 1.0, 0.0, norm_quantile(0.75), 0).unwrap();
        let mass = gauss_quadrature(&spec, 1e-13).unwrap();
        // the order-0 integral includes the factor C_1
        assert!((mass / o.c_d() - o.alpha()[0]).abs() < 1e-8);
    }

    #[test]
    fn theta_matches_first_moment_quadrature() {
        let c = config(vec![0.3, 1.4], vec![0.0, 0.0], 1.0, 1.0, 4);
        let o = oracle(&c);
        for j in 0..2 {
            let (lo, hi) = o.bins()[j];
            let c1 = {
                let cj = config(vec![c.xi[j]], vec![0.0], 1.0, 1.0, 4);
                scaling_constant(&cj)
            };
            let spec = IntegralSpec::new(c.xi[j], 0.0, 1.0, 1.0, lo, hi, 1).unwrap();
            let first = gauss_quadrature(&spec, 1e-13).unwrap() / c1;
            let want = o.mu_tilde()[j] * o.alpha()[j] - first;
            assert!((o.theta()[j] - want).abs() < 1e-8, "{} vs {want}", o.theta()[j]);
        }
    }

    #[test]
    fn theta_vanishes_on_symmetric_bin() {
        assert!(bin_theta(1.0, 0.4, 0.5, 1.5).abs() < 1e-17);
    }

    #[test]
    fn small_matrices_by_hand() {
        let s = sigma_matrix_from(&[0.3], 0.8);
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.8, 0.24, 0.24, 0.24]));
        let inv = sigma_inverse_from(&[0.5], 1.0).unwrap();
        assert_eq!(inv, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 4.0]));
        assert!(matches!(
            sigma_inverse_from(&[0.5, 1.0 - 1e-13], 1.0),
            Err(Error::NearDegenerateBin { feature: 2, .. })
        ));
    }

    #[test]
    fn inverse_is_arrowhead() {
        let c = config(vec![0.1, 1.2, -0.4, -2.0], vec![0.0; 4], 1.0, 1.0, 4);
        let inv = oracle(&c).sigma_inverse().unwrap();
        for j in 1..5 {
            for k in 1..5 {
                if j != k {
                    assert_eq!(inv[(j, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn gamma_and_beta_trivial_cases() {
        let c = config(vec![0.1, 1.2], vec![0.0, 0.5], 1.1, 0.8, 4);
        let o = oracle(&c);
        let f = LinearModel::new(vec![0.0, 0.0], 3.0).unwrap();
        let g = o.gamma(&f).unwrap();
        assert!((g[0] - o.c_d() * 3.0).abs() < 1e-15);
        for j in 0..2 {
            assert!((g[j + 1] - o.c_d() * 3.0 * o.alpha()[j]).abs() < 1e-15);
        }
        assert_eq!(o.beta(&f).unwrap(), vec![3.0, 0.0, 0.0]);
        assert_eq!(o.local_error_center(&f).unwrap(), 3.0);

        // whole-line bin: α = 1, θ = 0
        let c1 = config(vec![0.2], vec![0.0], 1.0, 1.0, 4);
        let whole = Oracle::with_bins(&c1, vec![(f64::NEG_INFINITY, f64::INFINITY)]);
        let f1 = LinearModel::new(vec![2.0], 1.0).unwrap();
        let g = whole.gamma(&f1).unwrap();
        let fm = f1.predict(whole.mu_tilde());
        assert!((g[0] - whole.c_d() * fm).abs() < 1e-15);
        assert!((g[1] - whole.c_d() * fm).abs() < 1e-15);
    }

    #[test]
    fn wrong_grid_is_rejected() {
        let c = config(vec![0.1], vec![0.0], 1.0, 1.0, 4);
        let other = theoretical_grid(&[0.5], 1.0, 4).unwrap();
        assert!(Oracle::new(&c, &other).is_err());
        let empirical = QuantileGrid::from_interior(
            vec![theoretical_grid(&[0.0], 1.0, 4).unwrap().boundaries(0)[1..4].to_vec()],
            GridSource::Empirical,
        )
        .unwrap();
        assert!(Oracle::new(&c, &empirical).is_err());
    }

    fn random_config(rng: &mut ChaCha8Rng) -> SamplingConfig {
        let d = rng.random_range(1..=10);
        let sigma = rng.random_range(0.3..3.0);
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xi = mu.iter().map(|m| m + sigma * rng.random_range(-2.0..2.0)).collect();
        config(xi, mu, sigma, rng.random_range(0.3..3.0), 4)
    }

    #[test]
    fn closed_forms_are_self_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut skipped = 0;
        for _ in 0..100 {
            let c = random_config(&mut rng);
            let o = oracle(&c);
            let d = c.dim();
            let f = LinearModel::new(
                (0..d).map(|_| rng.random_range(-10.0..10.0)).collect(),
                rng.random_range(-5.0..5.0),
            )
            .unwrap();
            let s = o.sigma_matrix();
            let inv = match o.sigma_inverse() {
                Ok(inv) => inv,
                Err(Error::NearDegenerateBin { alpha, .. }) => {
                    assert!(!(alpha > ALPHA_GUARD && alpha < 1.0 - ALPHA_GUARD));
                    skipped += 1;
                    continue;
                }
                Err(e) => panic!("{e}"),
            };
            let residual = &s * &inv - DMatrix::identity(d + 1, d + 1);
            let scale = s.abs() * inv.abs();
            for (r, sc) in residual.iter().zip(scale.iter()) {
                assert!(r.abs() <= 1e-10f64.max(64.0 * f64::EPSILON * sc));
            }
            let beta = o.beta(&f).unwrap();
            let via = &inv * nalgebra::DVector::from_vec(o.gamma(&f).unwrap());
            // the product cancels terms of size |Σ⁻¹||Γ|, so compare on that scale
            let gamma = nalgebra::DVector::from_vec(o.gamma(&f).unwrap());
            let scale = inv.abs() * gamma.abs();
            for ((a, b), s) in beta.iter().zip(via.iter()).zip(scale.iter()) {
                assert!((a - b).abs() <= 1e-10f64.max(64.0 * f64::EPSILON * s), "{a} vs {b}");
            }
            let center = o.local_error_center(&f).unwrap();
            let scale: f64 = beta.iter().map(|b| b.abs()).sum();
            assert!((beta.iter().sum::<f64>() - center).abs() <= 1e-10f64.max(64.0 * f64::EPSILON * scale));
            for j in 0..d {
                assert!(o.theta()[j].abs() <= o.sigma_tilde() * FRAC_1_SQRT_2PI + 1e-15);
                let at = f.coefficients[j] * o.theta()[j];
                assert_eq!(beta[j + 1] == 0.0, at == 0.0);
                if at != 0.0 {
                    assert_eq!(beta[j + 1].signum(), -at.signum());
                }
            }
        }
        assert!(skipped <= 10, "{skipped} near-degenerate configurations");
    }

    #[test]
    fn v_crit_example_and_root() {
        let c = config(vec![0.5], vec![0.0], 1.0, 1.0, 4);
        let q = norm_quantile(0.75);
        let v = oracle(&c).v_crit(0).unwrap();
        assert!((v - (1.0 - q) / q).abs() < 1e-15);
        assert!((v - 0.4826).abs() < 1e-4);
        assert!((v.sqrt() - 0.69470).abs() < 1e-5);
        let at = config(vec![0.5], vec![0.0], 1.0, v.sqrt(), 4);
        assert!(oracle(&at).theta()[0].abs() < 1e-10);
    }

    #[test]
    fn v_crit_undefined_cases() {
        let q = norm_quantile(0.75);
        // ξ at the bin midpoint
        assert_eq!(oracle(&config(vec![q / 2.0], vec![0.0], 1.0, 1.0, 4)).v_crit(0), None);
        // wrong side of the midpoint
        assert_eq!(oracle(&config(vec![0.1], vec![0.0], 1.0, 1.0, 4)).v_crit(0), None);
        // outer bin
        assert_eq!(oracle(&config(vec![2.0], vec![0.0], 1.0, 1.0, 4)).v_crit(0), None);
        // bin centered on μ (odd p)
        assert_eq!(oracle(&config(vec![0.2], vec![0.0], 1.0, 1.0, 3)).v_crit(0), None);
    }

    #[test]
    fn v_crit_roots_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut found = 0;
        for _ in 0..200 {
            let c = random_config(&mut rng);
            let o = oracle(&c);
            for j in 0..c.dim() {
                if let Some(v) = o.v_crit(j) {
                    found += 1;
                    let at = SamplingConfig {
                        nu: v.sqrt(),
                        ..c.clone()
                    };
                    assert!(oracle(&at).theta()[j].abs() <= 1e-10);
                }
            }
        }
        assert!(found > 20);
    }

    fn bound_config() -> (SamplingConfig, LinearModel) {
        let mut xi = vec![0.0; 10];
        xi[0] = 0.9;
        xi[1] = -0.3;
        xi[2] = 1.7;
        let c = config(xi, vec![0.0; 10], 1.0, 1.0, 4);
        let mut a = vec![0.0; 10];
        a[0] = 10.0;
        a[1] = -10.0;
        (c, LinearModel::new(a, 0.0).unwrap())
    }

    /// Second transcription of the bound, with α from a different CDF routine.
    fn bound_by_hand(c: &SamplingConfig, f: &LinearModel, eps: f64, eta: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        let (s, v) = (c.sigma, c.nu);
        let st = (v * v * s * s / (v * v + s * s)).sqrt();
        let mt: Vec<f64> =
            c.xi.iter()
                .zip(&c.mu)
                .map(|(x, m)| (v * v * m + s * s * x) / (v * v + s * s))
                .collect();
        let mut a_d: f64 = 0.0;
        for j in 0..c.dim() {
            let std = Normal::new(c.mu[j], s).unwrap();
            let qs: Vec<f64> = (1..4).map(|k| std.inverse_cdf(k as f64 / 4.0)).collect();
            let k = qs.iter().filter(|q| **q <= c.xi[j]).count();
            let lo = if k == 0 { f64::NEG_INFINITY } else { qs[k - 1] };
            let hi = if k == 3 { f64::INFINITY } else { qs[k] };
            let sh = Normal::new(mt[j], st).unwrap();
            let al = sh.cdf(hi) - sh.cdf(lo);
            a_d = a_d.max(1.0 / (al * (1.0 - al)));
        }
        let dist2: f64 = c.xi.iter().map(|x| x * x).sum();
        let d = 10.0f64;
        let cd = (v * v / (v * v + s * s)).powf(d / 2.0) * (-dist2 / (2.0 * (v * v + s * s))).exp();
        let g2: f64 = f.coefficients.iter().map(|a| a * a).sum();
        let fm = f.predict(&mt);
        let t1 = 288.0 * g2 * s * s * d * d * a_d * a_d / (eps * eps * cd * cd) * (12.0 * d / eta).ln();
        let t2 = 18.0 * d * d * a_d * a_d / (cd * cd) * (24.0 * d * d / eta).ln();
        let t3 = 648.0 * d.powi(5) * a_d.powi(4) * (3.0 * fm * fm + st * st * g2) / (cd * cd * eps * eps)
            * (24.0 * d * d / eta).ln();
        t1.max(t2).max(t3)
    }

    #[test]
    fn sample_size_bound_matches_second_transcription() {
        let (c, f) = bound_config();
        let b = oracle(&c).sample_size_bound(&f, 1.0, 0.1).unwrap();
        let hand = bound_by_hand(&c, &f, 1.0, 0.1);
        assert!((b.terms.iter().cloned().fold(0.0, f64::max) / hand - 1.0).abs() < 1e-9);
        assert!((b.n as f64 / hand.ceil() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sample_size_bound_monotone_and_finite() {
        let (c, f) = bound_config();
        let o = oracle(&c);
        let b1 = o.sample_size_bound(&f, 1.0, 0.1).unwrap();
        let b2 = o.sample_size_bound(&f, 0.5, 0.1).unwrap();
        assert!(b2.n > b1.n);
        assert!(b2.terms[0] >= 4.0 * b1.terms[0] * (1.0 - 1e-12));
        assert!(b2.terms[2] >= 4.0 * b1.terms[2] * (1.0 - 1e-12));
        let near_one = o.sample_size_bound(&f, 1.0, 1.0 - 1e-12).unwrap();
        assert!(near_one.terms.iter().all(|t| t.is_finite()));
        assert!(o.sample_size_bound(&f, 0.0, 0.1).is_err());
        assert!(o.sample_size_bound(&f, 1.0, 1.0).is_err());
    }

    #[test]
    fn weighted_sqnorm_cases() {
        let c = config(vec![0.2, 0.2], vec![0.2, 0.2], 1.5, 0.7, 4);
        let (s2, v2) = (2.25, 0.49);
        let want = scaling_constant(&c) * v2 * s2 * 2.0 / (v2 + s2);
        assert!((expected_weighted_sqnorm(&c) - want).abs() < 1e-15);
        let tiny = config(vec![0.2], vec![0.2], 1e-9, 1.0, 4);
        assert!(expected_weighted_sqnorm(&tiny) < 1e-17);
    }

    #[test]
    fn weighted_sqnorm_matches_quadrature() {
        // per-coordinate factorization: E[π (x_j-ξ_j)²] ∏_{k≠j} E[π_k]
        let c = config(vec![1.0, 0.0], vec![0.0, 0.0], 1.0, 1.0, 4);
        let full = |xi: f64, order| {
            let spec = IntegralSpec::new(xi, 0.0, 1.0, 1.0, f64::NEG_INFINITY, f64::INFINITY, order).unwrap();
            gauss_quadrature(&spec, 1e-13).unwrap()
        };
        let mut total = 0.0;
        for j in 0..2 {
            let xi = c.xi[j];
            let centered = full(xi, 2) - 2.0 * xi * full(xi, 1) + xi * xi * full(xi, 0);
            let other = full(c.xi[1 - j], 0);
            total += centered * other;
        }
        assert!((total - expected_weighted_sqnorm(&c)).abs() < 1e-10);
    }
}
