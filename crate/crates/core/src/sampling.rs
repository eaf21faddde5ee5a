//! Quantile grids, discretization, truncated Gaussian perturbations and weights.
//!
//! Randomness is counter based: row `i` of a perturbation set draws from the
//! ChaCha8 stream `i` keyed by the configuration seed, so the output does not
//! depend on how rows are scheduled across threads.

use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::special::{norm_cdf, norm_quantile};

/// Rows generated per parallel work item. Fixed so that block boundaries never
/// depend on the worker count.
const ROW_BLOCK: usize = 2048;

/// Attempts of the inverse-CDF draw before falling back to rejection.
const INVERSE_CDF_ATTEMPTS: usize = 16;
const REJECTION_ATTEMPTS: usize = 10_000;

/// Probability mass below which the inverse CDF is not trusted.
const MIN_INVERSE_MASS: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSource {
    Theoretical,
    Empirical,
}

/// Per-feature bin boundaries `q_{j,0} = -∞ < q_{j,1} < ... < q_{j,p} = +∞`.
///
/// Bin `k` (1-based) of feature `j` is the half-open interval `[q_{j,k-1}, q_{j,k})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    boundaries: Vec<Vec<f64>>,
    p: usize,
    source: GridSource,
}

impl QuantileGrid {
    /// Builds a grid from the interior boundaries of each feature; the outer
    /// `±∞` boundaries are added here.
    pub fn from_interior(interior: Vec<Vec<f64>>, source: GridSource) -> Result<Self> {
        let Some(first) = interior.first() else {
            return Err(Error::usage("grid needs at least one feature"));
        };
        let p = first.len() + 1;
        if p < 2 {
            return Err(Error::usage("grid needs at least two bins"));
        }
        let mut boundaries = Vec::with_capacity(interior.len());
        for (j, row) in interior.into_iter().enumerate() {
            if row.len() + 1 != p {
                return Err(Error::usage(format!(
                    "feature {} has {} bins, expected {p}",
                    j + 1,
                    row.len() + 1
                )));
            }
            if row.iter().any(|q| !q.is_finite()) {
                return Err(Error::usage(format!("feature {}: non-finite boundary", j + 1)));
            }
            if let Some(w) = row.windows(2).position(|w| w[0] >= w[1]) {
                return Err(Error::Degenerate(format!(
                    "feature {}: boundaries {} and {} collapse ({} >= {}); bins must be distinct",
                    j + 1,
                    w + 1,
                    w + 2,
                    row[w],
                    row[w + 1]
                )));
            }
            let mut full = Vec::with_capacity(p + 1);
            full.push(f64::NEG_INFINITY);
            full.extend(row);
            full.push(f64::INFINITY);
            boundaries.push(full);
        }
        Ok(Self { boundaries, p, source })
    }

    pub fn dim(&self) -> usize {
        self.boundaries.len()
    }

    pub fn bins(&self) -> usize {
        self.p
    }

    pub fn source(&self) -> GridSource {
        self.source
    }

    /// All `p + 1` boundaries of feature `j` (0-based), including `±∞`.
    pub fn boundaries(&self, j: usize) -> &[f64] {
        &self.boundaries[j]
    }

    /// `(q_{j,k-1}, q_{j,k})` for the 1-based bin `k` of the 0-based feature `j`.
    pub fn bin_bounds(&self, j: usize, k: usize) -> (f64, f64) {
        (self.boundaries[j][k - 1], self.boundaries[j][k])
    }

    /// 1-based bin of `value` along feature `j`.
    pub fn bin_of(&self, j: usize, value: f64) -> usize {
        let interior = &self.boundaries[j][1..self.p];
        interior.partition_point(|&q| q <= value) + 1
    }
}

/// Quantiles of `N(μ_j, σ²)`: `q_{j,k} = μ_j + σ Φ⁻¹(k/p)`.
pub fn theoretical_grid(mu: &[f64], sigma: f64, p: usize) -> Result<QuantileGrid> {
    if p < 2 {
        return Err(Error::usage("number of bins must be at least 2"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::usage("sigma must be positive"));
    }
    let standard: Vec<f64> = (1..p).map(|k| norm_quantile(k as f64 / p as f64)).collect();
    let interior = mu
        .iter()
        .map(|&m| standard.iter().map(|z| m + sigma * z).collect())
        .collect();
    QuantileGrid::from_interior(interior, GridSource::Theoretical)
}

/// Empirical `k/p` quantiles of each feature, linearly interpolated between
/// order statistics.
pub fn empirical_grid(data: &Dataset, p: usize) -> Result<QuantileGrid> {
    if p < 2 {
        return Err(Error::usage("number of bins must be at least 2"));
    }
    let m = data.n_rows();
    if m < p {
        return Err(Error::usage(format!("{m} rows cannot define {p} quantile bins")));
    }
    let interior = (0..data.dim())
        .map(|j| {
            let mut v: Vec<f64> = data.column(j).collect();
            v.sort_by(f64::total_cmp);
            (1..p).map(|k| interpolated_quantile(&v, k as f64 / p as f64)).collect()
        })
        .collect();
    QuantileGrid::from_interior(interior, GridSource::Empirical)
}

fn interpolated_quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Maps each coordinate to its 1-based bin.
pub fn discretize(x: &[f64], grid: &QuantileGrid) -> Result<Vec<usize>> {
    if x.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: x.len(),
        });
    }
    x.iter()
        .enumerate()
        .map(|(j, &v)| {
            if v.is_nan() {
                Err(Error::usage(format!("coordinate {} is NaN", j + 1)))
            } else {
                Ok(grid.bin_of(j, v))
            }
        })
        .collect()
}

/// Uniform draw from `{1, ..., p}`.
pub fn sample_bin<R: Rng + ?Sized>(p: usize, rng: &mut R) -> usize {
    rng.random_range(1..=p)
}

/// `n × d` i.i.d. uniform bin indices in `{1, ..., p}`.
pub fn sample_bins<R: Rng + ?Sized>(n: usize, d: usize, p: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..n).map(|_| (0..d).map(|_| sample_bin(p, rng)).collect()).collect()
}

/// One draw of `N(μ, σ²)` conditioned on the open interval `(lo, hi)`.
///
/// Inverse CDF, computed in whichever tail keeps the CDF values accurate. Far
/// tail intervals whose mass underflows fall back to rejection sampling.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(mu: f64, sigma: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
        return Err(Error::usage("truncated Gaussian needs finite mean and positive sigma"));
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::usage(format!("empty truncation interval ({lo}, {hi})")));
    }
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    for _ in 0..INVERSE_CDF_ATTEMPTS {
        let z = if a > 0.0 {
            -standard_truncated(-b, -a, rng)?
        } else {
            standard_truncated(a, b, rng)?
        };
        let x = mu + sigma * z;
        if x > lo && x < hi {
            return Ok(x);
        }
    }
    // The interval is narrower than the rounding of `mu + sigma * z`.
    let mid = lo + 0.5 * (hi - lo);
    if mid > lo && mid < hi {
        Ok(mid)
    } else {
        Err(Error::Numerical(format!(
            "interval ({lo}, {hi}) contains no representable interior point"
        )))
    }
}

/// Standard normal restricted to `(a, b)` with `a <= 0`.
fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let pa = norm_cdf(a);
    let pb = norm_cdf(b);
    let mass = pb - pa;
    if mass >= MIN_INVERSE_MASS {
        for _ in 0..INVERSE_CDF_ATTEMPTS {
            let u: f64 = rng.random();
            let z = norm_quantile(pa + u * mass);
            if z > a && z < b {
                return Ok(z);
            }
        }
    }
    standard_truncated_rejection(a, b, rng)
}

/// Rejection sampler for a standard normal on `(a, b)`: uniform proposals for
/// short intervals, translated exponential proposals for long tail intervals
/// (Robert's sampler).
fn standard_truncated_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if b <= 0.0 {
        return standard_truncated_rejection(-b, -a, rng).map(|z| -z);
    }
    // Now b > 0; the density is largest at `floor`, the point of (a, b) nearest 0.
    let floor = a.max(0.0);
    let width = b - a;
    let use_uniform = width.is_finite() && width * floor.max(1.0) <= 2.0;
    let rate = 0.5 * (floor + (floor * floor + 4.0).sqrt());
    for _ in 0..REJECTION_ATTEMPTS {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let (z, log_accept) = if use_uniform {
            let z = a + u * width;
            (z, -0.5 * (z * z - floor * floor))
        } else if a < 0.0 {
            // straddles zero: plain normal proposals
            (norm_quantile(u), 0.0)
        } else {
            let z = floor - (1.0 - u).ln() / rate;
            (z, -0.5 * (z - rate) * (z - rate))
        };
        if z > a && z < b && v.ln() < log_accept {
            return Ok(z);
        }
    }
    Err(Error::Numerical(format!(
        "truncated normal on ({a}, {b}) rejected {REJECTION_ATTEMPTS} proposals"
    )))
}

/// `exp(-‖x - ξ‖² / (2ν²))`.
pub fn weight(x: &[f64], xi: &[f64], nu: f64) -> f64 {
    let sq: f64 = x.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * nu * nu)).exp()
}

/// Inputs of one explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Instance to explain.
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: f64,
    /// Bandwidth of the exponential weights, in feature units.
    pub nu: f64,
    /// Number of quantile bins per feature.
    pub p: usize,
    /// Number of perturbation samples.
    pub n: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.xi.is_empty() {
            return Err(Error::usage("instance has no features"));
        }
        if self.mu.len() != self.xi.len() {
            return Err(Error::DimensionMismatch {
                expected: self.xi.len(),
                got: self.mu.len(),
            });
        }
        if self.xi.iter().chain(&self.mu).any(|v| !v.is_finite()) {
            return Err(Error::usage("instance and mean must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::usage("sigma must be positive"));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::usage("bandwidth nu must be positive"));
        }
        if self.p < 2 {
            return Err(Error::usage("number of bins must be at least 2"));
        }
        if self.n == 0 {
            return Err(Error::usage("sample count must be positive"));
        }
        Ok(())
    }

    pub(crate) fn check_grid(&self, grid: &QuantileGrid) -> Result<()> {
        self.validate()?;
        if grid.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: grid.dim(),
            });
        }
        if grid.bins() != self.p {
            return Err(Error::usage(format!(
                "grid has {} bins but the configuration asks for {}",
                grid.bins(),
                self.p
            )));
        }
        Ok(())
    }
}

/// Sampled bins `y`, raw samples `x`, binary features `z` and weights `π`,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    d: usize,
    bins: Vec<u32>,
    samples: Vec<f64>,
    features: Vec<u8>,
    weights: Vec<f64>,
}

impl PerturbationSet {
    fn with_capacity(rows: usize, d: usize) -> Self {
        Self {
            d,
            bins: Vec::with_capacity(rows * d),
            samples: Vec::with_capacity(rows * d),
            features: Vec::with_capacity(rows * d),
            weights: Vec::with_capacity(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn bins(&self, i: usize) -> &[u32] {
        &self.bins[i * self.d..(i + 1) * self.d]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self, i: usize) -> &[u8] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.samples.chunks_exact(self.d)
    }

    fn append(&mut self, mut other: PerturbationSet) {
        self.bins.append(&mut other.bins);
        self.samples.append(&mut other.samples);
        self.features.append(&mut other.features);
        self.weights.append(&mut other.weights);
    }

    /// CSV with columns `y_1..y_d, x_1..x_d, z_1..z_d, pi`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.d;
        let mut header: Vec<String> = Vec::with_capacity(3 * d + 1);
        for prefix in ["y", "x", "z"] {
            header.extend((1..=d).map(|j| format!("{prefix}_{j}")));
        }
        header.push("pi".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut cells: Vec<String> = Vec::with_capacity(3 * d + 1);
            cells.extend(self.bins(i).iter().map(u32::to_string));
            cells.extend(self.sample(i).iter().map(|v| format!("{v:.16e}")));
            cells.extend(self.features(i).iter().map(u8::to_string));
            cells.push(format!("{:.16e}", self.weight(i)));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Mixes a stream index into a seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(stream))
}

/// The random stream of perturbation row `row`.
pub fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// Draws the full perturbation set of `config`.
pub fn perturb(config: &SamplingConfig, grid: &QuantileGrid) -> Result<PerturbationSet> {
    perturb_rows(config, grid, 0..config.n)
}

/// Draws rows `rows` of the perturbation set of `config`. Any partition of
/// `0..n` into ranges yields, concatenated, exactly [`perturb`]'s output.
pub fn perturb_rows(config: &SamplingConfig, grid: &QuantileGrid, rows: Range<usize>) -> Result<PerturbationSet> {
    config.check_grid(grid)?;
    let xi_bins = discretize(&config.xi, grid)?;
    let d = config.dim();
    let blocks: Vec<Range<usize>> = rows
        .clone()
        .step_by(ROW_BLOCK)
        .map(|s| s..(s + ROW_BLOCK).min(rows.end))
        .collect();
    let parts = blocks
        .into_par_iter()
        .map(|block| {
            let mut part = PerturbationSet::with_capacity(block.len(), d);
            let mut x = vec![0.0; d];
            for i in block {
                let mut rng = row_rng(config.seed, i as u64);
                for j in 0..d {
                    let y = sample_bin(config.p, &mut rng);
                    let (lo, hi) = grid.bin_bounds(j, y);
                    x[j] = sample_truncated_gaussian(config.mu[j], config.sigma, lo, hi, &mut rng)?;
                    part.bins.push(y as u32);
                    part.features.push(u8::from(y == xi_bins[j]));
                }
                part.samples.extend_from_slice(&x);
                part.weights.push(weight(&x, &config.xi, config.nu));
            }
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = PerturbationSet::with_capacity(rows.len(), d);
    for part in parts {
        out.append(part);
    }
    Ok(out)
}
