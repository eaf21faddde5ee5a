//! Seeded experiments comparing repeated explanations with the closed forms.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::{
    summarize, summarize_columns, Check, ConvergenceSummary, DatasetInfo, ExperimentRecord, LocalErrorSummary,
    ModelSpec, ReferenceRun,
};
use crate::error::{Error, Result};
use crate::models::{
    fit_gaussian, gradient, load_dataset, train_kernel_ridge, train_linear, BlackBox, Dataset, LinearModel,
};
use crate::sampling::{derive_seed, theoretical_grid, QuantileGrid, SamplingConfig};
use crate::special::norm_quantile;
use crate::surrogate::{explain, Explanation};
use crate::theory::Oracle;

pub const FIG5: &str = "fig5";
pub const SWITCH_OFF: &str = "switchoff";
pub const ERRORS: &str = "errors";
pub const CONVERGENCE: &str = "convergence";
pub const DATASET: &str = "dataset";

/// Stream reserved for drawing the explained instance, away from the
/// repetition streams `0, 1, 2, ...`.
const INSTANCE_STREAM: u64 = 1 << 62;

/// Tolerances of the experiment checks.
pub const MEDIAN_TOLERANCE: f64 = 1.0;
pub const NULL_TOLERANCE: f64 = 0.3;
pub const SWITCHED_ON_MINIMUM: f64 = 5.0;
pub const ERROR_CENTER_TOLERANCE: f64 = 0.3;
pub const CENTER_SIGNIFICANCE: f64 = 3.0;
pub const SLOPE_TARGET: f64 = -0.5;
pub const SLOPE_TOLERANCE: f64 = 0.15;
pub const DATASET_IQR_MULTIPLE: f64 = 4.0;
pub const SIGN_CHECK_MINIMUM: f64 = 0.5;

/// Coefficient values at which the reference run places the instance.
pub const REFERENCE_BETA: [f64; 2] = [11.4, -4.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub dim: usize,
    pub bins: usize,
    pub sigma: f64,
    pub nu: f64,
    pub samples: usize,
    pub repetitions: usize,
    /// Linear black box; defaults to `10x₁ - 10x₂`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ridge: f64,
}

impl Settings {
    /// Ten standard Gaussian features in quartile bins, `ν = 1`, `n = 10⁴`,
    /// 20 repetitions.
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: 10,
            bins: 4,
            sigma: 1.0,
            nu: 1.0,
            samples: 10_000,
            repetitions: 20,
            coefficients: default_coefficients(10),
            intercept: 0.0,
            ridge: 0.0,
        }
    }

    pub fn model(&self) -> Result<LinearModel> {
        if self.coefficients.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.coefficients.len(),
            });
        }
        LinearModel::new(self.coefficients.clone(), self.intercept)
    }

    fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::usage("at least one repetition is needed"));
        }
        self.model().map(|_| ())
    }

    fn config(&self, xi: Vec<f64>) -> SamplingConfig {
        SamplingConfig {
            xi,
            mu: vec![0.0; self.dim],
            sigma: self.sigma,
            nu: self.nu,
            p: self.bins,
            n: self.samples,
            seed: self.seed,
        }
    }
}

/// `10x₁ - 10x₂` padded with zeros (`10x₁` in one dimension).
pub fn default_coefficients(dim: usize) -> Vec<f64> {
    let mut a = vec![0.0; dim];
    if let Some(first) = a.first_mut() {
        *first = 10.0;
    }
    if dim > 1 {
        a[1] = -10.0;
    }
    a
}

/// Instance `ξ ~ N(μ, σ²I)` for the given seed and attempt number.
pub fn draw_instance(seed: u64, attempt: u64, mu: &[f64], sigma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INSTANCE_STREAM + attempt));
    mu.iter()
        .map(|m| {
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            m + sigma * norm_quantile(u)
        })
        .collect()
}

/// Runs `repetitions` explanations; repetition `r` uses the seed
/// `derive_seed(config.seed, r)`. Results are in repetition order.
pub fn repeat_explain(
    model: &dyn BlackBox,
    config: &SamplingConfig,
    grid: &QuantileGrid,
    repetitions: usize,
    ridge: f64,
) -> Result<Vec<Explanation>> {
    (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let cfg = SamplingConfig {
                seed: derive_seed(config.seed, r as u64),
                ..config.clone()
            };
            explain(model, &cfg, grid, ridge)
        })
        .collect()
}

fn medians(rows: &[Vec<f64>]) -> Vec<f64> {
    summarize_columns(rows).iter().map(|s| s.median).collect()
}

fn record(
    id: &str,
    settings: &Settings,
    config: SamplingConfig,
    model: ModelSpec,
    oracle: &Oracle,
    linear: &LinearModel,
    rows: Vec<Vec<f64>>,
) -> Result<ExperimentRecord> {
    Ok(ExperimentRecord {
        experiment_id: id.to_string(),
        seed: settings.seed,
        config,
        model,
        ridge: settings.ridge,
        repetitions: rows.len(),
        summary_stats: summarize_columns(&rows),
        per_rep_beta_hat: rows,
        theory: oracle.report(linear)?,
        checks: Vec::new(),
        local_error: None,
        convergence: None,
        reference_run: None,
        dataset: None,
    })
}

fn linear_spec(model: &LinearModel) -> ModelSpec {
    ModelSpec::Linear {
        coefficients: model.coefficients.clone(),
        intercept: model.intercept,
    }
}

/// Repeated explanations of a linear model at a seeded Gaussian instance.
pub fn run_fig5(seed: u64) -> Result<ExperimentRecord> {
    run_fig5_with(&Settings::new(seed))
}

pub fn run_fig5_with(settings: &Settings) -> Result<ExperimentRecord> {
    settings.validate()?;
    let model = settings.model()?;
    let config = settings.config(draw_instance(
        settings.seed,
        0,
        &vec![0.0; settings.dim],
        settings.sigma,
    ));
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let oracle = Oracle::new(&config, &grid)?;
    let runs = repeat_explain(&model, &config, &grid, settings.repetitions, settings.ridge)?;
    let rows: Vec<Vec<f64>> = runs.into_iter().map(|e| e.beta_hat).collect();
    let med = medians(&rows);
    let mut rec = record(
        FIG5,
        settings,
        config.clone(),
        linear_spec(&model),
        &oracle,
        &model,
        rows,
    )?;

    let beta = rec.theory.beta.clone();
    for j in 1..=settings.dim.min(2) {
        rec.checks.push(Check::at_most(
            format!("median beta_hat_{j} within {MEDIAN_TOLERANCE} of closed form"),
            (med[j] - beta[j]).abs(),
            MEDIAN_TOLERANCE,
        ));
    }
    if settings.dim > 2 {
        let worst = med[3..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rec.checks.push(Check::at_most(
            "max |median beta_hat_j| over unused features",
            worst,
            NULL_TOLERANCE,
        ));
    }
    if settings.dim >= 2 {
        rec.reference_run = reference_run(settings, &model, &config, &grid)?;
    }
    Ok(rec)
}

/// Places `ξ₁, ξ₂` where the closed-form coefficients equal
/// [`REFERENCE_BETA`] and repeats the experiment there. `None` when a target
/// is out of reach for the current model and bandwidth.
fn reference_run(
    settings: &Settings,
    model: &LinearModel,
    config: &SamplingConfig,
    grid: &QuantileGrid,
) -> Result<Option<ReferenceRun>> {
    let mut xi = config.xi.clone();
    for (j, &target) in REFERENCE_BETA.iter().enumerate() {
        match calibrate_instance(config, j, model.coefficients[j], target)? {
            Some(v) => xi[j] = v,
            None => return Ok(None),
        }
    }
    let cfg = SamplingConfig {
        xi: xi.clone(),
        ..config.clone()
    };
    let theory_beta = Oracle::new(&cfg, grid)?.beta(model)?;
    let runs = repeat_explain(model, &cfg, grid, settings.repetitions, settings.ridge)?;
    let rows: Vec<Vec<f64>> = runs.into_iter().map(|e| e.beta_hat).collect();
    Ok(Some(ReferenceRun {
        xi,
        target_beta: REFERENCE_BETA.to_vec(),
        theory_beta,
        median_beta_hat: medians(&rows),
    }))
}

/// Value of `ξ_j` nearest to `μ_j` at which the closed-form `β_j` of a feature
/// with slope `a_j` equals `target`. `β_j` depends on `ξ_j` alone.
pub fn calibrate_instance(config: &SamplingConfig, j: usize, a_j: f64, target: f64) -> Result<Option<f64>> {
    let mu = config.mu[j];
    let sigma = config.sigma;
    let one = |x: f64| -> Result<f64> {
        let cfg = SamplingConfig {
            xi: vec![x],
            mu: vec![mu],
            ..config.clone()
        };
        let grid = theoretical_grid(&cfg.mu, sigma, cfg.p)?;
        let model = LinearModel::new(vec![a_j], 0.0)?;
        Ok(Oracle::new(&cfg, &grid)?.beta(&model)?[1] - target)
    };
    let grid = theoretical_grid(&[mu], sigma, config.p)?;
    let steps = 800;
    let mut best: Option<f64> = None;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=steps {
        let x = mu - 4.0 * sigma + 8.0 * sigma * i as f64 / steps as f64;
        let g = one(x)?;
        if let Some((px, pg)) = prev {
            let same_bin = grid.bin_of(0, px) == grid.bin_of(0, x);
            if same_bin && (pg == 0.0 || pg.signum() != g.signum()) {
                let (mut lo, mut hi, mut glo) = (px, x, pg);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let gm = one(mid)?;
                    if gm.signum() == glo.signum() && gm != 0.0 {
                        lo = mid;
                        glo = gm;
                    } else {
                        hi = mid;
                    }
                }
                let root = 0.5 * (lo + hi);
                if best.is_none_or(|b| (root - mu).abs() < (b - mu).abs()) {
                    best = Some(root);
                }
            }
        }
        prev = Some((x, g));
    }
    Ok(best)
}

/// Sets the bandwidth to the value at which feature 2's coefficient vanishes.
pub fn run_switch_off(seed: u64) -> Result<ExperimentRecord> {
    run_switch_off_with(&Settings::new(seed))
}

/// Upper limit on instance redraws while looking for a switch-off bandwidth.
const MAX_INSTANCE_DRAWS: u64 = 10_000;

pub fn run_switch_off_with(settings: &Settings) -> Result<ExperimentRecord> {
    settings.validate()?;
    if settings.dim < 2 {
        return Err(Error::usage("switch-off experiment needs at least two features"));
    }
    let model = settings.model()?;
    let mu = vec![0.0; settings.dim];
    let grid = theoretical_grid(&mu, settings.sigma, settings.bins)?;
    let (config, v) = (0..MAX_INSTANCE_DRAWS)
        .find_map(|attempt| {
            let config = settings.config(draw_instance(settings.seed, attempt, &mu, settings.sigma));
            let v = Oracle::new(&config, &grid).ok()?.v_crit(1)?;
            Some((config, v))
        })
        .ok_or_else(|| Error::Degenerate("no instance with a switch-off bandwidth for feature 2".into()))?;
    let config = SamplingConfig { nu: v.sqrt(), ..config };
    let oracle = Oracle::new(&config, &grid)?;
    let runs = repeat_explain(&model, &config, &grid, settings.repetitions, settings.ridge)?;
    let rows: Vec<Vec<f64>> = runs.into_iter().map(|e| e.beta_hat).collect();
    let med = medians(&rows);
    let mut rec = record(SWITCH_OFF, settings, config, linear_spec(&model), &oracle, &model, rows)?;
    let beta2 = rec.theory.beta[2];
    rec.checks
        .push(Check::at_most("|closed-form beta_2|", beta2.abs(), 1e-10));
    rec.checks
        .push(Check::at_most("|median beta_hat_2|", med[2].abs(), NULL_TOLERANCE));
    rec.checks.push(Check::at_least(
        "|median beta_hat_1|",
        med[1].abs(),
        SWITCHED_ON_MINIMUM,
    ));
    Ok(rec)
}

/// Distribution of the surrogate's error at the instance, `f̂(ξ) - f(ξ)`.
pub fn run_error_histogram(seed: u64) -> Result<ExperimentRecord> {
    run_error_histogram_with(&Settings {
        repetitions: 100,
        ..Settings::new(seed)
    })
}

pub fn run_error_histogram_with(settings: &Settings) -> Result<ExperimentRecord> {
    settings.validate()?;
    let model = settings.model()?;
    let config = settings.config(draw_instance(
        settings.seed,
        0,
        &vec![0.0; settings.dim],
        settings.sigma,
    ));
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let oracle = Oracle::new(&config, &grid)?;
    let runs = repeat_explain(&model, &config, &grid, settings.repetitions, settings.ridge)?;
    let f_at_xi = model.predict(&config.xi);
    let errors: Vec<f64> = runs.iter().map(|e| e.prediction_at_xi - f_at_xi).collect();
    let rows: Vec<Vec<f64>> = runs.into_iter().map(|e| e.beta_hat).collect();
    let mut rec = record(ERRORS, settings, config, linear_spec(&model), &oracle, &model, rows)?;

    let s = summarize(&errors);
    let std_error = s.std_dev / (errors.len() as f64).sqrt();
    let theory_center = rec.theory.local_error_center - f_at_xi;
    rec.checks.push(Check::at_most(
        "|mean error - predicted center|",
        (s.mean - theory_center).abs(),
        ERROR_CENTER_TOLERANCE,
    ));
    rec.checks.push(Check::at_least(
        "|predicted center| / standard error of the mean",
        theory_center.abs() / std_error,
        CENTER_SIGNIFICANCE,
    ));
    rec.local_error = Some(LocalErrorSummary {
        f_at_xi,
        errors,
        mean: s.mean,
        std_error,
        theory_center,
    });
    Ok(rec)
}

pub const CONVERGENCE_SIZES: [usize; 3] = [1_000, 10_000, 100_000];

/// Distance to the closed form at growing sample sizes.
pub fn run_convergence(seed: u64) -> Result<ExperimentRecord> {
    run_convergence_with(
        &Settings {
            repetitions: 10,
            ..Settings::new(seed)
        },
        &CONVERGENCE_SIZES,
    )
}

pub fn run_convergence_with(settings: &Settings, sizes: &[usize]) -> Result<ExperimentRecord> {
    settings.validate()?;
    if sizes.len() < 2 {
        return Err(Error::usage("convergence needs at least two sample sizes"));
    }
    let model = settings.model()?;
    let largest = *sizes.iter().max().expect("non-empty");
    let config = SamplingConfig {
        n: largest,
        ..settings.config(draw_instance(
            settings.seed,
            0,
            &vec![0.0; settings.dim],
            settings.sigma,
        ))
    };
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let oracle = Oracle::new(&config, &grid)?;
    let beta = oracle.beta(&model)?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &n in sizes {
        let cfg = SamplingConfig { n, ..config.clone() };
        let runs = repeat_explain(&model, &cfg, &grid, settings.repetitions, settings.ridge)?;
        errors.push(
            runs.iter()
                .map(|e| {
                    e.beta_hat
                        .iter()
                        .zip(&beta)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect::<Vec<f64>>(),
        );
        rows.extend(runs.into_iter().map(|e| e.beta_hat));
    }
    let mean_errors: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / e.len() as f64).collect();
    let slope = loglog_slope(sizes, &mean_errors);

    let mut rec = record(
        CONVERGENCE,
        settings,
        config,
        linear_spec(&model),
        &oracle,
        &model,
        rows,
    )?;
    rec.checks.push(Check::at_most(
        "|log-log slope + 0.5|",
        (slope - SLOPE_TARGET).abs(),
        SLOPE_TOLERANCE,
    ));
    let smallest = *sizes.iter().min().expect("non-empty");
    let first = sizes.iter().position(|&n| n == smallest).expect("present");
    let last = sizes.iter().position(|&n| n == largest).expect("present");
    let not_improving = (0..settings.repetitions)
        .filter(|&r| errors[last][r] >= errors[first][r])
        .count();
    rec.checks.push(Check::at_most(
        "seeds whose error does not shrink from the smallest to the largest n",
        not_improving as f64,
        0.0,
    ));
    rec.convergence = Some(ConvergenceSummary {
        sample_sizes: sizes.to_vec(),
        errors,
        mean_errors,
        slope,
    });
    Ok(rec)
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[usize], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|&x| (x as f64).ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    KernelRidge,
}

/// Kernel scale and ridge used when training a kernel ridge model.
pub const KERNEL_SCALE: f64 = 5.0;
pub const KERNEL_RIDGE: f64 = 1.0;

/// Loads a CSV whose first row is a header when any of its cells is not a
/// number. The target is the named column, or the last column by default.
pub fn load_training_data(path: &Path, target: Option<&str>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::usage(format!("{}: no data rows", path.display())))?;
    let cells: Vec<&str> = first.split(',').map(str::trim).collect();
    let has_header = cells.iter().any(|c| c.parse::<f64>().is_err());
    let target = match target {
        Some(t) => t.to_string(),
        None if has_header => cells.last().expect("split yields a cell").to_string(),
        None => format!("x{}", cells.len()),
    };
    load_dataset(path, has_header, Some(&target))
}

/// Trains a model on a CSV and explains it at a seeded data row.
pub fn run_dataset_comparison(data_path: &Path, model_kind: ModelKind, seed: u64) -> Result<ExperimentRecord> {
    let data = load_training_data(data_path, None)?;
    run_dataset_comparison_with(
        &data,
        &data_path.display().to_string(),
        model_kind,
        &dataset_settings(seed, data.dim()),
    )
}

/// One thousand samples per explanation, 20 repetitions, `ν = 1`.
pub fn dataset_settings(seed: u64, dim: usize) -> Settings {
    Settings {
        samples: 1_000,
        dim,
        coefficients: vec![0.0; dim],
        ..Settings::new(seed)
    }
}

/// Uses `dim`, `bins`, `nu`, `samples`, `repetitions`, `ridge` and `seed`
/// from the settings; the model, `μ` and `σ` come from the data.
pub fn run_dataset_comparison_with(
    data: &Dataset,
    label: &str,
    model_kind: ModelKind,
    settings: &Settings,
) -> Result<ExperimentRecord> {
    if settings.repetitions == 0 {
        return Err(Error::usage("at least one repetition is needed"));
    }
    let fit = fit_gaussian(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, INSTANCE_STREAM));
    let instance_row = rng.random_range(0..data.n_rows());
    let config = SamplingConfig {
        xi: data.rows()[instance_row].clone(),
        mu: fit.mu.clone(),
        sigma: fit.sigma,
        nu: settings.nu,
        p: settings.bins,
        n: settings.samples,
        seed: settings.seed,
    };
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let oracle = Oracle::new(&config, &grid)?;
    let settings = Settings {
        dim: data.dim(),
        sigma: fit.sigma,
        ..settings.clone()
    };

    let (black_box, linear, spec): (Box<dyn BlackBox>, LinearModel, ModelSpec) = match model_kind {
        ModelKind::Linear => {
            let m = train_linear(data)?;
            (Box::new(m.clone()), m.clone(), linear_spec(&m))
        }
        ModelKind::KernelRidge => {
            let m = train_kernel_ridge(data, KERNEL_SCALE, KERNEL_RIDGE)?;
            // first-order expansion: slope at ξ, value at μ̃
            let slope = gradient(&m, &config.xi)?;
            let f_mu = m.eval(oracle.mu_tilde())?;
            let offset: f64 = slope.iter().zip(oracle.mu_tilde()).map(|(a, x)| a * x).sum();
            let linear = LinearModel::new(slope, f_mu - offset)?;
            let spec = ModelSpec::KernelRidge {
                kernel_scale: KERNEL_SCALE,
                ridge: KERNEL_RIDGE,
                training_rows: data.n_rows(),
            };
            (Box::new(m), linear, spec)
        }
    };

    let runs = repeat_explain(black_box.as_ref(), &config, &grid, settings.repetitions, settings.ridge)?;
    let rows: Vec<Vec<f64>> = runs.into_iter().map(|e| e.beta_hat).collect();
    let mut rec = record(DATASET, &settings, config, spec, &oracle, &linear, rows)?;
    let beta = rec.theory.beta.clone();
    match model_kind {
        ModelKind::Linear => {
            // ratio of the distance to the allowed spread; a zero spread
            // still admits round-off
            let worst = rec.summary_stats[1..]
                .iter()
                .zip(&beta[1..])
                .map(|(s, b)| {
                    let allowed = (DATASET_IQR_MULTIPLE * s.iqr()).max(1e-9 * b.abs().max(1.0));
                    (s.median - b).abs() / allowed
                })
                .fold(0.0f64, f64::max);
            rec.checks
                .push(Check::at_most("max |median - closed form| / (4 IQR)", worst, 1.0));
        }
        ModelKind::KernelRidge => {
            let disagree = rec.summary_stats[1..]
                .iter()
                .zip(&beta[1..])
                .filter(|(s, b)| b.abs() > SIGN_CHECK_MINIMUM && s.median.signum() != b.signum())
                .count();
            rec.checks.push(Check::at_most(
                "sign disagreements where |first-order beta_j| > 0.5",
                disagree as f64,
                0.0,
            ));
        }
    }
    rec.dataset = Some(DatasetInfo {
        path: label.to_string(),
        rows: data.n_rows(),
        features: data.dim(),
        instance_row,
        fitted_mu: fit.mu,
        fitted_sigma: fit.sigma,
        reference_layout: data.dim() == 13,
    });
    Ok(rec)
}

/// Closed-form `θ_j` and `β` along a grid of bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub nu: Vec<f64>,
    /// `theta[i][j]` is `θ_j` at `nu[i]`.
    pub theta: Vec<Vec<f64>>,
    /// `null` where a bin mass is too close to 0 or 1 for the inverse.
    pub beta: Vec<Option<Vec<f64>>>,
    /// `V_crit` at the first bandwidth; it does not depend on `ν`.
    pub v_crit: Vec<Option<f64>>,
    pub crossings: Vec<Crossing>,
}

/// Sign changes of `θ_j` along the sweep for a feature with a switch-off bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// 1-based feature index.
    pub feature: usize,
    pub switch_off_nu: f64,
    pub sign_changes: usize,
    /// True when there is exactly one sign change and its bracket contains
    /// `switch_off_nu`.
    pub brackets_switch_off: bool,
}

/// `count` bandwidths spaced evenly on a log scale from `lo` to `hi`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || count < 2 {
        return Err(Error::usage(
            "bandwidth range needs 0 < min < max and at least two steps",
        ));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

pub fn sweep_nu(model: &LinearModel, config: &SamplingConfig, grid: &QuantileGrid, nus: &[f64]) -> Result<Sweep> {
    if nus.is_empty() {
        return Err(Error::usage("bandwidth sweep is empty"));
    }
    let mut theta = Vec::with_capacity(nus.len());
    let mut beta = Vec::with_capacity(nus.len());
    let mut v_crit = Vec::new();
    for (i, &nu) in nus.iter().enumerate() {
        let oracle = Oracle::new(&SamplingConfig { nu, ..config.clone() }, grid)?;
        if i == 0 {
            v_crit = (0..config.dim()).map(|j| oracle.v_crit(j)).collect();
        }
        theta.push(oracle.theta().to_vec());
        beta.push(match oracle.beta(model) {
            Ok(b) => Some(b),
            Err(Error::NearDegenerateBin { .. }) => None,
            Err(e) => return Err(e),
        });
    }
    let crossings = v_crit
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.map(|v| (j, v.sqrt())))
        .map(|(j, root)| {
            let signed: Vec<(f64, f64)> = nus
                .iter()
                .zip(&theta)
                .map(|(&nu, t)| (nu, t[j]))
                .filter(|(_, t)| *t != 0.0)
                .collect();
            let changes: Vec<(f64, f64)> = signed
                .windows(2)
                .filter(|w| w[0].1.signum() != w[1].1.signum())
                .map(|w| (w[0].0, w[1].0))
                .collect();
            Crossing {
                feature: j + 1,
                switch_off_nu: root,
                sign_changes: changes.len(),
                brackets_switch_off: changes.len() == 1 && changes[0].0 <= root && root <= changes[0].1,
            }
        })
        .collect();
    Ok(Sweep {
        nu: nus.to_vec(),
        theta,
        beta,
        v_crit,
        crossings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> Settings {
        Settings {
            dim: 4,
            samples: 4000,
            repetitions: 8,
            coefficients: default_coefficients(4),
            ..Settings::new(seed)
        }
    }

    #[test]
    fn default_model_shapes() {
        assert_eq!(default_coefficients(1), vec![10.0]);
        assert_eq!(default_coefficients(3), vec![10.0, -10.0, 0.0]);
    }

    #[test]
    fn instances_depend_on_seed_and_attempt() {
        let mu = vec![0.0; 3];
        assert_eq!(draw_instance(1, 0, &mu, 1.0), draw_instance(1, 0, &mu, 1.0));
        assert_ne!(draw_instance(1, 0, &mu, 1.0), draw_instance(2, 0, &mu, 1.0));
        assert_ne!(draw_instance(1, 0, &mu, 1.0), draw_instance(1, 1, &mu, 1.0));
    }

    #[test]
    fn fig5_record_shape_and_determinism() {
        let s = small(3);
        let a = run_fig5_with(&s).unwrap();
        assert_eq!(a.per_rep_beta_hat.len(), 8);
        assert!(a.per_rep_beta_hat.iter().all(|r| r.len() == 5));
        assert_eq!(a.summary_stats.len(), 5);
        assert_eq!(a.checks.len(), 3);
        let b = run_fig5_with(&s).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn calibration_hits_targets() {
        let cfg = Settings::new(0).config(vec![0.0; 2]);
        for (a, target) in [(10.0, 11.4), (-10.0, -4.1)] {
            let x = calibrate_instance(&cfg, 0, a, target).unwrap().unwrap();
            let one = SamplingConfig {
                xi: vec![x],
                mu: vec![0.0],
                ..cfg.clone()
            };
            let grid = theoretical_grid(&one.mu, 1.0, 4).unwrap();
            let beta = Oracle::new(&one, &grid)
                .unwrap()
                .beta(&LinearModel::new(vec![a], 0.0).unwrap())
                .unwrap();
            assert!((beta[1] - target).abs() < 1e-9, "{x}: {}", beta[1]);
        }
        // |β_j| never exceeds ~13.4 on [-4σ, 4σ] for a = 10
        assert_eq!(calibrate_instance(&cfg, 0, 10.0, 100.0).unwrap(), None);
    }

    #[test]
    fn switch_off_zeroes_feature_two() {
        let rec = run_switch_off_with(&small(5)).unwrap();
        assert!(rec.theory.beta[2].abs() < 1e-10);
        assert!(rec.theory.v_crit[1].is_some());
        assert!((rec.config.nu - rec.theory.v_crit[1].unwrap().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_model_has_no_local_error() {
        let s = Settings {
            coefficients: vec![0.0; 4],
            intercept: 2.0,
            ..small(9)
        };
        let rec = run_error_histogram_with(&s).unwrap();
        let le = rec.local_error.unwrap();
        assert!(le.errors.iter().all(|e| e.abs() < 1e-9));
        assert!(le.theory_center.abs() < 1e-12);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let ys: Vec<f64> = [1_000usize, 10_000, 100_000]
            .iter()
            .map(|&n| 3.0 / (n as f64).sqrt())
            .collect();
        assert!((loglog_slope(&[1_000, 10_000, 100_000], &ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_target_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = Dataset::from_rows(rows, Some(vec![4.0; 40])).unwrap();
        let s = Settings {
            samples: 500,
            repetitions: 4,
            ..dataset_settings(2, 3)
        };
        let rec = run_dataset_comparison_with(&data, "synthetic", ModelKind::Linear, &s).unwrap();
        for row in &rec.per_rep_beta_hat {
            assert!((row[0] - 4.0).abs() < 1e-8);
            assert!(row[1..].iter().all(|b| b.abs() < 1e-8));
        }
        assert!(rec.passed());
    }

    #[test]
    fn sweep_brackets_switch_off() {
        let cfg = SamplingConfig {
            xi: vec![0.5, 2.0],
            mu: vec![0.0; 2],
            ..Settings::new(0).config(vec![0.0; 2])
        };
        let grid = theoretical_grid(&cfg.mu, 1.0, 4).unwrap();
        let model = LinearModel::new(vec![1.0, 1.0], 0.0).unwrap();
        let nus = log_spaced(0.05, 5.0, 101).unwrap();
        let sweep = sweep_nu(&model, &cfg, &grid, &nus).unwrap();
        assert_eq!(sweep.crossings.len(), 1);
        let c = &sweep.crossings[0];
        assert_eq!((c.feature, c.sign_changes), (1, 1));
        assert!(c.brackets_switch_off);
        assert_eq!(sweep.v_crit[1], None);
        assert!(log_spaced(1.0, 1.0, 5).is_err());
    }
}
