//! Experiment records and their on-disk layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::json::{format_real, to_json};
use crate::error::{Error, Result};
use crate::sampling::SamplingConfig;
use crate::theory::TheoryReport;

/// Order statistics of one coefficient across repetitions. Whiskers reach the
/// most extreme values within 1.5 interquartile ranges of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub mean: f64,
    pub std_dev: f64,
}

impl CoordinateSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linearly interpolated quantile of sorted data (the usual "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> CoordinateSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let reach = 1.5 * (q3 - q1);
    let whisker_low = sorted.iter().copied().find(|&v| v >= q1 - reach).unwrap_or(q1);
    let whisker_high = sorted.iter().rev().copied().find(|&v| v <= q3 + reach).unwrap_or(q3);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    CoordinateSummary {
        median: quantile_sorted(&sorted, 0.5),
        q1,
        q3,
        whisker_low,
        whisker_high,
        mean,
        std_dev: var.sqrt(),
    }
}

/// Summary of every column of a row-major table.
pub fn summarize_columns(rows: &[Vec<f64>]) -> Vec<CoordinateSummary> {
    let k = rows.first().map_or(0, Vec::len);
    (0..k)
        .map(|j| summarize(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

/// One pass/fail criterion evaluated by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured quantity.
    pub value: f64,
    /// The bound it was compared against.
    pub threshold: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value >= threshold,
            value,
            threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear {
        coefficients: Vec<f64>,
        intercept: f64,
    },
    KernelRidge {
        kernel_scale: f64,
        ridge: f64,
        training_rows: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalErrorSummary {
    /// `f(ξ)`.
    pub f_at_xi: f64,
    /// `f̂(ξ) - f(ξ)` per repetition.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
    /// Predicted center of the errors.
    pub theory_center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub sample_sizes: Vec<usize>,
    /// `‖β̂ - β‖` indexed by `[size][seed]`.
    pub errors: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    /// Least-squares slope of `log(mean error)` against `log(n)`.
    pub slope: f64,
}

/// A run at an instance chosen so that the limit coefficients take prescribed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRun {
    pub xi: Vec<f64>,
    pub target_beta: Vec<f64>,
    pub theory_beta: Vec<f64>,
    pub median_beta_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: String,
    pub rows: usize,
    pub features: usize,
    /// Row of the data used as the explained instance (0-based).
    pub instance_row: usize,
    pub fitted_mu: Vec<f64>,
    pub fitted_sigma: f64,
    /// True for 13 features plus a target, the layout of the housing data.
    pub reference_layout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_id: String,
    pub seed: u64,
    pub config: SamplingConfig,
    pub model: ModelSpec,
    pub ridge: f64,
    pub repetitions: usize,
    /// One row per repetition: intercept, then one coefficient per feature.
    pub per_rep_beta_hat: Vec<Vec<f64>>,
    /// Closed-form report; for non-linear models it describes the first-order
    /// expansion of the model at the instance.
    pub theory: TheoryReport,
    pub summary_stats: Vec<CoordinateSummary>,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_error: Option<LocalErrorSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_run: Option<ReferenceRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetInfo>,
}

impl ExperimentRecord {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    /// One row per repetition: `rep, beta_0, ..., beta_d`.
    pub fn to_csv(&self) -> String {
        let k = self.per_rep_beta_hat.first().map_or(0, Vec::len);
        let mut out = String::from("rep");
        for j in 0..k {
            out.push_str(&format!(",beta_{j}"));
        }
        out.push('\n');
        for (i, row) in self.per_rep_beta_hat.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push(',');
                out.push_str(&format_real(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `record.json` and `record.csv` under `<out>/<experiment_id>/`
    /// and returns that directory.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let dir = out.join(&self.experiment_id);
        create_dir(&dir)?;
        write_file(&dir.join("record.json"), &self.to_json()?)?;
        write_file(&dir.join("record.csv"), &self.to_csv())?;
        Ok(dir)
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
