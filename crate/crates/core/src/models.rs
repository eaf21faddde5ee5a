//! Black-box regression models, tabular datasets and finite-difference gradients.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real-valued function of `dim()` real inputs that can only be queried pointwise.
///
/// Implementors are immutable after construction, so a model can be evaluated
/// from many threads at once.
pub trait BlackBox: Send + Sync {
    fn dim(&self) -> usize;

    /// Evaluates the model; `x.len()` is assumed to equal `dim()`.
    fn predict(&self, x: &[f64]) -> f64;

    fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.predict(x))
    }
}

/// `f(x) = a·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::usage("linear model needs at least one coefficient"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) || !intercept.is_finite() {
            return Err(Error::usage("linear model parameters must be finite"));
        }
        Ok(Self {
            coefficients,
            intercept,
        })
    }

    /// Euclidean norm of the gradient `a`.
    pub fn gradient_norm(&self) -> f64 {
        self.coefficients.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

impl BlackBox for LinearModel {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>() + self.intercept
    }
}

/// Kernel ridge regressor with the Gaussian kernel
/// `k(x, y) = exp(-‖x - y‖² / (2 s²))`.
#[derive(Debug, Clone)]
pub struct KernelRidgeModel {
    train_x: Vec<Vec<f64>>,
    dual_coeffs: Vec<f64>,
    kernel_scale: f64,
    ridge: f64,
}

impl KernelRidgeModel {
    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.train_x
    }

    pub fn dual_coeffs(&self) -> &[f64] {
        &self.dual_coeffs
    }

    pub fn kernel_scale(&self) -> f64 {
        self.kernel_scale
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        gaussian_kernel(x, y, self.kernel_scale)
    }
}

impl BlackBox for KernelRidgeModel {
    fn dim(&self) -> usize {
        self.train_x[0].len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.train_x
            .iter()
            .zip(&self.dual_coeffs)
            .map(|(t, c)| c * self.kernel(t, x))
            .sum()
    }
}

pub(crate) fn gaussian_kernel(x: &[f64], y: &[f64], scale: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * scale * scale)).exp()
}

/// Adapts a closure into a [`BlackBox`].
pub struct FnModel<F> {
    dim: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> fmt::Debug for FnModel<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel").field("dim", &self.dim).finish()
    }
}

impl<F> BlackBox for FnModel<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A numeric table with optional regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
    targets: Option<Vec<f64>>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, targets: Option<Vec<f64>>, feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        if rows.is_empty() {
            return Err(Error::usage("dataset has no rows"));
        }
        if d == 0 {
            return Err(Error::usage("dataset has no feature columns"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::usage(format!(
                    "row {} has {} features, expected {d}",
                    i + 1,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::usage(format!("row {} has a non-finite entry", i + 1)));
            }
        }
        if let Some(t) = &targets {
            if t.len() != rows.len() {
                return Err(Error::usage(format!("{} targets for {} rows", t.len(), rows.len())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::usage("non-finite target"));
            }
        }
        Ok(Self {
            rows,
            targets,
            feature_names,
        })
    }

    /// Features named `x1..xd`.
    pub fn from_rows(rows: Vec<Vec<f64>>, targets: Option<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        Self::new(rows, targets, default_names(d))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.targets.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }
}

fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Reads a comma-separated numeric table.
///
/// Without a header, columns are named `x1, x2, ...`; `target_column` is matched
/// against those names (or the header) and removed from the features.
pub fn load_dataset(path: impl AsRef<Path>, has_header: bool, target_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut header: Option<Vec<String>> = None;
    let mut table: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let row_no = line + 1;
        let record = record.map_err(|e| Error::usage(format!("{}: {e}", path.display())))?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if has_header && header.is_none() {
            header = Some(record.iter().map(str::to_owned).collect());
            continue;
        }
        let width = header.as_ref().map(Vec::len).or(table.first().map(Vec::len));
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::usage(format!(
                    "{}: row {row_no} has {} cells, expected {w}",
                    path.display(),
                    record.len()
                )));
            }
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                column: col + 1,
                cell: cell.to_owned(),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: row_no,
                    column: col + 1,
                    cell: cell.to_owned(),
                });
            }
            row.push(value);
        }
        table.push(row);
    }

    if table.is_empty() {
        return Err(Error::usage(format!("{}: no data rows", path.display())));
    }
    let width = table[0].len();
    let names = header.unwrap_or_else(|| default_names(width));

    let Some(target) = target_column else {
        return Dataset::new(table, None, names);
    };
    let t = names
        .iter()
        .position(|n| n == target)
        .ok_or_else(|| Error::usage(format!("no column named {target:?} in {names:?}")))?;
    let targets = table.iter().map(|r| r[t]).collect();
    let rows = table
        .into_iter()
        .map(|mut r| {
            r.remove(t);
            r
        })
        .collect();
    let mut names = names;
    names.remove(t);
    Dataset::new(rows, Some(targets), names)
}

/// Writes the dataset with a header row; targets, if any, go last under `target`.
/// Values carry 17 significant digits, so `load_dataset` reads them back exactly.
pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    let mut header = data.feature_names.join(",");
    if data.targets.is_some() {
        header.push_str(",target");
    }
    writeln!(out, "{header}").map_err(io_err)?;
    for (i, row) in data.rows.iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(t) = &data.targets {
            cells.push(format!("{:.16e}", t[i]));
        }
        writeln!(out, "{}", cells.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Isotropic Gaussian fitted to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: Vec<f64>,
    /// Square root of the mean of the per-feature unbiased variances.
    pub sigma: f64,
    /// Per-feature standard deviations; diagnostic only.
    pub per_feature_sd: Vec<f64>,
}

pub fn fit_gaussian(data: &Dataset) -> Result<GaussianFit> {
    let m = data.n_rows();
    if m < 2 {
        return Err(Error::usage("fitting a Gaussian needs at least two rows"));
    }
    let d = data.dim();
    let mut mu = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for j in 0..d {
        let mean = data.column(j).sum::<f64>() / m as f64;
        let ss: f64 = data.column(j).map(|v| (v - mean) * (v - mean)).sum();
        mu.push(mean);
        var.push(ss / (m - 1) as f64);
    }
    let mean_var = var.iter().sum::<f64>() / d as f64;
    if mean_var <= 0.0 {
        return Err(Error::Degenerate("every feature has zero variance".into()));
    }
    Ok(GaussianFit {
        mu,
        sigma: mean_var.sqrt(),
        per_feature_sd: var.iter().map(|v| v.sqrt()).collect(),
    })
}

/// Solves `(K + ridge·I) c = y` by Cholesky factorization.
pub fn train_kernel_ridge(data: &Dataset, kernel_scale: f64, ridge: f64) -> Result<KernelRidgeModel> {
    let targets = data
        .targets()
        .ok_or_else(|| Error::usage("kernel ridge training needs targets"))?;
    if !(kernel_scale > 0.0 && kernel_scale.is_finite()) {
        return Err(Error::usage("kernel scale must be positive"));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::usage("ridge must be positive"));
    }
    let rows = data.rows();
    let m = rows.len();
    let mut gram = DMatrix::from_fn(m, m, |i, j| gaussian_kernel(&rows[i], &rows[j], kernel_scale));
    for i in 0..m {
        gram[(i, i)] += ridge;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("kernel system is not positive definite".into()))?;
    let c = chol.solve(&DVector::from_column_slice(targets));
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "kernel system solve produced non-finite values".into(),
        ));
    }
    Ok(KernelRidgeModel {
        train_x: rows.to_vec(),
        dual_coeffs: c.as_slice().to_vec(),
        kernel_scale,
        ridge,
    })
}

/// Ordinary least squares with an intercept.
pub fn train_linear(data: &Dataset) -> Result<LinearModel> {
    let targets = data
        .targets()
        .ok_or_else(|| Error::usage("linear training needs targets"))?;
    let (m, d) = (data.n_rows(), data.dim());
    if m < d + 1 {
        return Err(Error::usage(format!(
            "linear fit with intercept needs at least {} rows, got {m}",
            d + 1
        )));
    }
    let design = DMatrix::from_fn(m, d + 1, |i, j| if j == 0 { 1.0 } else { data.rows()[i][j - 1] });
    let svd = design.svd(true, true);
    let sol = svd
        .solve(&DVector::from_column_slice(targets), 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    LinearModel::new(sol.as_slice()[1..].to_vec(), sol[0])
}

/// Central differences `(f(x + h e_j) - f(x - h e_j)) / 2h`.
pub fn finite_diff_gradient(model: &dyn BlackBox, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let steps = vec![h; x.len()];
    central_differences(model, x, &steps)
}

/// Central differences with the relative step `h_j = 1e-4 · max(1, |x_j|)`.
pub fn gradient(model: &dyn BlackBox, x: &[f64]) -> Result<Vec<f64>> {
    let steps: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    central_differences(model, x, &steps)
}

fn central_differences(model: &dyn BlackBox, x: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
    model.eval(x)?;
    let mut probe = x.to_vec();
    steps
        .iter()
        .enumerate()
        .map(|(j, &h)| {
            probe[j] = x[j] + h;
            let up = model.predict(&probe);
            probe[j] = x[j] - h;
            let down = model.predict(&probe);
            probe[j] = x[j];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}
