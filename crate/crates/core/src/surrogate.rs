//! Weighted least-squares surrogate on the binary interpretable features.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::BlackBox;
use crate::sampling::{perturb, PerturbationSet, QuantileGrid, SamplingConfig};

/// Condition number above which an unregularized normal matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Rows per partial Gram accumulation. Partial sums are combined in chunk
/// order, so the result does not depend on the number of workers.
const GRAM_CHUNK: usize = 4096;

/// Output of one surrogate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Intercept first, then one coefficient per feature.
    pub beta_hat: Vec<f64>,
    /// Surrogate prediction at the explained instance, which is encoded as the
    /// all-ones feature vector: the sum of `beta_hat`.
    pub prediction_at_xi: f64,
    pub n_used: usize,
    pub condition_number: f64,
    pub config: SamplingConfig,
}

/// An [`Explanation`] together with the samples and responses it was fitted on.
#[derive(Debug, Clone)]
pub struct ExplainRun {
    pub explanation: Explanation,
    pub perturbations: PerturbationSet,
    pub responses: Vec<f64>,
}

/// Prepends the constant intercept column to the binary features.
pub fn build_design(features: &[Vec<u8>], d: usize) -> Result<DMatrix<f64>> {
    if let Some(i) = features.iter().position(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: features[i].len(),
        });
    }
    Ok(DMatrix::from_fn(features.len(), d + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            f64::from(features[i][j - 1])
        }
    }))
}

/// Running sums `Zᵀ Π Z` and `Zᵀ Π y`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    k: usize,
    /// Upper triangle, row-major.
    gram: Vec<f64>,
    rhs: Vec<f64>,
    n: usize,
    /// Per-column range over rows with positive weight, for diagnostics.
    col_min: Vec<f64>,
    col_max: Vec<f64>,
}

impl NormalEquations {
    /// Empty sums for design rows of length `k` (intercept included).
    pub fn new(k: usize) -> Self {
        Self {
            k,
            gram: vec![0.0; k * k],
            rhs: vec![0.0; k],
            n: 0,
            col_min: vec![f64::INFINITY; k],
            col_max: vec![f64::NEG_INFINITY; k],
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn accumulate(&mut self, row: &[f64], weight: f64, response: f64) {
        debug_assert_eq!(row.len(), self.k);
        let k = self.k;
        for a in 0..k {
            let wa = weight * row[a];
            if wa != 0.0 {
                for b in a..k {
                    self.gram[a * k + b] += wa * row[b];
                }
                self.rhs[a] += wa * response;
            }
        }
        if weight > 0.0 {
            for (j, &v) in row.iter().enumerate() {
                self.col_min[j] = self.col_min[j].min(v);
                self.col_max[j] = self.col_max[j].max(v);
            }
        }
        self.n += 1;
    }

    /// Adds another partial sum; callers merge in a fixed order.
    pub fn merge(&mut self, other: &NormalEquations) {
        assert_eq!(self.k, other.k);
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.rhs.iter_mut().zip(&other.rhs) {
            *a += b;
        }
        for j in 0..self.k {
            self.col_min[j] = self.col_min[j].min(other.col_min[j]);
            self.col_max[j] = self.col_max[j].max(other.col_max[j]);
        }
        self.n += other.n;
    }

    /// `Zᵀ Π Z` as a full symmetric matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.k;
        DMatrix::from_fn(k, k, |a, b| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            self.gram[lo * k + hi]
        })
    }

    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.rhs)
    }

    /// Feature columns (index ≥ 1) that take a single value over the rows with
    /// positive weight, and are therefore confounded with the intercept.
    pub fn constant_columns(&self) -> Vec<usize> {
        (1..self.k).filter(|&j| self.col_min[j] >= self.col_max[j]).collect()
    }

    /// Solves `(ZᵀΠZ + n·ridge·D) β = ZᵀΠy`, where `D` is the identity with the
    /// intercept entry zeroed. Returns `β` and the condition number of the
    /// matrix that was factored.
    pub fn solve(&self, ridge: f64) -> Result<(Vec<f64>, f64)> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::usage("ridge must be a finite non-negative number"));
        }
        let mut a = self.gram();
        for j in 1..self.k {
            a[(j, j)] += self.n as f64 * ridge;
        }
        let b = self.rhs();
        let cond = condition_number(&a);

        if ridge == 0.0 {
            if self.n < self.k || !(cond <= MAX_CONDITION) {
                return Err(self.degenerate(cond));
            }
            let chol = a.cholesky().ok_or_else(|| self.degenerate(cond))?;
            return Ok((chol.solve(&b).as_slice().to_vec(), cond));
        }

        let beta = match a.clone().cholesky() {
            Some(chol) if cond <= MAX_CONDITION => chol.solve(&b),
            _ => a
                .svd(true, true)
                .solve(&b, f64::EPSILON * self.n.max(1) as f64)
                .map_err(|e| Error::Numerical(e.to_string()))?,
        };
        Ok((beta.as_slice().to_vec(), cond))
    }

    fn degenerate(&self, condition_number: f64) -> Error {
        Error::DegenerateDesign {
            condition_number,
            constant_columns: self.constant_columns(),
        }
    }
}

/// Ratio of extreme eigenvalues of a symmetric matrix; `∞` when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = eig.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Weighted least squares: minimizes `Σ π_i (y_i - z_iᵀβ)²`, plus
/// `n·ridge·‖β_{1..}‖²` when `ridge > 0`.
pub fn wls_solve(design: &DMatrix<f64>, responses: &[f64], weights: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let n = design.nrows();
    if responses.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: responses.len(),
        });
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::usage("weights must be finite and non-negative"));
    }
    let mut eqs = NormalEquations::new(design.ncols());
    let mut row = vec![0.0; design.ncols()];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = design[(i, j)];
        }
        eqs.accumulate(&row, weights[i], responses[i]);
    }
    eqs.solve(ridge).map(|(beta, _)| beta)
}

/// Runs the full explainer: perturb, query the model, fit the surrogate.
pub fn explain(model: &dyn BlackBox, config: &SamplingConfig, grid: &QuantileGrid, ridge: f64) -> Result<Explanation> {
    explain_run(model, config, grid, ridge).map(|run| run.explanation)
}

/// Like [`explain`] but keeps the perturbations and model responses.
pub fn explain_run(
    model: &dyn BlackBox,
    config: &SamplingConfig,
    grid: &QuantileGrid,
    ridge: f64,
) -> Result<ExplainRun> {
    config.validate()?;
    if model.dim() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            got: model.dim(),
        });
    }
    let perturbations = perturb(config, grid)?;
    let responses = evaluate(model, &perturbations)?;
    let eqs = accumulate_normal_equations(&perturbations, &responses);
    let (beta_hat, condition_number) = eqs.solve(ridge)?;
    let prediction_at_xi = beta_hat.iter().sum();
    Ok(ExplainRun {
        explanation: Explanation {
            beta_hat,
            prediction_at_xi,
            n_used: perturbations.len(),
            condition_number,
            config: config.clone(),
        },
        perturbations,
        responses,
    })
}

fn evaluate(model: &dyn BlackBox, set: &PerturbationSet) -> Result<Vec<f64>> {
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let y = model.eval(set.sample(i)).map_err(|e| Error::ModelEval {
                index: i,
                source: Box::new(e),
            })?;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::ModelEval {
                    index: i,
                    source: Box::new(Error::Numerical(format!("model returned {y}"))),
                })
            }
        })
        .collect()
}

/// Gram accumulation over the design `[1, z_i]`.
pub fn accumulate_normal_equations(set: &PerturbationSet, responses: &[f64]) -> NormalEquations {
    let k = set.dim() + 1;
    let starts: Vec<usize> = (0..set.len()).step_by(GRAM_CHUNK).collect();
    let partials: Vec<NormalEquations> = starts
        .into_par_iter()
        .map(|start| {
            let mut eqs = NormalEquations::new(k);
            let mut row = vec![1.0; k];
            for i in start..(start + GRAM_CHUNK).min(set.len()) {
                for (dst, &z) in row[1..].iter_mut().zip(set.features(i)) {
                    *dst = f64::from(z);
                }
                eqs.accumulate(&row, set.weight(i), responses[i]);
            }
            eqs
        })
        .collect();
    let mut total = NormalEquations::new(k);
    for p in &partials {
        total.merge(p);
    }
    total
}
