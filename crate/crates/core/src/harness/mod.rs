//! Experiments, records, plots and the command-line interface.

pub mod cli;
pub mod experiments;
pub mod json;
pub mod record;
pub mod svg;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use record::{write_file, ExperimentRecord};

/// Environment variable overriding the number of worker threads.
pub const THREADS_ENV: &str = "LIME_LENS_THREADS";

/// Worker count from [`THREADS_ENV`]; `None` when unset or empty.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Numerical(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn coefficient_labels(k: usize) -> Vec<String> {
    (0..k)
        .map(|j| if j == 0 { "b0".into() } else { format!("b{j}") })
        .collect()
}

/// The chart that goes with a record: a histogram for the local-error
/// experiment, error against sample size for convergence, boxplots otherwise.
pub fn plot_record(rec: &ExperimentRecord) -> String {
    if let Some(le) = &rec.local_error {
        return svg::histogram(
            &format!("{}: surrogate error at the instance", rec.experiment_id),
            &le.errors,
            le.theory_center,
            "predicted center",
        );
    }
    if let Some(c) = &rec.convergence {
        let xs: Vec<f64> = c.sample_sizes.iter().map(|&n| n as f64).collect();
        let reference: Vec<f64> = xs
            .iter()
            .map(|x| c.mean_errors[0] * (x / xs[0]).powf(experiments::SLOPE_TARGET))
            .collect();
        return svg::lines(
            &format!("{}: slope {:.3}", rec.experiment_id, c.slope),
            "samples n",
            "mean distance to closed form",
            &xs,
            &[
                ("mean error".into(), c.mean_errors.clone()),
                ("n^-1/2".into(), reference),
            ],
            true,
            None,
        );
    }
    let k = rec.summary_stats.len();
    svg::boxplot(
        &format!("{}: {} repetitions", rec.experiment_id, rec.repetitions),
        &coefficient_labels(k),
        &rec.summary_stats,
        Some(&rec.theory.beta),
    )
}

/// Writes `record.json`, `record.csv` and `plot.svg` under
/// `<out>/<experiment_id>/`.
pub fn write_record(rec: &ExperimentRecord, out: &Path) -> Result<PathBuf> {
    let dir = rec.write(out)?;
    write_file(&dir.join("plot.svg"), &plot_record(rec))?;
    Ok(dir)
}
