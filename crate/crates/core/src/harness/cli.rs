//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::experiments::{
    self, default_coefficients, load_training_data, log_spaced, run_convergence_with, run_dataset_comparison_with,
    run_error_histogram_with, run_fig5_with, run_switch_off_with, sweep_nu, ModelKind, Settings, Sweep,
    CONVERGENCE_SIZES,
};
use super::json::{format_real, to_json};
use super::record::{create_dir, write_file};
use super::{svg, threads_from_env, with_threads, write_record};
use crate::error::{Error, Result};
use crate::models::{fit_gaussian, train_kernel_ridge, train_linear, BlackBox, LinearModel};
use crate::sampling::{theoretical_grid, SamplingConfig};
use crate::surrogate::{explain, Explanation};
use crate::theory::{Oracle, SampleSizeBound, TheoryReport};

#[derive(Debug, Parser)]
#[command(
    name = "lime-lens",
    version,
    about = "Explain regression models with TabularLIME and compare against closed forms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Explain one instance and print the surrogate coefficients.
    Explain(ExplainArgs),
    /// Print the closed-form report for a linear model.
    Theory(TheoryArgs),
    /// Run one of the seeded experiments.
    Figure(FigureArgs),
    /// Closed-form coefficients across a range of bandwidths.
    SweepNu(SweepArgs),
    /// Number of samples sufficient for the coefficients to be ε-accurate.
    SampleSize(SampleSizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Figure {
    Fig5,
    Switchoff,
    Errors,
    Convergence,
    Dataset,
}

#[derive(Debug, Args)]
struct InstanceArgs {
    /// Instance to explain, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xi: Vec<f64>,
    /// Mean of the sampling distribution; zeros by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Option<Vec<f64>>,
    /// Standard deviation of the sampling distribution.
    #[arg(long)]
    sigma: Option<f64>,
    /// Bandwidth of the weights.
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    /// Quantile bins per feature.
    #[arg(long, default_value_t = 4)]
    bins: usize,
}

#[derive(Debug, Args)]
struct LinearArgs {
    /// Coefficients of the linear model; `10x₁ - 10x₂` by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    coef: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    intercept: f64,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Directory for output files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write plot.svg (requires --out).
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training data (CSV); the model is fitted to it.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column name; the last column by default.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_enum, default_value_t = ModelKind::Linear)]
    model: ModelKind,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    linear: LinearArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    linear: LinearArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct FigureArgs {
    #[arg(value_enum)]
    which: Figure,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of features of the synthetic experiments.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[command(flatten)]
    linear: LinearArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    linear: LinearArgs,
    #[arg(long, default_value_t = 0.05)]
    nu_min: f64,
    #[arg(long, default_value_t = 5.0)]
    nu_max: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SampleSizeArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    linear: LinearArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Entry point of the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Like [`run`] with explicit output streams. Exit codes: 0 on success, 1 for
/// usage and input errors, 2 for numerical failures.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = threads_from_env().and_then(|threads| {
        let mut buf = Vec::new();
        let mut log = Vec::new();
        let r = with_threads(threads, || dispatch(cli.command, &mut buf, &mut log))?;
        let _ = out.write_all(&buf);
        let _ = err.write_all(&log);
        r
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command, out: &mut Vec<u8>, log: &mut Vec<u8>) -> Result<()> {
    match command {
        Command::Explain(a) => cmd_explain(a, out),
        Command::Theory(a) => cmd_theory(a, out),
        Command::Figure(a) => cmd_figure(a, out, log),
        Command::SweepNu(a) => cmd_sweep(a, out),
        Command::SampleSize(a) => cmd_sample_size(a, out),
    }
}

fn emit(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(text.as_bytes());
}

impl InstanceArgs {
    fn config(&self, samples: usize, seed: u64) -> Result<SamplingConfig> {
        if self.xi.is_empty() {
            return Err(Error::usage("--xi is required"));
        }
        let config = SamplingConfig {
            xi: self.xi.clone(),
            mu: self.mu.clone().unwrap_or_else(|| vec![0.0; self.xi.len()]),
            sigma: self.sigma.unwrap_or(1.0),
            nu: self.nu,
            p: self.bins,
            n: samples,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

impl LinearArgs {
    fn model(&self, dim: usize) -> Result<LinearModel> {
        let coefficients = self.coef.clone().unwrap_or_else(|| default_coefficients(dim));
        if coefficients.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: coefficients.len(),
            });
        }
        LinearModel::new(coefficients, self.intercept)
    }
}

impl OutputArgs {
    fn check(&self) -> Result<()> {
        if self.plot && self.out.is_none() {
            return Err(Error::usage("--plot needs --out"));
        }
        Ok(())
    }
}

fn coefficient_labels(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("b{j}")).collect()
}

fn explanation_csv(e: &Explanation) -> String {
    let mut s = String::from("term,value\n");
    for (j, b) in e.beta_hat.iter().enumerate() {
        s.push_str(&format!("beta_{j},{}\n", format_real(*b)));
    }
    s.push_str(&format!("prediction_at_xi,{}\n", format_real(e.prediction_at_xi)));
    s.push_str(&format!("n_used,{}\n", e.n_used));
    s.push_str(&format!("condition_number,{}\n", format_real(e.condition_number)));
    s
}

fn cmd_explain(a: ExplainArgs, out: &mut Vec<u8>) -> Result<()> {
    a.output.check()?;
    let mut reference = None;
    let (model, config): (Box<dyn BlackBox>, SamplingConfig) = match &a.data.data {
        Some(path) => {
            let data = load_training_data(path, a.data.target.as_deref())?;
            let fit = fit_gaussian(&data)?;
            let mut config = a.instance.config(a.samples, a.seed).or_else(|e| {
                // μ defaults to the data mean rather than zero here
                if a.instance.xi.is_empty() {
                    Err(e)
                } else {
                    Ok(SamplingConfig {
                        xi: a.instance.xi.clone(),
                        mu: fit.mu.clone(),
                        sigma: fit.sigma,
                        nu: a.instance.nu,
                        p: a.instance.bins,
                        n: a.samples,
                        seed: a.seed,
                    })
                }
            })?;
            if a.instance.mu.is_none() {
                config.mu = fit.mu.clone();
            }
            if a.instance.sigma.is_none() {
                config.sigma = fit.sigma;
            }
            config.validate()?;
            if config.dim() != data.dim() {
                return Err(Error::DimensionMismatch {
                    expected: data.dim(),
                    got: config.dim(),
                });
            }
            let model: Box<dyn BlackBox> = match a.data.model {
                ModelKind::Linear => {
                    let m = train_linear(&data)?;
                    reference = Some(m.clone());
                    Box::new(m)
                }
                ModelKind::KernelRidge => Box::new(train_kernel_ridge(
                    &data,
                    experiments::KERNEL_SCALE,
                    experiments::KERNEL_RIDGE,
                )?),
            };
            (model, config)
        }
        None => {
            let config = a.instance.config(a.samples, a.seed)?;
            let m = a.linear.model(config.dim())?;
            reference = Some(m.clone());
            (Box::new(m), config)
        }
    };
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let e = explain(model.as_ref(), &config, &grid, a.ridge)?;
    let json = to_json(&e)?;
    let csv = explanation_csv(&e);
    emit(out, if a.output.format == Format::Json { &json } else { &csv });
    if let Some(dir) = &a.output.out {
        let dir = dir.join("explain");
        create_dir(&dir)?;
        write_file(&dir.join("record.json"), &json)?;
        write_file(&dir.join("record.csv"), &csv)?;
        if a.output.plot {
            let beta = match &reference {
                Some(m) => Some(Oracle::new(&config, &grid)?.beta(m)?),
                None => None,
            };
            let chart = svg::bars(
                "surrogate coefficients",
                &coefficient_labels(e.beta_hat.len()),
                &e.beta_hat,
                beta.as_deref(),
            );
            write_file(&dir.join("plot.svg"), &chart)?;
        }
    }
    Ok(())
}

fn theory_csv(r: &TheoryReport) -> String {
    let cell = |v: Option<f64>| v.map(format_real).unwrap_or_default();
    let mut s = String::from("coordinate,beta,mu_tilde,alpha,theta,v_crit\n");
    s.push_str(&format!("0,{},,,,\n", format_real(r.beta[0])));
    for j in 0..r.alpha.len() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            j + 1,
            format_real(r.beta[j + 1]),
            format_real(r.shrunk.mu_tilde[j]),
            format_real(r.alpha[j]),
            format_real(r.theta[j]),
            cell(r.v_crit[j])
        ));
    }
    s
}

fn cmd_theory(a: TheoryArgs, out: &mut Vec<u8>) -> Result<()> {
    a.output.check()?;
    let config = a.instance.config(1, 0)?;
    let model = a.linear.model(config.dim())?;
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let report = Oracle::new(&config, &grid)?.report(&model)?;
    let json = to_json(&report)?;
    let csv = theory_csv(&report);
    emit(out, if a.output.format == Format::Json { &json } else { &csv });
    if let Some(dir) = &a.output.out {
        let dir = dir.join("theory");
        create_dir(&dir)?;
        write_file(&dir.join("record.json"), &json)?;
        write_file(&dir.join("record.csv"), &csv)?;
        if a.output.plot {
            let chart = svg::bars(
                "closed-form coefficients",
                &coefficient_labels(report.beta.len()),
                &report.beta,
                None,
            );
            write_file(&dir.join("plot.svg"), &chart)?;
        }
    }
    Ok(())
}

fn figure_settings(a: &FigureArgs, base: Settings) -> Result<Settings> {
    let dim = a.dim.or(a.linear.coef.as_ref().map(Vec::len)).unwrap_or(base.dim);
    let coefficients = match &a.linear.coef {
        Some(c) => c.clone(),
        None if dim == base.dim => base.coefficients.clone(),
        None => default_coefficients(dim),
    };
    Ok(Settings {
        dim,
        coefficients,
        intercept: a.linear.intercept,
        samples: a.samples.unwrap_or(base.samples),
        repetitions: a.repetitions.unwrap_or(base.repetitions),
        nu: a.nu.unwrap_or(base.nu),
        sigma: a.sigma.unwrap_or(base.sigma),
        bins: a.bins.unwrap_or(base.bins),
        ridge: a.ridge,
        ..base
    })
}

fn cmd_figure(a: FigureArgs, out: &mut Vec<u8>, log: &mut Vec<u8>) -> Result<()> {
    let start = Instant::now();
    let base = Settings::new(a.seed);
    let rec = match a.which {
        Figure::Fig5 => run_fig5_with(&figure_settings(&a, base)?)?,
        Figure::Switchoff => run_switch_off_with(&figure_settings(&a, base)?)?,
        Figure::Errors => run_error_histogram_with(&figure_settings(
            &a,
            Settings {
                repetitions: 100,
                ..base
            },
        )?)?,
        Figure::Convergence => run_convergence_with(
            &figure_settings(
                &a,
                Settings {
                    repetitions: 10,
                    ..base
                },
            )?,
            &CONVERGENCE_SIZES,
        )?,
        Figure::Dataset => {
            let path = a
                .data
                .data
                .as_deref()
                .ok_or_else(|| Error::usage("figure dataset needs --data"))?;
            let data = load_training_data(path, a.data.target.as_deref())?;
            let base = experiments::dataset_settings(a.seed, data.dim());
            let settings = Settings {
                samples: a.samples.unwrap_or(base.samples),
                repetitions: a.repetitions.unwrap_or(base.repetitions),
                nu: a.nu.unwrap_or(base.nu),
                bins: a.bins.unwrap_or(base.bins),
                ridge: a.ridge,
                ..base
            };
            run_dataset_comparison_with(&data, &path.display().to_string(), a.data.model, &settings)?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    match &a.output.out {
        Some(dir) => {
            let dir = write_record(&rec, dir)?;
            write_timing(&dir, elapsed)?;
            emit(out, &format!("wrote {}\n", dir.display()));
            for c in &rec.checks {
                emit(
                    out,
                    &format!(
                        "{} {}: {} (limit {})\n",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.value,
                        c.threshold
                    ),
                );
            }
        }
        None => emit(
            out,
            &if a.output.format == Format::Json {
                rec.to_json()?
            } else {
                rec.to_csv()
            },
        ),
    }
    let _ = writeln!(log, "{}: {elapsed:.2} s", rec.experiment_id);
    Ok(())
}

/// Wall-clock time goes to its own file so that `record.json` depends only
/// on the inputs.
fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    write_file(
        &dir.join("timing.json"),
        &to_json(&serde_json::json!({ "wall_time": seconds }))?,
    )
}

fn sweep_csv(s: &Sweep) -> String {
    let d = s.theta.first().map_or(0, Vec::len);
    let mut text = String::from("nu");
    for j in 1..=d {
        text.push_str(&format!(",theta_{j}"));
    }
    for j in 0..=d {
        text.push_str(&format!(",beta_{j}"));
    }
    text.push('\n');
    for i in 0..s.nu.len() {
        text.push_str(&format_real(s.nu[i]));
        for t in &s.theta[i] {
            text.push(',');
            text.push_str(&format_real(*t));
        }
        match &s.beta[i] {
            Some(b) => {
                for v in b {
                    text.push(',');
                    text.push_str(&format_real(*v));
                }
            }
            None => text.push_str(&",".repeat(d + 1)),
        }
        text.push('\n');
    }
    text
}

fn cmd_sweep(a: SweepArgs, out: &mut Vec<u8>) -> Result<()> {
    a.output.check()?;
    let config = a.instance.config(1, 0)?;
    let model = a.linear.model(config.dim())?;
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let nus = log_spaced(a.nu_min, a.nu_max, a.steps)?;
    let sweep = sweep_nu(&model, &config, &grid, &nus)?;
    let json = to_json(&sweep)?;
    let csv = sweep_csv(&sweep);
    emit(out, if a.output.format == Format::Json { &json } else { &csv });
    if let Some(dir) = &a.output.out {
        let dir = dir.join("sweep-nu");
        create_dir(&dir)?;
        write_file(&dir.join("record.json"), &json)?;
        write_file(&dir.join("record.csv"), &csv)?;
        if a.output.plot {
            let series: Vec<(String, Vec<f64>)> = (0..config.dim())
                .map(|j| (format!("theta_{}", j + 1), sweep.theta.iter().map(|t| t[j]).collect()))
                .collect();
            let marker = sweep.crossings.first().map(|c| c.switch_off_nu);
            let chart = svg::lines(
                "theta_j against bandwidth",
                "nu",
                "theta",
                &sweep.nu,
                &series,
                false,
                marker,
            );
            write_file(&dir.join("plot.svg"), &chart)?;
        }
    }
    Ok(())
}

fn cmd_sample_size(a: SampleSizeArgs, out: &mut Vec<u8>) -> Result<()> {
    let config = a.instance.config(1, 0)?;
    let model = a.linear.model(config.dim())?;
    let grid = theoretical_grid(&config.mu, config.sigma, config.p)?;
    let bound: SampleSizeBound = Oracle::new(&config, &grid)?.sample_size_bound(&model, a.epsilon, a.eta)?;
    match a.format {
        Format::Json => emit(out, &to_json(&bound)?),
        Format::Csv => emit(
            out,
            &format!(
                "n,term_1,term_2,term_3\n{},{},{},{}\n",
                bound.n,
                format_real(bound.terms[0]),
                format_real(bound.terms[1]),
                format_real(bound.terms[2])
            ),
        ),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(
            std::iter::once("lime-lens").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn negative_lists_parse() {
        let (code, out, err) = run_capture(&["theory", "--xi", "-0.3,0.5", "--coef", "-1,2"]);
        assert_eq!(code, 0, "{err}");
        let r: TheoryReport = serde_json::from_str(&out).unwrap();
        assert_eq!(r.alpha.len(), 2);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = run_capture(&["theory", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"));
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("sweep-nu"));
    }

    #[test]
    fn plot_without_out_is_rejected() {
        let (code, _, _) = run_capture(&["theory", "--xi", "0.1", "--plot"]);
        assert_eq!(code, 1);
    }
}
