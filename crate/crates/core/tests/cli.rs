use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lime_lens::harness::experiments::draw_instance;
use lime_lens::theory::TheoryReport;

fn lime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lime-lens"))
        .args(args)
        .env_remove("LIME_LENS_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_linear_csv(path: &Path) {
    let mut text = String::from("a,b,c,y\n");
    for i in 0..60 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.11).cos();
        let c = ((i * 7 % 13) as f64) / 13.0;
        text.push_str(&format!("{a},{b},{c},{}\n", 2.0 * a - b + 0.5));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn theory_prints_a_report() {
    let o = lime(&[
        "theory", "--mu", "0,0", "--sigma", "1", "--nu", "1", "--xi", "0.3,0.5", "--bins", "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: TheoryReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.beta.len(), 3);
    assert_eq!(r.sigma_matrix.len(), 3);
}

#[test]
fn theory_csv_has_one_row_per_coefficient() {
    let o = lime(&["theory", "--xi", "0.3,0.5", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("coordinate,beta,mu_tilde,alpha,theta,v_crit\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn figure_writes_record_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lime(&[
        "figure",
        "fig5",
        "--seed",
        "7",
        "--out",
        out,
        "--repetitions",
        "4",
        "--samples",
        "2000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fig = dir.path().join("fig5");
    for f in ["record.json", "record.csv", "plot.svg", "timing.json"] {
        assert!(fig.join(f).is_file(), "{f} missing");
    }
    assert!(fs::read_to_string(fig.join("plot.svg")).unwrap().starts_with("<svg"));
    assert!(stdout(&o)
        .lines()
        .any(|l| l.starts_with("PASS") || l.starts_with("FAIL")));
}

#[test]
fn failed_checks_do_not_change_the_exit_code() {
    // a handful of samples gives noisy coefficients but a valid run
    let o = lime(&["figure", "fig5", "--repetitions", "3", "--samples", "300"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn sample_size_matches_the_library() {
    let xi = draw_instance(0, 0, &[0.0; 3], 1.0);
    let xi_arg = xi.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",");
    let o = lime(&[
        "sample-size",
        "--epsilon",
        "1",
        "--eta",
        "0.1",
        "--xi",
        &xi_arg,
        "--coef",
        "10,-10,0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got: lime_lens::theory::SampleSizeBound = serde_json::from_str(&stdout(&o)).unwrap();
    let config = lime_lens::SamplingConfig {
        xi,
        mu: vec![0.0; 3],
        sigma: 1.0,
        nu: 1.0,
        p: 4,
        n: 1,
        seed: 0,
    };
    let grid = lime_lens::sampling::theoretical_grid(&config.mu, 1.0, 4).unwrap();
    let model = lime_lens::LinearModel::new(vec![10.0, -10.0, 0.0], 0.0).unwrap();
    let want = lime_lens::theory::sample_size_bound(&model, &config, &grid, 1.0, 0.1).unwrap();
    assert_eq!(got, want);
}

#[test]
fn explain_linear_model_from_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("train.csv");
    write_linear_csv(&csv);
    let o = lime(&[
        "explain",
        "--data",
        csv.to_str().unwrap(),
        "--xi",
        "0.2,-0.1,0.5",
        "--samples",
        "4000",
        "--out",
        dir.path().to_str().unwrap(),
        "--plot",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let e: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(e["beta_hat"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("explain/plot.svg").is_file());
}

#[test]
fn dataset_figure_with_kernel_ridge() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("train.csv");
    write_linear_csv(&csv);
    let o = lime(&[
        "figure",
        "dataset",
        "--data",
        csv.to_str().unwrap(),
        "--model",
        "kernel-ridge",
        "--repetitions",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("dataset/record.json")).unwrap()).unwrap();
    assert_eq!(rec["model"]["kind"], "kernel_ridge");
    assert_eq!(rec["dataset"]["features"], 3);
}

#[test]
fn sweep_reports_the_crossing() {
    let o = lime(&["sweep-nu", "--xi", "0.5,2.0", "--coef", "1,1", "--steps", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["nu"].as_array().unwrap().len(), 50);
    assert_eq!(s["crossings"][0]["brackets_switch_off"], true);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = lime(&["theory", "--xi", "0.1", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn bad_input_exits_one() {
    assert_eq!(lime(&["theory", "--xi", "0.1", "--sigma", "-1"]).status.code(), Some(1));
    assert_eq!(
        lime(&["theory", "--xi", "0.1,0.2", "--coef", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        lime(&["explain", "--data", "/nonexistent.csv", "--xi", "0"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn degenerate_design_exits_two() {
    // fewer samples than coefficients
    let o = lime(&["explain", "--xi", "0.1,0.2,0.3", "--samples", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("degenerate"));
}

#[test]
fn thread_count_does_not_change_records() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_lime-lens"))
            .args([
                "figure",
                "errors",
                "--seed",
                "3",
                "--repetitions",
                "6",
                "--samples",
                "3000",
            ])
            .arg("--out")
            .arg(dir.path())
            .env("LIME_LENS_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(dir.path().join("errors/record.json")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn invalid_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_lime-lens"))
        .args(["theory", "--xi", "0.1"])
        .env("LIME_LENS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
