use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hefty::cli::{self, ESTIMATE_HEADER};
use hefty::estimators::{Covariates, Dataset};
use hefty::sim::{read_lookup_csv, read_report_csv, Method};
use hefty::stats::fmt_sig6;
use hefty::tail_model::{sample_mixture, MixtureParams};
use tempfile::TempDir;

fn heavy() -> MixtureParams {
    MixtureParams::new(0.5, 0.4, 0.1, 1.0, 10.0, 1.5).unwrap()
}

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut full = vec!["hefty"];
    full.extend_from_slice(args);
    let code = cli::run(full, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn params_file(dir: &TempDir) -> PathBuf {
    write(dir, "params.json", &heavy().to_json())
}

fn experiment_text(data: &Dataset) -> String {
    let mut text = String::from("unit_id,y,t");
    if let Some(c) = data.covariates() {
        for n in &c.names {
            text.push(',');
            text.push_str(n);
        }
    }
    text.push('\n');
    for i in 0..data.len() {
        text.push_str(&format!("{i},{},{}", data.response()[i], data.assignment()[i]));
        if let Some(c) = data.covariates() {
            for j in 0..c.k() {
                text.push_str(&format!(",{}", c.values[i * c.k() + j]));
            }
        }
        text.push('\n');
    }
    text
}

fn covariate_data(n: usize) -> Dataset {
    let s = sample_mixture(&heavy(), n, 3);
    let y: Vec<f64> = s.iter().enumerate().map(|(i, v)| v * (0.8 + 0.05 * (i % 9) as f64)).collect();
    let x: Vec<f64> = s.iter().enumerate().map(|(i, v)| v * (0.9 + 0.03 * (i % 7) as f64)).collect();
    let t: Vec<u8> = (0..n).map(|i| u8::from((i * 7 + i / 3) % 2 == 0)).collect();
    Dataset::new(y, t, Some(Covariates { names: vec!["x_pre".into()], values: x })).unwrap()
}

#[test]
fn fit_round_trip_and_recovery() {
    let dir = TempDir::new().unwrap();
    let ys = sample_mixture(&heavy(), 40_000, 21);
    let mut text = String::from("y\n");
    for y in &ys {
        text.push_str(&format!("{y}\n"));
    }
    let input = write(&dir, "y.csv", &text);
    let output = dir.path().join("fit.json");
    let (code, stdout) = run(&["fit", "--input", s(&input), "--cutoff", "10", "--output", s(&output)]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("segments: zero="), "{stdout}");
    assert_eq!(stdout.matches("qq ").count(), 2);

    let json = fs::read_to_string(&output).unwrap();
    let fitted = MixtureParams::from_json(&json).unwrap();
    assert_eq!(MixtureParams::from_json(&fitted.to_json()).unwrap(), fitted);
    assert!((fitted.alpha - 1.5).abs() < 0.05 * 1.5, "alpha {}", fitted.alpha);
}

#[test]
fn fit_negative_value_names_row() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "y.csv", "y\n1.0\n0\n-2.5\n4\n");
    let output = dir.path().join("fit.json");
    let res = Command::new(env!("CARGO_BIN_EXE_hefty"))
        .args(["fit", "--input", s(&input), "--cutoff", "3", "--output", s(&output)])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("row 4"), "{err}");
    assert!(!output.exists());
}

#[test]
fn missing_input_is_input_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.csv");
    let (code, _) = run(&["estimate", "--input", s(&missing), "--method", "naive"]);
    assert_eq!(code, 2);
}

#[test]
fn estimate_toy_naive_and_uncapped_winsor() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "toy.csv", "unit_id,y,t\na,1,1\nb,3,0\nc,2,1\nd,6,0\n");
    let (code, stdout) = run(&["estimate", "--input", s(&input), "--method", "naive", "--method", "winsor_union@1"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], ESTIMATE_HEADER);
    let naive: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(naive[0], "naive");
    // treated mean 1.5, control mean 4.5
    assert_eq!(naive[1].parse::<f64>().unwrap(), -3.0);
    assert_eq!(naive[2].parse::<f64>().unwrap(), fmt_sig6(-3.0 / 4.5).parse::<f64>().unwrap());
    let se = (0.5f64 / 2.0 + 4.5 / 2.0).sqrt();
    assert_eq!(naive[3], fmt_sig6(se));
    let winsor: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(winsor[0], "winsor_union@1");
    assert_eq!(winsor[1..], naive[1..]);
}

#[test]
fn estimate_matches_library_dml_huber() {
    let dir = TempDir::new().unwrap();
    let data = covariate_data(3000);
    let input = write(&dir, "exp.csv", &experiment_text(&data));
    let out_path = dir.path().join("est.csv");
    let (code, stdout) =
        run(&["estimate", "--input", s(&input), "--method", "dml_huber@5", "--seed", "9", "--output", s(&out_path)]);
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(&out_path).unwrap(), stdout);

    // the file is re-read so the library sees the same parsed values
    let parsed = cli::read_experiment_csv(&input).unwrap();
    assert_eq!(parsed, data);
    let r = "dml_huber@5".parse::<Method>().unwrap().estimate(&parsed, 9).unwrap();
    let expected = format!(
        "dml_huber@5,{},{},{},{},{}",
        fmt_sig6(r.effect_abs),
        fmt_sig6(r.lift),
        fmt_sig6(r.std_err),
        fmt_sig6(r.z_stat),
        fmt_sig6(r.p_value)
    );
    assert_eq!(stdout.lines().nth(1).unwrap(), expected);
}

#[test]
fn estimate_seed_from_environment() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "exp.csv", &experiment_text(&covariate_data(600)));
    let bin = env!("CARGO_BIN_EXE_hefty");
    let base = ["estimate", "--input", s(&input), "--method", "dml@2"];
    let flag = Command::new(bin).args(base).args(["--seed", "5"]).output().unwrap();
    let env = Command::new(bin).args(base).env("HEFTY_SEED", "5").output().unwrap();
    let other = Command::new(bin).args(base).env("HEFTY_SEED", "6").output().unwrap();
    assert!(flag.status.success());
    assert_eq!(flag.stdout, env.stdout);
    assert_ne!(flag.stdout, other.stdout);
}

#[test]
fn estimate_error_exit_codes() {
    let dir = TempDir::new().unwrap();
    let plain = write(&dir, "plain.csv", "unit_id,y,t\n1,1,1\n2,3,0\n3,2,1\n4,6,0\n");
    assert_eq!(run(&["estimate", "--input", s(&plain), "--method", "post_strat"]).0, 4);
    let tiny = write(&dir, "tiny.csv", "unit_id,y,t,x\n1,1,1,0.5\n2,3,0,0.1\n3,2,1,0.9\n4,6,0,0.3\n");
    assert_eq!(run(&["estimate", "--input", s(&tiny), "--method", "dml@5"]).0, 3);
    let bad_t = write(&dir, "bad.csv", "unit_id,y,t\n1,1,2\n2,3,0\n");
    assert_eq!(run(&["estimate", "--input", s(&bad_t), "--method", "naive"]).0, 2);
    let config = write(&dir, "c.json", r#"{"input": "x.csv", "bogus": 1}"#);
    assert_eq!(run(&["estimate", "--config", s(&config)]).0, 4);
}

#[test]
fn estimate_config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "toy.csv", "unit_id,y,t\na,1,1\nb,3,0\nc,2,1\nd,6,0\n");
    let config = write(&dir, "c.json", &format!(r#"{{"input": "{}", "methods": ["naive"]}}"#, s(&input)));
    let (code, stdout) = run(&["estimate", "--config", s(&config)]);
    assert_eq!(code, 0);
    assert!(stdout.lines().nth(1).unwrap().starts_with("naive,"));
    let (code, stdout) = run(&["estimate", "--config", s(&config), "--method", "huber"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.lines().nth(1).unwrap().starts_with("huber,"));
}

#[test]
fn simulate_single_rep_is_finite() {
    let dir = TempDir::new().unwrap();
    let params = params_file(&dir);
    let (code, stdout) = run(&[
        "simulate",
        "--params",
        s(&params),
        "--n-per-arm",
        "500",
        "--reps",
        "1",
        "--method",
        "naive",
        "--method",
        "huber",
        "--seed",
        "4",
    ]);
    assert_eq!(code, 0);
    let rows = read_report_csv(stdout.as_bytes()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r.n_reps, 1);
        for v in [r.mse, r.mad_signed, r.mad_abs, r.fpr, r.fpr_lo, r.fpr_hi, r.detectable_lift] {
            assert!(v.is_finite());
        }
        assert_eq!(r.detectable_lift, 0.0);
    }
}

#[test]
fn simulate_is_reproducible_and_rereadable() {
    let dir = TempDir::new().unwrap();
    let params = params_file(&dir);
    let config = write(
        &dir,
        "sim.json",
        &format!(
            r#"{{"params_file": "{}", "target_lift": 0.02, "n_per_arm": 800, "n_reps": 30, "methods": ["naive", "winsor_union@0.99"], "seed": 12}}"#,
            s(&params)
        ),
    );
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let report = dir.path().join(format!("r{workers}.csv"));
        let pvalues = dir.path().join(format!("p{workers}.csv"));
        let (code, stdout) = run(&[
            "simulate",
            "--config",
            s(&config),
            "--workers",
            workers,
            "--output",
            s(&report),
            "--pvalues",
            s(&pvalues),
        ]);
        assert_eq!(code, 0);
        assert!(stdout.is_empty());
        outputs.push((fs::read(&report).unwrap(), fs::read_to_string(&pvalues).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let rows = read_report_csv(outputs[0].0.as_slice()).unwrap();
    assert_eq!(rows.len(), 2);
    let p_lines: Vec<&str> = outputs[0].1.lines().collect();
    assert_eq!(p_lines[0], "rep,method,p");
    assert_eq!(p_lines.len(), 1 + 2 * 30);
    assert!(!outputs[0].1.contains('\r'));
}

#[test]
fn simulate_paired_and_excessive_failures() {
    let dir = TempDir::new().unwrap();
    let params = params_file(&dir);
    let (code, stdout) = run(&[
        "simulate",
        "--params",
        s(&params),
        "--n-per-arm",
        "300",
        "--reps",
        "5",
        "--method",
        "post_strat",
        "--method",
        "dml_huber@5",
        "--noise-cv",
        "0.3",
    ]);
    assert_eq!(code, 0);
    assert_eq!(read_report_csv(stdout.as_bytes()).unwrap().len(), 2);
    // the robust scale is zero whenever at least half of the pooled sample is zero
    let zeros = write(&dir, "z.json", &MixtureParams::new(0.8, 0.15, 0.05, 1.0, 10.0, 1.5).unwrap().to_json());
    let (code, _) = run(&[
        "simulate",
        "--params",
        s(&zeros),
        "--n-per-arm",
        "200",
        "--reps",
        "5",
        "--method",
        "huber@robust_scale",
    ]);
    assert_eq!(code, 5);
}

#[test]
fn simulate_separate_vs_unified_fpr() {
    let dir = TempDir::new().unwrap();
    let params = params_file(&dir);
    let (code, stdout) = run(&[
        "simulate",
        "--params",
        s(&params),
        "--n-per-arm",
        "20000",
        "--reps",
        "500",
        "--method",
        "winsor_separate@0.99",
        "--method",
        "winsor_union@0.99",
        "--seed",
        "3",
    ]);
    assert_eq!(code, 0);
    let rows = read_report_csv(stdout.as_bytes()).unwrap();
    assert!(rows[0].fpr_lo > 0.10, "separate {:?}", rows[0]);
    assert!(rows[1].fpr_lo <= 0.10 && rows[1].fpr_hi >= 0.10, "unified {:?}", rows[1]);
}

#[test]
fn gridsearch_single_percentile() {
    let dir = TempDir::new().unwrap();
    let params = params_file(&dir);
    let curve = dir.path().join("curve.csv");
    let (code, stdout) = run(&[
        "gridsearch",
        "--params",
        s(&params),
        "--n-per-arm",
        "500",
        "--grid",
        "0.99",
        "--reps",
        "10",
        "--curve",
        s(&curve),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&curve).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "percentile,mse");
    assert!(lines[1].starts_with("0.99,"));
    assert!(stdout.contains("percentile=0.99"));
}

#[test]
fn gridsearch_argmin_below_one_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let params = params_file(&dir);
    let grid = "0.95,0.9554,0.9609,0.9663,0.9718,0.9772,0.9827,0.9881,0.9936,0.999,1";
    let args = ["gridsearch", "--params", s(&params), "--n-per-arm", "20000", "--grid", grid, "--reps", "60"];
    let (code, first) = run(&args);
    assert_eq!(code, 0);
    let (_, second) = run(&args);
    assert_eq!(first, second);
    let optimum: f64 = first
        .lines()
        .find_map(|l| l.split("percentile=").nth(1))
        .and_then(|rest| rest.split(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(optimum < 1.0);
}

#[test]
fn gridsearch_lookup_table() {
    let dir = TempDir::new().unwrap();
    let params = params_file(&dir);
    let table = dir.path().join("table.csv");
    let curves = dir.path().join("curves.csv");
    let base =
        ["gridsearch", "--params", s(&params), "--n-per-arm", "400,800", "--lift", "0.01", "--grid", "0.95,0.99"];
    assert_eq!(run(&[&base[..], &["--reps", "5"]].concat()).0, 4);
    let (code, _) = run(&[&base[..], &["--reps", "5", "--table", s(&table), "--curve", s(&curves)]].concat());
    assert_eq!(code, 0);
    let cells = read_lookup_csv(fs::File::open(&table).unwrap()).unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!((cells[0].n_per_arm, cells[1].n_per_arm), (400, 800));
    let text = fs::read_to_string(&curves).unwrap();
    assert!(text.starts_with("n_per_arm,lift,percentile,mse\n"));
    assert_eq!(text.lines().count(), 5);
}
