use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gafm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gafm"))
        .args(args)
        .env_remove("GAFM_OUT")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

const TINY: [&str; 6] = ["--dataset", "synthetic", "--epochs", "2", "--batch", "500"];

#[test]
fn run_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["run", "--outdir", out, "--seeds", "0,1", "--method", "gafm,vanilla"];
    args.extend(TINY);
    let res = gafm(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,dataset,seed,train_auc,test_auc,leak_norm,leak_mean,leak_median,tvd"
    );
    assert_eq!(lines.count(), 4);
    for f in ["summary.md", "cut_records.tsv", "leak_report.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("leak_report.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 4);
    assert!(dir.path().join("runs/gafm_seed1/metrics.csv").is_file());
    assert!(String::from_utf8_lossy(&res.stdout).contains("gafm"));
}

#[test]
fn identical_runs_write_identical_csv() {
    let run = |dir: &Path| {
        let mut args = vec!["run", "--outdir", dir.to_str().unwrap(), "--seeds", "3", "--method", "gafm"];
        args.extend(TINY);
        assert!(gafm(&args).status.success());
        fs::read(dir.join("results.csv")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "# tiny run\ndataset = synthetic\nmethod = vanilla\nepochs = 2\nbatch = 500\nseeds = 0..2\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = gafm(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "5",
        "--outdir",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("vanilla,synthetic,5,"), "{}", rows[0]);
}

#[test]
fn report_rebuilds_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["run", "--outdir", out, "--seeds", "0,1", "--method", "maxnorm"];
    args.extend(TINY);
    assert!(gafm(&args).status.success());
    let summary = dir.path().join("again.md");
    let res = gafm(&[
        "report",
        dir.path().join("results.csv").to_str().unwrap(),
        "--out",
        summary.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert_eq!(
        fs::read_to_string(&summary).unwrap(),
        fs::read_to_string(dir.path().join("summary.md")).unwrap()
    );
}

#[test]
fn multiclient_defaults_to_three_parties() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["multiclient", "--outdir", dir.path().to_str().unwrap(), "--seeds", "0", "--method", "gafm"];
    args.extend(TINY);
    let res = gafm(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(dir.path().join("results.csv").is_file());
}

#[test]
fn sigma_sweep_labels_rows_by_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sigma-sweep", "--outdir", dir.path().to_str().unwrap(), "--seeds", "0", "--sigmas", "0.01,1"];
    args.extend(TINY);
    assert!(gafm(&args).status.success());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.contains("gafm(0.01),synthetic,0,"));
    assert!(csv.contains("gafm(1),synthetic,0,"));
}

#[test]
fn select_delta_writes_a_feasible_choice() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "select-delta",
        "--outdir",
        dir.path().to_str().unwrap(),
        "--grid",
        "0.05,0.3",
        "--reps",
        "1",
        "--fraction",
        "0.5",
        "--tau",
        "0",
    ];
    args.extend(TINY);
    let res = gafm(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("delta_selection.json")).unwrap()).unwrap();
    let chosen = sel["chosen"].as_f64().unwrap();
    assert!(chosen == 0.05 || chosen == 0.3);
}

#[test]
fn unreachable_tau_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["select-delta", "--outdir", dir.path().to_str().unwrap(), "--grid", "0.05", "--reps", "1", "--tau", "1.1"];
    args.extend(TINY);
    let res = gafm(&args);
    assert!(!res.status.success());
    assert_eq!(error_json(&res)["error"], "no_feasible_delta");
}

#[test]
fn bad_inputs_exit_nonzero_with_json() {
    let missing = gafm(&["run", "--dataset", "spambase", "--path", "/nonexistent/spambase.data"]);
    assert!(!missing.status.success());
    assert_eq!(error_json(&missing)["error"], "io");

    let key = gafm(&["run", "--set", "colour=blue"]);
    assert_eq!(error_json(&key)["error"], "invalid_parameter");

    let no_path = gafm(&["run", "--dataset", "credit"]);
    assert_eq!(error_json(&no_path)["error"], "invalid_parameter");

    let verb = gafm(&["explode"]);
    assert!(!verb.status.success());
    assert_eq!(error_json(&verb)["error"], "usage");
}
