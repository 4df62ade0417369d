use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn agroval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agroval"))
        .args(args)
        .env_remove("AGROVAL_OUT")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(&o), stderr(&o));
    o
}

const SMALL_RUN: &str = r#"
name = "small"
seed = 3
feature_specs = ["tmean9m"]
targets = ["yield"]
models = ["gbt"]

[synth]
n_regions = 5
first_year = 1990
last_year = 2011
seed = 9
shift_years = [2000, 2008]

[split]
validation = [2000, 2008]
n_folds = 3

[grid]
n_trees = [8]
max_depth = [2]
min_samples_leaf = [2]
learning_rate = [0.2]
feature_subsample = [1.0]
"#;

#[test]
fn synth_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(agroval(&["synth", "--regions", "20", "--years", "1979:2022", "--seed", "7", "--out", s(&out)]));
    for f in ["weather.csv", "yield.csv", "truth.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn missing_spec_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(agroval(&["synth", "--regions", "3", "--years", "1990:2010", "--out", s(&data)]));
    let o = agroval(&[
        "features",
        "--weather",
        s(&data.join("weather.csv")),
        "--yields",
        s(&data.join("yield.csv")),
        "--spec",
        "missing.json",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
    assert!(stderr(&o).contains("data"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(agroval(&["synth", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(agroval(&[]).status.code(), Some(1));
    let o = agroval(&["run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("usage"));
}

#[test]
fn help_exits_zero_everywhere() {
    ok(agroval(&["--help"]));
    for sub in [
        "synth", "validate", "features", "targets", "split", "train", "evaluate", "explain", "run", "report",
    ] {
        let o = agroval(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub} --help");
        assert!(stdout(&o).contains("Usage"), "{sub} --help");
    }
}

#[test]
fn run_twice_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let out = dir.path().join("out");

    let first = ok(agroval(&["run", "--config", s(&cfg), "--out", s(&out)]));
    assert!(stdout(&first).contains("3 new points"), "{}", stdout(&first));
    assert!(out.join("report/summary.txt").is_file());
    assert!(out.join("ground_truth.json").is_file());

    // A second run without --resume refuses to touch existing records.
    let refused = agroval(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(refused.status.code(), Some(2), "{}", stderr(&refused));
    assert!(stderr(&refused).contains("--resume"));

    let resumed = ok(agroval(&["run", "--config", s(&cfg), "--out", s(&out), "--resume", "--jobs", "1"]));
    assert!(stdout(&resumed).contains("0 new points"), "{}", stdout(&resumed));

    let report = ok(agroval(&["report", "--out", s(&out)]));
    assert!(stdout(&report).contains("class counts"));
}

/// Runs the stage-by-stage pipeline into `out` and returns the files it wrote.
fn pipeline(root: &Path, out: &Path) -> Vec<PathBuf> {
    let cfg = root.join("small.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let data = out.join("data");
    ok(agroval(&["synth", "--regions", "5", "--years", "1995:2020", "--seed", "4", "--out", s(&data)]));
    let (w, y) = (data.join("weather.csv"), data.join("yield.csv"));
    ok(agroval(&["validate", "--weather", s(&w), "--yields", s(&y)]));
    ok(agroval(&["features", "--weather", s(&w), "--yields", s(&y), "--spec", "tmean9m", "--out", s(out)]));
    ok(agroval(&["targets", "--yields", s(&y), "--kind", "yield", "--out", s(out)]));
    let (f, t) = (out.join("features_tmean9m.csv"), out.join("targets_yield.csv"));
    ok(agroval(&[
        "split", "--yields", s(&y), "--features", s(&f), "--targets", s(&t), "--seed", "5", "--out", s(out),
    ]));
    let split = out.join("split.json");
    ok(agroval(&[
        "train", "--features", s(&f), "--targets", s(&t), "--split", s(&split), "--model", "gbt", "--n-folds", "3",
        "--config", s(&cfg), "--seed", "5", "--out", s(out),
    ]));
    let model = out.join("model.json");
    ok(agroval(&[
        "evaluate", "--model", s(&model), "--features", s(&f), "--targets", s(&t), "--split", s(&split), "--out",
        s(out),
    ]));
    ok(agroval(&[
        "explain", "--model", s(&model), "--features", s(&f), "--split", s(&split), "--out", s(out),
    ]));
    vec![
        w,
        y,
        data.join("truth.json"),
        f,
        t,
        split,
        model,
        out.join("model.cv.json"),
        out.join("eval.json"),
        out.join("shap/model.csv"),
        out.join("shap/model.summary.csv"),
    ]
}

#[test]
fn stages_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline(dir.path(), &dir.path().join("a"));
    let b = pipeline(dir.path(), &dir.path().join("b"));
    for (x, y) in a.iter().zip(&b) {
        let (bx, by) = (fs::read(x).unwrap(), fs::read(y).unwrap());
        assert!(!bx.is_empty(), "{} is empty", x.display());
        assert!(bx == by, "{} differs between runs", x.display());
    }
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/eval.json")).unwrap()).unwrap();
    assert!(eval["eval"]["r2_test"].is_number());
    assert!(["effective", "degrading", "underperforming"].contains(&eval["label"].as_str().unwrap()));
}

#[test]
fn explain_rejects_bad_rows_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = agroval(&[
        "explain", "--model", "m.json", "--features", "f.csv", "--rows", "train", "--out", s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
