use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deepin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepin"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: &str = r#"
seed = 3
replications = 2

[data]
setting = 1
n = 300
n_test = 100
d = 6
s0 = 3
d0 = 2

[model]
hidden = [8]

[train]
epochs = 20

[tests]
alphas = [0.05]

[tests.covariate]
enabled = true
epochs = 20

[tests.representation]
index_sets = [[1, 2]]
rows = 2
hidden = [4]

[tests.representation.train]
epochs = 5
polish_epochs = 5
"#;

#[test]
fn simulate_train_evaluate_and_test() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), SMALL).unwrap();
    ok(&deepin(&["simulate", "--config", "c.toml", "--out", "sim"], d));
    let data = fs::read_to_string(d.join("sim/data.csv")).unwrap();
    assert!(data.starts_with("x1,x2,x3,x4,x5,x6,y\n"));
    assert_eq!(data.lines().count(), 301);
    assert!(d.join("sim/test.csv").exists());
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("sim/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["support"], serde_json::json!([1, 2, 3]));

    ok(&deepin(&["train", "--config", "c.toml", "--data", "sim/data.csv", "--out", "fit"], d));
    assert!(d.join("fit/model.json").exists());
    assert_eq!(fs::read_to_string(d.join("fit/history.csv")).unwrap().lines().count(), 21);

    let out = deepin(&["evaluate", "--model", "fit/model.json", "--data", "sim/test.csv", "--out", "eval"], d);
    ok(&out);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["pe"].as_f64().unwrap() >= 0.0);
    assert!(d.join("eval/metrics.json").exists());

    ok(&deepin(
        &["test-covariates", "--config", "c.toml", "--model", "fit/model.json", "--data", "sim/data.csv", "--out", "fit"],
        d,
    ));
    let cov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("fit/tests/covariates.json")).unwrap()).unwrap();
    assert!(cov["results"].as_array().unwrap().iter().all(|r| r["variable"].as_str().unwrap().starts_with('x')));

    let out = deepin(
        &["test-representations", "--config", "c.toml", "--data", "sim/data.csv", "--index-set", "1", "--out", "fit"],
        d,
    );
    ok(&out);
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["index_set"], serde_json::json!([1]));
    let p = rep["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn tune_writes_cells_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = format!("{SMALL}\n[tuning]\nlambda1 = [0.0, 0.01]\nlambda2 = [0.01]\n");
    fs::write(d.join("c.toml"), cfg).unwrap();
    ok(&deepin(&["simulate", "--config", "c.toml", "--out", "sim"], d));
    ok(&deepin(&["tune", "--config", "c.toml", "--data", "sim/data.csv", "--out", "tuned"], d));
    let cells = fs::read_to_string(d.join("tuned/tuning.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 2 + 1 + 1 + 1);
    assert!(d.join("tuned/model.json").exists());
}

#[test]
fn benchmark_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), SMALL).unwrap();
    ok(&deepin(&["benchmark", "--config", "c.toml", "--out", "a"], d));
    ok(&deepin(&["benchmark", "--config", "c.toml", "--out", "b"], d));
    for f in ["replications.csv", "summary.json", "models/rep_0.json", "models/rep_1.json", "tests/curves.csv"] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }
    assert!(d.join("a/tests/covariate.json").exists());
    assert!(d.join("a/tests/representation.json").exists());
    let a = fs::read(d.join("a/replications.csv")).unwrap();
    let b = fs::read(d.join("b/replications.csv")).unwrap();
    assert_eq!(a, b);
    let csv = String::from_utf8(a).unwrap();
    assert!(csv.starts_with("rep,seed,status,pe,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("0,3,ok,"));

    ok(&deepin(&["benchmark", "--config", "c.toml", "--seed", "4", "--out", "c"], d));
    let c = fs::read_to_string(d.join("c/replications.csv")).unwrap();
    assert!(c.lines().nth(1).unwrap().starts_with("0,4,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(deepin(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(deepin(&["--help"], d).status.code(), Some(0));
    assert_eq!(deepin(&["train"], d).status.code(), Some(1));
    assert_eq!(deepin(&["evaluate", "--model", "missing.json", "--data", "x.csv"], d).status.code(), Some(1));
    assert_eq!(deepin(&["test-representations", "--index-set", "0,1"], d).status.code(), Some(1));

    fs::write(d.join("bad.csv"), "x1,x2,x3,y\n1,2,NaN,0\n").unwrap();
    let out = deepin(&["train", "--data", "bad.csv"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("x3"), "{err}");

    let diverging = format!("{SMALL}\n[penalty]\nlambda1 = 0.0\n");
    let diverging = diverging.replacen("epochs = 20\n", "epochs = 20\nlearning_rate = 1e6\nclip_norm = 0.0\n", 1);
    fs::write(d.join("c.toml"), diverging).unwrap();
    ok(&deepin(&["simulate", "--config", "c.toml", "--out", "sim"], d));
    let out = deepin(&["train", "--config", "c.toml", "--data", "sim/data.csv", "--out", "fit"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
