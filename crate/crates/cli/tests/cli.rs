use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn mplab(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mplab"));
    cmd.args(args).env_remove("MPLAB_SEED").env("RUST_LOG", "warn");
    if let Some(v) = seed_env {
        cmd.env("MPLAB_SEED", v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = mplab(&["--frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--frobnicate"));
}

#[test]
fn version_and_help_succeed() {
    let o = mplab(&["--version"], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
    let o = mplab(&["--help"], None);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["simulate", "extract", "dataset", "train", "evaluate", "pipeline"] {
        assert!(String::from_utf8_lossy(&o.stdout).contains(sub));
    }
}

#[test]
fn missing_input_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mplab(&["evaluate", "--model", "missing.model", "--dataset", "missing.csv", "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.model"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_seed_environment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nav");
    let o = mplab(&["constellation", "--out", s(&out)], Some("twelve"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MPLAB_SEED"));
    assert!(!out.exists());
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    assert!(mplab(&["constellation", "--sets", "2", "--out", s(&p("env5"))], Some("5")).status.success());
    assert!(mplab(&["--seed", "5", "constellation", "--sets", "2", "--out", s(&p("flag5"))], Some("9")).status.success());
    assert!(mplab(&["constellation", "--sets", "2", "--out", s(&p("none"))], None).status.success());
    assert!(mplab(&["--seed", "0", "constellation", "--sets", "2", "--out", s(&p("zero"))], None).status.success());
    let read = |name: &str| fs::read(p(name)).unwrap();
    assert_eq!(read("env5"), read("flag5"));
    assert_eq!(read("none"), read("zero"));
    assert_ne!(read("env5"), read("none"));
}

#[test]
fn invalid_pipeline_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    let out = dir.path().join("run");
    let config = dir.path().join("bad.json");
    let body = serde_json::json!({
        "scenes": data.join("scenes"),
        "nav": data.join("brdc.nav"),
        "output": out,
        "hours": 0.01,
        "folds": 1
    });
    fs::write(&config, body.to_string()).unwrap();
    let o = mplab(&["pipeline", "--config", s(&config)], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("folds"));
    assert!(!out.exists());

    let body = serde_json::json!({
        "scenes": data.join("scenes"),
        "nav": data.join("brdc.nav"),
        "output": out,
        "grids": {"knn": {"k": [0]}}
    });
    fs::write(&config, body.to_string()).unwrap();
    let o = mplab(&["pipeline", "--config", s(&config)], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn stages_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    let p = |name: &str| dir.path().join(name);
    let ok = |args: &[&str]| {
        let o = mplab(args, None);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    ok(&["--seed", "3", "simulate", "--scenes", s(&data.join("scenes")), "--nav", s(&data.join("brdc.nav")), "--duration", "1800", "--out", s(&p("sim"))]);
    let mut features = Vec::new();
    for tag in ["A", "B", "C", "D", "E"] {
        let f = p(&format!("{tag}.csv"));
        ok(&[
            "extract",
            "--obs1", s(&p(&format!("sim/{tag}_1.obs"))),
            "--obs2", s(&p(&format!("sim/{tag}_2.obs"))),
            "--nav", s(&data.join("brdc.nav")),
            "--truth", s(&p(&format!("sim/{tag}_truth.csv"))),
            "--out", s(&f),
        ]);
        assert!(fs::read_to_string(&f).unwrap().lines().nth(1).unwrap().contains(&format!(",{tag},")));
        features.push(f);
    }
    let mut args = vec!["--seed", "3", "dataset", "--paper-protocol", "--out"];
    let sets = p("sets");
    args.push(s(&sets));
    args.push("--features");
    args.extend(features.iter().map(|f| s(f)));
    ok(&args);
    for name in ["T0", "T1", "T2", "T3"] {
        assert!(sets.join(format!("{name}.csv")).exists());
    }
    ok(&["train", "--dataset", s(&sets.join("T0.csv")), "--algorithm", "dt", "--param", "max_depth=4", "--param", "min_samples_leaf=2", "--out", s(&p("m/dt.model"))]);
    ok(&["train", "--dataset", s(&sets.join("T0.csv")), "--algorithm", "knn", "--grid", s(&{
        let g = p("grid.json");
        fs::write(&g, r#"{"k": [1, 3]}"#).unwrap();
        g
    }), "--folds", "3", "--out", s(&p("m/knn.model"))]);
    assert!(fs::read_to_string(p("m/knn.cv.csv")).unwrap().lines().count() == 3);
    ok(&["evaluate", "--model", s(&p("m/dt.model")), s(&p("m/knn.model")), "--dataset", s(&sets.join("T1.csv")), s(&sets.join("T2.csv")), "--out", s(&p("reports"))]);
    for name in ["T1_decision_tree.json", "T2_knn.json", "summary.txt", "accuracy.csv"] {
        assert!(p("reports").join(name).exists(), "{name}");
    }

    // a damaged model is rejected with its path
    let mut bytes = fs::read(p("m/dt.model")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    fs::write(p("m/bad.model"), bytes).unwrap();
    let o = mplab(&["evaluate", "--model", s(&p("m/bad.model")), "--dataset", s(&sets.join("T1.csv")), "--out", s(&p("r2"))], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.model"));
}
