use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"problem": {"kind": "regression", "n_train": 600, "n_test": 100, "input_dim": 4, "feature_dim": 15},
    "batch_size": 32, "steps": 60, "learning_rate": 0.001, "seed": 3}"#;

fn probhess(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_probhess"));
    cmd.env("RUST_LOG", "error");
    let (sub, rest) = args.split_first().unwrap();
    cmd.arg(sub);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(rest).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_the_record_columns_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let o = probhess(&["run"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,data_read,train_loss,test_loss,test_accuracy,step_length,wall_ms"));
    // every 10 steps plus the ends of epochs (600 samples / 32 per batch)
    let steps: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, [0, 10, 19, 20, 30, 38, 40, 50, 57, 60]);
}

#[test]
fn flags_and_set_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let o = probhess(&["run", "--steps", "20", "--set", "record_every=5", "--batch-size", "16"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("20,320,"), "{last}");
    // 0, 5, 10, 15, 20 and the epoch end at 38 is out of range
    assert_eq!(text.lines().count(), 1 + 5);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    for args in [
        vec!["run", "--batch-size", "0"],
        vec!["run", "--optimizer", "adam"],
        vec!["run", "--set", "no_equals_sign"],
        vec!["run", "--set", "problem.kind=\"spiral\""],
        vec!["run", "--bogus-flag"],
    ] {
        let o = probhess(&args, Some(&cfg));
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    let o = probhess(&["run"], Some(&dir.path().join("missing.json")));
    assert_eq!(o.status.code(), Some(1));
    let bad = write(dir.path(), "bad.json", "[1, 2");
    assert_eq!(probhess(&["run"], Some(&bad)).status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two_and_still_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = dir.path().join("out.csv");
    let o = probhess(
        &["run", "--learning-rate", "50", "--out", out.to_str().unwrap()],
        Some(&cfg),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(std::fs::read_to_string(&out).unwrap().lines().count() >= 2);
}

#[test]
fn estimate_solve_and_precond_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let o = probhess(&["estimate"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let est: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(est["b0"].as_f64().unwrap() > 0.0);
    assert_eq!(est["data_read"].as_u64(), Some(5 * 32));

    let post = dir.path().join("post.json");
    let o = probhess(&["solve", "--iterations", "4", "--out", post.to_str().unwrap()], Some(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let post: probhess::PosteriorMean = serde_json::from_str(&std::fs::read_to_string(post).unwrap()).unwrap();
    assert_eq!(post.factors.rank(), 4);

    let pre = dir.path().join("p.json");
    let o = probhess(&["precond", "--iterations", "6", "--rank", "3", "--out", pre.to_str().unwrap()], Some(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let rec: probhess::precond::PreconditionerRecord =
        serde_json::from_str(&std::fs::read_to_string(pre).unwrap()).unwrap();
    let p = probhess::Preconditioner::try_from(rec).unwrap();
    assert_eq!(p.rank(), 3);
}

#[test]
fn gen_data_writes_loadable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let data = dir.path().join("data");
    let o = probhess(&["gen-data", "--out-dir", data.to_str().unwrap()], Some(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let train = std::fs::read_to_string(data.join("train.csv")).unwrap();
    assert_eq!(train.lines().count(), 601);
    assert_eq!(std::fs::read_to_string(data.join("test.csv")).unwrap().lines().count(), 101);

    // the written files can stand in for the synthetic data
    let mut doc: serde_json::Value = serde_json::from_str(SMALL).unwrap();
    doc["problem"]["train_csv"] = data.join("train.csv").to_str().unwrap().into();
    doc["problem"]["test_csv"] = data.join("test.csv").to_str().unwrap().into();
    let cfg2 = write(dir.path(), "csv.json", &doc.to_string());
    let a = probhess(&["run"], Some(&cfg));
    let b = probhess(&["run"], Some(&cfg2));
    assert_eq!(b.status.code(), Some(0), "{}", String::from_utf8_lossy(&b.stderr));
    let first_loss = |o: &Output| stdout(o).lines().nth(1).unwrap().split(',').nth(2).unwrap().parse::<f64>().unwrap();
    let (la, lb) = (first_loss(&a), first_loss(&b));
    assert!((la - lb).abs() <= 1e-9 * la, "{la} vs {lb}");
}

#[test]
fn compare_writes_merged_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut sgd: serde_json::Value = serde_json::from_str(SMALL).unwrap();
    sgd["label"] = "plain".into();
    let mut pre = sgd.clone();
    pre["label"] = "pre".into();
    pre["optimizer"] = "precond_sgd".into();
    pre["solver"] = serde_json::json!({"iterations": 6});
    let cfg = write(dir.path(), "many.json", &serde_json::Value::Array(vec![sgd, pre]).to_string());
    let out = dir.path().join("cmp.csv");
    let o = probhess(&["compare", "--out", out.to_str().unwrap()], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("run,optimizer,step,"));
    assert!(text.lines().any(|l| l.starts_with("plain,sgd,")));
    assert!(text.lines().any(|l| l.starts_with("pre,precond_sgd,")));
    assert_eq!(stdout(&o).lines().count(), 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);

    let mismatched = write(
        dir.path(),
        "mixed.json",
        r#"[{"problem": {"kind": "logistic", "input_dim": 3}}, {"problem": {"kind": "regression", "n_train": 100, "n_test": 10}}]"#,
    );
    let o = probhess(&["compare", "--out", out.to_str().unwrap()], Some(&mismatched));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = Command::new(env!("CARGO_BIN_EXE_probhess")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("compare"));
}
