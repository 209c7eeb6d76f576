use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ternary-har"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = run(
        &["train", "--synth", "--classes", "3", "--epochs", "3", "--seed", "7", "--batch", "32", "--windows-per-class", "16", "--hidden", "64", "--out", "run"],
        d,
    );
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    for f in ["model.dftn", "metrics.csv", "config.ini"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }

    // Evaluating with the saved config reproduces the last logged validation F1.
    let metrics = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    let last: f64 = metrics.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    let eval = run(&["eval", "--config", "run/config.ini", "--model", "run/model.dftn", "--emit", "csv", "--report", "report.csv"], d);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let text = stdout(&eval);
    let f1: f64 = text
        .lines()
        .find(|l| l.starts_with("weighted_f1"))
        .and_then(|l| l.split(',').nth(3))
        .unwrap()
        .parse()
        .unwrap();
    assert!((f1 - last).abs() < 1e-6, "eval {f1} vs training log {last}");
    assert_eq!(std::fs::read_to_string(d.join("report.csv")).unwrap(), text);

    let infer = run(&["infer", "--config", "run/config.ini", "--model", "run/model.dftn", "--predictions", "pred.csv"], d);
    assert!(infer.status.success());
    let pred = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("window,label,prediction,p0,p1,p2"));
    for l in lines {
        let p: f64 = l.split(',').skip(3).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-4);
    }

    // A dataset with more classes than the model is refused.
    let wrong = run(&["eval", "--model", "run/model.dftn", "--synth", "--classes", "5", "--hidden", "64"], d);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        let o = run(&["train", "--synth", "--epochs", "2", "--batch", "32", "--windows-per-class", "8", "--hidden", "32", "--seed", "5", "--out", out], d);
        assert!(o.status.success());
    }
    for f in ["model.dftn", "metrics.csv", "config.ini"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        if f == "config.ini" {
            assert_eq!(String::from_utf8(a).unwrap().replace("out = a", ""), String::from_utf8(b).unwrap().replace("out = b", ""));
        } else {
            assert_eq!(a, b, "{f} differs");
        }
    }
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["train", "--csv"], d).status.code(), Some(2));
    assert_eq!(run(&["train", "--preset", "opportunity", "--epochs", "1"], d).status.code(), Some(2));
    assert_eq!(run(&["train", "--synth", "--kw", "1"], d).status.code(), Some(2));
    std::fs::write(d.join("bad.ini"), "[quant]\nxi = 2.8\nwhat = 1\n").unwrap();
    let o = run(&["train", "--config", "bad.ini"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.ini:3"));
    assert_eq!(run(&["eval", "--model", "missing.dftn"], d).status.code(), Some(1));
}

#[test]
fn export_reports_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["export", "--preset", "opportunity", "--fusion", "early", "--classes", "18", "--model", "t.dftn"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("stack0.conv1") && text.contains("1890000"), "{text}");
    let file = std::fs::metadata(dir.path().join("t.dftn")).unwrap().len();
    assert!(file * 10 <= 4 * 1_917_750, "{file}");
}

#[test]
fn selftest_and_bench_pass() {
    let dir = tempfile::tempdir().unwrap();
    let s = run(&["selftest"], dir.path());
    assert!(s.status.success());
    assert!(!stdout(&s).contains("FAIL"));
    let b = run(&["bench", "--batch", "1", "--repeats", "1"], dir.path());
    assert!(b.status.success());
    assert!(!stdout(&b).contains(" NO"));
}
