use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn riro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riro"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn stub_config(dir: &Path, variants: &[&str], extra: &str) -> PathBuf {
    let variants: Vec<String> = variants.iter().map(|v| format!("\"{v}\"")).collect();
    write(
        dir,
        "config.json",
        &format!(
            r#"{{
  "dataset": {{"synthetic": 3}},
  "variants": [{}],
  "backends": {{"default": {{"kind": "stub"}}}},
  "output_dir": "runs"{extra}
}}"#,
            variants.join(", ")
        ),
    )
}

fn run_dir_from(o: &Output) -> PathBuf {
    let text = stdout(o);
    let line = text.lines().next().unwrap();
    PathBuf::from(line.trim_start_matches("run directory: ").trim())
}

#[test]
fn evaluate_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(
        tmp.path(),
        "a.txt",
        "the cat sat on the mat\nopen the door now please\n",
    );
    let o = riro(&["evaluate", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pairs"], 2);
    assert_eq!(v["aggregate"]["bleu"], 1.0);
    assert_eq!(v["aggregate"]["levenshtein"], 0.0);
    assert_eq!(v["aggregate"]["cosine"], 1.0);
}

#[test]
fn evaluate_mean_over_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write(tmp.path(), "c.txt", "kitten\nabc\n");
    let r = write(tmp.path(), "r.txt", "sitting\nabc\n");
    let o = riro(&["evaluate", c.to_str().unwrap(), r.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["aggregate"]["levenshtein"], 1.5);
    assert_eq!(v["per_line"][0]["levenshtein"], 3.0);

    let md = riro(&[
        "evaluate",
        c.to_str().unwrap(),
        r.to_str().unwrap(),
        "--format",
        "md",
    ]);
    assert!(stdout(&md).contains("| Levenshtein Distance | 1.500 |"));
}

#[test]
fn evaluate_line_count_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write(tmp.path(), "c.txt", "a\nb\nc\n");
    let r = write(tmp.path(), "r.txt", "a\nb\nc\nd\n");
    let o = riro(&["evaluate", c.to_str().unwrap(), r.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("3 ≠ 4"), "{}", stderr(&o));
}

#[test]
fn run_writes_item_files_with_full_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = stub_config(tmp.path(), &["RFR"], "");
    let o = riro(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir_from(&o);
    assert!(dir.starts_with(tmp.path().join("runs")));
    let items: Vec<_> = fs::read_dir(dir.join("items")).unwrap().collect();
    assert_eq!(items.len(), 3);
    for entry in items {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(entry.unwrap().path()).unwrap()).unwrap();
        assert_eq!(v["trace"]["entries"].as_array().unwrap().len(), 3);
    }
    let one = riro(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--story-id",
        "US-0002",
    ]);
    assert!(one.status.success(), "{}", stderr(&one));
    assert_eq!(
        fs::read_dir(run_dir_from(&one).join("items"))
            .unwrap()
            .count(),
        1
    );
    let missing = riro(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--story-id",
        "nope",
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = stub_config(
        tmp.path(),
        &["RFR", "XYZ"],
        r#", "templates": {"generate": "missing/generate.txt"}"#,
    );
    let o = riro(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("missing/generate.txt"), "{err}");
    assert!(err.contains("XYZ"), "{err}");
    assert!(!tmp.path().join("runs").exists());

    let no_cfg = riro(&["ablate"]);
    assert_eq!(no_cfg.status.code(), Some(2));
}

#[test]
fn ablate_needs_two_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = stub_config(tmp.path(), &["RFR"], "");
    let o = riro(&["ablate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_is_reproducible_and_report_rerenders() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = stub_config(tmp.path(), &["BASELINE", "RF", "FR", "RFR"], "");
    let first = riro(&["ablate", "--config", cfg.to_str().unwrap()]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("| Metric | Baseline |"));
    let second = riro(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--parallelism",
        "8",
    ]);
    assert!(second.status.success(), "{}", stderr(&second));
    let (d1, d2) = (run_dir_from(&first), run_dir_from(&second));
    assert_ne!(d1, d2);
    assert_eq!(
        fs::read(d1.join("report.json")).unwrap(),
        fs::read(d2.join("report.json")).unwrap()
    );

    let d1s = d1.to_str().unwrap();
    let md = riro(&["report", d1s]);
    assert!(md.status.success(), "{}", stderr(&md));
    assert_eq!(stdout(&md), stdout(&riro(&["report", d1s])));
    assert_eq!(
        stdout(&md),
        fs::read_to_string(d1.join("report.md")).unwrap()
    );

    let json = riro(&["report", d1s, "--format", "json"]);
    assert_eq!(
        stdout(&json),
        fs::read_to_string(d1.join("report.json")).unwrap()
    );
    let summary: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    for v in summary["variants"].as_array().unwrap() {
        let bleu = v["aggregate"]["bleu"].as_f64().unwrap();
        let row = format!("{bleu:.3}");
        assert!(stdout(&md)
            .lines()
            .any(|l| l.starts_with("| BLEU Score") && l.contains(&row)));
    }

    let item = fs::read_dir(d1.join("items"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    fs::remove_file(item).unwrap();
    let broken = riro(&["report", d1s]);
    assert_eq!(broken.status.code(), Some(4), "{}", stderr(&broken));
}

#[test]
fn params_accounting() {
    let o = riro(&["params", "100", "100", "4", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("trainable = 800\n"), "{text}");
    assert!(text.contains("ratio = 0.080\n"), "{text}");
    assert_eq!(riro(&["params", "100", "100", "0"]).status.code(), Some(2));
    assert_eq!(
        riro(&["params", "100", "100", "4", "16"]).status.code(),
        Some(2)
    );
}

#[test]
fn fixtures_are_seeded() {
    let a = riro(&["fixtures", "--count", "4", "--seed", "3"]);
    let b = riro(&["fixtures", "--count", "4", "--seed", "3"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 4);
    assert_ne!(
        stdout(&a),
        stdout(&riro(&["fixtures", "--count", "4", "--seed", "4"]))
    );
}
