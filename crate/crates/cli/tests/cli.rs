use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_biham");

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("BIHAM_SEED").output().unwrap()
}

fn run(args: &[&str]) -> Output {
    run_in(&std::env::temp_dir(), args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn verify_lu_transformed_passes_all_checks() {
    let o = run(&["verify", "lu-transformed", "--param", "alpha=1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["schema"], 1);
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 8);
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert!(report.get("timestamp").is_some());
}

#[test]
fn qi_trajectory_conserves_h1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "simulate",
            "qi",
            "--param",
            "gamma=2",
            "--init",
            "1,1,1",
            "--t0",
            "0",
            "--t1",
            "10",
            "--monitors",
            "h1",
            "--out",
            "q.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("q.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,u,v,w,h1"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert!(rows.len() > 100);
    assert_eq!(rows.last().unwrap()[0], 10.0);
    // h1 = 2u² - v² - 3w²; the state grows like exp(t), so the variation is
    // measured against the size of the terms.
    let h0 = rows[0][4];
    for r in &rows {
        let (u, v, w) = (r[1], r[2], r[3]);
        let scale = 2.0 * u * u + v * v + 3.0 * w * w;
        assert!((r[4] - (2.0 * u * u - v * v - 3.0 * w * w)).abs() <= 1e-14 * scale);
        assert!((r[4] - h0).abs() / (1.0 + scale) < 1e-6, "t = {}", r[0]);
    }
}

#[test]
fn constant_bracket() {
    let o = run(&["bracket", "--j", "0;0;1", "--f", "u", "--h", "v"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "-1\n");
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["verify", "no-such-system"][..],
        &["verify", "lu-transformed", "--param", "alpha=2", "--param", "beta=1"],
        &["verify", "lu-transformed", "--param", "alpha"],
        &["verify", "lu-transformed", "--bogus"],
        &["simulate", "qi", "--init", "1,1", "--t0", "0", "--t1", "1"],
        &["simulate", "qi", "--init", "1,1,1", "--t0", "0", "--t1", "1", "--method", "rk4"],
        &["discover", "qi"],
        &["bracket", "--j", "0;1", "--f", "u", "--h", "v"],
        &["bracket", "--j", "0;0;1", "--f", "u +", "--h", "v"],
        &[],
    ] {
        let o = run(args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(o.stdout.is_empty());
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn failures_exit_1() {
    let o = run(&["verify", "lu-original"]);
    assert_eq!(code(&o), 1);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let m = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "multiplier").unwrap();
    assert_eq!(m["pass"], false);

    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "simulate",
            "chen-variant",
            "--param",
            "lambda=1",
            "--init",
            "0.1,0.1,0.1",
            "--t0",
            "0",
            "--t1",
            "10",
            "--out",
            "c.csv",
        ],
    );
    assert_eq!(code(&o), 1);
    let csv = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

#[test]
fn catalog_json_lists_every_system() {
    let o = run(&["catalog", "--json"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = v.to_string();
    for name in ["lu-original", "lu-transformed", "modified-lu", "t-system", "chen", "chen-variant", "qi"] {
        assert!(text.contains(&format!("\"{name}\"")), "{name}");
    }
}

#[test]
fn seeds_reproduce_reports() {
    let args = ["verify", "chen", "--seed", "7", "--samples", "200", "--deterministic"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(!stdout(&a).contains("timestamp"));

    let c = run(&["verify", "chen", "--seed", "8", "--samples", "200", "--deterministic"]);
    assert_ne!(a.stdout, c.stdout);

    let env = Command::new(BIN)
        .args(["verify", "chen", "--samples", "200", "--deterministic"])
        .env("BIHAM_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn discovery_report_has_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["discover", "lu-transformed", "--degree", "2", "--out", "d.json"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["dimension"], 3);
}

/// One `$ biham ...` line with the stdout it documents.
struct Example {
    line: String,
    expected: Vec<String>,
    prefix_only: bool,
    exit: i32,
}

fn readme_blocks(lang: &str) -> Vec<String> {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let fence = format!("```{lang}");
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in readme.lines() {
        match &mut current {
            None if line == fence => current = Some(String::new()),
            Some(b) if line == "```" => {
                blocks.push(std::mem::take(b));
                current = None;
            }
            Some(b) => {
                b.push_str(line);
                b.push('\n');
            }
            None => {}
        }
    }
    blocks
}

fn examples(block: &str) -> Vec<Example> {
    let mut out: Vec<Example> = Vec::new();
    for line in block.lines() {
        if let Some(cmd) = line.strip_prefix("$ ") {
            out.push(Example { line: cmd.to_string(), expected: Vec::new(), prefix_only: false, exit: 0 });
        } else if let Some(n) = line.strip_prefix("# exit ") {
            out.last_mut().unwrap().exit = n.parse().unwrap();
        } else if line == "..." {
            out.last_mut().unwrap().prefix_only = true;
        } else {
            out.last_mut().unwrap().expected.push(line.to_string());
        }
    }
    out
}

#[test]
fn readme_examples_run() {
    let dir = tempfile::tempdir().unwrap();
    let files = readme_blocks("text");
    assert_eq!(files.len(), 1);
    std::fs::write(dir.path().join("rotation.sys"), &files[0]).unwrap();
    let o = run_in(dir.path(), &["verify", "rotation.sys", "--deterministic"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!String::from_utf8_lossy(&o.stderr).contains("note:"));

    let mut count = 0;
    for block in readme_blocks("console") {
        for ex in examples(&block) {
            let words = shlex::split(&ex.line).unwrap();
            assert_eq!(words[0], "biham", "{}", ex.line);
            let args: Vec<&str> = words[1..].iter().map(String::as_str).collect();
            let o = run_in(dir.path(), &args);
            assert_eq!(code(&o), ex.exit, "{}: {}", ex.line, String::from_utf8_lossy(&o.stderr));
            let got = stdout(&o);
            let got: Vec<&str> = got.lines().collect();
            if ex.prefix_only {
                assert!(got.len() >= ex.expected.len(), "{}", ex.line);
                assert_eq!(&got[..ex.expected.len()], &ex.expected[..], "{}", ex.line);
            } else {
                assert_eq!(got, ex.expected, "{}", ex.line);
            }
            count += 1;
        }
    }
    assert!(count >= 10, "{count}");
    for f in ["report.json", "q.csv", "disc.json", "qi.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
