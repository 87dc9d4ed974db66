mod common;

use lfi_core::cli::model_file::parse_model;
use lfi_core::cli::ResultFile;
use std::path::Path;
use std::process::{Command, Output};

const LFI: &str = env!("CARGO_BIN_EXE_lfi");

fn lfi(args: &[&str]) -> Output {
    Command::new(LFI)
        .args(args)
        .env_remove("LFI_STORE")
        .output()
        .expect("lfi runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_ma2(out: &Path, extra: &[&str]) -> Output {
    let model = common::example("ma2.json");
    let mut args = vec![
        "run",
        path_str(&model),
        "--method",
        "rejection",
        "--n-samples",
        "100",
        "--quantile",
        "0.01",
        "--seed",
        "1",
        "--quiet",
        "--out",
        path_str(out),
    ];
    args.extend_from_slice(extra);
    lfi(&args)
}

#[test]
fn shipped_ma2_model_has_six_nodes() {
    let m = common::load("ma2.json");
    assert_eq!(m.graph.len(), 6);
    assert_eq!(m.parameters, ["t1", "t2"]);
    assert!(m.graph.validate().is_empty());
    assert_eq!(common::observed_of(&m, "sim").len(), 100);
}

#[test]
fn smoke_run_writes_result_with_requested_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = run_ma2(&out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty(), "machine output goes to files only");
    let r = ResultFile::read(&out).unwrap();
    assert_eq!(r.result.len(), 100);
    assert_eq!(r.model_name, "ma2");
    let cg = parse_model(common::example("ma2.json"))
        .unwrap()
        .graph
        .compile()
        .unwrap();
    assert_eq!(r.model_digest, cg.digest("d").unwrap().to_hex());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(run_ma2(&a, &[]).status.code(), Some(0));
    assert_eq!(run_ma2(&b, &["--workers", "3"]).status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn progress_lines_go_to_stderr_unless_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let model = common::example("gaussian.json");
    let out = dir.path().join("r.json");
    let o = lfi(&[
        "run",
        path_str(&model),
        "--method",
        "smc",
        "--n-samples",
        "50",
        "--schedule",
        "0.5,0.5",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[smc]"));
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = common::example("gaussian.json");
    let out = dir.path().join("r.json");
    let (m, o) = (path_str(&model), path_str(&out));
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", m, "--method", "bolfi", "--n-samples", "10", "--out", o],
        vec!["run", m, "--method", "rejection", "--n-samples", "10", "--out", o],
        vec![
            "run",
            m,
            "--method",
            "rejection",
            "--n-samples",
            "10",
            "--quantile",
            "0.1",
            "--threshold",
            "1",
            "--out",
            o,
        ],
        vec![
            "run",
            m,
            "--method",
            "smc",
            "--n-samples",
            "10",
            "--quantile",
            "0.1",
            "--out",
            o,
        ],
        vec![
            "run",
            m,
            "--method",
            "bolfi",
            "--n-samples",
            "10",
            "--bounds",
            "3:1",
            "--out",
            o,
        ],
        vec!["run", m, "--method", "magic", "--n-samples", "10", "--out", o],
        vec!["explode"],
    ];
    for args in cases {
        let r = lfi(&args);
        assert_eq!(r.status.code(), Some(2), "{args:?}");
        assert!(!r.stderr.is_empty(), "{args:?}");
        assert!(!out.exists());
    }
    let bolfi = lfi(&["run", m, "--method", "bolfi", "--n-samples", "10", "--out", o]);
    assert!(String::from_utf8_lossy(&bolfi.stderr).contains("--bounds"));
}

#[test]
fn model_errors_exit_one_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let unknown_kind = write(
        "kind.json",
        r#"{"schema": 1, "name": "m", "parameters": ["a"], "nodes": [
            {"name": "a", "kind": "prior", "op": "uniform", "args": [0, 1]},
            {"name": "s", "kind": "oracle", "op": "ma2", "parents": ["a"]}
        ], "observed": {}}"#,
    );
    let cycle = write(
        "cycle.json",
        r#"{"schema": 1, "name": "m", "parameters": ["a"], "nodes": [
            {"name": "a", "kind": "prior", "op": "uniform", "args": [0, 1]},
            {"name": "x", "kind": "operation", "op": "add", "parents": ["a", "y"]},
            {"name": "y", "kind": "operation", "op": "add", "parents": ["x"]}
        ], "observed": {}}"#,
    );
    let syntax = write("syntax.json", "{\"schema\": 1,\n \"name\": \"m\"\n \"nodes\": []}");

    let run = |model: &Path| {
        lfi(&[
            "run",
            path_str(model),
            "--method",
            "rejection",
            "--n-samples",
            "5",
            "--quantile",
            "0.5",
            "--out",
            path_str(&out),
        ])
    };
    let r = run(&unknown_kind);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("nodes[1].kind") && err.contains("oracle"), "{err}");

    let r = run(&cycle);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("cycle") && err.contains('x') && err.contains('y'), "{err}");

    let r = run(&syntax);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains(":3:"));

    let r = run(&dir.path().join("missing.json"));
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn summarize_reports_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(run_ma2(&out, &[]).status.code(), Some(0));

    let text = lfi(&["summarize", path_str(&out)]);
    assert_eq!(text.status.code(), Some(0));
    let text = String::from_utf8(text.stdout).unwrap();
    for needle in ["t1", "t2", "mean", "sd", "q05", "q95"] {
        assert!(text.contains(needle), "{needle} missing from:\n{text}");
    }
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with('[')).count(), 40);

    let csv = lfi(&["summarize", path_str(&out), "--csv"]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    let r = ResultFile::read(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t1,t2,weight,distance"));
    for (line, row) in lines.zip(&r.result.samples) {
        let vals: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(&vals[..2], &row[..]);
    }

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{}").unwrap();
    assert_eq!(lfi(&["summarize", path_str(&bad)]).status.code(), Some(1));
}

#[test]
fn samples_csv_flag_matches_summarize_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let csv = dir.path().join("s.csv");
    assert_eq!(run_ma2(&out, &["--samples-csv", path_str(&csv)]).status.code(), Some(0));
    let from_summarize = lfi(&["summarize", path_str(&out), "--csv"]).stdout;
    assert_eq!(std::fs::read(&csv).unwrap(), from_summarize);
}

#[test]
fn reproduce_is_byte_equal_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let model = common::example("gaussian.json");
    let m = path_str(&model);
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("rejection", vec!["--quantile", "0.05", "--n-samples", "40"]),
        ("smc", vec!["--schedule", "0.3,0.5", "--n-samples", "40"]),
        (
            "bolfi",
            vec!["--bounds=-5:5", "--n-init", "5", "--n-total", "12", "--n-samples", "40"],
        ),
    ];
    for (method, extra) in runs {
        let first = dir.path().join(format!("{method}.json"));
        let again = dir.path().join(format!("{method}-again.json"));
        let mut args = vec![
            "run",
            m,
            "--method",
            method,
            "--seed",
            "9",
            "--batch-size",
            "20",
            "--quiet",
            "--out",
            path_str(&first),
        ];
        args.extend(extra);
        let o = lfi(&args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{method}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let o = lfi(&[
            "reproduce",
            path_str(&first),
            "--workers",
            "2",
            "--quiet",
            "--out",
            path_str(&again),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{method}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&again).unwrap(),
            "{method}"
        );
    }
}

#[test]
fn store_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = dir.path().join("r.json");
    let model = common::example("ma2.json");
    let o = Command::new(LFI)
        .args([
            "run",
            path_str(&model),
            "--method",
            "rejection",
            "--n-samples",
            "10",
            "--quantile",
            "0.1",
            "--quiet",
            "--out",
            path_str(&out),
        ])
        .env("LFI_STORE", &store)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let manifest = std::fs::read_to_string(store.join("manifest.json")).unwrap();
    let sim = parse_model(&model)
        .unwrap()
        .graph
        .compile()
        .unwrap()
        .digest("sim")
        .unwrap()
        .to_hex();
    assert!(manifest.contains(&sim), "{manifest}");
}

#[test]
fn budget_exhaustion_writes_partial_result_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let model = common::example("gaussian.json");
    let o = lfi(&[
        "run",
        path_str(&model),
        "--method",
        "rejection",
        "--n-samples",
        "1000",
        "--threshold",
        "0.0001",
        "--budget",
        "500",
        "--batch-size",
        "100",
        "--quiet",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let r = ResultFile::read(&out).unwrap();
    assert!(r.result.partial);
    assert_eq!(r.result.n_sim, 500);
    assert!(r.result.len() < 1000);
}
