//! End-to-end command tests against the built binary: artifact shapes,
//! exit codes, and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_symprec"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_runs_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = run(
        d,
        &[
            "gen-problems",
            "--family",
            "poisson",
            "--grid",
            "6",
            "--count",
            "10",
            "--seed",
            "3",
            "--out",
            "p.jsonl",
        ],
    );
    assert_ok(&out);
    let lines = std::fs::read_to_string(d.join("p.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
    assert!(d.join("run_manifest.json").exists());

    let out = run(
        d,
        &[
            "datagen",
            "--problems",
            "p.jsonl",
            "--precond",
            "ssor",
            "--objective",
            "iters",
            "--solver",
            "cg",
            "--max-iters",
            "2000",
            "--coarse",
            "0.1",
            "--fine",
            "0.02",
            "--out",
            "d.csv",
        ],
    );
    assert_ok(&out);
    let csv = std::fs::read_to_string(d.join("d.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "x1,x2,x3,x4,x5,x6,x7,x8,y,objective_value");
    assert_eq!(csv.lines().count(), 11);
    assert!(d.join("d.meta.json").exists());

    let out = run(
        d,
        &[
            "train",
            "--dataset",
            "d.csv",
            "--preset",
            "desk",
            "--batch",
            "40",
            "--samples",
            "400",
            "--seed",
            "5",
            "--out",
            "policy.json",
        ],
    );
    assert_ok(&out);
    assert!(d.join("policy.json").exists());
    assert!(d.join("policy.trace.csv").exists());
    assert!(d.join("policy.checkpoint.json").exists());
    let policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("policy.json")).unwrap()).unwrap();
    assert!(policy.get("tokens").is_some());
    assert!(policy.get("constants").is_some());
    assert!(policy.get("infix").is_some());
    let trace = std::fs::read_to_string(d.join("policy.trace.csv")).unwrap();
    assert!(trace.starts_with("iter,best_R,mean_R,quantile,best_expr_infix"));

    // eval prints NRMSE and R that match a recomputation from the files
    let out = run(
        d,
        &["eval", "--expr-file", "policy.json", "--dataset", "d.csv"],
    );
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("NRMSE: "), "{text}");
    let r_line = text
        .lines()
        .find(|l| l.starts_with("R: "))
        .expect("reward line");
    let printed_r: f64 = r_line.trim_start_matches("R: ").parse().unwrap();
    let expr =
        symprec::expr::read_expression_json(&d.join("policy.json")).unwrap();
    let ds = symprec::datagen::ParamDataset::read_csv(&d.join("d.csv"), 0).unwrap();
    let expected = symprec::expr::reward(&expr, &ds.features, &ds.targets);
    assert_eq!(printed_r, expected, "printed reward must match recomputation");

    let out = run(
        d,
        &[
            "bench",
            "--problems",
            "p.jsonl",
            "--precond",
            "ssor",
            "--objective",
            "iters",
            "--solver",
            "cg",
            "--max-iters",
            "2000",
            "--coarse",
            "0.1",
            "--fine",
            "0.02",
            "--policy",
            "none",
            "--policy",
            "default",
            "--policy",
            "expr:policy.json",
            "--cells",
            "cells.csv",
            "--out",
            "bench.csv",
        ],
    );
    assert_ok(&out);
    let bench = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert!(bench.starts_with(
        "policy,n,mean_time_s,median_time_s,q1,q3,var,mean_iters,mean_cond,n_failed"
    ));
    assert_eq!(bench.lines().count(), 4, "one row per requested policy");
    let cells = std::fs::read_to_string(d.join("cells.csv")).unwrap();
    assert!(cells
        .starts_with("problem_id,method,precond,param,iterations,time_s,relres,converged"));
    assert_eq!(cells.lines().count(), 31);
}

#[test]
fn gen_problems_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = run(
            d,
            &[
                "gen-problems",
                "--family",
                "thermal",
                "--grid",
                "5",
                "--count",
                "6",
                "--seed",
                "11",
                "--out",
                name,
            ],
        );
        assert_ok(&out);
    }
    assert_eq!(
        std::fs::read(d.join("a.jsonl")).unwrap(),
        std::fs::read(d.join("b.jsonl")).unwrap()
    );
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen-problems", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
    assert!(err.contains("usage"), "{err}");
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("p.jsonl"), "").unwrap();
    let out = run(
        d,
        &[
            "datagen",
            "--problems",
            "p.jsonl",
            "--precond",
            "frobnicator",
            "--objective",
            "iters",
            "--out",
            "d.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    let out = run(
        d,
        &[
            "bench",
            "--problems",
            "p.jsonl",
            "--precond",
            "sor",
            "--objective",
            "iters",
            "--policy",
            "bogus",
            "--out",
            "b.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "datagen",
            "--problems",
            "missing.jsonl",
            "--precond",
            "sor",
            "--objective",
            "iters",
            "--out",
            "d.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}
