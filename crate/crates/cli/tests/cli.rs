use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedpd_core::config::ProblemSpec;
use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedpd-lab"))
        .args(args)
        .env_remove("FEDPD_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn strip_wall_ms(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

const SMALL: &str = r#"{
    "problem": {"kind": "strong", "agents": 4, "samples_per_agent": 20, "dim": 5, "seed": 3},
    "run": {"algorithm": "fedpd-sgd", "rounds": 12, "p": 0.4, "batch": 3, "seed": 1}
}"#;

#[test]
fn run_writes_trace_and_resolved_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out_dir = dir.path().join("out");
    let out = lab(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("RC"));

    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,comm_rounds_cum,local_iters_cum,samples_cum,gap,consensus_err,al_mean,diverged,wall_ms"
    );
    assert_eq!(lines.count(), 12);

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let run = &summary["config"]["run"];
    assert_eq!(run["seed"], 1);
    assert!(run["eta"].as_f64().unwrap() > 0.0);
    assert_eq!(run["oracle1"]["variant"], "sgd");
    assert_eq!(summary["config"]["problem"]["noise_halfwidth"], 1.0);
    assert!(summary["config"]["lipschitz"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["rounds_completed"], 12);
    assert_eq!(summary["diverged"], false);
    for key in [
        "final_gap",
        "min_gap",
        "comm_rounds",
        "local_iters",
        "samples",
    ] {
        assert!(!summary[key].is_null(), "{key}");
    }
}

#[test]
fn reruns_are_byte_identical_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let mut traces = Vec::new();
    for (k, threads) in ["1", "3", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("r{k}"));
        let out = lab(&[
            "--threads",
            threads,
            "run",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        traces.push(strip_wall_ms(
            &fs::read_to_string(out_dir.join("trace.csv")).unwrap(),
        ));
    }
    assert!(traces.iter().all(|t| t == &traces[0]));

    let seeded = dir.path().join("seeded");
    let out = lab(&[
        "run",
        "--config",
        &cfg,
        "--out",
        seeded.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(
        strip_wall_ms(&fs::read_to_string(seeded.join("trace.csv")).unwrap()),
        traces[0]
    );
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(seeded.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["run"]["seed"], 99);
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out_dir = dir.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_fedpd-lab"))
        .args(["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()])
        .env("FEDPD_LAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_fedpd-lab"))
        .args(["run", "--config", &cfg])
        .env("FEDPD_LAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"problem": {"kind": "quadratic_pair"}, "run": {"algorithm": "fedpd-gd", "rounds": "many"}}"#,
    );
    let out = lab(&["run", "--config", &bad]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("run.rounds"), "{}", stderr(&out));

    let broken = write(dir.path(), "broken.json", "{\"problem\": ");
    assert_eq!(code(&lab(&["run", "--config", &broken])), 2);
    assert_eq!(
        code(&lab(&[
            "run",
            "--config",
            dir.path().join("missing.json").to_str().unwrap()
        ])),
        2
    );

    let unstable = write(
        dir.path(),
        "unstable.json",
        r#"{"problem": {"kind": "quadratic_pair"}, "run": {"algorithm": "fedpd-gd", "eta": 1.5}}"#,
    );
    assert_eq!(code(&lab(&["run", "--config", &unstable])), 2);
}

#[test]
fn zero_rounds_give_header_only_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "z.json",
        r#"{"problem": {"kind": "quadratic_pair"}, "run": {"algorithm": "fedavg-gd", "rounds": 0}}"#,
    );
    let out_dir = dir.path().join("z");
    assert_eq!(
        code(&lab(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap()
        ])),
        0
    );
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
}

#[test]
fn diverged_runs_still_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.json",
        r#"{"problem": {"kind": "quadratic_pair"}, "output_dir": "OUT",
            "run": {"algorithm": "fedavg-gd", "local_steps": 2, "eta": 0.5, "init": 1.0,
                    "rounds": 200, "divergence_threshold": 1e6}}"#
            .replace("OUT", dir.path().join("d").to_str().unwrap())
            .as_str(),
    );
    let out = lab(&["run", "--config", &cfg]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("DIVERGED"));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["diverged"], true);
    assert_eq!(summary["rounds_completed"], 60);
}

#[test]
fn sweep_over_skip_probability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"problem": {"kind": "identical", "agents": 5, "samples_per_agent": 20, "dim": 4, "seed": 2},
            "run": {"algorithm": "fedpd-gd", "rounds": 60, "seed": 4}}"#,
    );
    let root = dir.path().join("sweep");
    let out = lab(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        root.to_str().unwrap(),
        "--param",
        "p",
        "--values",
        "0,0.5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(root.join("p=0/trace.csv").exists() && root.join("p=0.5/summary.json").exists());
    let table = fs::read_to_string(root.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][0], "p");
    assert_eq!(rows.len(), 3);
    let rc = |r: &Vec<&str>| r[3].parse::<u64>().unwrap();
    assert_eq!(rc(&rows[1]), 60);
    assert!(rc(&rows[2]) < 60);
    let gap = |r: &Vec<&str>| r[2].parse::<f64>().unwrap();
    assert!(gap(&rows[2]) <= 2.0 * gap(&rows[1]));
}

#[test]
fn sweep_over_all_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.json",
        r#"{"problem": {"kind": "weak", "agents": 4, "samples_per_agent": 20, "dim": 4, "seed": 1},
            "run": {"algorithm": "fedavg-gd", "rounds": 15, "batch": 4, "local_steps": 3}}"#,
    );
    let root = dir.path().join("algos");
    let values = "fedavg-gd,fedavg-sgd,fedprox,fedpd-gd,fedpd-sgd,fedpd-vr";
    let out = lab(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        root.to_str().unwrap(),
        "--param",
        "algorithm",
        "--values",
        values,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(root.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(cols[2].parse::<f64>().unwrap().is_finite());
        assert_eq!(cols[7], "false");
    }
}

#[test]
fn sweep_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    assert_eq!(
        code(&lab(&[
            "sweep", "--config", &cfg, "--param", "p", "--values", ""
        ])),
        2
    );
    assert_eq!(code(&lab(&["sweep", "--config", &cfg, "--param", "p"])), 2);
    assert_eq!(
        code(&lab(&[
            "sweep", "--config", &cfg, "--param", "gamma", "--values", "1"
        ])),
        2
    );
    assert_eq!(
        code(&lab(&[
            "sweep", "--config", &cfg, "--param", "Q", "--values", "2,x"
        ])),
        2
    );
}

#[test]
fn theory_checks() {
    let out = lab(&["theory", "divergence", "η=0.5", "Q=2"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("PASS divergence"));
    assert!(stdout(&out).contains("factor=1.250000000000"));

    let out = lab(&["theory", "lower-bound", "T=16", "N=4", "t=15"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("tail_zero=true"));

    for check in ["diminishing", "lipschitz", "chain-bounds"] {
        let out = lab(&["theory", check]);
        assert_eq!(code(&out), 0, "{check}: {}", stdout(&out));
    }
    assert_eq!(code(&lab(&["theory", "diminishing", "K=0"])), 3);
    assert_eq!(code(&lab(&["theory", "nonsense"])), 2);
    assert_eq!(code(&lab(&["theory", "divergence", "zeta=1"])), 2);
    assert_eq!(code(&lab(&["theory", "divergence", "Q=1"])), 2);
}

#[test]
fn gendata_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("strong.csv");
    let args = [
        "gendata",
        "strong",
        "--agents",
        "3",
        "--samples",
        "7",
        "--dim",
        "4",
        "--seed",
        "5",
        "--noise",
        "0.5",
    ];
    let out = lab(&[&args[..], &["--out", csv.to_str().unwrap()]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = fs::read(&csv).unwrap();

    let again = dir.path().join("again.csv");
    assert_eq!(
        code(&lab(
            &[&args[..], &["--out", again.to_str().unwrap()]].concat()
        )),
        0
    );
    assert_eq!(fs::read(&again).unwrap(), first);

    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("strong.json")).unwrap()).unwrap();
    let generator: ProblemSpec = serde_json::from_value(sidecar["generator"].clone()).unwrap();
    let mut loader: ProblemSpec = serde_json::from_value(sidecar["problem"].clone()).unwrap();
    loader.rebase(dir.path());
    let (a, b) = (generator.build().unwrap(), loader.build().unwrap());
    assert_eq!(a.shards(), b.shards());
    assert_eq!(a.lipschitz(), b.lipschitz());

    let out = lab(&[
        "gendata",
        "weak",
        "--agents",
        "0",
        "--samples",
        "3",
        "--dim",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let blocked = dir.path().join("no/such/dir/x.csv");
    let out = lab(&[
        "gendata",
        "weak",
        "--agents",
        "2",
        "--samples",
        "3",
        "--dim",
        "2",
        "--out",
        blocked.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}
