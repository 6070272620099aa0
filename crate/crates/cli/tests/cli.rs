use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use span_ensemble::eval::write_dataset;
use span_ensemble::synthetic::{knowledge_suite, RobustnessSuite};
use span_ensemble::TableLm;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_span-ensemble"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pool(dir: &Path, name: &str, models: &[TableLm]) -> PathBuf {
    std::fs::create_dir_all(dir.join("tables")).unwrap();
    let mut entries = Vec::new();
    for (k, m) in models.iter().enumerate() {
        let rel = format!("tables/{name}-{k}.json");
        std::fs::write(dir.join(&rel), serde_json::to_string(&m.to_file()).unwrap()).unwrap();
        entries.push(json!({"type": "table", "path": rel}));
    }
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
    path
}

struct Fixture {
    dir: tempfile::TempDir,
    good: PathBuf,
    mixed: PathBuf,
    dataset: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let suite = RobustnessSuite::new(8, 2);
    let good = write_pool(dir.path(), "4-good", &suite.scenario("4-good").unwrap());
    let mixed = write_pool(
        dir.path(),
        "2-good-2-bad",
        &suite.scenario("2-good-2-bad").unwrap(),
    );
    let dataset = dir.path().join("data.jsonl");
    write_dataset(&dataset, &suite.examples).unwrap();
    Fixture {
        dir,
        good,
        mixed,
        dataset,
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_prints_the_ensemble_output() {
    let f = fixture();
    let o = run(&[
        "run",
        "--pool",
        p(&f.good),
        "--prompt",
        "Q: q3 A:",
        "--span-length",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), " g3\n");
}

#[test]
fn run_reads_prompt_files_and_writes_traces() {
    let f = fixture();
    let prompt = f.dir.path().join("prompt.txt");
    std::fs::write(&prompt, "Q: q1 A:").unwrap();
    let trace = f.dir.path().join("trace.jsonl");
    let o = run(&[
        "run",
        "--pool",
        p(&f.mixed),
        "--prompt-file",
        p(&prompt),
        "--no-filter",
        "--trace",
        p(&trace),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<Value> = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 2);
    for round in &lines[..lines.len() - 1] {
        for f in round["filters"].as_array().unwrap() {
            assert_eq!(f["removed"], json!([]));
        }
    }
    assert_eq!(lines.last().unwrap()["stop_reason"], "eos");
}

#[test]
fn identical_runs_match_except_timings() {
    let f = fixture();
    let strip = |path: &Path| -> Vec<Value> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                if let Some(o) = v.as_object_mut() {
                    o.remove("timings_ms");
                }
                v
            })
            .collect()
    };
    let mut traces = Vec::new();
    for (k, workers) in ["1", "4"].iter().enumerate() {
        let trace = f.dir.path().join(format!("t{k}.jsonl"));
        let o = run(&[
            "run",
            "--pool",
            p(&f.mixed),
            "--prompt",
            "Q: q5 A:",
            "--workers",
            workers,
            "--trace",
            p(&trace),
        ]);
        assert!(o.status.success());
        traces.push(strip(&trace));
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn usage_errors_exit_2() {
    let f = fixture();
    let o = run(&["run", "--prompt", "Q:"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "eval",
        "--pool",
        p(&f.good),
        "--dataset",
        p(&f.dataset),
        "--metric",
        "bogus",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "run",
        "--pool",
        p(&f.good),
        "--prompt",
        "Q:",
        "--span-length",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "run",
        "--pool",
        p(&f.good),
        "--prompt",
        "Q:",
        "--lambda",
        "-1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
    let o = run(&[
        "run",
        "--pool",
        p(&f.good),
        "--prompt",
        "Q:",
        "--prompt-file",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let f = fixture();
    let o = run(&[
        "run",
        "--pool",
        p(&f.dir.path().join("missing.json")),
        "--prompt",
        "Q:",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let bad = f.dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": 1}\n").unwrap();
    let o = run(&["eval", "--pool", p(&f.good), "--dataset", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    let o = run(&["run", "--pool", p(&f.good), "--prompt", ""]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_prints_aggregate_and_writes_report() {
    let f = fixture();
    let out = f.dir.path().join("report.json");
    let o = run(&[
        "eval",
        "--pool",
        p(&f.good),
        "--dataset",
        p(&f.dataset),
        "--metric",
        "em",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "em 100.0000");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["aggregate"], 100.0);
    assert_eq!(report["records"].as_array().unwrap().len(), 8);
    assert_eq!(report["config"]["span_length"], 4);
    assert_eq!(report["config"]["lambda"], 10.0);
    assert_eq!(report["config"]["filter"], true);
}

#[test]
fn eval_with_lambda_zero_filters_everything() {
    let dir = tempfile::tempdir().unwrap();
    let (examples, models) = knowledge_suite(10);
    let pool = write_pool(dir.path(), "knowers", &models);
    let data = dir.path().join("k.jsonl");
    write_dataset(&data, &examples).unwrap();
    let o = run(&[
        "eval",
        "--pool",
        p(&pool),
        "--dataset",
        p(&data),
        "--span-length",
        "1",
        "--lambda",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("em "));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let f = fixture();
    let spec = f.dir.path().join("sweep.json");
    std::fs::write(
        &spec,
        json!({
            "span_lengths": [4],
            "lambdas": [0, 10, 20, 40],
            "pool_scenarios": [{"name": "4-good", "pool": "4-good.json"}],
            "dataset": "data.jsonl",
            "max_words": 4
        })
        .to_string(),
    )
    .unwrap();
    let out = f.dir.path().join("summary.csv");
    let o = run(&["sweep", "--spec", p(&spec), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    std::fs::write(&spec, json!({"max_words": 4}).to_string()).unwrap();
    let o = run(&[
        "sweep",
        "--spec",
        p(&spec),
        "--pool",
        p(&f.good),
        "--dataset",
        p(&f.dataset),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // default grid: six span lengths
    assert_eq!(stdout(&o).lines().count(), 1 + 6);
}

#[test]
fn sweep_spec_errors() {
    let f = fixture();
    let spec = f.dir.path().join("sweep.json");
    std::fs::write(&spec, "").unwrap();
    assert_eq!(
        run(&["sweep", "--spec", p(&spec), "--pool", p(&f.good)])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(&spec, r#"{"lambdas": []}"#).unwrap();
    assert_eq!(
        run(&["sweep", "--spec", p(&spec), "--pool", p(&f.good)])
            .status
            .code(),
        Some(2)
    );

    // every cell fails: the pool cannot be reached
    let dead = f.dir.path().join("dead.json");
    std::fs::write(
        &dead,
        json!([{"type": "http", "base_url": "http://127.0.0.1:9", "model": "gone", "timeout_ms": 500}]).to_string(),
    )
    .unwrap();
    std::fs::write(&spec, json!({"span_lengths": [2]}).to_string()).unwrap();
    let o = run(&[
        "sweep",
        "--spec",
        p(&spec),
        "--pool",
        p(&dead),
        "--dataset",
        p(&f.dataset),
    ]);
    // failed examples score 0 but the cell itself completes
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn validate_pool_lists_models() {
    let f = fixture();
    let o = run(&["validate-pool", "--pool", p(&f.mixed)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0\tgood-0\n1\tgood-1\n2\tbad-x\n3\tbad-y\n");
    let empty = f.dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let o = run(&["validate-pool", "--pool", p(&empty)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no models"));
}
