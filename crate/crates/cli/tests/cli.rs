use std::path::Path;
use std::process::{Command, Output};

use sgem_core::downstream::METRICS_CSV_HEADER;

fn sgem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgem"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env_remove("SGEM_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: &[&str] = &[
    "--task",
    "synthA",
    "--trials",
    "3",
    "--duration",
    "240",
    "--epochs",
    "2",
    "--rounds",
    "5",
    "--max-depth",
    "2",
    "--splits",
    "2",
    "--seed",
    "7",
];

fn with<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn gen_data_twice_gives_identical_manifests() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "gen-data",
        "--task",
        "synthA",
        "--trials",
        "12",
        "--duration",
        "150",
        "--seed",
        "7",
    ];
    for d in [a.path(), b.path()] {
        let out = sgem(d, &args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for file in [
        "windows/synthA_dataset.json",
        "windows/synthA.manifest.json",
        "windows/synthA.sgem",
    ] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let again = sgem(a.path(), &args);
    assert!(
        stdout(&again).contains("[skip] gen-data synthA"),
        "{}",
        stdout(&again)
    );
    let forced = sgem(a.path(), &[&args[..], &["--force"]].concat());
    assert!(
        stdout(&forced).contains("[done] gen-data synthA"),
        "{}",
        stdout(&forced)
    );
}

#[test]
fn missing_predecessor_exits_with_stage_order_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgem(dir.path(), &with("train-encoder", &[]));
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("gen-data"), "{}", stderr(&out));
    let out = sgem(dir.path(), &with("eval-gesture", &[]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("embed"), "{}", stderr(&out));
}

#[test]
fn invalid_configuration_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgem(
        dir.path(),
        &[
            "gen-data", "--trials", "1", "--epochs", "0", "--task", "Suturing",
        ],
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("trials"), "{err}");
    assert!(err.contains("epochs"), "{err}");
    assert!(err.contains("Suturing"), "{err}");
    let usage = sgem(dir.path(), &["no-such-command"]);
    assert_eq!(code(&usage), 1);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgem(
        dir.path(),
        &["gen-data", "--config", "/definitely/not/here.json"],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn config_file_and_flags_merge_with_flags_winning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 11, "tasks": ["synthB"], "train": {"epochs": 9}}"#,
    )
    .unwrap();
    let out = sgem(
        dir.path(),
        &[
            "show-config",
            "--config",
            cfg.to_str().unwrap(),
            "--epochs",
            "4",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json = stdout(&out);
    assert!(json.contains("\"seed\": 11"), "{json}");
    assert!(json.contains("\"synthB\""), "{json}");
    assert!(json.contains("\"epochs\": 4"), "{json}");
}

#[test]
fn staged_pipeline_writes_metrics_table() {
    let dir = tempfile::tempdir().unwrap();
    for stage in [
        "gen-data",
        "train-encoder",
        "embed",
        "eval-gesture",
        "report",
    ] {
        let out = sgem(dir.path(), &with(stage, &[]));
        assert_eq!(code(&out), 0, "{stage}: {}", stderr(&out));
    }
    let csv = std::fs::read_to_string(dir.path().join("report/metrics_gesture.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 9);
    assert_eq!(row[0], "synthA");
    let summary = std::fs::read_to_string(dir.path().join("report/summary.txt")).unwrap();
    assert!(summary.contains("config_digest"), "{summary}");
    assert!(summary.contains("synthA gesture accuracy"), "{summary}");

    // The same stages rerun as no-ops; a different seed is refused as stale.
    let again = sgem(dir.path(), &with("embed", &[]));
    assert!(stdout(&again).contains("[skip]"), "{}", stdout(&again));
    let mut other: Vec<&str> = with("eval-gesture", &[]);
    let i = other.iter().position(|a| *a == "--seed").unwrap();
    other[i + 1] = "8";
    let stale = sgem(dir.path(), &other);
    assert_eq!(code(&stale), 2, "{}", stderr(&stale));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgem(dir.path(), &["selftest", "--threads", "1"]);
    assert_eq!(code(&out), 0, "{}\n{}", stdout(&out), stderr(&out));
    assert!(!stdout(&out).contains("[FAIL]"));
    assert!(stdout(&out).contains("[PASS]"));
}
