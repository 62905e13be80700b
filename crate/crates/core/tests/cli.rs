use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use qsc_core::codec::{write_code_archive, CodeRecord, SemanticCode};
use qsc_core::PointCloud;

fn qsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsc"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        fs::create_dir(&data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..4 {
            let points = (0..64)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            let cloud = PointCloud::new(points).unwrap();
            fs::write(data.join(format!("s{i}.xyz")), cloud.to_xyz_text()).unwrap();
        }
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, extra: serde_json::Value) -> PathBuf {
        let mut body = serde_json::json!({
            "dataset_dir": self.path("data"),
            "codec": { "kind": "baseline-fps", "n": 30 },
            "seed": 1,
        });
        for (k, v) in extra.as_object().unwrap() {
            body[k] = v.clone();
        }
        let path = self.path("run.json");
        fs::write(&path, body.to_string()).unwrap();
        path
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_completes_with_exit_zero() {
    let fx = Fixture::new();
    let cfg = fx.config(serde_json::json!({}));
    let out = fx.path("report.json");
    let run = qsc(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["n"], 30);
    assert_eq!(report["rounds"], 2);
    let session: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("report.session.json")).unwrap()).unwrap();
    assert_eq!(session["phase"], "completed");
}

#[test]
fn simulate_writes_csv() {
    let fx = Fixture::new();
    let cfg = fx.config(serde_json::json!({}));
    let out = fx.path("report.csv");
    let run = qsc(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--format",
        "csv",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("n,total_time_ms,total_bits,mean_cd,edr_bps,rte,rounds,batch_size\n"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn full_intercept_exits_with_security_abort() {
    let fx = Fixture::new();
    let cfg = fx.config(serde_json::json!({ "eve_fraction": 1.0 }));
    let out = fx.path("report.json");
    let run = qsc(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(2), "{}", stderr(&run));
    let session: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("report.session.json")).unwrap()).unwrap();
    assert_eq!(session["phase"], "aborted");
}

#[test]
fn missing_dataset_dir_is_named() {
    let fx = Fixture::new();
    let cfg = fx.path("bad.json");
    fs::write(&cfg, r#"{"seed": 1}"#).unwrap();
    let run = qsc(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&fx.path("r.json")),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("dataset_dir"), "{}", stderr(&run));
}

#[test]
fn bad_nested_field_is_named() {
    let fx = Fixture::new();
    let cfg = fx.config(serde_json::json!({ "channel": { "det_efficiency": 1.5 } }));
    let run = qsc(&["simulate", "--config", s(&cfg), "--dry-run"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(
        stderr(&run).contains("channel.det_efficiency"),
        "{}",
        stderr(&run)
    );
}

#[test]
fn dry_run_writes_nothing() {
    let fx = Fixture::new();
    let cfg = fx.config(serde_json::json!({}));
    let out = fx.path("report.json");
    let run = qsc(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--dry-run",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    assert!(!out.exists());
    assert!(!fx.path("report.session.json").exists());
}

#[test]
fn capacity_reference_lines_and_markers() {
    let fx = Fixture::new();
    let reports = fx.path("reports.csv");
    fs::write(
        &reports,
        "n,total_time_ms,total_bits,mean_cd,edr_bps,rte,rounds,batch_size\n\
         50,1000,731440,0.002,731440,21.28,1,3\n\
         6144,1000,34370,0,34370,1,1,3\n",
    )
    .unwrap();
    let run = qsc(&["capacity", "--mode", "reference", "--report", s(&reports)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("1496.53"), "{text}");
    assert!(text.contains("560.20"), "{text}");
    let line = |n: &str| {
        text.lines()
            .find(|l| l.starts_with(&format!("n={n} ")))
            .unwrap()
            .to_string()
    };
    assert!(line("50").contains("> wyner") && line("50").contains("< shannon"));
    assert!(line("6144").contains("< wyner") && line("6144").contains("< shannon"));
}

#[test]
fn capacity_model_mode_runs() {
    let run = qsc(&["capacity", "--mode", "model", "--eve-error", "0.25"]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    assert!(stdout(&run).contains("Model"));
}

#[test]
fn calibrate_benchmark_table() {
    let fx = Fixture::new();
    let table = fx.path("table.csv");
    fs::write(
        &table,
        "n,total_time_ms\n10,1244715\n20,1690240\n50,2708329\n100,4855498\n200,5303667\n300,7530870\n",
    )
    .unwrap();
    let out = fx.path("timing.json");
    let run = qsc(&["calibrate", "--table", s(&table), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    assert!(stdout(&run).contains("residual"));
    let cal: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(cal["rounds"], 3421);
    assert_eq!(cal["residuals"].as_array().unwrap().len(), 6);

    fs::write(&table, "n,total_time_ms\n10,1244715\n").unwrap();
    let run = qsc(&["calibrate", "--table", s(&table), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn codes_validate_accepts_good_and_rejects_corrupt() {
    let fx = Fixture::new();
    let archive = fx.path("codes.qscc");
    let records: Vec<CodeRecord> = (0..3)
        .map(|i| CodeRecord {
            id: format!("s{i}"),
            code: SemanticCode::from_raw(&[1.0 + i as f64, -2.0, 0.5, 3.0]).unwrap(),
        })
        .collect();
    write_code_archive(&archive, &records).unwrap();
    let run = qsc(&["codes-validate", "--archive", s(&archive)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    assert!(stdout(&run).contains("3 records ok"));

    let mut bytes = fs::read(&archive).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&archive, &bytes).unwrap();
    let run = qsc(&["codes-validate", "--archive", s(&archive)]);
    assert_eq!(run.status.code(), Some(1));
}
