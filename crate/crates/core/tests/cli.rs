use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const GOLDEN_FIXTURE: &str = "tests/fixtures/dgm1_n200_seed7.csv";
/// `r_s` reported for the golden fixture with `--learner lasso --seed 1`.
const GOLDEN_R_S: f64 = 0.915742497250355;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_surrogate-pte"));
    c.env_remove("SURROGATE_PTE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN_FIXTURE)
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

fn small_dataset(dir: &Path, seed: u64) -> PathBuf {
    let p = dir.join(format!("small{seed}.csv"));
    let seed = seed.to_string();
    let out = run(&[
        "generate",
        "--dgm",
        "1",
        "--n",
        "300",
        "--p",
        "5",
        "--q",
        "5",
        "--seed",
        &seed,
        "--output",
        p.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn golden_fixture_reproduces_committed_estimate() {
    let path = fixture();
    let args = ["estimate", "--input", path.to_str().unwrap(), "--learner", "lasso", "--seed", "1"];
    let first = report(&run(&args));
    let second = report(&run(&args));
    let r = first["estimate"]["r_s"].as_f64().unwrap();
    assert!((r - GOLDEN_R_S).abs() < 1e-10, "r_s = {r}");
    assert_eq!(first["estimate"], second["estimate"]);
    assert_eq!(first["estimator"], "DR-lasso");
}

#[test]
fn regenerating_the_fixture_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("again.csv");
    let out = run(&["generate", "--dgm", "1", "--n", "200", "--seed", "7", "--output", p.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(&p).unwrap(), fs::read(fixture()).unwrap());
}

#[test]
fn constant_outcome_exits_with_ill_defined_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("flat.csv");
    let mut text = String::from("y,a,x1,s1\n");
    for i in 0..80 {
        text.push_str(&format!("2.5,{},{},{}\n", i % 2, (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
    }
    fs::write(&p, text).unwrap();
    let out = run(&["estimate", "--input", p.to_str().unwrap(), "--learner", "lasso", "--cv-folds", "3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("treatment effect"), "{err}");
}

#[test]
fn input_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "y,a,x1,s1\n1,1,0,2\n1,0,oops,2\n").unwrap();
    let out = run(&["estimate", "--input", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3, column 3"), "{err}");

    let p = dir.path().join("one_arm.csv");
    fs::write(&p, "y,a,s1\n1,1,0\n2,1,1\n").unwrap();
    assert_eq!(run(&["estimate", "--input", p.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "--input", "/nonexistent/file.csv"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "--alpha", "2"]).status.code(), Some(1));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
}

#[test]
fn smaller_alpha_gives_wider_interval() {
    let dir = tempfile::tempdir().unwrap();
    let p = small_dataset(dir.path(), 3);
    let width = |alpha: &str| -> f64 {
        let r = report(&run(&[
            "estimate",
            "--input",
            p.to_str().unwrap(),
            "--learner",
            "lasso",
            "--cv-folds",
            "5",
            "--alpha",
            alpha,
        ]));
        let ci = &r["estimate"]["ci"];
        ci["upper"].as_f64().unwrap() - ci["lower"].as_f64().unwrap()
    };
    let (w01, w05, w20) = (width("0.01"), width("0.05"), width("0.2"));
    assert!(w01 > w05 && w05 > w20, "{w01} {w05} {w20}");
}

#[test]
fn report_written_to_file_and_seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let p = small_dataset(dir.path(), 4);
    let out_path = dir.path().join("report.json");
    let status = bin()
        .args(["estimate", "--input", p.to_str().unwrap(), "--learner", "lasso", "--cv-folds", "5", "--output"])
        .arg(&out_path)
        .env("SURROGATE_PTE_SEED", "11")
        .status()
        .unwrap();
    assert!(status.success());
    let from_env: Value = serde_json::from_slice(&fs::read(&out_path).unwrap()).unwrap();
    let from_flag = report(&run(&[
        "estimate",
        "--input",
        p.to_str().unwrap(),
        "--learner",
        "lasso",
        "--cv-folds",
        "5",
        "--seed",
        "11",
    ]));
    assert_eq!(from_env["estimate"], from_flag["estimate"]);
    assert_eq!(from_env["config"]["seed"], 11);
}

#[test]
fn toy_output_has_one_row_per_unit() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("toy.csv");
    let summary_path = dir.path().join("toy.json");
    let out = run(&[
        "toy",
        "--delta",
        "0,3",
        "--n",
        "150",
        "--output",
        csv_path.to_str().unwrap(),
        "--summary",
        summary_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 2 * 150);
    let summary: Value = serde_json::from_slice(&fs::read(&summary_path).unwrap()).unwrap();
    let groups = summary["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2 * 2 * 2);
    for delta in ["0", "3"] {
        for study in ["1", "2"] {
            let n: u64 = groups
                .iter()
                .filter(|g| {
                    g["delta"].as_f64().unwrap().to_string() == delta
                        && g["study"].as_u64().unwrap().to_string() == study
                })
                .map(|g| g["n"].as_u64().unwrap())
                .sum();
            let in_csv = rows.iter().filter(|r| &r[0] == delta && &r[1] == study).count() as u64;
            assert_eq!((n, in_csv), (150, 150));
        }
    }
    let pte = summary["pte"].as_array().unwrap();
    assert!((pte[1]["analytic"].as_f64().unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn simulate_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let go = |workers: &str| -> Vec<u8> {
        let sub = dir.path().join(workers);
        fs::create_dir(&sub).unwrap();
        let p = sub.join("out.jsonl");
        let out = run(&[
            "simulate",
            "--dgm",
            "1",
            "--n",
            "200",
            "--p",
            "5",
            "--q",
            "5",
            "--reps",
            "3",
            "--learner",
            "lasso",
            "--cv-folds",
            "3",
            "--oracle-mc",
            "100000",
            "--seed",
            "5",
            "--workers",
            workers,
            "--output",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(p).unwrap()
    };
    let a = go("1");
    let b = go("2");
    let strip = |bytes: &[u8]| -> Vec<Value> {
        let mut v: Vec<Value> =
            String::from_utf8_lossy(bytes).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        if let Some(last) = v.last_mut() {
            last["config"]["output"] = Value::Null;
        }
        v
    };
    assert_eq!(strip(&a), strip(&b));
    let lines: Vec<Value> = String::from_utf8(a).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["record"], "summary");
    assert!((lines[3]["truth"].as_f64().unwrap() - 0.5).abs() < 0.01);
}

#[test]
fn calibrate_reports_direct_effect() {
    let out = run(&["calibrate", "--target-r", "0.85", "--mc", "100000", "--tol", "0.01"]);
    let v = report_plain(&out);
    let ds = v["delta_s"].as_f64().unwrap();
    assert!((ds - 3.3).abs() < 0.3, "{ds}");
}

fn report_plain(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON")
}
