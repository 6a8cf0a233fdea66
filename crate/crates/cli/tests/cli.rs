use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use speakgate_cli::{run, EXIT_OK, EXIT_USAGE};

fn sg(args: &[&str]) -> i32 {
    run(std::iter::once("speakgate").chain(args.iter().copied()))
}

fn pipeline(out: &Path, seed: &str) -> i32 {
    let out = out.display().to_string();
    sg(&["pipeline", "--backend", "mock", "--conversations", "20", "--seed", seed, "--out-dir", &out])
}

fn dataset_files(root: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(root.join("dataset"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    files
}

fn read_value(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pipeline(dir.path(), "3"), EXIT_OK);
    let names: Vec<String> = dataset_files(dir.path())
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for variant in ["token", "dialogue"] {
        for split in ["train", "validation", "test"] {
            assert!(names.contains(&format!("{variant}_{split}.jsonl")), "missing {variant}_{split} in {names:?}");
        }
    }
    assert!(dir.path().join("stats.json").is_file());
    assert!(dir.path().join("manifest.json").is_file());
    assert!(dir.path().join("dataset/splits.json").is_file());
    let manifest = read_value(&dir.path().join("manifest.json"));
    assert_eq!(manifest["seed"], json!(3));
    assert_eq!(manifest["backend"], json!("mock"));
}

#[test]
fn same_seed_gives_identical_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(pipeline(&a, "9"), EXIT_OK);
    assert_eq!(pipeline(&b, "9"), EXIT_OK);
    let (fa, fb) = (dataset_files(&a), dataset_files(&b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    assert_eq!(std::fs::read(a.join("stats.json")).unwrap(), std::fs::read(b.join("stats.json")).unwrap());
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(pipeline(&a, "1"), EXIT_OK);
    assert_eq!(pipeline(&b, "2"), EXIT_OK);
    let read = |p: &Path| std::fs::read(p.join("dataset/token_train.jsonl")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(sg(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(sg(&["evaluate"]), EXIT_USAGE);
    assert_eq!(sg(&["--help"]), EXIT_OK);
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nnot_a_field = true\n").unwrap();
    assert_eq!(sg(&["--config", cfg.to_str().unwrap(), "stats"]), EXIT_USAGE);

    std::fs::write(&cfg, "[dataset]\ntrain = 0.9\nvalidation = 0.2\ntest = 0.1\n").unwrap();
    assert_eq!(sg(&["--config", cfg.to_str().unwrap(), "stats"]), EXIT_USAGE);

    assert_eq!(sg(&["--config", dir.path().join("absent.toml").to_str().unwrap(), "stats"]), EXIT_USAGE);
}

#[test]
fn unknown_backend_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert_ne!(sg(&["pipeline", "--backend", "nowhere", "--out-dir", &out]), EXIT_OK);
}

#[test]
fn rerun_with_cache_issues_no_fresh_requests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let base = ["--backend", "mock", "--seed", "5", "--out-dir", &out];
    let with = |extra: &[&str]| {
        let mut v: Vec<&str> = extra.to_vec();
        v.extend_from_slice(&base);
        sg(&v)
    };
    assert_eq!(with(&["clean"]), EXIT_OK);
    assert_eq!(with(&["augment", "--conversations", "8"]), EXIT_OK);
    assert_eq!(with(&["synthesize"]), EXIT_OK);
    let first = read_value(&dir.path().join("manifests/synthesize.json"));
    assert!(first["record_counts"]["fresh_requests"].as_u64().unwrap() > 0);
    let transcripts_before = std::fs::read_to_string(dir.path().join("transcripts/manifest.jsonl")).unwrap();

    assert_eq!(with(&["synthesize"]), EXIT_OK);
    let second = read_value(&dir.path().join("manifests/synthesize.json"));
    assert_eq!(second["record_counts"]["fresh_requests"], json!(0));
    let transcripts_after = std::fs::read_to_string(dir.path().join("transcripts/manifest.jsonl")).unwrap();
    assert_eq!(transcripts_before, transcripts_after);

    assert_eq!(with(&["build-dataset"]), EXIT_OK);
    assert_eq!(with(&["stats"]), EXIT_OK);
    assert!(dir.path().join("stats.json").is_file());
}

#[test]
fn evaluate_on_mock_backend() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pipeline(dir.path(), "4"), EXIT_OK);
    let out = dir.path().display().to_string();
    let dataset = dir.path().join("dataset/token_test.jsonl");
    let code = sg(&["evaluate", "--backend", "mock", "--out-dir", &out, "--dataset", dataset.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let report = read_value(&dir.path().join("evaluation/report.json"));
    for key in ["fir", "mir", "macro_f1"] {
        let v = report[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {report}"));
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(dir.path().join("evaluation/predictions.jsonl").is_file());
}

#[test]
fn reward_score_calibrate_and_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();

    let rollouts = dir.path().join("rollouts.jsonl");
    let rows = [
        json!({"group_id": "g", "predicted": "SPEAK", "gold": "SPEAK", "turns_early": 0, "gold_type": "Data Provision", "judged_type": "Data Provision"}),
        json!({"group_id": "g", "predicted": "SPEAK", "gold": "SILENT"}),
        json!({"group_id": "g", "predicted": "SILENT", "gold": "SILENT"}),
        json!({"group_id": "g", "predicted": "SILENT", "gold": "SPEAK", "gold_type": "Data Provision"}),
    ];
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(&rollouts, body).unwrap();
    let scored = dir.path().join("rewards.jsonl");
    let code = sg(&[
        "reward-score",
        "--out-dir",
        &out,
        "--rollouts",
        rollouts.to_str().unwrap(),
        "--lambda",
        "0.5",
        "--out",
        scored.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<Value> = std::fs::read_to_string(&scored)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let totals: Vec<f64> = lines.iter().map(|l| l["reward"]["total"].as_f64().unwrap()).collect();
    let expected = [1.0 + 0.1 + 0.3, -1.0 - 0.1 - 0.5, 1.0, -1.0];
    for (got, want) in totals.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{totals:?}");
    }
    let adv_sum: f64 = lines.iter().map(|l| l["advantage"].as_f64().unwrap()).sum();
    assert!(adv_sum.abs() < 1e-9);

    let decisions = dir.path().join("scored.jsonl");
    let body: String = (0..40)
        .map(|i| {
            let gold = if i % 4 == 0 { "SPEAK" } else { "SILENT" };
            format!("{}\n", json!({"speak_score": -(i as f64) / 10.0, "gold": gold}))
        })
        .collect();
    std::fs::write(&decisions, body).unwrap();
    let cal = dir.path().join("calibration.json");
    let code = sg(&[
        "calibrate",
        "--out-dir",
        &out,
        "--scored",
        decisions.to_str().unwrap(),
        "--fir-target",
        "0.1",
        "--out",
        cal.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let c = read_value(&cal);
    assert!(c["fir"].as_f64().unwrap() <= 0.1);

    let runs = dir.path().join("runs");
    std::fs::create_dir(&runs).unwrap();
    assert_eq!(pipeline(&dir.path().join("p"), "6"), EXIT_OK);
    let dataset = dir.path().join("p/dataset/token_validation.jsonl");
    let eval_out = dir.path().join("eval.json");
    let code = sg(&[
        "evaluate",
        "--backend",
        "mock",
        "--out-dir",
        &out,
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let report = read_value(&eval_out);
    for seed in 0..3 {
        let run = json!({"lambda": 0.5, "seed": seed, "report": report});
        std::fs::write(runs.join(format!("run{seed}.json")), run.to_string()).unwrap();
    }
    let table = dir.path().join("ablation.json");
    let code = sg(&[
        "ablate-report",
        "--out-dir",
        &out,
        "--runs",
        runs.to_str().unwrap(),
        "--baseline",
        eval_out.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let t = read_value(&table);
    assert_eq!(t["rows"].as_array().unwrap().len(), 1);
    assert_eq!(t["rows"][0]["delta_mir"].as_f64().unwrap(), 0.0);
}

#[test]
fn ablate_report_without_runs_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let code = sg(&["ablate-report", "--out-dir", &out, "--runs", &out]);
    assert_ne!(code, EXIT_OK);
    assert_ne!(code, EXIT_USAGE);
}
