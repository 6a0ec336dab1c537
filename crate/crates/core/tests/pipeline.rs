//! End-to-end `synth` / `run` / `report` behavior through the CLI layer.

mod common;

use std::path::{Path, PathBuf};

use common::*;
use pronecl::cli::*;
use pronecl::datastream::{generate_subject_records, load_subject_file, StreamConfig};
use serde_json::Value;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth_config(dir: &Path) -> PathBuf {
    write_config(dir, "synth.toml", &small_config_toml(&["finetune"], &[1], SMALL_SYNTHETIC))
}

#[test]
fn synth_writes_one_file_per_subject_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path());
    let a = cmd_synth(&cfg, &dir.path().join("a")).unwrap();
    let b = cmd_synth(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.len(), 3);
    let stream_cfg = StreamConfig {
        n_subjects: 3,
        ..small_stream(3, 1.5)
    };
    let records = generate_subject_records(&stream_cfg).unwrap();
    for ((pa, pb), rec) in a.iter().zip(&b).zip(&records) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        let back = load_subject_file(pa).unwrap();
        assert_eq!(back.subject_id, rec.subject_id);
        for (x, y) in back.trials.data().iter().zip(rec.trials.data()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    assert!(dir.path().join("a").join(MANIFEST_FILE).exists());
}

#[test]
fn run_writes_one_report_per_pair_plus_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.toml",
        &small_config_toml(&["finetune", "pronecl"], &[1, 2, 3, 4, 5], SMALL_SYNTHETIC),
    );
    let out = dir.path().join("out");
    let summary = cmd_run(&cfg, Some(&out), 4).unwrap();
    assert!(summary.failures.is_empty());
    assert_eq!(summary.reports.len(), 10);
    let jsons: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    assert_eq!(jsons.len(), 11);

    let reports = load_run_reports(&out).unwrap();
    let agg = json(&out.join(AGGREGATE_FILE));
    for stats in agg["deterministic"]["methods"].as_array().unwrap() {
        let method = stats["method"].as_str().unwrap();
        let accs: Vec<f64> = reports
            .iter()
            .filter(|r| r.deterministic.result.method.to_string() == method)
            .map(|r| r.deterministic.result.acc)
            .collect();
        assert_eq!(accs.len(), 5);
        let (mean, std) = moments_oracle(&accs);
        assert!((stats["acc_mean"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!((stats["acc_std"].as_f64().unwrap() - std).abs() < 1e-12);
    }
}

#[test]
fn deterministic_sections_repeat_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.toml",
        &small_config_toml(&["pronecl", "ewc"], &[3, 4], SMALL_SYNTHETIC),
    );
    let a = cmd_run(&cfg, Some(&dir.path().join("a")), 1).unwrap();
    let b = cmd_run(&cfg, Some(&dir.path().join("b")), 3).unwrap();
    for (pa, pb) in a.reports.iter().zip(&b.reports).chain([(&a.aggregate, &b.aggregate)]) {
        assert_eq!(json(pa)["deterministic"], json(pb)["deterministic"], "{}", pa.display());
    }
}

#[test]
fn report_is_sorted_and_exports_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "exp.toml",
        &small_config_toml(&["pronecl", "finetune"], &[2, 1], SMALL_SYNTHETIC),
    );
    let out = dir.path().join("out");
    cmd_run(&cfg, Some(&out), 2).unwrap();
    let order: Vec<String> = load_run_reports(&out).unwrap().into_iter().map(|r| r.deterministic.run).collect();
    // Methods in declaration order, then ascending seed.
    assert_eq!(order, ["pronecl_seed1", "pronecl_seed2", "finetune_seed1", "finetune_seed2"]);

    let emb = dir.path().join("emb");
    let text = cmd_report(&out, Some(&emb)).unwrap();
    assert_eq!(text, cmd_report(&out, None).unwrap());
    let table: Vec<&str> = text.lines().take(3).collect();
    assert!(table[0].starts_with("method"));
    assert!(table[1].starts_with("pronecl") && table[2].starts_with("finetune"));
    for name in &order {
        let csv = std::fs::read_to_string(emb.join(format!("{name}.csv"))).unwrap();
        // 3 subjects x 6 test trials, plus 3 prototypes for the prototype method.
        let protos = if name.starts_with("pronecl") { 3 } else { 0 };
        assert_eq!(csv.lines().count(), 1 + 18 + protos, "{name}");
    }
}

#[test]
fn manifest_and_sessions_sources() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path());
    cmd_synth(&cfg, &dir.path().join("s1")).unwrap();
    let other = write_config(
        dir.path(),
        "synth2.toml",
        &small_config_toml(&["finetune"], &[1], &SMALL_SYNTHETIC.replace("seed = 7", "seed = 8")),
    );
    cmd_synth(&other, &dir.path().join("s2")).unwrap();

    let manifest = write_config(
        dir.path(),
        "manifest.toml",
        &small_config_toml(&["finetune"], &[1], "[data]\nmanifest = \"s1/manifest.toml\""),
    );
    let summary = cmd_run(&manifest, Some(&dir.path().join("m")), 1).unwrap();
    assert_eq!(summary.stats[0].runs, 1);

    let sessions = "[[data.sessions]]\ntrain = \"s1/subject_00.eegb\"\ntest = \"s2/subject_00.eegb\"\n\n\
                    [[data.sessions]]\ntrain = \"s1/subject_01.eegb\"\ntest = \"s2/subject_01.eegb\"";
    let path = write_config(dir.path(), "sessions.toml", &small_config_toml(&["finetune"], &[1], sessions));
    let summary = cmd_run(&path, Some(&dir.path().join("sess")), 1).unwrap();
    let report = json(&summary.reports[0]);
    assert_eq!(report["deterministic"]["result"]["subject_ids"], serde_json::json!([0, 1]));
    // The test split is the whole second session, 3 classes x 10 trials, so
    // every accuracy is a multiple of 1/30.
    let summary_acc = report["deterministic"]["result"]["acc"].as_f64().unwrap();
    let scaled = summary_acc * 2.0 * 30.0;
    assert!((scaled - scaled.round()).abs() < 1e-9, "{summary_acc}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| main_with_args(std::iter::once("pronecl").chain(args.iter().copied()));

    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["run", "--config", missing.to_str().unwrap(), "--out", "x"]), EXIT_CONFIG);

    let bad = write_config(dir.path(), "bad.toml", "methods = [\"finetune\"]\nseeds = [1]\n[data.synthetic]\nn_subject = 2\n");
    assert_eq!(run(&["run", "--config", bad.to_str().unwrap(), "--out", "x"]), EXIT_CONFIG);

    let no_file = write_config(
        dir.path(),
        "nofile.toml",
        &small_config_toml(&["finetune"], &[1], "[data]\nfiles = [\"absent.eegb\"]"),
    );
    let out = dir.path().join("o");
    assert_eq!(run(&["run", "--config", no_file.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_RUN_FAILURE);

    let ok = synth_config(dir.path());
    let s = dir.path().join("s");
    assert_eq!(run(&["synth", "--config", ok.to_str().unwrap(), "--out", s.to_str().unwrap()]), EXIT_OK);
    assert_eq!(run(&["gradcheck", "--scale", "1", "--seeds", "2"]), EXIT_OK);
    assert_eq!(run(&["report", dir.path().join("empty").to_str().unwrap()]), EXIT_RUN_FAILURE);
}
