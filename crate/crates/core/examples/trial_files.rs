//! Write subjects as EEGB files, list them in a manifest and train from disk,
//! the same path user-converted recordings take.

use pronecl::cli::{run_experiment, DataConfig, ExperimentConfig, Manifest};
use pronecl::datastream::{generate_subject_records, save_subject_file, StreamConfig};
use pronecl::losses::Method;
use pronecl::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("pronecl-trial-files");
    std::fs::create_dir_all(&dir)?;
    let stream_cfg = StreamConfig {
        n_subjects: 3,
        ..StreamConfig::default()
    };
    let mut files = Vec::new();
    for rec in generate_subject_records(&stream_cfg)? {
        let path = dir.join(format!("subject_{:02}.eegb", rec.subject_id));
        save_subject_file(&rec, &path)?;
        files.push(path);
    }
    let manifest = dir.join("manifest.toml");
    std::fs::write(
        &manifest,
        toml::to_string(&Manifest {
            files,
            test_fraction: 0.2,
            split_seed: 0,
        })?,
    )?;

    let cfg = ExperimentConfig {
        methods: vec![Method::Finetune, Method::Pronecl],
        seeds: vec![1, 2],
        data: DataConfig {
            manifest: Some(manifest),
            ..DataConfig::default()
        },
        arch: Default::default(),
        train: TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        },
        loss: Default::default(),
        out_dir: None,
    };
    let summary = run_experiment(&cfg, &dir.join("runs"), 2).map_err(|e| e.to_string())?;
    for s in &summary.stats {
        println!("{}: ACC {:.3} BWT {:+.3} over {} runs", s.method, s.acc_mean, s.bwt_mean.unwrap_or(0.0), s.runs);
    }
    println!("reports in {}", summary.out_dir.display());
    Ok(())
}
