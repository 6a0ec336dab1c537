//! Configuration-driven commands behind the `pronecl` binary.
//!
//! Exit codes: 0 success, 1 run failure, 2 configuration error, 3 gradient
//! check failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastream::{generate_subject_records, save_subject_file};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, TermResult, GRADCHECK_TOLERANCE};
use crate::losses::Method;
use crate::metrics::{aggregate, export_embeddings, AggregateStats};
use crate::netcore::{load_checkpoint, save_checkpoint, ArchConfig};
use crate::trainer::{run_continual, ContinualRunResult};

mod config;

pub use config::{load_manifest, DataConfig, ExperimentConfig, Manifest, SessionPair};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Scale of the default gradient-check network (515 parameters).
pub const DEFAULT_GRADCHECK_SCALE: usize = 2;
pub const DEFAULT_GRADCHECK_SEEDS: u64 = 10;

pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const RESOLVED_CONFIG_FILE: &str = "experiment.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// A command failure and the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(Error),
    #[error("{0}")]
    Run(Error),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_RUN_FAILURE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

/// Configuration problems exit with 2, everything else with 1.
fn classify(e: Error) -> CliError {
    match e {
        Error::Config { .. } => CliError::Config(e),
        other => CliError::Run(other),
    }
}

/// Wall-clock fields, kept apart from everything reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub phase_seconds: Vec<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub run: String,
    pub seed: u64,
    pub result: ContinualRunResult,
}

/// One `<method>_seed<seed>.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub deterministic: RunSection,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSection {
    pub runs: Vec<String>,
    pub methods: Vec<AggregateStats>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub deterministic: AggregateSection,
    pub timing: Timing,
}

pub fn run_name(method: Method, seed: u64) -> String {
    format!("{method}_seed{seed}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write one `EEGB` file per synthetic subject plus a manifest listing them in
/// stream order. Returns the subject file paths.
pub fn cmd_synth(config_path: &Path, out_dir: &Path) -> std::result::Result<Vec<PathBuf>, CliError> {
    let cfg = ExperimentConfig::load(config_path).map_err(CliError::Config)?;
    let stream_cfg = cfg
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::Config(Error::config("data.synthetic", "synth needs a synthetic data section")))?;
    let records = generate_subject_records(stream_cfg).map_err(classify)?;
    create_dir(out_dir).map_err(CliError::Run)?;
    let mut files = Vec::with_capacity(records.len());
    let mut names = Vec::with_capacity(records.len());
    for rec in &records {
        let name = format!("subject_{:02}.eegb", rec.subject_id);
        let path = out_dir.join(&name);
        save_subject_file(rec, &path).map_err(CliError::Run)?;
        files.push(path);
        names.push(PathBuf::from(name));
    }
    let manifest = Manifest {
        files: names,
        test_fraction: stream_cfg.test_fraction,
        split_seed: stream_cfg.seed,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, toml::to_string(&manifest).expect("manifest serializes"))
        .map_err(|e| CliError::Run(Error::io(&path, e)))?;
    Ok(files)
}

/// Outcome of `run`: report paths and the runs that failed.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub reports: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub failures: Vec<RunFailure>,
    pub stats: Vec<AggregateStats>,
}

/// Architecture with input dimensions taken from the stream where the config
/// leaves them at 0.
fn arch_for(cfg: &ArchConfig, n_channels: usize, n_samples: usize, n_classes: usize) -> ArchConfig {
    let pick = |v: usize, d: usize| if v == 0 { d } else { v };
    ArchConfig {
        n_channels: pick(cfg.n_channels, n_channels),
        n_samples: pick(cfg.n_samples, n_samples),
        n_classes: pick(cfg.n_classes, n_classes),
        ..cfg.clone()
    }
}

/// Every (method, seed) run of the config. The stream is shared; the seed
/// drives initialization, dropout, shuffling and the validation split.
pub fn cmd_run(config_path: &Path, out_dir: Option<&Path>, jobs: usize) -> std::result::Result<RunSummary, CliError> {
    let cfg = ExperimentConfig::load(config_path).map_err(CliError::Config)?;
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Config(Error::config("out_dir", "no output directory (set out_dir or pass --out)")))?;
    run_experiment(&cfg, &out_dir, jobs)
}

pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> std::result::Result<RunSummary, CliError> {
    cfg.validate().map_err(CliError::Config)?;
    let started = Instant::now();
    let stream = cfg.data.load_stream().map_err(classify)?;
    let first = &stream[0];
    let arch = arch_for(&cfg.arch, first.train.n_channels(), first.train.n_samples(), first.num_classes);
    arch.validate().map_err(CliError::Config)?;
    create_dir(out_dir).map_err(CliError::Run)?;
    std::fs::write(out_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml_string())
        .map_err(|e| CliError::Run(Error::io(out_dir.join(RESOLVED_CONFIG_FILE), e)))?;

    let mut plan = Vec::new();
    for &method in &cfg.methods {
        let spec = cfg.spec(method).map_err(CliError::Config)?;
        for &seed in &cfg.seeds {
            plan.push((method, seed, spec));
        }
    }
    let job = |&(method, seed, spec): &(Method, u64, crate::losses::LossSpec)| {
        let run_arch = ArchConfig { seed, ..arch.clone() };
        let train = crate::trainer::TrainConfig { seed, ..cfg.train.clone() };
        let t0 = Instant::now();
        let r = run_continual(method, stream.clone(), &run_arch, &train, &spec);
        (method, seed, r, t0.elapsed().as_secs_f64())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Run(Error::Argument(format!("thread pool: {e}"))))?;
    let outcomes: Vec<_> = pool.install(|| plan.par_iter().map(job).collect());

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut names = Vec::new();
    let mut by_method: Vec<(Method, Vec<ContinualRunResult>)> = Vec::new();
    for (method, seed, outcome, seconds) in outcomes {
        let name = run_name(method, seed);
        match outcome {
            Ok(mut result) => {
                if let Some(model) = result.final_model.take() {
                    save_checkpoint(&model, &out_dir.join(format!("{name}.pnck"))).map_err(CliError::Run)?;
                }
                let report = RunReport {
                    timing: Timing {
                        phase_seconds: std::mem::take(&mut result.phase_seconds),
                        total_seconds: seconds,
                    },
                    deterministic: RunSection {
                        run: name.clone(),
                        seed,
                        result,
                    },
                };
                let path = out_dir.join(format!("{name}.json"));
                write_json(&path, &report).map_err(CliError::Run)?;
                reports.push(path);
                names.push(name);
                match by_method.iter_mut().find(|(m, _)| *m == method) {
                    Some((_, runs)) => runs.push(report.deterministic.result),
                    None => by_method.push((method, vec![report.deterministic.result])),
                }
            }
            Err(e) => failures.push(RunFailure {
                run: name,
                error: e.to_string(),
            }),
        }
    }
    let stats = by_method
        .iter()
        .map(|(_, runs)| aggregate(runs))
        .collect::<Result<Vec<_>>>()
        .map_err(CliError::Run)?;
    let agg = AggregateReport {
        deterministic: AggregateSection {
            runs: names,
            methods: stats.clone(),
            failures: failures.clone(),
        },
        timing: Timing {
            phase_seconds: Vec::new(),
            total_seconds: started.elapsed().as_secs_f64(),
        },
    };
    let aggregate_path = out_dir.join(AGGREGATE_FILE);
    write_json(&aggregate_path, &agg).map_err(CliError::Run)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        reports,
        aggregate: aggregate_path,
        failures,
        stats,
    })
}

#[derive(Debug, Clone)]
pub struct GradcheckSummary {
    pub param_count: usize,
    pub results: Vec<TermResult>,
    pub seconds: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    /// Worst result per loss configuration, in suite order.
    pub fn worst_per_config(&self) -> Vec<&TermResult> {
        let mut out: Vec<&TermResult> = Vec::new();
        for r in &self.results {
            match out.iter_mut().find(|w| w.config == r.config) {
                Some(w) if r.max_rel_error > w.max_rel_error => *w = r,
                Some(_) => {}
                None => out.push(r),
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "gradient check: {} parameters, tolerance {GRADCHECK_TOLERANCE:e}\n",
            self.param_count
        );
        for w in self.worst_per_config() {
            writeln!(
                s,
                "{:<13} max rel error {:.3e}  worst {} (seed {})  {}",
                w.config,
                w.max_rel_error,
                w.worst_param,
                w.seed,
                if w.passed { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        for r in self.results.iter().filter(|r| !r.passed) {
            writeln!(
                s,
                "breach: {} seed {} at {}: analytic {:e} numeric {:e}",
                r.config, r.seed, r.worst_param, r.analytic, r.numeric
            )
            .unwrap();
        }
        writeln!(s, "{:.2} s", self.seconds).unwrap();
        s
    }
}

/// Finite-difference suite over every loss configuration on `tiny(scale)`.
pub fn cmd_gradcheck(scale: usize, seeds: u64) -> std::result::Result<GradcheckSummary, CliError> {
    let arch = ArchConfig::tiny(scale);
    let seeds: Vec<u64> = (0..seeds.max(1)).collect();
    let t0 = Instant::now();
    let results = run_suite(&arch, &seeds).map_err(classify)?;
    Ok(GradcheckSummary {
        param_count: arch.param_count(),
        results,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Run reports of a directory, sorted by method then seed.
pub fn load_run_reports(run_dir: &Path) -> Result<Vec<RunReport>> {
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != AGGREGATE_FILE))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Argument(format!("no run reports in {}", run_dir.display())));
    }
    let mut reports = paths.iter().map(|p| read_json::<RunReport>(p)).collect::<Result<Vec<_>>>()?;
    reports.sort_by_key(|r| (r.deterministic.result.method, r.deterministic.seed));
    Ok(reports)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Per-method ACC/BWT table (percent, mean (std)) followed by every run's
/// accuracy matrix.
pub fn render_report(reports: &[RunReport]) -> Result<String> {
    let mut groups: Vec<(Method, Vec<ContinualRunResult>)> = Vec::new();
    for r in reports {
        let res = &r.deterministic.result;
        match groups.iter_mut().find(|(m, _)| *m == res.method) {
            Some((_, v)) => v.push(res.clone()),
            None => groups.push((res.method, vec![res.clone()])),
        }
    }
    let mut s = String::new();
    writeln!(s, "{:<10} {:>4}  {:>18}  {:>18}", "method", "runs", "ACC % mean (std)", "BWT % mean (std)").unwrap();
    for (_, runs) in &groups {
        let a = aggregate(runs)?;
        let acc = format!("{} ({})", pct(Some(a.acc_mean)), pct(Some(a.acc_std)));
        let bwt = match (a.bwt_mean, a.bwt_std) {
            (Some(m), Some(sd)) => format!("{} ({})", pct(Some(m)), pct(Some(sd))),
            _ => "n/a".to_string(),
        };
        writeln!(s, "{:<10} {:>4}  {:>18}  {:>18}", a.method.to_string(), a.runs, acc, bwt).unwrap();
    }
    for r in reports {
        let res = &r.deterministic.result;
        writeln!(s, "\n{}  ACC {}  BWT {}", r.deterministic.run, pct(Some(res.acc)), pct(res.bwt)).unwrap();
        let m = &res.acc_matrix;
        for j in 0..m.n() {
            write!(s, "  after {:>3}:", res.subject_ids.get(j).copied().unwrap_or(j)).unwrap();
            for i in 0..=j {
                write!(s, " {:>6}", pct(m.get(j, i))).unwrap();
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// Print the run table; with `export_dir`, also write `<run>.csv` embeddings
/// for every run from its checkpoint.
pub fn cmd_report(run_dir: &Path, export_dir: Option<&Path>) -> std::result::Result<String, CliError> {
    let reports = load_run_reports(run_dir).map_err(CliError::Run)?;
    let text = render_report(&reports).map_err(CliError::Run)?;
    if let Some(dir) = export_dir {
        let cfg = ExperimentConfig::load(&run_dir.join(RESOLVED_CONFIG_FILE)).map_err(CliError::Config)?;
        let stream = cfg.data.load_stream().map_err(classify)?;
        create_dir(dir).map_err(CliError::Run)?;
        for r in &reports {
            let name = &r.deterministic.run;
            let model = load_checkpoint(&run_dir.join(format!("{name}.pnck"))).map_err(CliError::Run)?;
            export_embeddings(&model, &stream, r.deterministic.result.memory.as_ref(), &dir.join(format!("{name}.csv")))
                .map_err(CliError::Run)?;
        }
    }
    Ok(text)
}

#[derive(Debug, Parser)]
#[command(name = "pronecl", version, about = "Non-exemplar continual learning over EEG subject streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic stream of a config as EEGB files plus a manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (method, seed) pair of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare analytic and finite-difference gradients for every loss term.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_GRADCHECK_SCALE)]
        scale: usize,
        #[arg(long, default_value_t = DEFAULT_GRADCHECK_SEEDS)]
        seeds: u64,
    },
    /// Summarize a run directory.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        export_embeddings: Option<PathBuf>,
    },
}

/// Parse arguments, run the command, print its output; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Synth { config, out } => cmd_synth(&config, &out).map(|files| {
            println!("wrote {} subject files and {} to {}", files.len(), MANIFEST_FILE, out.display());
            EXIT_OK
        }),
        Command::Run { config, out, jobs } => cmd_run(&config, out.as_deref(), jobs).map(|s| {
            for st in &s.stats {
                println!(
                    "{:<10} runs {}  ACC {}  BWT {}",
                    st.method.to_string(),
                    st.runs,
                    pct(Some(st.acc_mean)),
                    pct(st.bwt_mean)
                );
            }
            for f in &s.failures {
                eprintln!("run {} failed: {}", f.run, f.error);
            }
            println!("reports in {}", s.out_dir.display());
            if s.failures.is_empty() {
                EXIT_OK
            } else {
                EXIT_RUN_FAILURE
            }
        }),
        Command::Gradcheck { scale, seeds } => cmd_gradcheck(scale, seeds).map(|s| {
            print!("{}", s.render());
            if s.passed() {
                EXIT_OK
            } else {
                EXIT_NUMERIC
            }
        }),
        Command::Report {
            run_dir,
            export_embeddings,
        } => cmd_report(&run_dir, export_embeddings.as_deref()).map(|text| {
            print!("{text}");
            EXIT_OK
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
