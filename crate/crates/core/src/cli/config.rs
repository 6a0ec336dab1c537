//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datastream::{
    generate_synthetic_stream, load_subject_file, split_seed, standardize, StreamConfig, SubjectDataset,
};
use crate::error::{Error, Result};
use crate::losses::{LossSpec, LossWeights, Method};
use crate::netcore::ArchConfig;
use crate::trainer::TrainConfig;

fn default_test_fraction() -> f64 {
    0.2
}

/// A pair of recordings of one subject: train on the first, test on the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPair {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Where the subject stream comes from. Exactly one of `synthetic`, `files`,
/// `sessions` or `manifest` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<StreamConfig>,
    /// Whole-subject `EEGB` files in stream order, split with `test_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sessions: Option<Vec<SessionPair>>,
    /// A manifest written by `synth`; read as a `files` source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Per-channel z-scoring of every split on load.
    #[serde(default)]
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: None,
            files: None,
            sessions: None,
            manifest: None,
            test_fraction: default_test_fraction(),
            split_seed: 0,
            standardize: false,
        }
    }
}

/// Contents of a `synth` manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub files: Vec<PathBuf>,
    pub test_fraction: f64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::config(origin.display().to_string(), e.to_string().trim_end()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parse and validate a config file. Relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = parse_toml(&read_text(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve_paths(base);
        if let Some(out) = &cfg.out_dir {
            cfg.out_dir = Some(resolve(base, out));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text, Path::new("<config>"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(Error::config("methods", "a method is listed twice"));
        }
        let mut s = self.seeds.clone();
        s.sort();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::config("seeds", "a seed is listed twice"));
        }
        self.data.validate()?;
        self.train.validate()?;
        for method in &self.methods {
            LossSpec::new(*method, self.loss)?;
        }
        Ok(())
    }

    pub fn spec(&self, method: Method) -> Result<LossSpec> {
        LossSpec::new(method, self.loss)
    }
}

impl DataConfig {
    fn sources(&self) -> usize {
        usize::from(self.synthetic.is_some())
            + usize::from(self.files.is_some())
            + usize::from(self.sessions.is_some())
            + usize::from(self.manifest.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        match self.sources() {
            1 => {}
            0 => return Err(Error::config("data", "set one of synthetic, files, sessions or manifest")),
            _ => return Err(Error::config("data", "synthetic, files, sessions and manifest are mutually exclusive")),
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        if matches!(&self.files, Some(f) if f.is_empty()) || matches!(&self.sessions, Some(s) if s.is_empty()) {
            return Err(Error::config("data", "the file list is empty"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("data.test_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(files) = &mut self.files {
            files.iter_mut().for_each(|f| *f = resolve(base, f));
        }
        if let Some(sessions) = &mut self.sessions {
            for s in sessions {
                s.train = resolve(base, &s.train);
                s.test = resolve(base, &s.test);
            }
        }
        if let Some(m) = &mut self.manifest {
            *m = resolve(base, m);
        }
    }

    /// Materialize the subject stream.
    pub fn load_stream(&self) -> Result<Vec<SubjectDataset>> {
        self.validate()?;
        let stream = if let Some(s) = &self.synthetic {
            generate_synthetic_stream(s)?
        } else if let Some(files) = &self.files {
            files_stream(files, self.test_fraction, self.split_seed)?
        } else if let Some(path) = &self.manifest {
            let m = load_manifest(path)?;
            files_stream(&m.files, m.test_fraction, m.split_seed)?
        } else {
            let sessions = self.sessions.as_ref().expect("validated");
            sessions
                .iter()
                .map(|s| SubjectDataset::from_sessions(load_subject_file(&s.train)?, load_subject_file(&s.test)?))
                .collect::<Result<Vec<_>>>()?
        };
        if !self.standardize {
            return Ok(stream);
        }
        stream
            .into_iter()
            .map(|d| SubjectDataset::new(d.subject_id, standardize(&d.train), standardize(&d.test), d.num_classes))
            .collect()
    }
}

fn files_stream(files: &[PathBuf], test_fraction: f64, seed: u64) -> Result<Vec<SubjectDataset>> {
    files
        .iter()
        .enumerate()
        .map(|(k, f)| SubjectDataset::from_record(load_subject_file(f)?, test_fraction, split_seed(seed, k)))
        .collect()
}

/// Read a manifest; its file paths are resolved against its directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut m: Manifest = parse_toml(&read_text(path)?, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    m.files.iter_mut().for_each(|f| *f = resolve(base, f));
    Ok(m)
}
