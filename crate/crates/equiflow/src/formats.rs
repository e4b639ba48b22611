//! On-disk artifacts. Schemas are described in `docs/formats`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use equiflow_core::nn::{Model, Network, Topology};
use equiflow_core::toybench::Dataset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::experiment::EpochRow;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEMOS_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Trained parameters plus everything needed to rebuild the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub manifest: String,
    pub group_order: u32,
    pub config: RunConfig,
    pub topology: Topology,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(cfg: &RunConfig, model: &Model) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            manifest: MANIFEST_FILE.into(),
            group_order: cfg.u,
            config: cfg.clone(),
            topology: model.topology().clone(),
            params: model.params().to_vec(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(CliError::Config(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                ck.format_version
            )));
        }
        ck.config.validate()?;
        if ck.group_order != ck.config.u {
            return Err(CliError::Config(format!(
                "{}: group order {} disagrees with its config (u = {})",
                path.display(),
                ck.group_order,
                ck.config.u
            )));
        }
        Ok(ck)
    }

    pub fn model(&self) -> Result<Model, CliError> {
        Ok(Model::from_params(self.topology.clone(), self.params.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub env: String,
    pub u: u32,
    /// Observation history length.
    pub m: usize,
    pub n: usize,
    pub count: usize,
    pub demos: usize,
    pub demo_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoFile {
    pub format_version: u32,
    pub manifest: String,
    pub header: DemoHeader,
    pub data: Dataset,
}

impl DemoFile {
    pub fn new(cfg: &RunConfig, data: Dataset) -> Self {
        Self {
            format_version: DEMOS_VERSION,
            manifest: MANIFEST_FILE.into(),
            header: DemoHeader {
                env: cfg.env.clone(),
                u: cfg.u,
                m: cfg.history,
                n: cfg.n,
                count: data.len(),
                demos: cfg.demos,
                demo_noise: cfg.demo_noise,
                seed: cfg.seed,
            },
            data,
        }
    }

    /// Loads a demo file and checks it against the run configuration.
    pub fn load_for(path: &Path, cfg: &RunConfig) -> Result<Dataset, CliError> {
        let f: DemoFile = read_json(path)?;
        if f.format_version != DEMOS_VERSION {
            return Err(CliError::Config(format!("{}: unsupported demo file version", path.display())));
        }
        let h = &f.header;
        let mismatch = |what: &str| {
            CliError::Config(format!("{}: demo header `{what}` does not match the config", path.display()))
        };
        if h.env != cfg.env {
            return Err(mismatch("env"));
        }
        if h.m != cfg.history {
            return Err(mismatch("m"));
        }
        if h.n != cfg.n {
            return Err(mismatch("n"));
        }
        if h.count != f.data.len() {
            return Err(mismatch("count"));
        }
        Ok(f.data)
    }
}

/// Provenance of one command invocation. Timings live here so the other outputs stay
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub timing: serde_json::Map<String, serde_json::Value>,
}

/// Owns an output directory and the manifest describing it.
pub struct OutputDir {
    root: PathBuf,
    manifest: RunManifest,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl OutputDir {
    pub fn create(root: PathBuf, command: &str, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root,
            manifest: RunManifest {
                format_version: MANIFEST_VERSION,
                command: command.into(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                code_version: env!("CARGO_PKG_VERSION").into(),
                started_unix: unix_now(),
                finished_unix: 0.0,
                outputs: vec![],
                timing: Default::default(),
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn record(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.into());
        }
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let p = self.record(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    /// The header is written even when `rows` is empty.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, header: &[&str], rows: &[T]) -> Result<PathBuf, CliError> {
        let p = self.record(name)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(p)
    }

    /// CSV with an explicit header, for rows whose width is only known at runtime.
    pub fn write_table(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let p = self.record(name)?;
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(p)
    }

    pub fn add_timing(&mut self, key: &str, value: f64) {
        self.manifest.timing.insert(key.into(), value.into());
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.path(MANIFEST_FILE), text)?;
        Ok(self.manifest)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
