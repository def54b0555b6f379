//! Flat `key=value` run configuration.
//!
//! Every experiment is fully specified by a config plus a seed. Unknown keys
//! are rejected so a typo cannot silently fall back to a default. Lines that
//! are empty or start with `#` are skipped.

use std::path::PathBuf;
use std::str::FromStr;

use crate::compress::CompressorKind;
use crate::error::{Error, Result};
use crate::model::AdamConfig;
use crate::pipeline::{BatchMode, PipelineConfig};
use crate::replica::{PersistPolicy, PlusConfig};
use crate::sim::MtbfConvention;
use crate::tuner::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    LowDiff,
    Plus,
    NaiveDc,
    FullOnly,
}

impl FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowdiff" => Ok(RunMode::LowDiff),
            "plus" => Ok(RunMode::Plus),
            "naive-dc" => Ok(RunMode::NaiveDc),
            "full-only" => Ok(RunMode::FullOnly),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected lowdiff|plus|naive-dc|full-only)"
            ))),
        }
    }
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::LowDiff => "lowdiff",
            RunMode::Plus => "plus",
            RunMode::NaiveDc => "naive-dc",
            RunMode::FullOnly => "full-only",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    // workload
    pub psi: usize,
    pub layers: usize,
    pub workers: usize,
    pub seed: u64,
    // optimizer
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
    // pipeline
    pub mode: RunMode,
    pub iterations: u64,
    pub ratio: f64,
    pub compressor: CompressorKind,
    pub full_interval: u64,
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub queue_capacity: usize,
    pub async_full: bool,
    pub fsync: bool,
    // replica mode
    pub persist_interval: u64,
    pub pool_width: usize,
    // cost model
    pub gpus: f64,
    pub mtbf_hours: f64,
    pub write_bandwidth: f64,
    pub full_size: f64,
    pub total_hours: f64,
    pub full_load_hours: f64,
    pub diff_merge_hours: f64,
    pub iter_seconds: f64,
    // simulator
    pub horizon_hours: f64,
    pub software_fraction: f64,
    pub seeds: u64,
    pub mtbf_list: Vec<f64>,
    pub gpu_list: Vec<f64>,
    pub policies: Vec<String>,
    pub mtbf_convention: MtbfConvention,
    // output
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sp = SystemParams { mtbf_hours: 1.0, ..crate::sim::comparison_params() };
        Self {
            psi: 1000,
            layers: 4,
            workers: 4,
            seed: 1,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            bias_correction: true,
            mode: RunMode::LowDiff,
            iterations: 100,
            ratio: 0.01,
            compressor: CompressorKind::TopK,
            full_interval: 50,
            batch_size: 4,
            batch_mode: BatchMode::RecordBatched,
            queue_capacity: 16,
            async_full: false,
            fsync: false,
            persist_interval: 3,
            pool_width: 2,
            gpus: sp.gpus,
            mtbf_hours: sp.mtbf_hours,
            write_bandwidth: sp.write_bandwidth,
            full_size: sp.full_size,
            total_hours: sp.total_hours,
            full_load_hours: sp.full_load_hours,
            diff_merge_hours: sp.diff_merge_hours,
            iter_seconds: sp.iter_seconds,
            horizon_hours: 50.0,
            software_fraction: 0.5,
            seeds: 200,
            mtbf_list: vec![0.5, 1.0, 2.0],
            gpu_list: vec![8.0, 16.0, 32.0, 64.0],
            policies: vec![
                "lowdiff".into(),
                "lowdiff-plus".into(),
                "gemini-like".into(),
                "checkfreq-like".into(),
            ],
            mtbf_convention: MtbfConvention::PerCluster,
            out: PathBuf::from("lowdiff-out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key '{key}': expected a boolean, got '{value}'"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

impl RunConfig {
    pub fn from_str_config(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_config(&text)
    }

    /// Set one field from its textual form; unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "psi" => self.psi = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "bias_correction" => self.bias_correction = parse_bool(key, value)?,
            "mode" => self.mode = value.parse()?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "ratio" => self.ratio = parse_num(key, value)?,
            "compressor" => {
                self.compressor = if value == "topk" {
                    CompressorKind::TopK
                } else if let Some(seed) = value.strip_prefix("randomk:") {
                    CompressorKind::RandomK(parse_num(key, seed)?)
                } else {
                    return Err(Error::Config(format!(
                        "key 'compressor': expected topk or randomk:<seed>, got '{value}'"
                    )));
                }
            }
            "full_interval" => self.full_interval = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "batch_mode" => {
                self.batch_mode = match value {
                    "record" => BatchMode::RecordBatched,
                    "accumulate" => BatchMode::Accumulated,
                    _ => {
                        return Err(Error::Config(format!(
                            "key 'batch_mode': expected record or accumulate, got '{value}'"
                        )))
                    }
                }
            }
            "queue_capacity" => self.queue_capacity = parse_num(key, value)?,
            "async_full" => self.async_full = parse_bool(key, value)?,
            "fsync" => self.fsync = parse_bool(key, value)?,
            "persist_interval" => self.persist_interval = parse_num(key, value)?,
            "pool_width" => self.pool_width = parse_num(key, value)?,
            "gpus" => self.gpus = parse_num(key, value)?,
            "mtbf_hours" => self.mtbf_hours = parse_num(key, value)?,
            "write_bandwidth" => self.write_bandwidth = parse_num(key, value)?,
            "full_size" => self.full_size = parse_num(key, value)?,
            "total_hours" => self.total_hours = parse_num(key, value)?,
            "full_load_hours" => self.full_load_hours = parse_num(key, value)?,
            "diff_merge_hours" => self.diff_merge_hours = parse_num(key, value)?,
            "iter_seconds" => self.iter_seconds = parse_num(key, value)?,
            "horizon_hours" => self.horizon_hours = parse_num(key, value)?,
            "software_fraction" => self.software_fraction = parse_num(key, value)?,
            "seeds" => self.seeds = parse_num(key, value)?,
            "mtbf_list" => self.mtbf_list = parse_list(key, value)?,
            "gpu_list" => self.gpu_list = parse_list(key, value)?,
            "policies" => {
                self.policies = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "mtbf_convention" => {
                self.mtbf_convention = match value {
                    "per-cluster" => MtbfConvention::PerCluster,
                    "per-gpu" => MtbfConvention::PerGpu,
                    _ => {
                        return Err(Error::Config(format!(
                            "key 'mtbf_convention': expected per-cluster or per-gpu, got '{value}'"
                        )))
                    }
                }
            }
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Seeds for the workload streams, derived from the run seed.
    pub fn design_seed(&self) -> u64 {
        self.seed.wrapping_mul(2).wrapping_add(1)
    }

    pub fn target_seed(&self) -> u64 {
        self.seed.wrapping_mul(2).wrapping_add(2)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            bias_correction: self.bias_correction,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            total_iterations: self.iterations,
            full_interval: self.full_interval,
            batch_size: self.batch_size,
            batch_mode: self.batch_mode,
            queue_capacity: self.queue_capacity,
            ratio: self.ratio,
            compressor: self.compressor.clone(),
            async_full: self.async_full,
        }
    }

    pub fn plus(&self) -> PlusConfig {
        PlusConfig {
            total_iterations: self.iterations,
            queue_capacity: self.queue_capacity.max(self.layers),
            pool_width: self.pool_width,
            persist: Some(PersistPolicy::EveryK(self.persist_interval)),
        }
    }

    pub fn system_params(&self) -> SystemParams {
        SystemParams {
            gpus: self.gpus,
            mtbf_hours: self.mtbf_hours,
            write_bandwidth: self.write_bandwidth,
            full_size: self.full_size,
            total_hours: self.total_hours,
            full_load_hours: self.full_load_hours,
            diff_merge_hours: self.diff_merge_hours,
            iter_seconds: self.iter_seconds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys_and_comments() {
        let cfg = RunConfig::from_str_config(
            "# comment\n\
             psi=256\n\
             mode=plus\n\
             ratio = 0.05\n\
             mtbf_list = 0.5, 1, 2\n\
             compressor=randomk:9\n",
        )
        .unwrap();
        assert_eq!(cfg.psi, 256);
        assert_eq!(cfg.mode, RunMode::Plus);
        assert_eq!(cfg.ratio, 0.05);
        assert_eq!(cfg.mtbf_list, vec![0.5, 1.0, 2.0]);
        assert_eq!(cfg.compressor, CompressorKind::RandomK(9));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_str_config("psii=3\n").is_err());
        assert!(RunConfig::from_str_config("psi=many\n").is_err());
        assert!(RunConfig::from_str_config("just a line\n").is_err());
        assert!(RunConfig::from_str_config("mode=fancy\n").is_err());
    }
}
