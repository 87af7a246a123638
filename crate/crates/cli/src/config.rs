use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use signbridge::corpus::SynthConfig;
use signbridge::evaluation::{LocalizeConfig, TIOU_THRESHOLDS};
use signbridge::extraction::ExtractionConfig;
use signbridge::memory::SourceTag;
use signbridge::training::{ModelConfig, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub source: SourceTag,
    /// Classes without mined news windows borrow aligned isolated clips.
    pub fallback: bool,
    /// When off, F stands in for F̂ wherever aligned features are needed.
    pub coarse_alignment: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            source: SourceTag::NewsAligned,
            fallback: false,
            coarse_alignment: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub localize: LocalizeConfig,
    /// Clips written by `dump-attention`.
    pub attention_clips: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: TIOU_THRESHOLDS.to_vec(),
            localize: LocalizeConfig::default(),
            attention_clips: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    /// When set, replaces every other seed in the file.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub extraction: ExtractionConfig,
    pub train_base: TrainConfig,
    pub train_joint: TrainConfig,
    pub train_full: TrainConfig,
    pub memory: MemoryConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            seed: None,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            extraction: ExtractionConfig::default(),
            train_base: TrainConfig::default(),
            train_joint: TrainConfig::default(),
            train_full: TrainConfig::default(),
            memory: MemoryConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Default < file < overrides. Each override is `dotted.key=value`, the
    /// value parsed as TOML and taken as a bare string when that fails.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.synth.seed = seed;
            cfg.train_base.seed = seed;
            cfg.train_joint.seed = seed;
            cfg.train_full.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.model.validate()?;
        self.extraction.validate()?;
        self.eval.localize.validate()?;
        for t in [&self.train_base, &self.train_joint, &self.train_full] {
            t.validate()?;
        }
        if self.eval.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::config("eval.thresholds must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Hash of the effective configuration, stable across runs.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), CliError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override {entry:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override {key:?}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
