//! Run configuration: a TOML file with one section per module, then CLI
//! flags, then `key=value` overrides (applied last). Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{PsuError, Result};
use crate::grad::{SurrogateConfig, SurrogateKind};
use crate::kernel::{NeuronConfig, ResetMode};
use crate::net::{DatasetKind, DecodeMode, LossKind, NeuronKind, OptimizerKind, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// 32 or 64.
    pub precision: u32,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: 32,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronSection {
    pub tau: f64,
    pub v_th: f64,
    pub horizon: usize,
}

impl Default for NeuronSection {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_th: 1.0,
            horizon: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub kind: SurrogateKind,
    pub width: f64,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Atan,
            width: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub generator: DatasetKind,
    /// Spike-CSV training file; replaces the generator when set.
    pub csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub samples: usize,
    pub test_samples: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            generator: DatasetKind::TemporalXor,
            csv: None,
            test_csv: None,
            samples: 256,
            test_samples: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub neuron: NeuronKind,
    pub hidden: Vec<usize>,
    pub decode: DecodeMode,
    pub init_gain: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            neuron: NeuronKind::Psu,
            hidden: vec![32],
            decode: DecodeMode::RateSum,
            init_gain: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            loss: t.loss,
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: 50,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub horizons: Vec<usize>,
    pub neurons: Vec<NeuronKind>,
    pub widths: Vec<usize>,
    pub batch: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub parallel: bool,
    pub train_step: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            horizons: crate::bench::DEFAULT_HORIZONS.to_vec(),
            neurons: vec![NeuronKind::Psu, NeuronKind::Ipsu, NeuronKind::Rpsu],
            widths: vec![1024, 1024, 1024],
            batch: 1,
            repetitions: 10,
            warmup: 2,
            parallel: false,
            train_step: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Random instances per property.
    pub trials: usize,
    pub width: usize,
    pub gradient_instances: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            trials: 200,
            width: 8,
            gradient_instances: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    /// Defaults to `<out>/model.bin`.
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub neuron: NeuronSection,
    pub surrogate: SurrogateSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub bench: BenchSection,
    pub verify: VerifySection,
    pub stats: StatsSection,
}

impl RunConfig {
    /// Loads `path` (or defaults), then applies `overrides` of the form
    /// `section.key=value` or a bare `key=value` when the key is unambiguous.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PsuError::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| {
                    PsuError::Config(format!("{}: {}", p.display(), e.to_string().trim()))
                })?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PsuError::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.neuron_config()?;
        SurrogateConfig::new(self.surrogate.kind, self.surrogate.width)?;
        if !matches!(self.run.precision, 32 | 64) {
            return Err(PsuError::Config(format!(
                "precision must be 32 or 64, got {}",
                self.run.precision
            )));
        }
        if self.run.workers == 0 {
            return Err(PsuError::Config("workers must be >= 1".into()));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn neuron_config(&self) -> Result<NeuronConfig> {
        NeuronConfig::new(
            self.neuron.tau,
            self.neuron.v_th,
            ResetMode::Soft,
            self.neuron.horizon,
        )
    }

    pub fn surrogate_config(&self) -> SurrogateConfig {
        SurrogateConfig {
            kind: self.surrogate.kind,
            width: self.surrogate.width,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.train.loss,
            optimizer: self.train.optimizer,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.run.seed,
            surrogate: self.surrogate_config(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 8 bytes of the SHA-256 of the resolved config.
    pub fn hash_bytes(&self) -> [u8; 8] {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].try_into().expect("digest has 32 bytes")
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash_bytes())
    }
}

/// Parses a raw override value as TOML, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| PsuError::Config(format!("override `{spec}` is not KEY=VALUE")))?;
    let key = key.trim();
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (s.to_string(), f.to_string()),
        None => (resolve_section(key)?, key.to_string()),
    };
    let entry = table
        .entry(section.clone())
        .or_insert_with(|| Value::Table(toml::Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(field, parse_value(raw.trim()));
            Ok(())
        }
        _ => Err(PsuError::Config(format!("`{section}` is not a section"))),
    }
}

/// Finds the unique section of the default config that has `key`.
fn resolve_section(key: &str) -> Result<String> {
    let defaults = Value::try_from(RunConfig::default()).expect("defaults serialize");
    let mut sections: Vec<String> = Vec::new();
    if let Value::Table(top) = &defaults {
        for (name, v) in top {
            if let Value::Table(t) = v {
                if t.contains_key(key) || optional_keys(name).contains(&key) {
                    sections.push(name.clone());
                }
            }
        }
    }
    match sections.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(PsuError::Config(format!("unknown config key `{key}`"))),
        many => Err(PsuError::Config(format!(
            "key `{key}` is ambiguous, qualify it with one of: {}",
            many.join(", ")
        ))),
    }
}

/// `Option` fields are omitted when serializing defaults.
fn optional_keys(section: &str) -> &'static [&'static str] {
    match section {
        "data" => &["csv", "test_csv"],
        "stats" => &["model"],
        _ => &[],
    }
}
