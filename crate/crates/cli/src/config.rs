//! Pipeline configuration: a TOML file with `[scatter]`, `[net]`, `[train]`
//! and `[synth]` sections. Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use somnoscat::bilstm::{NetworkConfig, TrainConfig};
use somnoscat::features::FeatureSet;
use somnoscat::scattering::ScatterConfig;

use crate::error::{CliError, CliResult};

/// Environment variable consulted when neither a flag nor the config file sets the data directory.
pub const DATA_DIR_ENV: &str = "SOMNOSCAT_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_dir: Option<String>,
    pub seed: u64,
    pub feature_set: String,
    /// Worker threads for record-level work; 0 uses every core.
    pub jobs: usize,
    pub scatter: ScatterSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterSection {
    pub decimate: usize,
    pub target_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub layers: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
    pub unidirectional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub decay_every: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub batch_subjects: usize,
    pub weight_non_arousal: f64,
    pub weight_target: f64,
    pub restarts: usize,
    /// Cross-validation folds; 0 or 1 trains a single model on every record.
    pub folds: usize,
    pub pretrain_select: bool,
    pub select_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub records: usize,
    pub duration_s: f64,
    pub target_len_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: None,
            seed: 0,
            feature_set: FeatureSet::All465.to_string(),
            jobs: 0,
            scatter: ScatterSection::default(),
            net: NetSection::default(),
            train: TrainSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl Default for ScatterSection {
    fn default() -> Self {
        let c = ScatterConfig::default();
        ScatterSection {
            decimate: c.decimate,
            target_dim: c.target_dim,
        }
    }
}

impl Default for NetSection {
    fn default() -> Self {
        let c = NetworkConfig::standard(1);
        NetSection {
            layers: c.layers,
            hidden: c.hidden,
            leaky_slope: c.leaky_slope,
            unidirectional: !c.bidirectional,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSection {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            epochs: c.epochs,
            decay_every: c.decay_every,
            lr_decay: c.lr_decay,
            clip_norm: c.clip_norm,
            batch_subjects: c.batch_subjects,
            weight_non_arousal: c.class_weights[0],
            weight_target: c.class_weights[1],
            restarts: c.restarts,
            folds: 0,
            pretrain_select: false,
            select_k: 75,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            records: 20,
            duration_s: 60.0,
            target_len_s: 15.0,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn render(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Flag, then config file, then `SOMNOSCAT_DATA_DIR`, then the current directory.
    pub fn resolve_data_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data_dir.as_ref().map(PathBuf::from))
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn feature_set(&self) -> CliResult<FeatureSet> {
        self.feature_set
            .parse()
            .map_err(|e: somnoscat::Error| CliError::Config(e.to_string()))
    }

    pub fn scatter_config(&self) -> CliResult<ScatterConfig> {
        let c = ScatterConfig {
            decimate: self.scatter.decimate,
            target_dim: self.scatter.target_dim,
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    /// Network shape; the input width is fixed later from the data.
    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            input_dim: 1,
            layers: self.net.layers,
            hidden: self.net.hidden,
            leaky_slope: self.net.leaky_slope,
            bidirectional: !self.net.unidirectional,
        }
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let t = &self.train;
        let c = TrainConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            epochs: t.epochs,
            decay_every: t.decay_every,
            lr_decay: t.lr_decay,
            clip_norm: t.clip_norm,
            batch_subjects: t.batch_subjects,
            class_weights: [t.weight_non_arousal, t.weight_target],
            seed: self.seed,
            restarts: t.restarts,
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let net = NetworkConfig {
            input_dim: 1,
            ..self.network_config()
        };
        net.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if t.pretrain_select && t.select_k == 0 {
            return Err(CliError::Config("train.select_k must be >= 1".into()));
        }
        Ok(c)
    }
}
