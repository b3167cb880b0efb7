//! Run configuration.
//!
//! One TOML file describes a whole run: the task stream, the expert
//! population, the network widths and the optimisation settings. The seed
//! is explicit and mandatory — there is no wall-clock or OS entropy
//! anywhere, so a config file plus the binary version pins every byte of
//! the output. A resolved copy (defaults filled in, CLI overrides applied)
//! is written next to the run artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actors::{load_instance_stream, AiAccuracyProfile, SyntheticTaskSpec};
use crate::baselines::PolicySpec;
use crate::env::{EpisodeConfig, FatigueSource, InstanceSource};
use crate::error::{Error, Result};
use crate::fatigue::{load_preset_file, presets, FatigueParams};
use crate::net::NetConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Policy to evaluate (eval subcommand); training always produces
    /// the learned policy.
    #[serde(default)]
    pub policy: Option<PolicySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub class_count: usize,
    pub feature_dim: usize,
    pub episode_length: u32,
    pub profile: AiAccuracyProfile,
    pub difficulty_noise: f64,
    pub cluster_spread: f64,
    /// Optional fixed instance file; when set, episodes sample from it
    /// instead of the synthetic generator.
    pub instances: Option<PathBuf>,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            class_count: 10,
            feature_dim: 8,
            episode_length: 100,
            profile: AiAccuracyProfile::DifficultyLinear { easy: 0.95, hard: 0.35 },
            difficulty_noise: 0.1,
            cluster_spread: 1.0,
            instances: None,
        }
    }
}

/// Expert population: exactly one of `preset` (builtin name, or a name in
/// `file` when that is set) or `fixed` (an inline parameter tuple).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FatigueSection {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub fixed: Option<FatigueParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub encoder_dim: usize,
    pub workload_embed_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden_dim: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            encoder_dim: 64,
            workload_embed_dim: 8,
            hidden_dim: 64,
            head_hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub episodes_per_seed: u64,
    pub coverage_targets: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seeds: vec![101, 102, 103],
            episodes_per_seed: 20,
            coverage_targets: vec![0.2, 0.4, 0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub fatigue: FatigueSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.task.class_count < 2 {
            return Err(Error::Config("task.class_count must be >= 2".into()));
        }
        if self.task.feature_dim < 2 {
            return Err(Error::Config("task.feature_dim must be >= 2".into()));
        }
        if self.task.episode_length < 1 {
            return Err(Error::Config("task.episode_length must be >= 1".into()));
        }
        match (&self.fatigue.preset, &self.fatigue.fixed) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "fatigue: set either a preset or fixed parameters, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "fatigue: a preset name or fixed parameters are required".into(),
                ))
            }
            _ => {}
        }
        if self.fatigue.file.is_some() && self.fatigue.preset.is_none() {
            return Err(Error::Config(
                "fatigue.file needs fatigue.preset to pick an entry".into(),
            ));
        }
        if let Some(fixed) = &self.fatigue.fixed {
            fixed.validate()?;
        }
        if self.eval.seeds.is_empty() || self.eval.episodes_per_seed == 0 {
            return Err(Error::Config("eval needs at least one seed and episode".into()));
        }
        for t in &self.eval.coverage_targets {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Config(format!("coverage target {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn fatigue_source(&self) -> Result<FatigueSource> {
        if let Some(fixed) = &self.fatigue.fixed {
            return Ok(FatigueSource::Fixed(*fixed));
        }
        let name = self.fatigue.preset.as_deref().expect("validated");
        let ranges = match &self.fatigue.file {
            Some(file) => {
                let table = load_preset_file(file)?;
                table.get(name).cloned().ok_or_else(|| {
                    Error::Config(format!("preset '{name}' not found in {}", file.display()))
                })?
            }
            None => presets::by_name(name)?,
        };
        Ok(FatigueSource::Ranges(ranges))
    }

    /// Materialise the episode configuration, loading the instance file if
    /// one is configured.
    pub fn episode_config(&self) -> Result<EpisodeConfig> {
        let source = match &self.task.instances {
            Some(path) => {
                let instances = load_instance_stream(path, self.task.class_count)?;
                if let Some(first) = instances.first() {
                    if first.features.len() != self.task.feature_dim {
                        return Err(Error::Config(format!(
                            "{}: feature width {} does not match task.feature_dim {}",
                            path.display(),
                            first.features.len(),
                            self.task.feature_dim
                        )));
                    }
                }
                InstanceSource::Stream {
                    instances: Arc::new(instances),
                    class_count: self.task.class_count,
                }
            }
            None => InstanceSource::Synthetic(SyntheticTaskSpec {
                class_count: self.task.class_count,
                feature_dim: self.task.feature_dim,
                profile: self.task.profile,
                episode_length: self.task.episode_length,
                difficulty_noise: self.task.difficulty_noise,
                cluster_spread: self.task.cluster_spread,
            }),
        };
        let cfg = EpisodeConfig {
            length: self.task.episode_length,
            fatigue: self.fatigue_source()?,
            source,
            seed: self.run.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            feature_dim: self.task.feature_dim,
            encoder_dim: self.net.encoder_dim,
            workload_embed_dim: self.net.workload_embed_dim,
            hidden_dim: self.net.hidden_dim,
            head_hidden_dim: self.net.head_hidden_dim,
        }
    }

    /// Write the fully resolved configuration (defaults and overrides baked
    /// in) next to the run artifacts.
    pub fn save_resolved(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
