//! Run configuration: JSON file values, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use psvh_core::datagen::DatasetConfig;
use psvh_core::eval::EvalConfig;
use psvh_core::psvh::GradcheckCase;
use psvh_core::refine::{PoseFitConfig, RefinerConfig};
use serde::{Deserialize, Serialize};

use crate::exit::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainPhase {
    /// Train against hulls from ground-truth silhouettes and poses.
    Gt,
    /// Adapt to hulls from estimated silhouettes and poses.
    Noisy,
    /// Ground-truth phase followed by the noisy phase.
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub phase: TrainPhase,
    /// Epochs of the noisy-hull phase; the ground-truth phase uses
    /// `refiner.epochs`.
    pub noisy_epochs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { phase: TrainPhase::Both, noisy_epochs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    /// Dataset directory read by `train` and `eval`.
    pub data: Option<PathBuf>,
    /// Refiner parameter file read by `refine` and `eval`.
    pub model: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub refiner: RefinerConfig,
    pub train: TrainSettings,
    pub eval: EvalConfig,
    pub posefit: PoseFitConfig,
    pub gradcheck: GradcheckCase,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display())).map_err(usage)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.out, &mut cfg.data, &mut cfg.model].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies the global flags and propagates the seed to every section.
    pub fn apply_globals(&mut self, seed: Option<u64>, threads: Option<usize>, out: Option<PathBuf>) {
        if seed.is_some() {
            self.seed = seed;
        }
        if threads.is_some() {
            self.threads = threads;
        }
        if out.is_some() {
            self.out = out;
        }
        if let Some(s) = self.seed {
            self.dataset.seed = s;
            self.refiner.seed = s;
            self.eval.seed = s;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
