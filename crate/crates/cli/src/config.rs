use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use maskpool::data::{read_classes, Manifest, Task};
use maskpool::dsp::{StftParams, DEFAULT_HOP_MS, DEFAULT_WINDOW_MS};
use maskpool::layers::{DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use maskpool::model::NetworkConfig;
use maskpool::optimize::TrainConfig;
use serde::{Deserialize, Serialize};

/// Architecture settings; input width and class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub channels: usize,
    pub num_temporal_layers: usize,
    pub kernel_time: usize,
    pub stride_time: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub bn_mask_stats: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            channels: 256,
            num_temporal_layers: 3,
            kernel_time: 3,
            stride_time: 2,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_epsilon: DEFAULT_EPSILON,
            bn_mask_stats: false,
        }
    }
}

/// Everything a run needs. Relative paths resolve against the config file's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Task,
    pub manifest: PathBuf,
    pub classes: PathBuf,
    /// Defaults to 4 for scene classification and 5 for tagging.
    pub num_folds: Option<usize>,
    /// Defaults to 44100 for scene classification and 16000 for tagging.
    pub sample_rate: Option<u32>,
    /// Used only when the classes file is absent: 15 scenes or 7 tags.
    pub num_classes: Option<usize>,
    pub feature_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub network: NetworkSection,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Scene,
            manifest: "manifest.csv".into(),
            classes: "classes.txt".into(),
            num_folds: None,
            sample_rate: None,
            num_classes: None,
            feature_dir: "features".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
            window_ms: DEFAULT_WINDOW_MS,
            hop_ms: DEFAULT_HOP_MS,
            network: NetworkSection::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, task: Option<Task>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut cfg: RunConfig =
                    serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new(""));
                for field in [
                    &mut cfg.manifest,
                    &mut cfg.classes,
                    &mut cfg.feature_dir,
                    &mut cfg.checkpoint_dir,
                    &mut cfg.report_dir,
                ] {
                    if field.is_relative() {
                        *field = base.join(&*field);
                    }
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(t) = task {
            cfg.task = t;
        }
        Ok(cfg)
    }

    /// Fills every optional field with its effective value.
    pub fn resolve(mut self) -> Result<Self> {
        self.num_folds.get_or_insert(self.task.default_folds());
        self.sample_rate.get_or_insert(match self.task {
            Task::Scene => 44_100,
            Task::Tagging => 16_000,
        });
        if self.classes.exists() {
            self.num_classes = Some(read_classes(&self.classes)?.len());
        }
        self.num_classes.get_or_insert(match self.task {
            Task::Scene => 15,
            Task::Tagging => 7,
        });
        Ok(self)
    }

    pub fn folds(&self) -> usize {
        self.num_folds.unwrap_or(self.task.default_folds())
    }

    pub fn stft(&self) -> StftParams {
        StftParams::from_ms(self.sample_rate.unwrap_or(16_000), self.window_ms, self.hop_ms)
    }

    pub fn network(&self) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            input_bins: self.stft().bins(),
            num_classes: self.num_classes.unwrap_or(1),
            head: self.task.head(),
            channels: n.channels,
            num_temporal_layers: n.num_temporal_layers,
            kernel_time: n.kernel_time,
            stride_time: n.stride_time,
            bn_momentum: n.bn_momentum,
            bn_epsilon: n.bn_epsilon,
            bn_mask_stats: n.bn_mask_stats,
        }
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.manifest, &self.classes, self.task, self.folds())
            .with_context(|| format!("loading manifest {}", self.manifest.display()))
    }

    pub fn standardizer_path(&self, fold: usize) -> PathBuf {
        self.feature_dir.join(format!("standardizer_fold{fold}.bin"))
    }

    pub fn checkpoint_path(&self, fold: usize) -> PathBuf {
        self.checkpoint_dir.join(format!("fold{fold}.mpnw"))
    }

    pub fn log_path(&self, fold: usize) -> PathBuf {
        self.checkpoint_dir.join(format!("fold{fold}.log.jsonl"))
    }

    /// Cache file for a clip: its manifest-relative path with a `.mpfc`
    /// extension, under the feature directory.
    pub fn cache_path(&self, wav: &Path) -> PathBuf {
        let base = self.manifest.parent().unwrap_or(Path::new(""));
        let rel = wav.strip_prefix(base).unwrap_or_else(|_| Path::new(wav.file_name().unwrap_or_default()));
        self.feature_dir.join(rel).with_extension("mpfc")
    }
}
