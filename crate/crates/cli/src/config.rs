//! TOML run configuration. Unknown keys are rejected everywhere and every
//! seed must be written out.

use std::path::{Path, PathBuf};

use retrac_core::attribution::Method;
use retrac_core::diffusion::make_schedule;
use retrac_core::io::{read_text, sha256_hex};
use retrac_core::lissa::LissaConfig;
use retrac_core::{DenoiserSpec, Error, NoiseSchedule, Result, SyntheticDatasetSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<SyntheticDatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<DenoiserSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<AttributeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub num_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.num_timesteps, self.beta_start, self.beta_end)
    }
}

/// Held-out samples drawn from the same distribution as the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetConfig {
    pub majority_count: usize,
    pub minority_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeConfig {
    /// Output directory of a `train` run.
    pub run: PathBuf,
    pub methods: Vec<Method>,
    #[serde(default = "default_n_t")]
    pub n_t: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    pub noise_seed: u64,
    /// Number of evenly spaced checkpoints to use.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Leading fraction of training steps whose checkpoints are skipped.
    #[serde(default = "default_skip")]
    pub skip_fraction: f64,
    pub tests: TestSetConfig,
    #[serde(default = "default_precision_k")]
    pub precision_k: Vec<usize>,
    #[serde(default = "default_outlier_k")]
    pub outlier_k: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lissa: Option<LissaConfig>,
}

fn default_n_t() -> usize {
    50
}
fn default_m() -> usize {
    2
}
fn default_checkpoints() -> usize {
    5
}
fn default_skip() -> f64 {
    0.1
}
fn default_precision_k() -> Vec<usize> {
    vec![10, 50]
}
fn default_outlier_k() -> Vec<usize> {
    vec![20, 40]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisKind {
    /// Distance from `t_max` versus norm rank.
    Correlation,
    /// Training-gradient norm against training timestep.
    NormProfile,
    /// Training timesteps replaced by `t_max` for low-influence samples.
    Manipulation,
    /// Overlap of top-k lists across score reports.
    Uniqueness,
    /// Spearman correlation between two score reports, per test.
    RankCorrelation,
    /// Attribution wall-clock at `n_t` against all timesteps.
    Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub kind: AnalysisKind,
    /// Output directory of a `train` run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<PathBuf>,
    /// Checkpoint step to analyze; defaults to the checkpoint closest to the
    /// middle of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_step: Option<u64>,
    /// Number of training samples, taken evenly across ids; all by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_band")]
    pub band: f64,
    /// Test samples used by manipulation and timing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_indices: Vec<usize>,
    /// Score CSV files for uniqueness and rank correlation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_stride() -> usize {
    10
}
fn default_bins() -> usize {
    10
}
fn default_band() -> f64 {
    0.1
}
fn default_k() -> usize {
    10
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            kind: "config",
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&read_text(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to the directory holding the config.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(a) = &mut self.attribute {
            fix(&mut a.run);
        }
        if let Some(a) = &mut self.analyze {
            if let Some(run) = &mut a.run {
                fix(run);
            }
            a.reports.iter_mut().for_each(fix);
        }
    }

    /// SHA-256 of the canonical JSON rendering of the sections that affect
    /// results. Input paths are left out so a run can be relocated.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        if let Some(a) = &mut canonical.attribute {
            a.run = PathBuf::new();
        }
        if let Some(a) = &mut canonical.analyze {
            a.run = None;
            for r in &mut a.reports {
                *r = PathBuf::from(r.file_name().unwrap_or_default());
            }
        }
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }

    pub fn require_data(&self) -> Result<&SyntheticDatasetSpec> {
        self.data.as_ref().ok_or_else(|| missing("data"))
    }
    pub fn require_model(&self) -> Result<&DenoiserSpec> {
        self.model.as_ref().ok_or_else(|| missing("model"))
    }
    pub fn require_schedule(&self) -> Result<&ScheduleConfig> {
        self.schedule.as_ref().ok_or_else(|| missing("schedule"))
    }
    pub fn require_train(&self) -> Result<&TrainConfig> {
        self.train.as_ref().ok_or_else(|| missing("train"))
    }
    pub fn require_attribute(&self) -> Result<&AttributeConfig> {
        self.attribute.as_ref().ok_or_else(|| missing("attribute"))
    }
    pub fn require_analyze(&self) -> Result<&AnalyzeConfig> {
        self.analyze.as_ref().ok_or_else(|| missing("analyze"))
    }
}

fn missing(section: &str) -> Error {
    Error::Argument(format!("config is missing the [{section}] section"))
}
