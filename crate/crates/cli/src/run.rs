//! Artifacts of a training run and their manifest.

use std::path::{Path, PathBuf};

use retrac_core::io::{self as fio, sha256_hex};
use retrac_core::trainer::Replayer;
use retrac_core::{
    Checkpoint, Dataset, Denoiser, DenoiserSpec, Error, NoiseSchedule, Result, SyntheticDatasetSpec, TrainConfig,
    TrainLog,
};
use serde::{Deserialize, Serialize};

use crate::config::ScheduleConfig;
use crate::report::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "retrac-run/1";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const DATASET_DIR: &str = "dataset";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Path relative to the run directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub step: u64,
    pub file: String,
    pub sha256: String,
    pub loss_ema: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainManifest {
    pub format: String,
    pub config_digest: String,
    pub data: SyntheticDatasetSpec,
    pub model: DenoiserSpec,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub schedule_hash: String,
    pub num_params: usize,
    pub dataset: Vec<FileEntry>,
    pub train_log: FileEntry,
    pub checkpoints: Vec<CheckpointEntry>,
}

impl TrainManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: TrainManifest = read_json(&Self::path(dir), "manifest")?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                kind: "manifest",
                path: Self::path(dir),
                reason: format!("unsupported format {:?}", manifest.format),
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&Self::path(dir), self)
    }

    /// SHA-256 of the manifest file as stored.
    pub fn file_digest(dir: &Path) -> Result<String> {
        Ok(sha256_hex(&fio::read_bytes(&Self::path(dir))?))
    }
}

/// Reads `entry` and checks its digest against the manifest.
pub fn read_verified(dir: &Path, entry: &FileEntry) -> Result<Vec<u8>> {
    let bytes = fio::read_bytes(&dir.join(&entry.file))?;
    verify(&entry.file, &entry.sha256, &bytes)?;
    Ok(bytes)
}

fn verify(file: &str, expected: &str, bytes: &[u8]) -> Result<()> {
    let actual = sha256_hex(bytes);
    if actual != expected {
        return Err(Error::Integrity(format!(
            "{file}: manifest sha256 {expected} does not match file sha256 {actual}"
        )));
    }
    Ok(())
}

pub fn file_entry(dir: &Path, file: &str) -> Result<FileEntry> {
    Ok(FileEntry {
        file: file.to_string(),
        sha256: sha256_hex(&fio::read_bytes(&dir.join(file))?),
    })
}

/// A training run loaded from disk with every digest verified.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: TrainManifest,
    pub manifest_sha256: String,
    pub dataset: Dataset,
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub log: TrainLog,
    pub checkpoints: Vec<Checkpoint>,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = TrainManifest::read(dir)?;
        let manifest_sha256 = TrainManifest::file_digest(dir)?;
        for entry in &manifest.dataset {
            read_verified(dir, entry)?;
        }
        let dataset = fio::read_dataset(&dir.join(DATASET_DIR))?;
        let log_bytes = read_verified(dir, &manifest.train_log)?;
        let log_path = dir.join(&manifest.train_log.file);
        let log_text = String::from_utf8(log_bytes).map_err(|_| Error::Format {
            kind: "train-log",
            path: log_path.clone(),
            reason: "not valid UTF-8".into(),
        })?;
        let log = fio::parse_train_log(&log_text, &log_path)?;
        let model = Denoiser::new(manifest.model.clone())?;
        let schedule = manifest.schedule.build()?;
        let schedule_hash = hex_digest(&schedule.digest());
        if schedule_hash != manifest.schedule_hash {
            return Err(Error::Integrity(format!(
                "schedule hash {schedule_hash} differs from manifest {}",
                manifest.schedule_hash
            )));
        }
        let mut checkpoints = Vec::with_capacity(manifest.checkpoints.len());
        for entry in &manifest.checkpoints {
            let path = dir.join(&entry.file);
            let bytes = fio::read_bytes(&path)?;
            verify(&entry.file, &entry.sha256, &bytes)?;
            let stored = fio::decode_checkpoint(&bytes, &path)?;
            if stored.schedule_hash != schedule.digest() {
                return Err(Error::Integrity(format!(
                    "{}: checkpoint schedule hash differs from the run schedule",
                    entry.file
                )));
            }
            if stored.step != entry.step {
                return Err(Error::Integrity(format!(
                    "{}: file holds step {} but manifest lists {}",
                    entry.file, stored.step, entry.step
                )));
            }
            checkpoints.push(stored.into_checkpoint(model.layout().clone(), entry.loss_ema)?);
        }
        Ok(LoadedRun {
            dir: dir.to_path_buf(),
            manifest,
            manifest_sha256,
            dataset,
            model,
            schedule,
            log,
            checkpoints,
        })
    }

    pub fn replayer(&self) -> Replayer<'_> {
        Replayer::new(&self.model, &self.schedule, &self.dataset)
    }

    /// Checkpoint with the given step, or the one nearest the middle of
    /// training when `step` is `None`.
    pub fn checkpoint(&self, step: Option<u64>) -> Result<&Checkpoint> {
        match step {
            Some(s) => self
                .checkpoints
                .iter()
                .find(|c| c.step == s)
                .ok_or_else(|| Error::Lookup(format!("no checkpoint at step {s}"))),
            None => {
                let mid = self.log.total_steps() / 2;
                self.checkpoints
                    .iter()
                    .min_by_key(|c| (c.step.abs_diff(mid), c.step))
                    .ok_or_else(|| Error::Lookup("run has no checkpoints".into()))
            }
        }
    }
}

pub fn hex_digest(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
