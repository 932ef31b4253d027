//! On-disk formats: binary checkpoints, the CSV training log and CSV
//! datasets. All writers go through [`write_atomic`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::{Layout, ParameterVector};
use crate::trainer::{Checkpoint, TrainLog, TrainRecord};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DTCK";
pub const CHECKPOINT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 32 + 8 + 8;

pub const TRAIN_LOG_HEADER: &str = "step,sample_id,timestep,noise_seed,lr";
pub const LABELS_HEADER: &str = "id,group";

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Contents of a checkpoint file. The loss average is not stored in the
/// binary format and lives in the run manifest instead.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredCheckpoint {
    pub step: u64,
    pub schedule_hash: [u8; 32],
    pub values: Vec<f32>,
}

impl StoredCheckpoint {
    pub fn into_checkpoint(self, layout: Layout, loss_ema: f64) -> Result<Checkpoint> {
        let values = self.values.iter().map(|&v| f64::from(v)).collect();
        Ok(Checkpoint {
            step: self.step,
            params: ParameterVector::new(values, layout)?,
            loss_ema,
            schedule_hash: self.schedule_hash,
        })
    }
}

pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Vec<u8> {
    let values = checkpoint.params.values();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&checkpoint.schedule_hash);
    out.extend_from_slice(&checkpoint.step.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<StoredCheckpoint> {
    let bad = |reason: String| Error::Format {
        kind: "checkpoint",
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let mut schedule_hash = [0u8; 32];
    schedule_hash.copy_from_slice(&bytes[5..37]);
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let step = u64_at(37);
    let p = u64_at(45);
    let body = &bytes[HEADER_LEN..];
    if (body.len() as u64) != p.saturating_mul(4) {
        return Err(bad(format!("header declares {p} values but body has {} bytes", body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(StoredCheckpoint {
        step,
        schedule_hash,
        values,
    })
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(checkpoint))
}

pub fn read_checkpoint(path: &Path) -> Result<StoredCheckpoint> {
    decode_checkpoint(&read_bytes(path)?, path)
}

/// Renders the training log. `f64`'s `Display` is the shortest string that
/// parses back to the same value, so the round trip is lossless.
pub fn format_train_log(log: &TrainLog) -> String {
    let mut out = String::with_capacity(32 * (log.len() + 1));
    out.push_str(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in log.records() {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, r.sample_id, r.timestep, r.noise_seed, r.lr);
    }
    out
}

pub fn parse_train_log(text: &str, path: &Path) -> Result<TrainLog> {
    let bad = |line: usize, reason: String| Error::Format {
        kind: "train-log",
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(TRAIN_LOG_HEADER) => {}
        other => return Err(bad(1, format!("expected header {TRAIN_LOG_HEADER:?}, got {other:?}"))),
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(n, format!("expected 5 fields, got {}", fields.len())));
        }
        let field = |k: usize| fields[k].trim();
        let parse_err = |what: &str| bad(n, format!("invalid {what} {:?}", line));
        records.push(TrainRecord {
            step: field(0).parse().map_err(|_| parse_err("step"))?,
            sample_id: field(1).parse().map_err(|_| parse_err("sample_id"))?,
            timestep: field(2).parse().map_err(|_| parse_err("timestep"))?,
            noise_seed: field(3).parse().map_err(|_| parse_err("noise_seed"))?,
            lr: field(4).parse().map_err(|_| parse_err("lr"))?,
        });
    }
    Ok(TrainLog::new(records))
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    write_atomic(path, format_train_log(log).as_bytes())
}

pub fn read_train_log(path: &Path) -> Result<TrainLog> {
    parse_train_log(&read_text(path)?, path)
}

/// File names used for a dataset directory.
pub fn dataset_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("data.csv"), dir.join("labels.csv"))
}

/// Writes `data.csv` (one sample per row, no header) and `labels.csv`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let (data_path, labels_path) = dataset_paths(dir);
    let mut rows = String::new();
    for sample in data.samples() {
        let line: Vec<String> = sample.iter().map(|v| v.to_string()).collect();
        rows.push_str(&line.join(","));
        rows.push('\n');
    }
    let mut labels = format!("{LABELS_HEADER}\n");
    for (id, group) in data.groups().iter().enumerate() {
        let _ = writeln!(labels, "{id},{group}");
    }
    write_atomic(&data_path, rows.as_bytes())?;
    write_atomic(&labels_path, labels.as_bytes())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (data_path, labels_path) = dataset_paths(dir);
    let data_text = read_text(&data_path)?;
    let bad = |path: &Path, kind: &'static str, reason: String| Error::Format {
        kind,
        path: path.to_path_buf(),
        reason,
    };
    let samples = data_text
        .lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&data_path, "dataset", format!("row {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels_text = read_text(&labels_path)?;
    let mut lines = labels_text.lines();
    if lines.next() != Some(LABELS_HEADER) {
        return Err(bad(&labels_path, "labels", format!("expected header {LABELS_HEADER:?}")));
    }
    let mut groups = Vec::with_capacity(samples.len());
    for (i, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let parsed = line
            .split_once(',')
            .and_then(|(id, g)| Some((id.trim().parse::<usize>().ok()?, g.trim().parse::<u32>().ok()?)));
        match parsed {
            Some((id, g)) if id == i => groups.push(g),
            _ => return Err(bad(&labels_path, "labels", format!("row {}: {line:?}", i + 2))),
        }
    }
    Dataset::new(samples, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, Generator, SyntheticDatasetSpec};

    fn checkpoint() -> Checkpoint {
        let layout = Layout::packed([("w", vec![2, 3]), ("b", vec![3])]);
        let values = (0..9).map(|i| (i as f32 * 0.37 - 1.1) as f64).collect();
        Checkpoint {
            step: 42,
            params: ParameterVector::new(values, layout).unwrap(),
            loss_ema: 0.5,
            schedule_hash: [7; 32],
        }
    }

    #[test]
    fn checkpoint_layout_is_bit_exact() {
        let c = checkpoint();
        let bytes = encode_checkpoint(&c);
        assert_eq!(&bytes[..4], b"DTCK");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..37], &[7; 32]);
        assert_eq!(&bytes[37..45], &42u64.to_le_bytes());
        assert_eq!(&bytes[45..53], &9u64.to_le_bytes());
        assert_eq!(bytes.len(), 53 + 36);
        assert_eq!(&bytes[53..57], &(-1.1f32).to_le_bytes());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let c = checkpoint();
        write_checkpoint(&path, &c).unwrap();
        let back = read_checkpoint(&path)
            .unwrap()
            .into_checkpoint(c.params.layout().clone(), c.loss_ema)
            .unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let path = Path::new("x.bin");
        let mut bytes = encode_checkpoint(&checkpoint());
        assert!(matches!(decode_checkpoint(&bytes[..20], path), Err(Error::Format { .. })));
        bytes.pop();
        assert!(matches!(decode_checkpoint(&bytes, path), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes, path), Err(Error::Format { .. })));
    }

    #[test]
    fn train_log_round_trip_is_lossless() {
        let records = vec![
            TrainRecord { step: 0, sample_id: 3, timestep: 1, noise_seed: u64::MAX, lr: 0.1 },
            TrainRecord { step: 0, sample_id: 1, timestep: 1000, noise_seed: 0, lr: 1.0 / 3.0 },
            TrainRecord { step: 1, sample_id: 3, timestep: 17, noise_seed: 12345, lr: 5e-324 },
        ];
        let log = TrainLog::new(records);
        let text = format_train_log(&log);
        assert!(text.starts_with("step,sample_id,timestep,noise_seed,lr\n"));
        assert!(!text.contains('\r'));
        let back = parse_train_log(&text, Path::new("log.csv")).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn train_log_errors_name_the_line() {
        let err = parse_train_log("step,sample_id,timestep,noise_seed,lr\n0,1,2,3\n", Path::new("l.csv")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_train_log("bogus\n", Path::new("l.csv")).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticDatasetSpec {
            majority_count: 30,
            minority_count: 4,
            dim: 5,
            generator: Generator::GaussianMixture,
            seed: 3,
        };
        let data = make_synthetic(&spec).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels.lines().count(), 35);
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
