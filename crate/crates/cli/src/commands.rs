//! The five subcommands. Each reads a [`RunConfig`] and writes its outputs
//! into a directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use retrac_core::attribution::{select_checkpoints, AttributionConfig, Attributor, InfluenceScore, Method};
use retrac_core::bias::{self, binned_profile, norm_vs_timestep, timestep_manipulation, timestep_norm_correlation};
use retrac_core::data::{make_synthetic, MAJORITY, MINORITY};
use retrac_core::io as fio;
use retrac_core::lissa::LissaConfig;
use retrac_core::metrics::{self, MetricTable};
use retrac_core::stats;
use retrac_core::trainer::train as run_training;
use retrac_core::{Dataset, Denoiser, Error, Result, SyntheticDatasetSpec};
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisKind, AnalyzeConfig, AttributeConfig, RunConfig};
use crate::report::{metric_csv, read_scores, scores_csv, write_json, Csv};
use crate::run::{
    file_entry, hex_digest, CheckpointEntry, FileEntry, LoadedRun, TrainManifest, CHECKPOINT_DIR, DATASET_DIR,
    MANIFEST_FORMAT, TRAIN_LOG_FILE,
};

/// Convention recorded with every rank-shift report.
pub const RANK_CONVENTION: &str = "rank 1 = largest |score|; shift = old_rank - new_rank, positive = more influential";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub config_digest: String,
    pub data: SyntheticDatasetSpec,
    pub files: Vec<FileEntry>,
}

pub fn make_data(cfg: &RunConfig, out: &Path) -> Result<DataManifest> {
    let spec = cfg.require_data()?;
    create_dir(out)?;
    let data = make_synthetic(spec)?;
    fio::write_dataset(out, &data)?;
    let manifest = DataManifest {
        config_digest: cfg.digest(),
        data: spec.clone(),
        files: vec![file_entry(out, "data.csv")?, file_entry(out, "labels.csv")?],
    };
    write_json(&out.join("data_manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainManifest> {
    let data_spec = cfg.require_data()?;
    let model_spec = cfg.require_model()?;
    let schedule_cfg = cfg.require_schedule()?;
    let train_cfg = cfg.require_train()?;
    if model_spec.input_dim != data_spec.dim {
        return Err(Error::Argument(format!(
            "model.input_dim = {} but data.dim = {}",
            model_spec.input_dim, data_spec.dim
        )));
    }
    let data = make_synthetic(data_spec)?;
    let model = Denoiser::new(model_spec.clone())?;
    let schedule = schedule_cfg.build()?;
    let output = run_training(&data, &model, &schedule, train_cfg)?;

    create_dir(&out.join(DATASET_DIR))?;
    create_dir(&out.join(CHECKPOINT_DIR))?;
    fio::write_dataset(&out.join(DATASET_DIR), &data)?;
    fio::write_train_log(&out.join(TRAIN_LOG_FILE), &output.log)?;
    let mut checkpoints = Vec::with_capacity(output.checkpoints.len());
    for c in &output.checkpoints {
        let file = format!("{CHECKPOINT_DIR}/ckpt_{:08}.bin", c.step);
        fio::write_checkpoint(&out.join(&file), c)?;
        let entry = file_entry(out, &file)?;
        checkpoints.push(CheckpointEntry {
            step: c.step,
            file,
            sha256: entry.sha256,
            loss_ema: c.loss_ema,
        });
    }
    let manifest = TrainManifest {
        format: MANIFEST_FORMAT.into(),
        config_digest: cfg.digest(),
        data: data_spec.clone(),
        model: model_spec.clone(),
        schedule: *schedule_cfg,
        train: train_cfg.clone(),
        schedule_hash: hex_digest(&schedule.digest()),
        num_params: model.num_params(),
        dataset: vec![
            file_entry(out, &format!("{DATASET_DIR}/data.csv"))?,
            file_entry(out, &format!("{DATASET_DIR}/labels.csv"))?,
        ],
        train_log: file_entry(out, TRAIN_LOG_FILE)?,
        checkpoints,
    };
    manifest.write(out)?;
    Ok(manifest)
}

/// Held-out samples from the run's data distribution.
pub fn test_set(run: &LoadedRun, a: &AttributeConfig) -> Result<Dataset> {
    make_synthetic(&SyntheticDatasetSpec {
        majority_count: a.tests.majority_count,
        minority_count: a.tests.minority_count,
        seed: a.tests.seed,
        ..run.manifest.data.clone()
    })
}

pub fn attributor<'a>(run: &'a LoadedRun, a: &AttributeConfig, method: Method) -> Result<Attributor<'a>> {
    let checkpoints = select_checkpoints(&run.checkpoints, a.checkpoints, a.skip_fraction)?;
    let cfg = AttributionConfig {
        n_t: a.n_t,
        m: a.m,
        noise_seed: a.noise_seed,
        method,
        norm_floor: retrac_core::attribution::DEFAULT_NORM_FLOOR,
    };
    Attributor::new(run.replayer(), &run.log, checkpoints, cfg)
}

fn check_methods(a: &AttributeConfig) -> Result<()> {
    if a.methods.is_empty() {
        return Err(Error::Argument("attribute.methods is empty".into()));
    }
    let mut names: Vec<&str> = a.methods.iter().map(Method::name).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Argument("attribute.methods must have distinct kinds".into()));
    }
    Ok(())
}

/// Metadata written next to each score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub method: Method,
    pub n_t: usize,
    pub m: usize,
    pub noise_seed: u64,
    pub timesteps: Vec<usize>,
    pub checkpoint_steps: Vec<u64>,
    pub tests: crate::config::TestSetConfig,
    pub test_groups: Vec<u32>,
    pub config_digest: String,
    pub run_manifest_sha256: String,
    pub scores: FileEntry,
    pub metrics: Vec<MetricTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lissa: Option<LissaConfig>,
}

pub fn attribute(cfg: &RunConfig, out: &Path) -> Result<Vec<AttributionReport>> {
    let a = cfg.require_attribute()?;
    check_methods(a)?;
    let run = LoadedRun::load(&a.run)?;
    let tests_ds = test_set(&run, a)?;
    let tests: Vec<&[f64]> = tests_ds.samples().iter().map(Vec::as_slice).collect();
    create_dir(out)?;
    let ids: Vec<usize> = (0..run.dataset.len()).collect();
    let mut reports = Vec::new();
    for &method in &a.methods {
        let att = attributor(&run, a, method)?;
        let (rows, steps, lissa) = if method == Method::InfluenceFunction {
            let lissa = a.lissa.unwrap_or_default();
            let rows = att.influence_function_scores(&tests, &ids, &lissa)?;
            let last = att.checkpoints().last().expect("non-empty").step;
            (rows, vec![last], Some(lissa))
        } else {
            let steps = att.checkpoints().iter().map(|c| c.step).collect();
            (att.score_all(&tests)?, steps, None)
        };
        let name = method.name();
        let file = format!("{name}_scores.csv");
        scores_csv(&rows, &steps).write(&out.join(&file))?;
        let mut metrics = Vec::new();
        for group in [MINORITY, MAJORITY] {
            let group_rows: Vec<Vec<f64>> = rows
                .iter()
                .zip(tests_ds.groups())
                .filter(|(_, &g)| g == group)
                .map(|(r, _)| r.iter().map(|s| s.score).collect())
                .collect();
            if group_rows.is_empty() {
                continue;
            }
            let table = metrics::tracing_precision(&group_rows, run.dataset.groups(), group, &a.precision_k)?;
            let label = if group == MINORITY { "minority" } else { "majority" };
            metric_csv(&table).write(&out.join(format!("{name}_precision_{label}.csv")))?;
            metrics.push(table.with_meta("test_group", label));
        }
        let report = AttributionReport {
            method,
            n_t: a.n_t,
            m: a.m,
            noise_seed: a.noise_seed,
            timesteps: att.timesteps().to_vec(),
            checkpoint_steps: steps,
            tests: a.tests,
            test_groups: tests_ds.groups().to_vec(),
            config_digest: cfg.digest(),
            run_manifest_sha256: run.manifest_sha256.clone(),
            scores: file_entry(out, &file)?,
            metrics,
            lissa,
        };
        write_json(&out.join(format!("{name}_report.json")), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfInfluenceReport {
    pub method: Method,
    pub n_t: usize,
    pub m: usize,
    pub noise_seed: u64,
    pub checkpoint_steps: Vec<u64>,
    pub config_digest: String,
    pub run_manifest_sha256: String,
    pub scores: FileEntry,
    pub outlier_detection: MetricTable,
}

pub fn self_influence(cfg: &RunConfig, out: &Path) -> Result<Vec<SelfInfluenceReport>> {
    let a = cfg.require_attribute()?;
    check_methods(a)?;
    let run = LoadedRun::load(&a.run)?;
    create_dir(out)?;
    let ids: Vec<usize> = (0..run.dataset.len()).collect();
    let outliers = run.dataset.ids_in_group(MINORITY);
    let mut reports = Vec::new();
    for &method in &a.methods {
        let att = attributor(&run, a, method)?;
        let scores = att.self_influence(&ids)?;
        let steps: Vec<u64> = att.checkpoints().iter().map(|c| c.step).collect();
        let name = method.name();
        let file = format!("{name}_self_influence.csv");
        self_influence_csv(&scores, run.dataset.groups(), &steps).write(&out.join(&file))?;
        let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
        let table = metrics::outlier_detection(&values, &outliers, &a.outlier_k)?;
        metric_csv(&table).write(&out.join(format!("{name}_outliers.csv")))?;
        let report = SelfInfluenceReport {
            method,
            n_t: a.n_t,
            m: a.m,
            noise_seed: a.noise_seed,
            checkpoint_steps: steps,
            config_digest: cfg.digest(),
            run_manifest_sha256: run.manifest_sha256.clone(),
            scores: file_entry(out, &file)?,
            outlier_detection: table,
        };
        write_json(&out.join(format!("{name}_self_influence.json")), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

fn self_influence_csv(scores: &[InfluenceScore], groups: &[u32], steps: &[u64]) -> Csv {
    let mut header = vec!["train_id".to_string(), "group".into(), "score".into(), "rank".into()];
    header.extend(steps.iter().map(|s| format!("ckpt_{s}")));
    let mut csv = Csv::new(&header);
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    for (s, rank) in scores.iter().zip(stats::descending_ranks(&values)) {
        let mut fields = vec![s.train_id.to_string(), groups[s.train_id].to_string(), s.score.to_string(), rank.to_string()];
        fields.extend(s.per_checkpoint.iter().map(f64::to_string));
        csv.row(&fields);
    }
    csv
}

/// Evenly spread subset of `0..n` of size `count` (all ids when `None`).
pub fn sample_ids(n: usize, count: Option<usize>) -> Result<Vec<usize>> {
    match count {
        None => Ok((0..n).collect()),
        Some(c) if c == 0 || c > n => Err(Error::Argument(format!("analyze.samples = {c} must lie in [1, {n}]"))),
        Some(c) => Ok((0..c).map(|j| j * n / c).collect()),
    }
}

/// Summary of an `analyze` run: output files and headline numbers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub kind: Option<AnalysisKind>,
    pub values: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

pub fn analyze(cfg: &RunConfig, out: &Path) -> Result<AnalysisSummary> {
    let an = cfg.require_analyze()?;
    create_dir(out)?;
    let mut summary = AnalysisSummary {
        kind: Some(an.kind),
        ..Default::default()
    };
    match an.kind {
        AnalysisKind::Correlation => analyze_correlation(an, out, &mut summary)?,
        AnalysisKind::NormProfile => analyze_norm_profile(an, out, &mut summary)?,
        AnalysisKind::Manipulation => analyze_manipulation(cfg, an, out, &mut summary)?,
        AnalysisKind::Uniqueness => analyze_uniqueness(an, out, &mut summary)?,
        AnalysisKind::RankCorrelation => analyze_rank_correlation(an, out, &mut summary)?,
        AnalysisKind::Timing => analyze_timing(cfg, an, out, &mut summary)?,
    }
    write_json(&out.join(format!("{}_summary.json", kind_name(an.kind))), &summary)?;
    Ok(summary)
}

fn kind_name(kind: AnalysisKind) -> &'static str {
    match kind {
        AnalysisKind::Correlation => "correlation",
        AnalysisKind::NormProfile => "norm_profile",
        AnalysisKind::Manipulation => "manipulation",
        AnalysisKind::Uniqueness => "uniqueness",
        AnalysisKind::RankCorrelation => "rank_correlation",
        AnalysisKind::Timing => "timing",
    }
}

fn analysis_run(an: &AnalyzeConfig) -> Result<LoadedRun> {
    let dir = an
        .run
        .as_ref()
        .ok_or_else(|| Error::Argument("analyze.run is required for this analysis".into()))?;
    LoadedRun::load(dir)
}

fn analyze_correlation(an: &AnalyzeConfig, out: &Path, summary: &mut AnalysisSummary) -> Result<()> {
    let run = analysis_run(an)?;
    let checkpoint = run.checkpoint(an.checkpoint_step)?;
    let ids = sample_ids(run.dataset.len(), an.samples)?;
    let replayer = run.replayer();
    let corr = timestep_norm_correlation(&replayer, &run.log, checkpoint, &ids, an.stride)?;
    let mut csv = Csv::new(&["rho", "p", "slope"]);
    csv.row(&[corr.rho, corr.p_value, corr.slope]);
    csv.write(&out.join("correlation.csv"))?;
    let mut points = Csv::new(&["sample_id", "distance", "norm_rank"]);
    for ((id, d), r) in ids.iter().zip(&corr.distances).zip(&corr.norm_ranks) {
        points.row(&[id.to_string(), d.to_string(), r.to_string()]);
    }
    points.write(&out.join("correlation_points.csv"))?;
    summary.values.insert("rho".into(), corr.rho);
    summary.values.insert("p".into(), corr.p_value);
    summary.values.insert("slope".into(), corr.slope);
    summary.values.insert("n".into(), corr.n as f64);
    summary.values.insert("checkpoint_step".into(), checkpoint.step as f64);
    summary.files = vec!["correlation.csv".into(), "correlation_points.csv".into()];
    Ok(())
}

fn analyze_norm_profile(an: &AnalyzeConfig, out: &Path, summary: &mut AnalysisSummary) -> Result<()> {
    let run = analysis_run(an)?;
    let checkpoint = run.checkpoint(an.checkpoint_step)?;
    let ids = sample_ids(run.dataset.len(), an.samples)?;
    let points = norm_vs_timestep(&run.replayer(), &run.log, checkpoint, &ids)?;
    let mut csv = Csv::new(&["sample_id", "group", "t_train", "norm"]);
    for p in &points {
        csv.row(&[
            p.sample_id.to_string(),
            run.dataset.groups()[p.sample_id].to_string(),
            p.t_train.to_string(),
            p.norm.to_string(),
        ]);
    }
    csv.write(&out.join("norm_points.csv"))?;
    let num_timesteps = run.schedule.num_timesteps();
    let bins = binned_profile(&points, num_timesteps, an.bins)?;
    let mut bin_csv = Csv::new(&["bin", "t_start", "t_end", "mean_norm"]);
    for (b, mean) in bins.iter().enumerate() {
        let start = b * num_timesteps / an.bins + 1;
        let end = (b + 1) * num_timesteps / an.bins;
        let value = mean.map_or_else(String::new, |m| m.to_string());
        bin_csv.row(&[b.to_string(), start.to_string(), end.to_string(), value]);
    }
    bin_csv.write(&out.join("norm_bins.csv"))?;
    let max_bin = bins
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|m| (i, m)))
        .fold(None, |best: Option<(usize, f64)>, (i, m)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((i, m)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::EmptySelection("every bin is empty".into()))?;
    summary.values.insert("max_bin".into(), max_bin as f64);
    summary.values.insert("checkpoint_step".into(), checkpoint.step as f64);
    summary.files = vec!["norm_points.csv".into(), "norm_bins.csv".into()];
    Ok(())
}

fn analyze_manipulation(cfg: &RunConfig, an: &AnalyzeConfig, out: &Path, summary: &mut AnalysisSummary) -> Result<()> {
    let a = cfg.require_attribute()?;
    check_methods(a)?;
    let run = LoadedRun::load(&a.run)?;
    let tests_ds = test_set(&run, a)?;
    let indices = if an.test_indices.is_empty() { vec![0] } else { an.test_indices.clone() };
    for &method in &a.methods {
        if method == Method::InfluenceFunction {
            continue;
        }
        let att = attributor(&run, a, method)?;
        let name = method.name();
        let mut csv = Csv::new(&["test_index", "sample_id", "old_rank", "new_rank", "shift"]);
        let mut all_shifts = Vec::new();
        let mut results = Vec::new();
        for &ti in &indices {
            let z = tests_ds.sample(ti)?;
            let r = timestep_manipulation(&att, z, ti, an.band, an.stride)?;
            for i in 0..r.sample_ids.len() {
                csv.row(&[
                    ti as i64,
                    r.sample_ids[i] as i64,
                    r.old_ranks[i] as i64,
                    r.new_ranks[i] as i64,
                    r.shifts[i],
                ]);
            }
            all_shifts.extend(r.shifts.iter().map(|&s| s as f64));
            results.push(ManipulationSummary::from(&r));
        }
        let file = format!("manipulation_{name}.csv");
        csv.write(&out.join(&file))?;
        let mean = all_shifts.iter().sum::<f64>() / all_shifts.len() as f64;
        let p = stats::sign_test_greater(&all_shifts);
        write_json(
            &out.join(format!("manipulation_{name}.json")),
            &ManipulationReport {
                method,
                band: an.band,
                stride: an.stride,
                rank_convention: RANK_CONVENTION.into(),
                mean_shift: mean,
                sign_test_p: p,
                n_samples: all_shifts.len(),
                per_test: results,
            },
        )?;
        summary.values.insert(format!("{name}_mean_shift"), mean);
        summary.values.insert(format!("{name}_sign_test_p"), p);
        summary.files.push(file);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationSummary {
    pub test_index: usize,
    pub n_samples: usize,
    pub mean_shift: f64,
    pub sign_test_p: f64,
}

impl From<&bias::ManipulationResult> for ManipulationSummary {
    fn from(r: &bias::ManipulationResult) -> Self {
        ManipulationSummary {
            test_index: r.test_index,
            n_samples: r.sample_ids.len(),
            mean_shift: r.mean_shift,
            sign_test_p: r.sign_test_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationReport {
    pub method: Method,
    pub band: f64,
    pub stride: usize,
    pub rank_convention: String,
    pub mean_shift: f64,
    pub sign_test_p: f64,
    pub n_samples: usize,
    pub per_test: Vec<ManipulationSummary>,
}

fn analyze_uniqueness(an: &AnalyzeConfig, out: &Path, summary: &mut AnalysisSummary) -> Result<()> {
    if an.reports.is_empty() {
        return Err(Error::Argument("analyze.reports lists no score files".into()));
    }
    let mut lists = Vec::new();
    for path in &an.reports {
        for row in read_scores(path)?.rows {
            if an.k > row.len() {
                return Err(Error::Argument(format!("k = {} exceeds {} training samples", an.k, row.len())));
            }
            lists.push(metrics::top_k(&row, an.k));
        }
    }
    let value = metrics::uniqueness(&lists)?;
    let mut csv = Csv::new(&["k", "n_lists", "uniqueness"]);
    csv.row(&[an.k.to_string(), lists.len().to_string(), value.to_string()]);
    csv.write(&out.join("uniqueness.csv"))?;
    summary.values.insert("uniqueness".into(), value);
    summary.files = vec!["uniqueness.csv".into()];
    Ok(())
}

fn analyze_rank_correlation(an: &AnalyzeConfig, out: &Path, summary: &mut AnalysisSummary) -> Result<()> {
    let [a, b] = an.reports.as_slice() else {
        return Err(Error::Argument("rank-correlation needs exactly two score files".into()));
    };
    let (a, b) = (read_scores(a)?, read_scores(b)?);
    if a.rows.len() != b.rows.len() {
        return Err(Error::shape("score reports", a.rows.len(), b.rows.len()));
    }
    let mut csv = Csv::new(&["test_id", "spearman"]);
    let mut min: f64 = 1.0;
    for (i, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        let rho = metrics::method_rank_correlation(ra, rb)?;
        min = min.min(rho);
        csv.row(&[i.to_string(), rho.to_string()]);
    }
    csv.write(&out.join("rank_correlation.csv"))?;
    summary.values.insert("min_spearman".into(), min);
    summary.files = vec!["rank_correlation.csv".into()];
    Ok(())
}

fn analyze_timing(cfg: &RunConfig, an: &AnalyzeConfig, out: &Path, summary: &mut AnalysisSummary) -> Result<()> {
    let a = cfg.require_attribute()?;
    check_methods(a)?;
    let run = LoadedRun::load(&a.run)?;
    let tests_ds = test_set(&run, a)?;
    let indices = if an.test_indices.is_empty() { vec![0] } else { an.test_indices.clone() };
    let tests: Vec<&[f64]> = indices
        .iter()
        .map(|&i| tests_ds.sample(i))
        .collect::<Result<_>>()?;
    let full = run.schedule.num_timesteps();
    let mut csv = Csv::new(&["method", "n_t", "seconds", "relative"]);
    for &method in &a.methods {
        if method == Method::InfluenceFunction {
            continue;
        }
        let mut base = None;
        for n_t in [a.n_t, full] {
            let timed = AttributeConfig { n_t, ..a.clone() };
            let att = attributor(&run, &timed, method)?;
            let start = Instant::now();
            att.score_all(&tests)?;
            let secs = start.elapsed().as_secs_f64();
            let base_secs = *base.get_or_insert(secs);
            csv.row(&[method.name().to_string(), n_t.to_string(), secs.to_string(), (secs / base_secs).to_string()]);
            if n_t == full {
                summary.values.insert(format!("{}_speedup", method.name()), secs / base_secs);
            }
        }
    }
    csv.write(&out.join("timing.csv"))?;
    summary.files = vec!["timing.csv".into()];
    Ok(())
}
