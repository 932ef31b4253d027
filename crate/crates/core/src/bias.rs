//! Timestep norm-bias diagnostics: norm profiles over timesteps, the
//! distance-versus-norm-rank correlation and the timestep manipulation test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::Attributor;
use crate::error::{Error, Result};
use crate::stats::{self, PValueMethod};
use crate::trainer::{Checkpoint, Replayer, TrainLog};

/// Gradient norm of one sample over a set of probed timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    pub sample_id: usize,
    pub checkpoint_step: u64,
    pub timesteps: Vec<usize>,
    pub norms: Vec<f64>,
    pub t_max: usize,
}

/// One `(t_train, ‖g‖)` point of a norm-versus-timestep scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub sample_id: usize,
    pub t_train: usize,
    pub norm: f64,
}

/// Probe grid `{1, 1 + stride, ...} ∪ {T}`.
pub fn probe_timesteps(num_timesteps: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Argument("probe stride must be >= 1".into()));
    }
    let mut probes: Vec<usize> = (1..=num_timesteps).step_by(stride).collect();
    if probes.last() != Some(&num_timesteps) {
        probes.push(num_timesteps);
    }
    Ok(probes)
}

/// Index of the largest value; the first one wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Replayed training-gradient norm of each sample at `checkpoint`.
pub fn norm_vs_timestep(
    replayer: &Replayer,
    log: &TrainLog,
    checkpoint: &Checkpoint,
    sample_ids: &[usize],
) -> Result<Vec<NormPoint>> {
    sample_ids
        .par_iter()
        .map(|&id| {
            let record = log.record_at_checkpoint(id, checkpoint.step)?;
            let g = replayer.record_gradient(&checkpoint.params, record)?;
            Ok(NormPoint {
                sample_id: id,
                t_train: record.timestep,
                norm: g.norm(),
            })
        })
        .collect()
}

/// Mean norm per equal-width timestep bin; `None` for empty bins.
pub fn binned_profile(points: &[NormPoint], num_timesteps: usize, bins: usize) -> Result<Vec<Option<f64>>> {
    if bins == 0 || bins > num_timesteps {
        return Err(Error::Argument(format!("bins = {bins} must lie in [1, {num_timesteps}]")));
    }
    let mut sums = vec![(0.0, 0usize); bins];
    for p in points {
        if p.t_train == 0 || p.t_train > num_timesteps {
            return Err(Error::Range {
                what: "t_train",
                value: p.t_train,
                min: 1,
                max: num_timesteps,
            });
        }
        let b = ((p.t_train - 1) * bins / num_timesteps).min(bins - 1);
        sums[b].0 += p.norm;
        sums[b].1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(s, n)| (n > 0).then(|| s / n as f64))
        .collect())
}

/// Norm profile of `sample_id` at `checkpoint`, holding the logged noise
/// seed fixed and varying only the timestep.
pub fn find_t_max(
    replayer: &Replayer,
    log: &TrainLog,
    checkpoint: &Checkpoint,
    sample_id: usize,
    stride: usize,
) -> Result<NormProfile> {
    let record = log.record_at_checkpoint(sample_id, checkpoint.step)?;
    let timesteps = probe_timesteps(replayer.schedule.num_timesteps(), stride)?;
    let norms = timesteps
        .iter()
        .map(|&t| Ok(replayer.gradient(&checkpoint.params, sample_id, t, record.noise_seed)?.1.norm()))
        .collect::<Result<Vec<_>>>()?;
    let t_max = timesteps[argmax(&norms)];
    Ok(NormProfile {
        sample_id,
        checkpoint_step: checkpoint.step,
        timesteps,
        norms,
        t_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormCorrelation {
    pub rho: f64,
    pub p_value: f64,
    pub p_method: PValueMethod,
    /// OLS slope of norm rank on timestep distance.
    pub slope: f64,
    pub n: usize,
    /// `|t_max - t_train|` per sample, in input order.
    pub distances: Vec<f64>,
    /// Norm rank among the scored samples, 1 = largest.
    pub norm_ranks: Vec<usize>,
}

/// Correlates each sample's distance `|t_max - t_train|` with the rank of
/// its training-gradient norm. A positive correlation means samples trained
/// near their norm-maximizing timestep carry the largest gradients.
pub fn timestep_norm_correlation(
    replayer: &Replayer,
    log: &TrainLog,
    checkpoint: &Checkpoint,
    sample_ids: &[usize],
    stride: usize,
) -> Result<NormCorrelation> {
    if sample_ids.len() < 10 {
        return Err(Error::Argument(format!(
            "need at least 10 samples, got {}",
            sample_ids.len()
        )));
    }
    let points = norm_vs_timestep(replayer, log, checkpoint, sample_ids)?;
    let profiles = sample_ids
        .par_iter()
        .map(|&id| find_t_max(replayer, log, checkpoint, id, stride))
        .collect::<Result<Vec<_>>>()?;
    let distances: Vec<f64> = points
        .iter()
        .zip(&profiles)
        .map(|(p, prof)| prof.t_max.abs_diff(p.t_train) as f64)
        .collect();
    let norms: Vec<f64> = points.iter().map(|p| p.norm).collect();
    let norm_ranks = stats::descending_ranks(&norms);
    let rank_values: Vec<f64> = norm_ranks.iter().map(|&r| r as f64).collect();
    let test = stats::spearman_test(&distances, &rank_values)?;
    let slope = stats::ols_slope(&distances, &rank_values)?;
    Ok(NormCorrelation {
        rho: test.rho,
        p_value: test.p_value,
        p_method: test.method,
        slope,
        n: sample_ids.len(),
        distances,
        norm_ranks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationResult {
    pub test_index: usize,
    pub band: f64,
    /// Selected low-influence samples.
    pub sample_ids: Vec<usize>,
    /// `t_max` per selected sample and checkpoint.
    pub t_max: Vec<Vec<usize>>,
    pub old_ranks: Vec<usize>,
    pub new_ranks: Vec<usize>,
    /// `old_rank - new_rank`; positive means the sample moved toward the top.
    pub shifts: Vec<i64>,
    pub mean_shift: f64,
    pub sign_test_p: f64,
}

/// Rank of `value` among `others` by descending magnitude (1 = largest),
/// ties resolved toward the smaller id as in [`stats::descending_order`].
fn magnitude_rank(abs_scores: &[f64], id: usize, value: f64) -> usize {
    1 + abs_scores
        .iter()
        .enumerate()
        .filter(|&(j, &a)| j != id && (a > value || (a == value && j < id)))
        .count()
}

/// Re-scores the least influential samples for one test with each training
/// timestep replaced by that sample's `t_max`, and reports how far each moves
/// in the full-dataset ranking of `|score|`.
///
/// `band` selects samples whose `|score|` lies in the lowest `band` fraction.
pub fn timestep_manipulation(
    attributor: &Attributor,
    z_test: &[f64],
    test_index: usize,
    band: f64,
    stride: usize,
) -> Result<ManipulationResult> {
    if !(band > 0.0 && band <= 1.0) {
        return Err(Error::Argument(format!("band must lie in (0, 1], got {band}")));
    }
    let n = attributor.replayer().dataset.len();
    let ids: Vec<usize> = (0..n).collect();
    let test = attributor.test_gradients(z_test)?;
    let abs_scores: Vec<f64> = ids
        .par_iter()
        .map(|&id| Ok(attributor.checkpoint_terms(&test, id, None)?.iter().sum::<f64>().abs()))
        .collect::<Result<Vec<_>>>()?;
    let old_ranks: Vec<usize> = (0..n).map(|i| magnitude_rank(&abs_scores, i, abs_scores[i])).collect();
    let cutoff = ((band * n as f64).floor() as usize).min(n);
    let selected: Vec<usize> = (0..n).filter(|&i| old_ranks[i] > n - cutoff).collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no samples in the lowest {band} band of |score| for test {test_index}"
        )));
    }
    let checkpoints = attributor.checkpoints();
    let rows = selected
        .par_iter()
        .map(|&id| {
            let t_max = checkpoints
                .iter()
                .map(|c| Ok(find_t_max(attributor.replayer(), attributor.log(), c, id, stride)?.t_max))
                .collect::<Result<Vec<_>>>()?;
            let score = attributor.checkpoint_terms(&test, id, Some(&t_max))?.iter().sum::<f64>();
            Ok((t_max, score.abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t_max = Vec::with_capacity(selected.len());
    let mut new_ranks = Vec::with_capacity(selected.len());
    let mut shifts = Vec::with_capacity(selected.len());
    for (&id, (tm, new_abs)) in selected.iter().zip(rows) {
        let new_rank = magnitude_rank(&abs_scores, id, new_abs);
        shifts.push(old_ranks[id] as i64 - new_rank as i64);
        new_ranks.push(new_rank);
        t_max.push(tm);
    }
    let shift_values: Vec<f64> = shifts.iter().map(|&s| s as f64).collect();
    Ok(ManipulationResult {
        test_index,
        band,
        old_ranks: selected.iter().map(|&i| old_ranks[i]).collect(),
        sample_ids: selected,
        t_max,
        new_ranks,
        mean_shift: shift_values.iter().sum::<f64>() / shift_values.len() as f64,
        sign_test_p: stats::sign_test_greater(&shift_values),
        shifts,
    })
}
