//! SGD training with a replayable per-sample log.
//!
//! Step `k` (0-based) applies one batch update to the parameters held after
//! `k` updates; a checkpoint at step `c` stores the parameters after `c`
//! updates, i.e. the pre-update parameters of the records logged at step `c`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::model::{Denoiser, LossMetric};
use crate::params::{pairwise_mean, GradientVector, ParameterVector};
use crate::rng;

const LOSS_EMA_DECAY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Argument("checkpoint_every must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One sample's contribution to one SGD step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub sample_id: usize,
    pub timestep: usize,
    pub noise_seed: u64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: ParameterVector,
    pub loss_ema: f64,
    pub schedule_hash: [u8; 32],
}

/// Training records indexed by sample for attribution lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    records: Vec<TrainRecord>,
    by_sample: Vec<Vec<usize>>,
}

impl TrainLog {
    pub fn new(records: Vec<TrainRecord>) -> Self {
        let n = records.iter().map(|r| r.sample_id + 1).max().unwrap_or(0);
        let mut by_sample = vec![Vec::new(); n];
        for (i, r) in records.iter().enumerate() {
            by_sample[r.sample_id].push(i);
        }
        for idx in &mut by_sample {
            idx.sort_by_key(|&i| (records[i].step, i));
        }
        TrainLog { records, by_sample }
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_steps(&self) -> u64 {
        self.records.iter().map(|r| r.step + 1).max().unwrap_or(0)
    }

    /// All records of `sample_id`, ordered by step.
    pub fn records_for(&self, sample_id: usize) -> impl Iterator<Item = &TrainRecord> {
        self.by_sample
            .get(sample_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    /// The record whose gradient represents `sample_id` at a checkpoint:
    /// the first training of the sample at or after `checkpoint_step`, or,
    /// when the sample is never trained again, its last earlier record.
    pub fn record_at_checkpoint(&self, sample_id: usize, checkpoint_step: u64) -> Result<&TrainRecord> {
        let mut last = None;
        for r in self.records_for(sample_id) {
            if r.step >= checkpoint_step {
                return Ok(r);
            }
            last = Some(r);
        }
        last.ok_or(Error::MissingRecords(sample_id))
    }
}

pub struct TrainOutput {
    pub checkpoints: Vec<Checkpoint>,
    pub log: TrainLog,
    /// Training-time gradient norm of each record, in log order.
    pub grad_norms: Vec<f64>,
}

/// Recomputes per-sample training gradients from `(sample, timestep, seed)`.
#[derive(Clone, Copy)]
pub struct Replayer<'a> {
    pub model: &'a Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub dataset: &'a Dataset,
}

impl<'a> Replayer<'a> {
    pub fn new(model: &'a Denoiser, schedule: &'a NoiseSchedule, dataset: &'a Dataset) -> Self {
        Replayer {
            model,
            schedule,
            dataset,
        }
    }

    /// Loss and gradient of `sample_id` at timestep `t` with noise drawn from `noise_seed`.
    pub fn gradient(
        &self,
        params: &ParameterVector,
        sample_id: usize,
        t: usize,
        noise_seed: u64,
    ) -> Result<(f64, GradientVector)> {
        let x0 = self.dataset.sample(sample_id)?;
        let eps = rng::gaussian(noise_seed, x0.len());
        self.model
            .loss_and_grad(params, self.schedule, x0, t, &eps, LossMetric::default())
    }

    pub fn record_gradient(&self, params: &ParameterVector, record: &TrainRecord) -> Result<GradientVector> {
        Ok(self
            .gradient(params, record.sample_id, record.timestep, record.noise_seed)?
            .1)
    }

    /// Replays `record` at the latest checkpoint not after it.
    pub fn replay_gradient(&self, record: &TrainRecord, checkpoints: &[Checkpoint]) -> Result<GradientVector> {
        let checkpoint = latest_checkpoint_for(record, checkpoints)?;
        if checkpoint.schedule_hash != self.schedule.digest() {
            return Err(Error::Integrity(format!(
                "checkpoint at step {} was trained with a different schedule",
                checkpoint.step
            )));
        }
        self.record_gradient(&checkpoint.params, record)
    }
}

pub fn latest_checkpoint_for<'c>(record: &TrainRecord, checkpoints: &'c [Checkpoint]) -> Result<&'c Checkpoint> {
    checkpoints
        .iter()
        .filter(|c| c.step <= record.step)
        .max_by_key(|c| c.step)
        .ok_or_else(|| Error::Lookup(format!("no checkpoint at or before step {}", record.step)))
}

/// Trains with plain minibatch SGD.
///
/// Each epoch visits a seeded permutation of the dataset in batches; every
/// sample draws its timestep uniformly from `[1, T]` and a fresh noise seed.
/// The update is `-lr` times the mean of the batch's per-sample gradients.
pub fn train(
    dataset: &Dataset,
    model: &Denoiser,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.dim() != model.spec().input_dim {
        return Err(Error::shape("dataset dimension", model.spec().input_dim, dataset.dim()));
    }
    let replayer = Replayer::new(model, schedule, dataset);
    let schedule_hash = schedule.digest();
    let mut params = model.init(rng::derive_seed(cfg.seed, &[0]));
    params.round_to_f32();
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, &[1]));
    let num_timesteps = schedule.num_timesteps();

    let mut records = Vec::new();
    let mut grad_norms = Vec::new();
    let mut checkpoints = Vec::new();
    let mut loss_ema = f64::NAN;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let batch_records: Vec<TrainRecord> = batch
                .iter()
                .map(|&sample_id| TrainRecord {
                    step,
                    sample_id,
                    timestep: rng.random_range(1..=num_timesteps),
                    noise_seed: rng.random(),
                    lr: cfg.lr,
                })
                .collect();
            let results = batch_records
                .par_iter()
                .map(|r| replayer.gradient(&params, r.sample_id, r.timestep, r.noise_seed))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::Numeric { .. } => Error::Divergence { step, loss_ema },
                    other => other,
                })?;
            let batch_loss = results.iter().map(|(l, _)| l).sum::<f64>() / results.len() as f64;
            loss_ema = if loss_ema.is_nan() {
                batch_loss
            } else {
                LOSS_EMA_DECAY * loss_ema + (1.0 - LOSS_EMA_DECAY) * batch_loss
            };
            if !loss_ema.is_finite() {
                return Err(Error::Divergence { step, loss_ema });
            }
            if step == 0 {
                checkpoints.push(Checkpoint {
                    step,
                    params: params.clone(),
                    loss_ema,
                    schedule_hash,
                });
            }
            let grads: Vec<Vec<f64>> = results
                .into_iter()
                .map(|(_, g)| {
                    grad_norms.push(g.norm());
                    g.into_values()
                })
                .collect();
            let mean = pairwise_mean(&grads);
            for (p, g) in params.values_mut().iter_mut().zip(&mean) {
                *p -= cfg.lr * g;
            }
            params.round_to_f32();
            if params.first_non_finite().is_some() {
                return Err(Error::Divergence { step, loss_ema });
            }
            records.extend(batch_records);
            step += 1;
            if step % cfg.checkpoint_every == 0 {
                checkpoints.push(Checkpoint {
                    step,
                    params: params.clone(),
                    loss_ema,
                    schedule_hash,
                });
            }
        }
    }
    if checkpoints.last().is_none_or(|c| c.step != step) {
        checkpoints.push(Checkpoint {
            step,
            params,
            loss_ema,
            schedule_hash,
        });
    }
    Ok(TrainOutput {
        checkpoints,
        log: TrainLog::new(records),
        grad_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::model::DenoiserSpec;

    fn setup(n: usize) -> (Dataset, Denoiser, NoiseSchedule) {
        let samples = (0..n).map(|i| rng::gaussian(100 + i as u64, 4)).collect();
        let data = Dataset::new(samples, vec![0; n]).unwrap();
        let model = Denoiser::new(DenoiserSpec {
            input_dim: 4,
            hidden_dims: vec![16, 16],
            time_embed_dim: 4,
            activation: Default::default(),
        })
        .unwrap();
        (data, model, make_schedule(100, 1e-4, 0.02).unwrap())
    }

    fn cfg(epochs: usize, batch_size: usize, checkpoint_every: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size,
            lr: 0.1,
            seed: 3,
            checkpoint_every,
        }
    }

    #[test]
    fn single_sample_bookkeeping() {
        let (data, model, schedule) = setup(1);
        let out = train(&data, &model, &schedule, &cfg(10, 1, 1)).unwrap();
        assert_eq!(out.log.len(), 10);
        assert!(out.log.records().iter().all(|r| r.sample_id == 0));
        assert_eq!(out.checkpoints.len(), 11);
        for pair in out.checkpoints.windows(2) {
            assert_ne!(pair[0].params, pair[1].params);
        }
    }

    #[test]
    fn identical_seeds_identical_checkpoints() {
        let (data, model, schedule) = setup(6);
        let a = train(&data, &model, &schedule, &cfg(5, 4, 3)).unwrap();
        let b = train(&data, &model, &schedule, &cfg(5, 4, 3)).unwrap();
        assert_eq!(a.checkpoints, b.checkpoints);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn batch_records_share_step() {
        let (data, model, schedule) = setup(10);
        let out = train(&data, &model, &schedule, &cfg(2, 4, 100)).unwrap();
        // 10 samples in batches of 4 -> steps of size 4, 4, 2 per epoch.
        assert_eq!(out.log.len(), 20);
        assert_eq!(out.log.total_steps(), 6);
        let per_step: Vec<_> = (0..6)
            .map(|s| out.log.records().iter().filter(|r| r.step == s).count())
            .collect();
        assert_eq!(per_step, vec![4, 4, 2, 4, 4, 2]);
        let steps: Vec<_> = out.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![0, 6]);
    }

    #[test]
    fn replay_matches_training_gradients() {
        let (data, model, schedule) = setup(3);
        let out = train(&data, &model, &schedule, &cfg(50, 1, 1)).unwrap();
        let replayer = Replayer::new(&model, &schedule, &data);
        assert_eq!(out.log.len(), 150);
        for (record, norm) in out.log.records().iter().zip(&out.grad_norms) {
            let g = replayer.replay_gradient(record, &out.checkpoints).unwrap();
            assert_eq!(g.norm().to_bits(), norm.to_bits());
            let again = replayer.replay_gradient(record, &out.checkpoints).unwrap();
            assert_eq!(g, again);
        }
    }

    #[test]
    fn perturbed_noise_seed_changes_gradient() {
        let (data, model, schedule) = setup(3);
        let out = train(&data, &model, &schedule, &cfg(2, 1, 1)).unwrap();
        let replayer = Replayer::new(&model, &schedule, &data);
        let record = out.log.records()[2];
        let shifted = TrainRecord {
            noise_seed: record.noise_seed.wrapping_add(1),
            ..record
        };
        let a = replayer.replay_gradient(&record, &out.checkpoints).unwrap();
        let b = replayer.replay_gradient(&shifted, &out.checkpoints).unwrap();
        let diff: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn replay_requires_prior_checkpoint_and_matching_schedule() {
        let (data, model, schedule) = setup(2);
        let out = train(&data, &model, &schedule, &cfg(2, 1, 1)).unwrap();
        let replayer = Replayer::new(&model, &schedule, &data);
        let record = out.log.records()[3];
        assert!(matches!(
            replayer.replay_gradient(&record, &out.checkpoints[4..]),
            Err(Error::Lookup(_))
        ));
        let other = make_schedule(100, 1e-4, 0.03).unwrap();
        let foreign = Replayer::new(&model, &other, &data);
        assert!(matches!(
            foreign.replay_gradient(&record, &out.checkpoints),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn record_lookup_by_checkpoint() {
        let records = vec![
            TrainRecord { step: 0, sample_id: 1, timestep: 5, noise_seed: 1, lr: 0.1 },
            TrainRecord { step: 4, sample_id: 1, timestep: 6, noise_seed: 2, lr: 0.1 },
            TrainRecord { step: 2, sample_id: 0, timestep: 7, noise_seed: 3, lr: 0.1 },
        ];
        let log = TrainLog::new(records);
        assert_eq!(log.record_at_checkpoint(1, 0).unwrap().step, 0);
        assert_eq!(log.record_at_checkpoint(1, 3).unwrap().step, 4);
        assert_eq!(log.record_at_checkpoint(1, 9).unwrap().step, 4);
        assert!(matches!(log.record_at_checkpoint(2, 0), Err(Error::MissingRecords(2))));
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let (data, model, schedule) = setup(2);
        assert!(train(&data, &model, &schedule, &cfg(1, 0, 1)).is_err());
        assert!(train(&data, &model, &schedule, &cfg(1, 1, 0)).is_err());
        let wide = Dataset::new(vec![vec![0.0; 5]], vec![0]).unwrap();
        assert!(matches!(
            train(&wide, &model, &schedule, &cfg(1, 1, 1)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn divergence_names_step() {
        let (data, model, schedule) = setup(4);
        let wild = TrainConfig { lr: 1e6, ..cfg(20, 1, 1) };
        match train(&data, &model, &schedule, &wild) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
        }
    }
}
