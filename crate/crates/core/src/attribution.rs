//! Influence of training samples on test samples.
//!
//! Scores are sums over checkpoints `k` of `lr_k * <test side, train side>`:
//!
//! * the test side is the mean gradient of the test sample's loss over the
//!   timesteps in `S` (`n_t` evenly spaced points in `[1, T]`) and `m` noise
//!   draws per timestep, each draw seeded from `(noise_seed, t, i)`;
//! * the train side is the replayed gradient of the training sample at its
//!   logged timestep and noise seed, evaluated at the checkpoint.
//!
//! TracIn uses both sides as is. ReTrac unit-normalizes every test-side draw
//! before averaging and the train-side gradient, so each term is bounded by
//! `lr_k`. Guided normalization replaces each train-side norm by an
//! interpolated effective norm (see [`guided_normalize`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::evenly_spaced_timesteps;
use crate::error::{Error, Result};
use crate::lissa::{self, LissaConfig};
use crate::model::LossMetric;
use crate::params::{pairwise_mean, GradientVector, ParameterVector};
use crate::rng;
use crate::trainer::{Checkpoint, Replayer, TrainLog, TrainRecord};

pub const DEFAULT_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Method {
    Tracin,
    Retrac,
    /// Partial normalization with lower threshold `lambda` in `(0, 1]`.
    Guided {
        lambda: f64,
        /// Timestep at which sample norms are compared; `None` picks the
        /// timestep with the largest mean norm at each checkpoint.
        #[serde(default)]
        timestep: Option<usize>,
    },
    InfluenceFunction,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Tracin => "tracin",
            Method::Retrac => "retrac",
            Method::Guided { .. } => "guided",
            Method::InfluenceFunction => "influence-function",
        }
    }

    fn normalizes_test_side(&self) -> bool {
        matches!(self, Method::Retrac | Method::Guided { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionConfig {
    /// Number of sub-sampled test timesteps.
    #[serde(default = "default_n_t")]
    pub n_t: usize,
    /// Noise draws per test timestep.
    #[serde(default = "default_m")]
    pub m: usize,
    pub noise_seed: u64,
    pub method: Method,
    #[serde(default = "default_norm_floor")]
    pub norm_floor: f64,
}

fn default_n_t() -> usize {
    50
}
fn default_m() -> usize {
    2
}
fn default_norm_floor() -> f64 {
    DEFAULT_NORM_FLOOR
}

impl AttributionConfig {
    pub fn new(method: Method) -> Self {
        AttributionConfig {
            n_t: default_n_t(),
            m: default_m(),
            noise_seed: 0,
            method,
            norm_floor: DEFAULT_NORM_FLOOR,
        }
    }
}

/// Influence of one training sample on one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScore {
    pub train_id: usize,
    pub test_id: usize,
    pub score: f64,
    pub per_checkpoint: Vec<f64>,
}

impl InfluenceScore {
    fn from_terms(train_id: usize, test_id: usize, per_checkpoint: Vec<f64>) -> Self {
        InfluenceScore {
            train_id,
            test_id,
            score: per_checkpoint.iter().sum(),
            per_checkpoint,
        }
    }
}

/// Averaged test-side gradient at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TestGradient {
    pub checkpoint_step: u64,
    pub vector: GradientVector,
    pub normalized: bool,
}

/// Mean of per-draw gradients, unit-normalizing each first when asked.
///
/// `labels` identify each draw as `(timestep, draw)` for error reporting.
pub fn mean_gradient(
    grads: Vec<GradientVector>,
    labels: &[(usize, usize)],
    normalize: bool,
    norm_floor: f64,
) -> Result<GradientVector> {
    let vectors = grads
        .into_iter()
        .zip(labels)
        .map(|(g, &(timestep, draw))| {
            if normalize {
                g.normalized(norm_floor)
                    .map(GradientVector::into_values)
                    .ok_or(Error::DegenerateGradient {
                        timestep,
                        draw,
                        norm: g.norm(),
                    })
            } else {
                Ok(g.into_values())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientVector::new(pairwise_mean(&vectors)))
}

/// One TracIn checkpoint term: `lr * <test, train>`.
pub fn tracin_term(lr: f64, test: &GradientVector, train: &GradientVector) -> f64 {
    lr * test.dot(train)
}

/// One ReTrac checkpoint term: `lr * <test, train / |train|>`, where `test` is
/// already the mean of unit-normalized draws.
pub fn retrac_term(lr: f64, test: &GradientVector, train: &GradientVector, norm_floor: f64) -> Result<f64> {
    let unit = train.normalized(norm_floor).ok_or(Error::DegenerateGradient {
        timestep: 0,
        draw: 0,
        norm: train.norm(),
    })?;
    Ok(lr * test.dot(&unit))
}

/// Per-sample factors for guided normalization.
///
/// The largest norm keeps factor 1 and the smallest is raised to
/// `lambda * max`; norms in between map linearly onto
/// `[lambda * max, max]`. The factor is `effective / original`.
pub fn guided_normalize(norms: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Argument(format!("lambda {lambda} outside (0, 1]")));
    }
    if let Some(bad) = norms.iter().find(|&&n| !(n > 0.0 && n.is_finite())) {
        return Err(Error::Argument(format!("norm {bad} is not positive")));
    }
    let max = norms.iter().copied().fold(f64::MIN, f64::max);
    let min = norms.iter().copied().fold(f64::MAX, f64::min);
    if max == min {
        return Ok(vec![1.0; norms.len()]);
    }
    Ok(norms
        .iter()
        .map(|&n| {
            let effective = lambda * max + (n - min) / (max - min) * (1.0 - lambda) * max;
            effective / n
        })
        .collect())
}

/// Evenly spaced checkpoints, skipping the first `skip_fraction` of training.
pub fn select_checkpoints(checkpoints: &[Checkpoint], count: usize, skip_fraction: f64) -> Result<Vec<&Checkpoint>> {
    if count == 0 {
        return Err(Error::Argument("need at least one checkpoint".into()));
    }
    let last = checkpoints
        .iter()
        .map(|c| c.step)
        .max()
        .ok_or_else(|| Error::Lookup("no checkpoints".into()))?;
    let cutoff = (skip_fraction * last as f64).ceil() as u64;
    let mut eligible: Vec<&Checkpoint> = checkpoints.iter().filter(|c| c.step >= cutoff).collect();
    eligible.sort_by_key(|c| c.step);
    eligible.dedup_by_key(|c| c.step);
    if eligible.len() <= count {
        return Ok(eligible);
    }
    if count == 1 {
        return Ok(vec![eligible[eligible.len() - 1]]);
    }
    let span = (eligible.len() - 1) as f64;
    let mut picked: Vec<&Checkpoint> = (0..count)
        .map(|j| eligible[(j as f64 * span / (count - 1) as f64).round() as usize])
        .collect();
    picked.dedup_by_key(|c| c.step);
    Ok(picked)
}

/// Attribution over a fixed set of checkpoints and a training log.
pub struct Attributor<'a> {
    replayer: Replayer<'a>,
    log: &'a TrainLog,
    checkpoints: Vec<&'a Checkpoint>,
    cfg: AttributionConfig,
    timesteps: Vec<usize>,
    /// Effective train-side norms per checkpoint (guided normalization only).
    guided: Option<Vec<Vec<f64>>>,
}

impl<'a> Attributor<'a> {
    pub fn new(
        replayer: Replayer<'a>,
        log: &'a TrainLog,
        checkpoints: Vec<&'a Checkpoint>,
        cfg: AttributionConfig,
    ) -> Result<Self> {
        let num_timesteps = replayer.schedule.num_timesteps();
        if cfg.m == 0 {
            return Err(Error::Argument("m must be >= 1".into()));
        }
        let timesteps = evenly_spaced_timesteps(cfg.n_t, num_timesteps)?;
        if checkpoints.is_empty() {
            return Err(Error::Argument("no checkpoints selected".into()));
        }
        if checkpoints.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::Argument("checkpoints must be sorted by step and distinct".into()));
        }
        let digest = replayer.schedule.digest();
        if let Some(c) = checkpoints.iter().find(|c| c.schedule_hash != digest) {
            return Err(Error::Integrity(format!(
                "schedule hash of checkpoint {} differs from the attribution schedule",
                c.step
            )));
        }
        let mut attributor = Attributor {
            replayer,
            log,
            checkpoints,
            cfg,
            timesteps,
            guided: None,
        };
        if let Method::Guided { lambda, timestep } = attributor.cfg.method {
            attributor.guided = Some(attributor.guided_effective_norms(lambda, timestep)?);
        }
        Ok(attributor)
    }

    pub fn config(&self) -> &AttributionConfig {
        &self.cfg
    }

    pub fn checkpoints(&self) -> &[&'a Checkpoint] {
        &self.checkpoints
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn replayer(&self) -> &Replayer<'a> {
        &self.replayer
    }

    pub fn log(&self) -> &TrainLog {
        self.log
    }

    fn dataset_len(&self) -> usize {
        self.replayer.dataset.len()
    }

    /// Seed of test-side draw `i` at timestep `t`. Every method built from
    /// the same config sees identical noise.
    pub fn test_noise_seed(&self, t: usize, draw: usize) -> u64 {
        rng::derive_seed(self.cfg.noise_seed, &[t as u64, draw as u64])
    }

    /// Test-side gradient over an explicit timestep set.
    pub fn test_gradient_over(
        &self,
        z_test: &[f64],
        checkpoint: &Checkpoint,
        timesteps: &[usize],
        normalize: bool,
    ) -> Result<TestGradient> {
        let labels: Vec<(usize, usize)> = timesteps
            .iter()
            .flat_map(|&t| (0..self.cfg.m).map(move |i| (t, i)))
            .collect();
        let grads = labels
            .par_iter()
            .map(|&(t, i)| {
                let eps = rng::gaussian(self.test_noise_seed(t, i), z_test.len());
                self.replayer
                    .model
                    .loss_and_grad(&checkpoint.params, self.replayer.schedule, z_test, t, &eps, LossMetric::default())
                    .map(|(_, g)| g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TestGradient {
            checkpoint_step: checkpoint.step,
            vector: mean_gradient(grads, &labels, normalize, self.cfg.norm_floor)?,
            normalized: normalize,
        })
    }

    /// Mean gradient of `z_test` over `S` and `m` noise draws at `checkpoint`.
    pub fn test_gradient(&self, z_test: &[f64], checkpoint: &Checkpoint, normalize: bool) -> Result<TestGradient> {
        self.test_gradient_over(z_test, checkpoint, &self.timesteps, normalize)
    }

    /// Test-side gradients at every selected checkpoint, normalized per method.
    pub fn test_gradients(&self, z_test: &[f64]) -> Result<Vec<TestGradient>> {
        let normalize = self.cfg.method.normalizes_test_side();
        self.checkpoints
            .iter()
            .map(|c| self.test_gradient(z_test, c, normalize))
            .collect()
    }

    /// Record used for `sample_id` at checkpoint index `k`.
    pub fn train_record(&self, sample_id: usize, k: usize) -> Result<&TrainRecord> {
        self.log.record_at_checkpoint(sample_id, self.checkpoints[k].step)
    }

    /// Raw replayed training gradient, optionally at a substituted timestep.
    pub fn train_gradient(&self, sample_id: usize, k: usize, timestep: Option<usize>) -> Result<(f64, GradientVector)> {
        let record = *self.train_record(sample_id, k)?;
        let record = TrainRecord {
            timestep: timestep.unwrap_or(record.timestep),
            ..record
        };
        let g = self.replayer.record_gradient(&self.checkpoints[k].params, &record)?;
        Ok((record.lr, g))
    }

    fn train_side(&self, sample_id: usize, k: usize, timestep: Option<usize>) -> Result<(f64, GradientVector)> {
        let (lr, g) = self.train_gradient(sample_id, k, timestep)?;
        let floor = self.cfg.norm_floor;
        let degenerate = |g: &GradientVector| Error::DegenerateGradient {
            timestep: timestep.unwrap_or(0),
            draw: 0,
            norm: g.norm(),
        };
        let side = match self.cfg.method {
            Method::Tracin | Method::InfluenceFunction => g,
            Method::Retrac => g.normalized(floor).ok_or_else(|| degenerate(&g))?,
            Method::Guided { .. } => {
                let effective = self.guided.as_ref().expect("guided norms computed")[k][sample_id];
                g.normalized(floor).ok_or_else(|| degenerate(&g))?.scaled(effective)
            }
        };
        Ok((lr, side))
    }

    /// Per-checkpoint terms of one training sample against precomputed test
    /// gradients. `timesteps`, when given, overrides the logged training
    /// timestep at each checkpoint.
    pub fn checkpoint_terms(
        &self,
        test: &[TestGradient],
        sample_id: usize,
        timesteps: Option<&[usize]>,
    ) -> Result<Vec<f64>> {
        if test.len() != self.checkpoints.len() {
            return Err(Error::shape("test gradients", self.checkpoints.len(), test.len()));
        }
        (0..self.checkpoints.len())
            .map(|k| {
                let (lr, side) = self.train_side(sample_id, k, timesteps.map(|ts| ts[k]))?;
                Ok(lr * test[k].vector.dot(&side))
            })
            .collect()
    }

    /// Scores every `train_ids` entry against every test sample.
    ///
    /// Returns one row per test, ordered like `train_ids`.
    pub fn score(&self, tests: &[&[f64]], train_ids: &[usize]) -> Result<Vec<Vec<InfluenceScore>>> {
        if tests.is_empty() {
            return Err(Error::Argument("empty test set".into()));
        }
        if self.cfg.method == Method::InfluenceFunction {
            return Err(Error::Argument(
                "influence-function scores come from influence_function_scores".into(),
            ));
        }
        let s = self.checkpoints.len();
        // terms[test][train][k]
        let mut terms = vec![vec![vec![0.0; s]; train_ids.len()]; tests.len()];
        for k in 0..s {
            let normalize = self.cfg.method.normalizes_test_side();
            let test_grads = tests
                .iter()
                .map(|z| self.test_gradient(z, self.checkpoints[k], normalize))
                .collect::<Result<Vec<_>>>()?;
            let rows = train_ids
                .par_iter()
                .map(|&id| {
                    let (lr, side) = self.train_side(id, k, None)?;
                    Ok(test_grads.iter().map(|tg| lr * tg.vector.dot(&side)).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            for (j, row) in rows.into_iter().enumerate() {
                for (test_id, value) in row.into_iter().enumerate() {
                    terms[test_id][j][k] = value;
                }
            }
        }
        Ok(terms
            .into_iter()
            .enumerate()
            .map(|(test_id, per_train)| {
                per_train
                    .into_iter()
                    .zip(train_ids)
                    .map(|(per_checkpoint, &id)| InfluenceScore::from_terms(id, test_id, per_checkpoint))
                    .collect()
            })
            .collect())
    }

    /// Scores the whole training set against each test sample.
    pub fn score_all(&self, tests: &[&[f64]]) -> Result<Vec<Vec<InfluenceScore>>> {
        let ids: Vec<usize> = (0..self.dataset_len()).collect();
        self.score(tests, &ids)
    }

    /// Influence of training sample `z` on `z_test` under the configured method.
    pub fn influence(&self, z: usize, z_test: &[f64]) -> Result<InfluenceScore> {
        Ok(self.score(&[z_test], &[z])?.remove(0).remove(0))
    }

    /// `A(z, z)`: each sample scored against its own test-side expectation.
    pub fn self_influence(&self, train_ids: &[usize]) -> Result<Vec<InfluenceScore>> {
        if self.cfg.method == Method::InfluenceFunction {
            return Err(Error::Argument("self-influence is defined for tracin, retrac and guided".into()));
        }
        train_ids
            .par_iter()
            .map(|&id| {
                let x = self.replayer.dataset.sample(id)?;
                let test = self.test_gradients(x)?;
                let terms = self.checkpoint_terms(&test, id, None)?;
                Ok(InfluenceScore::from_terms(id, id, terms))
            })
            .collect()
    }

    /// TracIn restricted to a single test timestep `t`, averaged over the `m`
    /// noise draws and summed over checkpoints.
    pub fn tracin_at_t(&self, z: usize, z_test: &[f64], t: usize) -> Result<f64> {
        self.replayer.schedule.check_timestep(t)?;
        let mut total = 0.0;
        for (k, checkpoint) in self.checkpoints.iter().enumerate() {
            let test = self.test_gradient_over(z_test, checkpoint, &[t], false)?;
            let (lr, train) = self.train_gradient(z, k, None)?;
            total += tracin_term(lr, &test.vector, &train);
        }
        Ok(total)
    }

    fn guided_effective_norms(&self, lambda: f64, timestep: Option<usize>) -> Result<Vec<Vec<f64>>> {
        let n = self.dataset_len();
        let num_timesteps = self.replayer.schedule.num_timesteps();
        (0..self.checkpoints.len())
            .map(|k| {
                let norms_at = |t: usize| -> Result<Vec<f64>> {
                    (0..n)
                        .into_par_iter()
                        .map(|id| Ok(self.train_gradient(id, k, Some(t))?.1.norm()))
                        .collect()
                };
                let t = match timestep {
                    Some(t) => {
                        self.replayer.schedule.check_timestep(t)?;
                        t
                    }
                    None => {
                        let probes = evenly_spaced_timesteps(20.min(num_timesteps), num_timesteps)?;
                        let mut best = (probes[0], f64::MIN);
                        for &t in &probes {
                            let mean = norms_at(t)?.iter().sum::<f64>() / n as f64;
                            if mean > best.1 {
                                best = (t, mean);
                            }
                        }
                        best.0
                    }
                };
                let norms = norms_at(t)?;
                let factors = guided_normalize(&norms, lambda)?;
                Ok(norms.iter().zip(factors).map(|(n, f)| n * f).collect())
            })
            .collect()
    }

    /// Influence-function scores `<(H + damping I)^{-1} g_test, g_z>` at the
    /// last selected checkpoint, where both gradients are expectations over
    /// `S` and the Hessian is that of the training objective, estimated by
    /// finite differences of minibatch gradients.
    ///
    /// The returned score is the negated influence function `-I(z, z_test)`,
    /// so larger values mark proponents as for the other methods.
    pub fn influence_function_scores(
        &self,
        tests: &[&[f64]],
        train_ids: &[usize],
        lissa_cfg: &LissaConfig,
    ) -> Result<Vec<Vec<InfluenceScore>>> {
        if tests.is_empty() {
            return Err(Error::Argument("empty test set".into()));
        }
        let checkpoint = *self.checkpoints.last().expect("at least one checkpoint");
        let train_grads = train_ids
            .par_iter()
            .map(|&id| {
                let x = self.replayer.dataset.sample(id)?;
                Ok(self.test_gradient(x, checkpoint, false)?.vector)
            })
            .collect::<Result<Vec<_>>>()?;
        tests
            .iter()
            .enumerate()
            .map(|(test_id, z)| {
                let g_test = self.test_gradient(z, checkpoint, false)?.vector;
                let s_test = self.inverse_hvp(checkpoint, g_test.values(), lissa_cfg)?;
                let s_test = GradientVector::new(s_test);
                Ok(train_grads
                    .iter()
                    .zip(train_ids)
                    .map(|(g, &id)| InfluenceScore::from_terms(id, test_id, vec![s_test.dot(g)]))
                    .collect())
            })
            .collect()
    }

    /// `I(z, z_test) = -<g_test, H^{-1} g_z>` for a single pair.
    pub fn influence_function(&self, z: usize, z_test: &[f64], lissa_cfg: &LissaConfig) -> Result<f64> {
        let scores = self.influence_function_scores(&[z_test], &[z], lissa_cfg)?;
        Ok(-scores[0][0].score)
    }

    fn inverse_hvp(&self, checkpoint: &Checkpoint, v: &[f64], cfg: &LissaConfig) -> Result<Vec<f64>> {
        let n = self.dataset_len();
        let num_timesteps = self.replayer.schedule.num_timesteps();
        lissa::inverse_hvp(v, cfg, |u, repeat, depth| {
            let mut rng = rng::seeded(rng::derive_seed(cfg.seed, &[repeat as u64, depth as u64]));
            let batch: Vec<(usize, usize, u64)> = (0..cfg.batch_size)
                .map(|_| {
                    use rand::Rng;
                    (rng.random_range(0..n), rng.random_range(1..=num_timesteps), rng.random())
                })
                .collect();
            hessian_vector_product(&self.replayer, &checkpoint.params, &batch, u)
        })
    }
}

/// Central finite difference of minibatch gradients along `u`.
fn hessian_vector_product(
    replayer: &Replayer<'_>,
    params: &ParameterVector,
    batch: &[(usize, usize, u64)],
    u: &[f64],
) -> Result<Vec<f64>> {
    let u_norm = crate::params::l2_norm(u);
    if u_norm == 0.0 {
        return Ok(vec![0.0; u.len()]);
    }
    let h = 1e-4 / u_norm;
    let shifted = |sign: f64| -> Result<Vec<f64>> {
        let mut p = params.clone();
        for (v, d) in p.values_mut().iter_mut().zip(u) {
            *v += sign * h * d;
        }
        let grads = batch
            .par_iter()
            .map(|&(id, t, seed)| Ok(replayer.gradient(&p, id, t, seed)?.1.into_values()))
            .collect::<Result<Vec<_>>>()?;
        Ok(pairwise_mean(&grads))
    };
    let plus = shifted(1.0)?;
    let minus = shifted(-1.0)?;
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f64]) -> GradientVector {
        GradientVector::new(v.to_vec())
    }

    #[test]
    fn tracin_term_of_identical_gradients() {
        let v = g(&[1.0, -2.0, 2.0]);
        assert!((tracin_term(0.1, &v, &v) - 0.1 * 9.0).abs() < 1e-15);
        assert_eq!(tracin_term(0.1, &g(&[1.0, 0.0]), &g(&[0.0, 3.0])), 0.0);
    }

    #[test]
    fn retrac_terms_of_aligned_and_opposite_gradients() {
        let lrs = [0.1, 0.05, 0.2];
        let dirs = [g(&[3.0, 4.0]), g(&[-1.0, 1.0]), g(&[0.0, 2.0])];
        let mut aligned = 0.0;
        let mut opposite = 0.0;
        for (lr, d) in lrs.iter().zip(&dirs) {
            let test = mean_gradient(vec![d.scaled(7.0)], &[(1, 0)], true, 1e-12).unwrap();
            aligned += retrac_term(*lr, &test, &d.scaled(0.01), 1e-12).unwrap();
            opposite += retrac_term(*lr, &test, &d.scaled(-50.0), 1e-12).unwrap();
        }
        let total: f64 = lrs.iter().sum();
        assert!((aligned - total).abs() < 1e-15);
        assert!((opposite + total).abs() < 1e-15);
    }

    #[test]
    fn mean_of_one_and_unit_ball() {
        let one = mean_gradient(vec![g(&[2.0, 0.0])], &[(5, 0)], false, 1e-12).unwrap();
        assert_eq!(one.values(), &[2.0, 0.0]);
        let draws: Vec<_> = (0..10).map(|i| g(&[i as f64 + 1.0, (i * i) as f64 - 3.0, 0.5])).collect();
        let labels: Vec<_> = (0..5).flat_map(|t| (0..2).map(move |i| (t, i))).collect();
        let mean = mean_gradient(draws, &labels, true, 1e-12).unwrap();
        assert!(mean.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn degenerate_draw_is_identified() {
        let draws = vec![g(&[1.0, 0.0]), g(&[0.0, 0.0])];
        match mean_gradient(draws, &[(3, 0), (3, 1)], true, 1e-12) {
            Err(Error::DegenerateGradient { timestep: 3, draw: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn guided_two_sample_example() {
        let f = guided_normalize(&[10.0, 2.0], 0.5).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-15);
        assert!((f[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn guided_threshold_collapse_and_degenerate_cases() {
        let norms = [4.0, 1.0, 2.5, 9.0];
        let f = guided_normalize(&norms, 1.0).unwrap();
        for (n, f) in norms.iter().zip(&f) {
            assert!((n * f - 9.0).abs() < 1e-12);
        }
        assert_eq!(guided_normalize(&[3.0, 3.0], 0.2).unwrap(), vec![1.0, 1.0]);
        assert!(guided_normalize(&[3.0, 0.0], 0.2).is_err());
        assert!(guided_normalize(&[3.0, 1.0], 0.0).is_err());
        assert!(guided_normalize(&[3.0, 1.0], 1.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn guided_effective_norms_preserve_order(
            norms in proptest::collection::vec(0.01f64..100.0, 2..30),
            lambda in 0.01f64..=1.0,
        ) {
            let f = guided_normalize(&norms, lambda).unwrap();
            let max = norms.iter().copied().fold(f64::MIN, f64::max);
            let eff: Vec<f64> = norms.iter().zip(&f).map(|(n, f)| n * f).collect();
            for i in 0..norms.len() {
                proptest::prop_assert!(eff[i] >= lambda * max * (1.0 - 1e-12));
                proptest::prop_assert!(eff[i] <= max * (1.0 + 1e-12));
                for j in 0..norms.len() {
                    if norms[i] > norms[j] {
                        proptest::prop_assert!(eff[i] >= eff[j] * (1.0 - 1e-12));
                    }
                }
            }
        }
    }
}
