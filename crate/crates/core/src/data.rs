//! Training datasets and the synthetic planted-outlier generator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MAJORITY: u32 = 0;
pub const MINORITY: u32 = 1;

/// Raw numeric samples with a group label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Vec<f64>>,
    groups: Vec<u32>,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>, groups: Vec<u32>) -> Result<Self> {
        let dim = samples
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Argument("dataset is empty".into()))?;
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::shape("dataset sample", dim, bad.len()));
        }
        if groups.len() != samples.len() {
            return Err(Error::shape("group labels", samples.len(), groups.len()));
        }
        Ok(Dataset { dim, samples, groups })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: usize) -> Result<&[f64]> {
        self.samples
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("sample {id} not in dataset of {}", self.len())))
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    /// Ids of every sample in `group`, ascending.
    pub fn ids_in_group(&self, group: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.groups[i] == group).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    GaussianMixture,
    BarPatterns,
}

/// Majority cluster plus a small, well-separated minority group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub majority_count: usize,
    pub minority_count: usize,
    pub dim: usize,
    pub generator: Generator,
    pub seed: u64,
}

/// Standard deviation of the majority cluster along its spread coordinates.
pub const MAJORITY_STD: f64 = 1.5;
/// The majority varies mainly along this many leading coordinates.
pub const MAJORITY_RANK: usize = 3;
/// Standard deviation of the majority along the remaining coordinates.
pub const MAJORITY_OFF_STD: f64 = 0.01;
/// Per-coordinate standard deviation of the minority cluster.
pub const MINORITY_STD: f64 = 3.0;
/// Magnitude of each minority-mean coordinate.
const MINORITY_OFFSET: f64 = 9.0;
const BAR_NOISE: f64 = 0.1;

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Argument(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.majority_count == 0 {
            return Err(Error::Argument("majority_count must be positive".into()));
        }
        Ok(())
    }

    /// Per-coordinate standard deviations of the majority and minority.
    pub fn stds(&self) -> (Vec<f64>, Vec<f64>) {
        let majority = (0..self.dim)
            .map(|i| if i < MAJORITY_RANK { MAJORITY_STD } else { MAJORITY_OFF_STD })
            .collect();
        (majority, vec![MINORITY_STD; self.dim])
    }

    /// Cluster means; these depend only on `dim`, so every seed draws from
    /// the same distribution.
    pub fn means(&self) -> (Vec<f64>, Vec<f64>) {
        let majority = vec![0.0; self.dim];
        let minority = (0..self.dim)
            .map(|i| if i % 2 == 0 { MINORITY_OFFSET } else { -MINORITY_OFFSET })
            .collect();
        (majority, minority)
    }
}

/// Draws the dataset. Majority samples come first, then the minority.
pub fn make_synthetic(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let (maj_mean, min_mean) = spec.means();
    let (maj_std, min_std) = spec.stds();
    let mut samples = Vec::with_capacity(spec.majority_count + spec.minority_count);
    let mut groups = Vec::with_capacity(samples.capacity());
    for group in [MAJORITY, MINORITY] {
        let count = if group == MAJORITY { spec.majority_count } else { spec.minority_count };
        for _ in 0..count {
            let sample = match spec.generator {
                Generator::GaussianMixture => {
                    let (mean, std) = if group == MAJORITY {
                        (&maj_mean, &maj_std)
                    } else {
                        (&min_mean, &min_std)
                    };
                    mean.iter()
                        .zip(std)
                        .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                }
                Generator::BarPatterns => bar_pattern(&mut rng, spec.dim, group),
            };
            samples.push(sample);
            groups.push(group);
        }
    }
    Dataset::new(samples, groups)
}

/// Majority: one bar of `+1` over a quarter of the coordinates on a `-1`
/// background. Minority: alternating stripes with a random phase.
fn bar_pattern(rng: &mut rng::SeededRng, dim: usize, group: u32) -> Vec<f64> {
    let mut base = vec![-1.0; dim];
    if group == MAJORITY {
        let width = (dim / 4).max(1);
        let start = rng.random_range(0..=dim - width);
        base[start..start + width].fill(1.0);
    } else {
        let phase = rng.random_range(0..2usize);
        for (i, v) in base.iter_mut().enumerate() {
            *v = if (i + phase) % 2 == 0 { 1.0 } else { -1.0 };
        }
    }
    base.iter()
        .map(|b| b + BAR_NOISE * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
