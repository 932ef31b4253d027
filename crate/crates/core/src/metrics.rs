//! Evaluation metrics over attribution scores.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// `k`, a checkpoint step, or another integer key named by the table.
    pub key: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub metric: String,
    pub key_name: String,
    pub rows: Vec<MetricRow>,
    pub metadata: BTreeMap<String, String>,
}

impl MetricTable {
    pub fn new(metric: impl Into<String>, key_name: impl Into<String>) -> Self {
        MetricTable {
            metric: metric.into(),
            key_name: key_name.into(),
            rows: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, key: u64, value: f64) {
        self.rows.push(MetricRow { key, value });
    }

    pub fn value(&self, key: u64) -> Option<f64> {
        self.rows.iter().find(|r| r.key == key).map(|r| r.value)
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }
}

/// Ids of the `k` highest scores (ties toward smaller id).
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order = stats::descending_order(scores);
    order.truncate(k);
    order
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k = {k} must lie in [1, {n}]")));
    }
    Ok(())
}

/// Mean fraction of each test's top-`k` training samples that belong to
/// `target_group`. `score_rows[test][train_id]`; `groups[train_id]`.
///
/// Metadata records `random_baseline`, the group's share of the training set.
pub fn tracing_precision(
    score_rows: &[Vec<f64>],
    groups: &[u32],
    target_group: u32,
    k_values: &[usize],
) -> Result<MetricTable> {
    if score_rows.is_empty() {
        return Err(Error::Argument("no test rows".into()));
    }
    if let Some(row) = score_rows.iter().find(|r| r.len() != groups.len()) {
        return Err(Error::shape("score row", groups.len(), row.len()));
    }
    let baseline = groups.iter().filter(|&&g| g == target_group).count() as f64 / groups.len() as f64;
    let mut table = MetricTable::new("precision", "k")
        .with_meta("random_baseline", baseline)
        .with_meta("n_tests", score_rows.len())
        .with_meta("target_group", target_group);
    for &k in k_values {
        check_k(k, groups.len())?;
        let mean = score_rows
            .iter()
            .map(|row| {
                top_k(row, k).iter().filter(|&&i| groups[i] == target_group).count() as f64 / k as f64
            })
            .sum::<f64>()
            / score_rows.len() as f64;
        table.push(k as u64, mean);
    }
    Ok(table)
}

/// `|union of lists| / (n * k)` over `n` top-`k` lists.
pub fn uniqueness(top_k_lists: &[Vec<usize>]) -> Result<f64> {
    let k = top_k_lists
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Argument("no lists".into()))?;
    if k == 0 {
        return Err(Error::Argument("lists are empty".into()));
    }
    let mut union = HashSet::new();
    for list in top_k_lists {
        if list.len() != k {
            return Err(Error::shape("top-k list", k, list.len()));
        }
        let distinct: HashSet<_> = list.iter().collect();
        if distinct.len() != k {
            return Err(Error::Argument("duplicate id within a top-k list".into()));
        }
        union.extend(list.iter().copied());
    }
    Ok(union.len() as f64 / (top_k_lists.len() * k) as f64)
}

/// Share of outliers recovered in the top-`k` self-influence ranks,
/// `|outliers ∩ top-k| / min(k, |outliers|)`.
pub fn outlier_detection(self_influences: &[f64], outlier_ids: &[usize], k_values: &[usize]) -> Result<MetricTable> {
    if outlier_ids.is_empty() {
        return Err(Error::Argument("no outlier ids".into()));
    }
    let outliers: HashSet<usize> = outlier_ids.iter().copied().collect();
    if let Some(&bad) = outlier_ids.iter().find(|&&i| i >= self_influences.len()) {
        return Err(Error::Argument(format!("outlier id {bad} out of range")));
    }
    let mut table = MetricTable::new("outlier_fraction", "k").with_meta("n_outliers", outliers.len());
    for &k in k_values {
        check_k(k, self_influences.len())?;
        let hits = top_k(self_influences, k).iter().filter(|i| outliers.contains(i)).count();
        table.push(k as u64, hits as f64 / k.min(outliers.len()) as f64);
    }
    Ok(table)
}

/// Spearman correlation between two score vectors over the same ids.
pub fn method_rank_correlation(scores_a: &[f64], scores_b: &[f64]) -> Result<f64> {
    stats::spearman(scores_a, scores_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_attribution_precision() {
        let groups = [0, 0, 1, 1, 0];
        let rows = vec![vec![0.1, 0.0, 5.0, 4.0, 0.2]];
        let t = tracing_precision(&rows, &groups, 1, &[1, 2, 5]).unwrap();
        assert_eq!(t.value(1), Some(1.0));
        assert_eq!(t.value(2), Some(1.0));
        // k = |dataset| always yields the group fraction.
        assert_eq!(t.value(5), Some(0.4));
        assert_eq!(t.metadata["random_baseline"], "0.4");
        assert!(tracing_precision(&rows, &groups, 1, &[6]).is_err());
    }

    #[test]
    fn random_scores_hit_the_baseline() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(4);
        let n = 2500;
        let groups: Vec<u32> = (0..n).map(|i| u32::from(i % 25 == 0)).collect();
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let t = tracing_precision(&rows, &groups, 1, &[500]).unwrap();
        // 0.04 +/- 4 binomial standard errors over 40 * 500 draws.
        let se = (0.04f64 * 0.96 / 20_000.0).sqrt();
        assert!((t.value(500).unwrap() - 0.04).abs() < 4.0 * se);
    }

    #[test]
    fn uniqueness_bounds() {
        let same = vec![vec![1, 2, 3]; 4];
        assert_eq!(uniqueness(&same).unwrap(), 0.25);
        let disjoint = vec![vec![1, 2], vec![3, 4], vec![5, 6]];
        assert_eq!(uniqueness(&disjoint).unwrap(), 1.0);
        assert!(uniqueness(&[vec![1, 1]]).is_err());
        assert!(uniqueness(&[]).is_err());
    }

    #[test]
    fn outlier_detection_extremes() {
        let scores = [0.1, 0.2, 9.0, 8.0, 0.3];
        let top = outlier_detection(&scores, &[2, 3], &[2]).unwrap();
        assert_eq!(top.value(2), Some(1.0));
        let bottom = outlier_detection(&scores, &[0, 1], &[2]).unwrap();
        assert_eq!(bottom.value(2), Some(0.0));
        let wide = outlier_detection(&scores, &[2, 3], &[4]).unwrap();
        assert_eq!(wide.value(4), Some(1.0));
    }

    #[test]
    fn rank_correlation_identity_and_negation() {
        let a = [0.3, -1.0, 2.0, 0.7];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(method_rank_correlation(&a, &a).unwrap(), 1.0);
        assert_eq!(method_rank_correlation(&a, &neg).unwrap(), -1.0);
        assert!(method_rank_correlation(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn uniqueness_lies_between_one_over_n_and_one(
            lists in proptest::collection::vec(proptest::sample::subsequence((0..40usize).collect::<Vec<_>>(), 5), 1..10)
        ) {
            let u = uniqueness(&lists).unwrap();
            let n = lists.len() as f64;
            proptest::prop_assert!(u >= 1.0 / n - 1e-12 && u <= 1.0);
        }
    }
}
