//! Rank statistics and the significance tests used by the diagnostics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest sample size for which Spearman p-values enumerate every permutation.
pub const EXACT_PERMUTATION_MAX_N: usize = 10;

/// 1-based ascending ranks, ties receiving the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = mid;
        }
        i = j + 1;
    }
    out
}

/// Ids ordered by descending score, ties broken by ascending id.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Position of each id in [`descending_order`], 1 = largest score.
pub fn descending_ranks(scores: &[f64]) -> Vec<usize> {
    let mut rank = vec![0; scores.len()];
    for (pos, id) in descending_order(scores).into_iter().enumerate() {
        rank[id] = pos + 1;
    }
    rank
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("input is constant"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of the (tie-averaged) ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("spearman inputs", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMethod {
    ExactPermutation,
    StudentT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Spearman's rho with a two-sided p-value: exact over all permutations for
/// `n <= EXACT_PERMUTATION_MAX_N`, Student-t approximation above.
pub fn spearman_test(a: &[f64], b: &[f64]) -> Result<SpearmanTest> {
    let rho = spearman(a, b)?;
    let n = a.len();
    if n <= EXACT_PERMUTATION_MAX_N {
        let ra = ranks(a);
        let mut rb = ranks(b);
        let mut extreme = 0u64;
        let mut total = 0u64;
        let threshold = rho.abs() - 1e-12;
        heap_permutations(&mut rb, &mut |perm| {
            total += 1;
            if pearson(&ra, perm).map_or(false, |r| r.abs() >= threshold) {
                extreme += 1;
            }
        });
        return Ok(SpearmanTest {
            rho,
            p_value: extreme as f64 / total as f64,
            method: PValueMethod::ExactPermutation,
        });
    }
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * dist.cdf(-t.abs())
    };
    Ok(SpearmanTest {
        rho,
        p_value,
        method: PValueMethod::StudentT,
    })
}

/// Visits every permutation of `items` (Heap's algorithm).
fn heap_permutations(items: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("regression inputs", x.len(), y.len()));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("regressor is constant"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// One-sided sign test for a positive median; zeros are dropped.
///
/// Returns `P(X >= positives)` for `X ~ Binomial(n_nonzero, 1/2)`.
pub fn sign_test_greater(values: &[f64]) -> f64 {
    let positives = values.iter().filter(|&&v| v > 0.0).count() as u64;
    let nonzero = values.iter().filter(|&&v| v != 0.0).count() as u64;
    if nonzero == 0 {
        return 1.0;
    }
    if positives == 0 {
        return 1.0;
    }
    let dist = Binomial::new(0.5, nonzero).expect("valid binomial");
    dist.sf(positives - 1)
}

/// Chi-square goodness-of-fit p-value against equal cell probabilities.
pub fn chi_square_uniform(counts: &[u64]) -> Result<f64> {
    if counts.len() < 2 {
        return Err(Error::Argument("need at least two cells".into()));
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    Ok(1.0 - dist.cdf(stat))
}
