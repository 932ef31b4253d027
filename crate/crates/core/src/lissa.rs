//! LiSSA estimation of inverse-Hessian-vector products.
//!
//! The recursion `v_j = v + (I - (H + damping I) / scale) v_{j-1}` converges to
//! `scale (H + damping I)^{-1} v` when `scale` exceeds the largest eigenvalue
//! of `H + damping I`; the estimate is `v_depth / scale`, averaged over
//! independent repeats. `H` is only touched through Hessian-vector products,
//! which may be stochastic (a fresh minibatch per call).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::l2_norm;

/// Growth of `|v_j|` beyond this multiple of `|v|` is reported as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LissaConfig {
    pub depth: usize,
    pub damping: f64,
    pub scale: f64,
    pub repeats: usize,
    /// Training samples per stochastic Hessian-vector product.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_batch() -> usize {
    8
}

impl Default for LissaConfig {
    fn default() -> Self {
        LissaConfig {
            depth: 100,
            damping: 0.01,
            scale: 25.0,
            repeats: 2,
            batch_size: default_batch(),
            seed: 0,
        }
    }
}

impl LissaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.repeats == 0 || self.batch_size == 0 {
            return Err(Error::Argument("LiSSA depth, repeats and batch_size must be >= 1".into()));
        }
        if !(self.scale > 0.0) || !(self.damping >= 0.0) {
            return Err(Error::Argument("LiSSA needs scale > 0 and damping >= 0".into()));
        }
        Ok(())
    }
}

/// Approximates `(H + damping I)^{-1} v`.
///
/// `hvp(u, repeat, depth)` must return `H u`; the indices let stochastic
/// implementations pick a deterministic minibatch per call.
pub fn inverse_hvp<F>(v: &[f64], cfg: &LissaConfig, mut hvp: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], usize, usize) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let v_norm = l2_norm(v);
    let mut total = vec![0.0; v.len()];
    for repeat in 0..cfg.repeats {
        let mut cur = v.to_vec();
        for depth in 0..cfg.depth {
            let hv = hvp(&cur, repeat, depth)?;
            let next: Vec<f64> = v
                .iter()
                .zip(&cur)
                .zip(&hv)
                .map(|((vi, ci), hi)| vi + ci - (hi + cfg.damping * ci) / cfg.scale)
                .collect();
            let norm = l2_norm(&next);
            if !norm.is_finite() || norm > DIVERGENCE_FACTOR * v_norm.max(f64::MIN_POSITIVE) {
                return Err(Error::LissaDivergence { depth });
            }
            cur = next;
        }
        for (t, c) in total.iter_mut().zip(&cur) {
            *t += c / cfg.scale;
        }
    }
    let repeats = cfg.repeats as f64;
    Ok(total.into_iter().map(|t| t / repeats).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
    }

    /// Gaussian elimination with partial pivoting; the exact-solve oracle.
    fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, bi)| {
            let mut row = r.clone();
            row.push(*bi);
            row
        }).collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, piv);
            for row in col + 1..n {
                let f = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    /// SPD matrix `B^T B + I` from a seeded `B`.
    fn spd(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let b: Vec<Vec<f64>> = (0..n).map(|i| rng::gaussian(seed + i as u64, n)).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>() / n as f64 + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn quadratic_loss_matches_exact_solve() {
        for seed in [1u64, 20, 300] {
            let a = spd(12, seed);
            let v = rng::gaussian(seed + 999, 12);
            let exact = solve(&a, &v);
            let cfg = LissaConfig { depth: 2000, damping: 0.0, scale: 20.0, repeats: 1, ..Default::default() };
            let approx = inverse_hvp(&v, &cfg, |u, _, _| Ok(matvec(&a, u))).unwrap();
            let err: f64 = exact.iter().zip(&approx).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(err / l2_norm(&exact) < 0.05);
        }
    }

    #[test]
    fn identity_hessian_returns_input() {
        let v = vec![1.0, -2.0, 0.5];
        let cfg = LissaConfig { depth: 10, damping: 0.0, scale: 1.0, repeats: 3, ..Default::default() };
        let out = inverse_hvp(&v, &cfg, |u, _, _| Ok(u.to_vec())).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn too_small_scale_diverges() {
        let v = vec![1.0, 1.0];
        let cfg = LissaConfig { depth: 200, damping: 0.0, scale: 0.5, repeats: 1, ..Default::default() };
        let out = inverse_hvp(&v, &cfg, |u, _, _| Ok(u.iter().map(|x| 10.0 * x).collect()));
        assert!(matches!(out, Err(Error::LissaDivergence { .. })));
    }
}
