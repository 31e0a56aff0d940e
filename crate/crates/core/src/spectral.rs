//! Seeded Lanczos iteration for operators that are symmetric in a weighted
//! inner product.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanczosConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig { steps: 120, seed: 0x5eed }
    }
}

#[derive(Debug, Clone)]
pub struct RitzPair {
    pub value: f64,
    /// Normalized in the weighted inner product.
    pub vector: Vec<f64>,
    /// `|A v - value v|` estimate from the recurrence.
    pub residual: f64,
}

/// Ritz pairs of `op` in ascending order.
///
/// `inner` must be the inner product in which `op` is symmetric. The
/// Krylov basis is fully reorthogonalized.
pub fn lanczos(
    op: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    inner: &dyn Fn(&[f64], &[f64]) -> f64,
    dim: usize,
    cfg: LanczosConfig,
) -> Result<Vec<RitzPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = inner(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let steps = cfg.steps.min(dim).max(1);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..steps {
        let mut w = op(&basis[j])?;
        let a = inner(&w, &basis[j]);
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = inner(&w, q);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = inner(&w, &w).max(0.0).sqrt();
        if j + 1 == steps || b <= 1e-13 * a.abs().max(1.0) {
            beta.push(b);
            break;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let last_beta = beta[k - 1];
    Ok(order
        .into_iter()
        .map(|c| {
            let s = eig.eigenvectors.column(c);
            let mut vec = vec![0.0; dim];
            for (q, coef) in basis.iter().zip(s.iter()) {
                vec.iter_mut().zip(q).for_each(|(x, y)| *x += coef * y);
            }
            RitzPair { value: eig.eigenvalues[c], vector: vec, residual: (last_beta * s[k - 1]).abs() }
        })
        .collect())
}
