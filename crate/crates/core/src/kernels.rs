//! RBF kernel `k(x, y) = exp(-|x - y|^2 / h)` with a median-heuristic
//! bandwidth, its Gram matrix and the gradients the Stein updates need.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("points have different dimensions ({0} vs {1})")]
    Dimension(usize, usize),
}

pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
    /// Lower bound applied to median-heuristic bandwidths.
    pub floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { bandwidth: Bandwidth::MedianHeuristic, floor: DEFAULT_FLOOR }
    }
}

impl KernelConfig {
    pub fn fixed(h: f64) -> Result<Self, KernelError> {
        if !(h > 0.0) {
            return Err(KernelError::Bandwidth(h));
        }
        Ok(KernelConfig { bandwidth: Bandwidth::Fixed(h), floor: DEFAULT_FLOOR })
    }

    /// Resolves the bandwidth for a concrete point set.
    pub fn bandwidth_for(&self, points: &[Vec<f64>]) -> f64 {
        match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::MedianHeuristic => median_bandwidth(points, self.floor),
        }
    }
}

pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf(x: &[f64], y: &[f64], h: f64) -> Result<f64, KernelError> {
    if !(h > 0.0) {
        return Err(KernelError::Bandwidth(h));
    }
    if x.len() != y.len() {
        return Err(KernelError::Dimension(x.len(), y.len()));
    }
    Ok((-sq_dist(x, y) / h).exp())
}

/// `h = med^2 / ln M` over pairwise Euclidean distances, falling back to
/// `floor` when `M <= 2` or the result is below it.
pub fn median_bandwidth(points: &[Vec<f64>], floor: f64) -> f64 {
    let m = points.len();
    if m <= 2 {
        return floor;
    }
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            dists.push(sq_dist(&points[a], &points[b]).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let n = dists.len();
    let med = if n % 2 == 1 { dists[n / 2] } else { 0.5 * (dists[n / 2 - 1] + dists[n / 2]) };
    let h = med * med / (m as f64).ln();
    if h.is_finite() && h >= floor {
        h
    } else {
        floor
    }
}

/// Gram matrix and gradients with respect to the second argument.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEval {
    pub bandwidth: f64,
    /// `gram[a][b] = k(x_a, x_b)`.
    pub gram: Vec<Vec<f64>>,
    /// `grad_wrt_second[a][b] = d k(x_a, x_b) / d x_b = (2/h)(x_a - x_b) k`.
    pub grad_wrt_second: Vec<Vec<Vec<f64>>>,
}

pub fn eval_with_grads(points: &[Vec<f64>], config: &KernelConfig) -> KernelEval {
    let h = config.bandwidth_for(points);
    let m = points.len();
    let mut gram = vec![vec![0.0; m]; m];
    let mut grad = vec![vec![Vec::new(); m]; m];
    for a in 0..m {
        gram[a][a] = 1.0;
        grad[a][a] = vec![0.0; points[a].len()];
        for b in a + 1..m {
            let k = (-sq_dist(&points[a], &points[b]) / h).exp();
            gram[a][b] = k;
            gram[b][a] = k;
            let g: Vec<f64> = points[a].iter().zip(&points[b]).map(|(xa, xb)| 2.0 / h * (xa - xb) * k).collect();
            grad[b][a] = g.iter().map(|v| -v).collect();
            grad[a][b] = g;
        }
    }
    KernelEval { bandwidth: h, gram, grad_wrt_second: grad }
}

/// Copies the listed coordinates of every point.
pub fn project(points: &[Vec<f64>], coords: &[usize]) -> Vec<Vec<f64>> {
    points.iter().map(|p| coords.iter().map(|&c| p[c]).collect()).collect()
}
