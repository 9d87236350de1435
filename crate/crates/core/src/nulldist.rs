//! Discretized Gaussian process limit of the scaled statistic under the null.
//!
//! Grid points are `(w, b)` pairs; the process at a grid point is the
//! centered (or raw) second-moment structure of `(w^T x - b)_+^k` under the
//! sampling distribution.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, RksError};
use crate::linalg::{cholesky, dot4, symmetric_eigenvalues};
use crate::model::{dot, SampleSet};
use crate::ridge::ridge_power;
use crate::seed::derived_rng;
use crate::statistic::quasi_uniform_directions;

pub const INITIAL_JITTER: f64 = 1e-10;
pub const MAX_JITTER: f64 = 1e-6;
pub const DEFAULT_GRID_DIRS: usize = 64;
/// Draws are generated in blocks of this many so that the triangular product
/// runs over contiguous lanes.
const DRAW_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GpGrid {
    /// `(w, b)` grid points in index order.
    pub points: Vec<(Vec<f64>, f64)>,
    /// Row-major `G x G` covariance.
    pub covariance: Vec<f64>,
    pub centered: bool,
}

impl GpGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.len() + j]
    }

    /// Smallest eigenvalue of the covariance. Cubic cost; for small grids.
    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.covariance, self.len())
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Cartesian product, direction-major.
pub fn grid_points(directions: &[Vec<f64>], offsets: &[f64]) -> Vec<(Vec<f64>, f64)> {
    directions
        .iter()
        .flat_map(|w| offsets.iter().map(move |&b| (w.clone(), b)))
        .collect()
}

/// Default grid: quasi-uniform directions and offsets at the 0, 0.05, ..., 0.95
/// quantiles of the absolute projections.
pub fn default_grid(sample: &SampleSet, n_dirs: usize) -> Vec<(Vec<f64>, f64)> {
    let dirs = quasi_uniform_directions(sample.dim(), n_dirs);
    let mut abs: Vec<f64> = dirs
        .iter()
        .flat_map(|w| sample.project(w))
        .map(f64::abs)
        .collect();
    abs.sort_by(f64::total_cmp);
    let offsets: Vec<f64> = if abs.is_empty() {
        Vec::new()
    } else {
        (0..20)
            .map(|q| abs[((q as f64 * 0.05) * (abs.len() - 1) as f64).round() as usize])
            .collect()
    };
    grid_points(&dirs, &offsets)
}

pub fn estimate_covariance(
    sample: &SampleSet,
    k: u32,
    points: Vec<(Vec<f64>, f64)>,
    centered: bool,
) -> Result<GpGrid> {
    if points.is_empty() {
        return Err(RksError::EmptyGrid);
    }
    if sample.is_empty() {
        return Err(RksError::EmptyInput);
    }
    for (w, b) in &points {
        if w.len() != sample.dim() {
            return Err(RksError::DimensionMismatch {
                expected: sample.dim(),
                found: w.len(),
            });
        }
        if !(*b >= 0.0) {
            return Err(RksError::InvalidConfig(format!("grid offset {b} must be nonnegative")));
        }
    }
    let (g, m) = (points.len(), sample.len());
    let features: Vec<Vec<f64>> = points
        .par_iter()
        .map(|(w, b)| sample.rows().map(|x| ridge_power(dot(w, x) - b, k)).collect())
        .collect();
    let means: Vec<f64> = features.iter().map(|f| f.iter().sum::<f64>() / m as f64).collect();
    let rows: Vec<Vec<f64>> = (0..g)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| {
                    let raw = dot4(&features[i], &features[j]) / m as f64;
                    if centered {
                        raw - means[i] * means[j]
                    } else {
                        raw
                    }
                })
                .collect()
        })
        .collect();
    let mut covariance = vec![0.0; g * g];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            covariance[i * g + j] = v;
            covariance[j * g + i] = v;
        }
    }
    Ok(GpGrid {
        points,
        covariance,
        centered,
    })
}

/// Draws `sup_g |G_g|` for the discretized process.
///
/// Grid points with zero variance are dropped before factoring. Each draw
/// consumes its own normal stream in grid order, and the lower factor of a
/// leading block does not depend on later rows, so a grid extended by
/// appending points reuses the same values on the shared prefix.
pub fn simulate_sup(gp: &GpGrid, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if gp.is_empty() {
        return Err(RksError::EmptyGrid);
    }
    let g = gp.len();
    let active: Vec<usize> = (0..g).filter(|&i| gp.cov(i, i) > 0.0).collect();
    if active.is_empty() {
        return Ok(vec![0.0; draws]);
    }
    let a = active.len();
    let mut sub = vec![0.0; a * a];
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            sub[r * a + c] = gp.cov(i, j);
        }
    }
    let mut jitter = INITIAL_JITTER;
    let l = loop {
        if let Some(l) = cholesky(&sub, a, jitter) {
            break l;
        }
        if jitter >= MAX_JITTER {
            return Err(RksError::NotPsd { jitter });
        }
        jitter *= 10.0;
    };
    if jitter > INITIAL_JITTER {
        log::debug!("covariance factored with jitter {jitter:e}");
    }
    let blocks: Vec<Vec<f64>> = (0..draws.div_ceil(DRAW_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let start = blk * DRAW_BLOCK;
            let width = DRAW_BLOCK.min(draws - start);
            // z[j * width + r]: normal j of draw start + r
            let mut z = vec![0.0; a * width];
            for r in 0..width {
                let mut rng = derived_rng(seed, "gp-draw", (start + r) as u64);
                for j in 0..a {
                    z[j * width + r] = StandardNormal.sample(&mut rng);
                }
            }
            let mut sup = vec![0.0f64; width];
            let mut acc = vec![0.0; width];
            for i in 0..a {
                acc.fill(0.0);
                let li = &l[i * a..i * a + i + 1];
                for (j, &lij) in li.iter().enumerate() {
                    let zj = &z[j * width..(j + 1) * width];
                    for (s, &v) in acc.iter_mut().zip(zj) {
                        *s += lij * v;
                    }
                }
                for (m, &s) in sup.iter_mut().zip(&acc) {
                    *m = m.max(s.abs());
                }
            }
            sup
        })
        .collect();
    Ok(blocks.concat())
}
