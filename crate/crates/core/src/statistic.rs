//! The RKS statistic and its exact and brute-force oracles.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RksError};
use crate::linalg::{cholesky, cholesky_solve};
use crate::model::{
    destandardize_value, dot, ensure_same_dim, standardize, SampleSet, Standardization,
    StandardizedPair,
};
use crate::opt::{multi_restart, OptConfig};
use crate::ridge::{ridge_power, RidgeNetwork};
use crate::seed::derived_rng;

/// How the `k = 0` statistic is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum K0Method {
    /// Logistic-regression direction, exact threshold scan.
    #[default]
    Logistic,
    /// Exact threshold scan over a fixed direction grid.
    GridOracle,
}

impl std::str::FromStr for K0Method {
    type Err = RksError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(K0Method::Logistic),
            "grid" | "grid-oracle" => Ok(K0Method::GridOracle),
            other => Err(RksError::InvalidConfig(format!("unknown k=0 method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RksConfig {
    pub k: u32,
    pub opt: OptConfig,
    pub standardize: bool,
    pub surrogate_k0: K0Method,
    /// Direction count for the grid oracle (ignored for `d = 1`).
    pub grid_dirs: usize,
    /// Uniform offsets per direction for the grid oracle, on top of the data knots.
    pub grid_offsets: usize,
}

impl Default for RksConfig {
    fn default() -> Self {
        Self {
            k: 1,
            opt: OptConfig::default(),
            standardize: true,
            surrogate_k0: K0Method::Logistic,
            grid_dirs: 720,
            grid_offsets: 64,
        }
    }
}

impl RksConfig {
    pub fn with_k(k: u32) -> Self {
        Self { k, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MmdResult {
    /// Statistic on the original scale.
    pub value: f64,
    /// Statistic on the standardized scale.
    pub standardized_value: f64,
    /// Unit-seminorm witness on the standardized scale; `None` for degenerate input.
    pub witness: Option<RidgeNetwork>,
    pub trace: Vec<(usize, f64)>,
    pub restarts_used: usize,
    pub standardization: Standardization,
}

/// A single closed halfspace or ridge `(w, b)` together with its discrepancy.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub w: Vec<f64>,
    pub b: f64,
    pub value: f64,
}

impl RidgeFit {
    fn into_network(self, k: u32) -> Result<RidgeNetwork> {
        RidgeNetwork::new(&[(1.0, self.w, self.b)], k)
    }
}

/// The RKS statistic of `x` against `y`.
pub fn compute_rks(x: &SampleSet, y: &SampleSet, cfg: &RksConfig, seed: u64) -> Result<MmdResult> {
    ensure_same_dim(x, y)?;
    let pair = if cfg.standardize {
        match standardize(x, y) {
            Ok(p) => p,
            Err(RksError::DegenerateScale) => {
                let pooled: Vec<f64> = x.row(0).to_vec();
                return Ok(MmdResult {
                    value: 0.0,
                    standardized_value: 0.0,
                    witness: None,
                    trace: Vec::new(),
                    restarts_used: 0,
                    standardization: Standardization {
                        center: pooled,
                        scale: 0.0,
                    },
                });
            }
            Err(e) => return Err(e),
        }
    } else {
        StandardizedPair::unscaled(x.clone(), y.clone())?
    };

    let (std_value, witness, trace, restarts_used) = if cfg.k == 0 {
        let fit = match cfg.surrogate_k0 {
            K0Method::Logistic => k0_surrogate(&pair)?,
            K0Method::GridOracle => grid_search(&pair.x, &pair.y, 0, cfg.grid_dirs, cfg.grid_offsets)?,
        };
        let v = fit.value;
        (v, Some(fit.into_network(0)?), vec![(0, v)], 0)
    } else {
        let tr = multi_restart(&pair, cfg.k, &cfg.opt, seed)?;
        (tr.best_mmd, Some(tr.best_net), tr.values, cfg.opt.restarts)
    };

    Ok(MmdResult {
        value: destandardize_value(std_value, pair.scale, cfg.k),
        standardized_value: std_value,
        witness,
        trace,
        restarts_used,
        standardization: pair.summary(),
    })
}

/// `|#{u_x >= b}/m - #{u_y >= b}/n|` maximized over thresholds `b`.
///
/// With `nonnegative` only `b >= 0` is admitted (the empty set, value 0, is
/// always available); otherwise every threshold is.
pub(crate) fn best_threshold(proj_x: &[f64], proj_y: &[f64], nonnegative: bool) -> (f64, f64) {
    let m = proj_x.len() as f64;
    let n = proj_y.len() as f64;
    let mut pts: Vec<(f64, bool)> = proj_x
        .iter()
        .map(|&u| (u, true))
        .chain(proj_y.iter().map(|&u| (u, false)))
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut cx, mut cy) = (0usize, 0usize);
    let mut best = (0.0, 0.0);
    let mut i = 0;
    while i < pts.len() {
        let t = pts[i].0;
        if nonnegative && t < 0.0 {
            break;
        }
        // absorb every point tied at t: closed halfspaces
        while i < pts.len() && pts[i].0 == t {
            if pts[i].1 {
                cx += 1;
            } else {
                cy += 1;
            }
            i += 1;
        }
        let v = (cx as f64 / m - cy as f64 / n).abs();
        if v > best.0 {
            best = (v, t);
        }
    }
    best
}

/// Exact `d = 1`, `k = 0` statistic: the two-sample Kolmogorov-Smirnov distance.
pub fn rks_exact_1d(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    ensure_same_dim(x, y)?;
    if x.dim() != 1 {
        return Err(RksError::DimensionMismatch {
            expected: 1,
            found: x.dim(),
        });
    }
    // Upper sets {z >= t} over every t already include the complements of the
    // lower sets, so one orientation suffices.
    Ok(best_threshold(x.data(), y.data(), false).0)
}

pub const HALFSPACE_LIMIT: usize = 400;

/// Exact `d = 2`, `k = 0` statistic by enumerating every combinatorially
/// distinct closed halfspace.
///
/// The ordering of projections only changes when the direction crosses a
/// normal of some `z_i - z_j`; one direction inside each arc between
/// consecutive critical angles, with a full threshold scan, therefore visits
/// every halfspace. A halfspace with negative offset is the complement of
/// one with flipped normal and positive offset, and complements carry the
/// same absolute discrepancy, so the `b >= 0` constraint drops out.
pub fn rks_exact_halfspace_2d(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    ensure_same_dim(x, y)?;
    if x.dim() != 2 {
        return Err(RksError::DimensionMismatch {
            expected: 2,
            found: x.dim(),
        });
    }
    let total = x.len() + y.len();
    if total > HALFSPACE_LIMIT {
        return Err(RksError::TooLarge {
            size: total,
            limit: HALFSPACE_LIMIT,
        });
    }
    let pts: Vec<&[f64]> = x.rows().chain(y.rows()).collect();
    let mut angles = Vec::with_capacity(total * (total - 1));
    for i in 0..total {
        for j in i + 1..total {
            let (dx, dy) = (pts[j][0] - pts[i][0], pts[j][1] - pts[i][1]);
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            let phi = dy.atan2(dx);
            for a in [phi + PI / 2.0, phi - PI / 2.0] {
                angles.push(a.rem_euclid(2.0 * PI));
            }
        }
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup();

    let mut probes = Vec::with_capacity(angles.len().max(1));
    match angles.len() {
        0 => probes.push(0.0),
        1 => probes.push(angles[0] + PI),
        len => {
            for w in angles.windows(2) {
                probes.push(0.5 * (w[0] + w[1]));
            }
            probes.push(0.5 * (angles[len - 1] + angles[0] + 2.0 * PI));
        }
    }

    let mut best = 0.0f64;
    for theta in probes {
        let w = [theta.cos(), theta.sin()];
        let (v, _) = best_threshold(&x.project(&w), &y.project(&w), false);
        best = best.max(v);
    }
    Ok(best)
}

/// Quasi-uniform unit directions: `{+1, -1}` for `d = 1`, an even angular
/// grid for `d = 2`, a Fibonacci lattice for `d = 3`, and a fixed-seed
/// Gaussian draw above that.
pub fn quasi_uniform_directions(d: usize, n: usize) -> Vec<Vec<f64>> {
    match d {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = derived_rng(0, "grid-directions", d as u64);
            (0..n)
                .map(|_| loop {
                    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = dot(&v, &v).sqrt();
                    if norm > 1e-12 {
                        break v.into_iter().map(|c| c / norm).collect();
                    }
                })
                .collect()
        }
    }
}

/// Largest `|P_m f - Q_n f|` over single ridges on a direction grid, for a
/// fixed direction, with offsets drawn from the nonnegative projected data
/// plus a uniform grid on `[0, max projection]`.
fn best_offset(proj_x: &[f64], proj_y: &[f64], k: u32, n_offsets: usize) -> (f64, f64) {
    if k == 0 {
        return best_threshold(proj_x, proj_y, true);
    }
    let max = proj_x.iter().chain(proj_y).copied().fold(0.0f64, f64::max);
    let mut cands: Vec<f64> = vec![0.0];
    cands.extend(proj_x.iter().chain(proj_y).copied().filter(|&u| u >= 0.0));
    if max > 0.0 && n_offsets > 1 {
        cands.extend((0..n_offsets).map(|i| max * i as f64 / (n_offsets - 1) as f64));
    }
    let mean = |p: &[f64], b: f64| p.iter().map(|&u| ridge_power(u - b, k)).sum::<f64>() / p.len() as f64;
    let mut best = (0.0, 0.0);
    for b in cands {
        let v = (mean(proj_x, b) - mean(proj_y, b)).abs();
        if v > best.0 {
            best = (v, b);
        }
    }
    best
}

pub(crate) fn grid_search(
    x: &SampleSet,
    y: &SampleSet,
    k: u32,
    n_dirs: usize,
    n_offsets: usize,
) -> Result<RidgeFit> {
    ensure_same_dim(x, y)?;
    let dirs = quasi_uniform_directions(x.dim(), n_dirs);
    if dirs.is_empty() {
        return Err(RksError::EmptyGrid);
    }
    let mut best = RidgeFit {
        w: dirs[0].clone(),
        b: 0.0,
        value: 0.0,
    };
    for w in dirs {
        let (v, b) = best_offset(&x.project(&w), &y.project(&w), k, n_offsets);
        if v > best.value {
            best = RidgeFit { w, b, value: v };
        }
    }
    Ok(best)
}

/// Brute-force lower bound on the statistic over a direction/offset grid.
///
/// Operates on the data as given; pass standardized samples to compare with
/// the optimizer. For `k = 0` (and `k = 1`) the per-direction maximum is exact.
pub fn rks_grid_oracle(x: &SampleSet, y: &SampleSet, k: u32, n_dirs: usize, n_offsets: usize) -> Result<f64> {
    Ok(grid_search(x, y, k, n_dirs, n_offsets)?.value)
}

const LOGISTIC_MAX_ITER: usize = 200;
const LOGISTIC_L2: f64 = 1e-6;

/// Numerically stable `log(1 + exp(t))`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Penalized logistic regression of the sample label (`x -> -1`, `y -> +1`)
/// on the data by damped Newton. Returns `(intercept, coefficients)`.
///
/// Each sample's contribution is accumulated separately and the two are
/// added last, so relabeling the samples negates the fit exactly.
pub fn logistic_fit(pair: &StandardizedPair) -> (f64, Vec<f64>) {
    let d = pair.dim();
    let p = d + 1;
    let total = (pair.x.len() + pair.y.len()) as f64;
    let mut beta = vec![0.0; p];

    let eta = |beta: &[f64], z: &[f64]| beta[0] + dot(&beta[1..], z);
    let loss = |beta: &[f64]| {
        let part = |s: &SampleSet, label: f64| s.rows().map(|z| softplus(-label * eta(beta, z))).sum::<f64>();
        (part(&pair.x, -1.0) + part(&pair.y, 1.0)) / total + LOGISTIC_L2 * dot(&beta[1..], &beta[1..])
    };

    let mut current = loss(&beta);
    for _ in 0..LOGISTIC_MAX_ITER {
        let accumulate = |s: &SampleSet, label: f64| {
            let mut g = vec![0.0; p];
            let mut h = vec![0.0; p * p];
            for z in s.rows() {
                let r = sigmoid(-label * eta(&beta, z));
                let wgt = r * (1.0 - r);
                let feat = |i: usize| if i == 0 { 1.0 } else { z[i - 1] };
                for i in 0..p {
                    g[i] -= label * r * feat(i);
                    for j in 0..=i {
                        h[i * p + j] += wgt * feat(i) * feat(j);
                    }
                }
            }
            (g, h)
        };
        let (gx, hx) = accumulate(&pair.x, -1.0);
        let (gy, hy) = accumulate(&pair.y, 1.0);
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for i in 0..p {
            grad[i] = (gx[i] + gy[i]) / total + if i > 0 { 2.0 * LOGISTIC_L2 * beta[i] } else { 0.0 };
            for j in 0..=i {
                let v = (hx[i * p + j] + hy[i * p + j]) / total
                    + if i == j { if i > 0 { 2.0 * LOGISTIC_L2 } else { 1e-12 } } else { 0.0 };
                hess[i * p + j] = v;
                hess[j * p + i] = v;
            }
        }
        let Some(l) = cholesky(&hess, p, 0.0) else { break };
        let step = cholesky_solve(&l, p, &grad);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            let value = loss(&trial);
            if value <= current {
                let converged = current - value <= 1e-14 * current.abs().max(1.0);
                beta = trial;
                current = value;
                accepted = !converged;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let intercept = beta[0];
    (intercept, beta.split_off(1))
}

/// `k = 0` statistic from the logistic-regression direction followed by an
/// exact threshold scan over `b >= 0` in both orientations.
pub fn k0_surrogate(pair: &StandardizedPair) -> Result<RidgeFit> {
    let d = pair.dim();
    let (_, coef) = logistic_fit(pair);
    let norm = dot(&coef, &coef).sqrt();
    let w_hat: Vec<f64> = if norm > 0.0 && norm.is_finite() {
        coef.iter().map(|c| c / norm).collect()
    } else {
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        e1
    };
    let mut best: Option<RidgeFit> = None;
    for sign in [1.0, -1.0] {
        let w: Vec<f64> = w_hat.iter().map(|c| sign * c).collect();
        let (v, b) = best_threshold(&pair.x.project(&w), &pair.y.project(&w), true);
        if best.as_ref().is_none_or(|f| v.partial_cmp(&f.value) == Some(Ordering::Greater)) {
            best = Some(RidgeFit { w, b, value: v });
        }
    }
    Ok(best.expect("two orientations scanned"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Label;

    fn uni(v: &[f64], l: Label) -> SampleSet {
        SampleSet::from_values(v, l).unwrap()
    }

    fn rows(r: &[[f64; 2]], l: Label) -> SampleSet {
        SampleSet::from_rows(r, l).unwrap()
    }

    #[test]
    fn exact_1d_examples() {
        let x = uni(&[0.1, 0.9], Label::X);
        let y = uni(&[0.4, 0.6], Label::Y);
        assert_eq!(rks_exact_1d(&x, &y).unwrap(), 0.5);
        assert_eq!(rks_exact_1d(&x, &x).unwrap(), 0.0);
        assert_eq!(rks_exact_1d(&uni(&[1.0], Label::X), &uni(&[-1.0], Label::Y)).unwrap(), 1.0);
    }

    #[test]
    fn k0_hand_example_through_compute_rks() {
        let x = uni(&[0.1, 0.9], Label::X);
        let y = uni(&[0.4, 0.6], Label::Y);
        for method in [K0Method::Logistic, K0Method::GridOracle] {
            let cfg = RksConfig {
                surrogate_k0: method,
                ..RksConfig::with_k(0)
            };
            let r = compute_rks(&x, &y, &cfg, 0).unwrap();
            assert_eq!(r.value, 0.5);
        }
    }

    #[test]
    fn halfspace_examples() {
        let x = rows(&[[1.0, 0.0], [1.0, 1.0]], Label::X);
        let y = rows(&[[-1.0, 0.0], [-1.0, 1.0]], Label::Y);
        assert_eq!(rks_exact_halfspace_2d(&x, &y).unwrap(), 1.0);
        assert_eq!(rks_exact_halfspace_2d(&x, &x).unwrap(), 0.0);
        let big = SampleSet::new(vec![0.0; 2 * 201], 2, Label::X).unwrap();
        assert!(matches!(
            rks_exact_halfspace_2d(&big, &big),
            Err(RksError::TooLarge { .. })
        ));
    }

    #[test]
    fn grid_oracle_examples() {
        let x = uni(&[1.0], Label::X);
        let y = uni(&[0.0], Label::Y);
        assert_eq!(rks_grid_oracle(&x, &y, 1, 0, 32).unwrap(), 1.0);
        assert_eq!(rks_grid_oracle(&x, &x, 2, 0, 32).unwrap(), 0.0);
        let x2 = rows(&[[0.3, 0.1], [1.0, -2.0]], Label::X);
        assert_eq!(rks_grid_oracle(&x2, &x2, 1, 90, 16).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_examples() {
        let pair = StandardizedPair::unscaled(uni(&[-1.0], Label::X), uni(&[1.0], Label::Y)).unwrap();
        assert_eq!(k0_surrogate(&pair).unwrap().value, 1.0);
        let x = rows(&[[0.2, 0.5], [-1.0, 0.3], [0.7, -0.4]], Label::X);
        let pair = StandardizedPair::unscaled(x.clone(), x).unwrap();
        assert_eq!(k0_surrogate(&pair).unwrap().value, 0.0);
    }

    #[test]
    fn compute_rks_identical_and_degenerate() {
        let x = rows(&[[0.2, 0.5], [-1.0, 0.3], [0.7, -0.4], [1.5, 2.0]], Label::X);
        for k in 0..=2 {
            let r = compute_rks(&x, &x, &RksConfig::with_k(k), 1).unwrap();
            assert!(r.value.abs() <= 1e-12, "k={k}: {}", r.value);
        }
        let p = rows(&[[5.0, 5.0]], Label::X);
        let r = compute_rks(&p, &p, &RksConfig::with_k(1), 1).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.witness.is_none());
    }

    #[test]
    fn compute_rks_two_point_k1() {
        let x = rows(&[[1.0, 0.0]], Label::X);
        let y = rows(&[[-1.0, 0.0]], Label::Y);
        let r = compute_rks(&x, &y, &RksConfig::with_k(1), 7).unwrap();
        assert!((r.value - 1.0).abs() <= 0.02, "{}", r.value);
        let best = r.trace.iter().map(|t| t.1).fold(0.0, f64::max);
        assert_eq!(r.value, best * r.standardization.scale);
    }

    #[test]
    fn compute_rks_rejects_mismatch() {
        let x = uni(&[1.0, 2.0], Label::X);
        let y = rows(&[[1.0, 0.0]], Label::Y);
        assert!(matches!(
            compute_rks(&x, &y, &RksConfig::with_k(0), 0),
            Err(RksError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logistic_direction_on_separated_clusters() {
        let x = rows(&[[-2.0, 0.1], [-1.5, -0.3], [-1.8, 0.4]], Label::X);
        let y = rows(&[[2.0, 0.2], [1.7, -0.1], [1.9, 0.3]], Label::Y);
        let pair = standardize(&x, &y).unwrap();
        let fit = k0_surrogate(&pair).unwrap();
        assert_eq!(fit.value, 1.0);
        assert!(fit.w[0].abs() > 0.9);
        let (b0, w) = logistic_fit(&pair);
        assert!(b0.is_finite() && w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn directions_are_unit() {
        for d in 1..=5 {
            for w in quasi_uniform_directions(d, 50) {
                assert!((dot(&w, &w) - 1.0).abs() < 1e-12);
            }
        }
    }
}
