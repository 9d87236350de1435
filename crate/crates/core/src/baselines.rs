//! Comparator statistics: kernel MMD, energy distance and the oracle
//! log-likelihood ratio.

use std::cmp::Ordering;

use crate::error::{Result, RksError};
use crate::gen::{Role, Setting, SettingSpec};
use crate::model::{dot, ensure_same_dim, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `(1 + u^T v)^p`, `p` in 1..=3
    Polynomial(u32),
    /// `exp(-||u - v||^2 / h)`
    Gaussian(Bandwidth),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// V-statistic, diagonal terms included.
    #[default]
    Biased,
    /// U-statistic within samples.
    Unbiased,
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median of all pooled pairwise squared distances (`i < j`); falls back to 1
/// when that median vanishes.
pub fn median_heuristic(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    ensure_same_dim(x, y)?;
    let pts: Vec<&[f64]> = x.rows().chain(y.rows()).collect();
    if pts.len() < 2 {
        return Err(RksError::TooFewSamples("median heuristic needs two points".into()));
    }
    let mut d2 = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d2.push(sq_dist(pts[i], pts[j]));
        }
    }
    let n = d2.len();
    let mid = n / 2;
    let (_, upper, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let h = if n % 2 == 1 {
        upper
    } else {
        let lower = d2[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(if h < 1e-14 { 1.0 } else { h })
}

/// Lexicographic order on samples, used to fix which sample is summed in the
/// outer loop so that cross terms do not depend on argument order.
fn canonical<'a>(x: &'a SampleSet, y: &'a SampleSet) -> (&'a SampleSet, &'a SampleSet) {
    let ord = x.len().cmp(&y.len()).then_with(|| {
        x.data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    if ord == Ordering::Greater {
        (y, x)
    } else {
        (x, y)
    }
}

fn within_mean(s: &SampleSet, kernel: &impl Fn(&[f64], &[f64]) -> f64, diagonal: bool) -> f64 {
    let n = s.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j || diagonal {
                sum += kernel(s.row(i), s.row(j));
            }
        }
    }
    let count = if diagonal { n * n } else { n * (n - 1) };
    sum / count as f64
}

fn cross_mean(x: &SampleSet, y: &SampleSet, kernel: &impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let (a, b) = canonical(x, y);
    let mut sum = 0.0;
    for u in a.rows() {
        for v in b.rows() {
            sum += kernel(u, v);
        }
    }
    sum / (a.len() * b.len()) as f64
}

/// Squared kernel MMD.
pub fn kernel_mmd2(x: &SampleSet, y: &SampleSet, spec: KernelSpec, estimator: Estimator) -> Result<f64> {
    ensure_same_dim(x, y)?;
    if estimator == Estimator::Unbiased && (x.len() < 2 || y.len() < 2) {
        return Err(RksError::TooFewSamples("unbiased MMD needs two points per sample".into()));
    }
    let diagonal = estimator == Estimator::Biased;
    match spec {
        KernelSpec::Polynomial(p) => {
            if !(1..=3).contains(&p) {
                return Err(RksError::InvalidConfig(format!("polynomial degree {p} not in 1..=3")));
            }
            let k = move |u: &[f64], v: &[f64]| (1.0 + dot(u, v)).powi(p as i32);
            Ok(mmd2_with(x, y, &k, diagonal))
        }
        KernelSpec::Gaussian(bw) => {
            let h = match bw {
                Bandwidth::Fixed(h) if h > 0.0 => h,
                Bandwidth::Fixed(h) => {
                    return Err(RksError::InvalidConfig(format!("bandwidth {h} must be positive")))
                }
                Bandwidth::MedianHeuristic => median_heuristic(x, y)?,
            };
            let k = move |u: &[f64], v: &[f64]| (-sq_dist(u, v) / h).exp();
            Ok(mmd2_with(x, y, &k, diagonal))
        }
    }
}

fn mmd2_with(x: &SampleSet, y: &SampleSet, k: &impl Fn(&[f64], &[f64]) -> f64, diagonal: bool) -> f64 {
    (within_mean(x, k, diagonal) + within_mean(y, k, diagonal)) - 2.0 * cross_mean(x, y, k)
}

/// Energy distance, V-statistic form.
pub fn energy_distance(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    ensure_same_dim(x, y)?;
    let dist = |u: &[f64], v: &[f64]| sq_dist(u, v).sqrt();
    let between = cross_mean(x, y, &dist);
    let within = within_mean(x, &dist, true) + within_mean(y, &dist, true);
    Ok(2.0 * between - within)
}

/// `sum_i log p/q (x_i) + sum_j log q/p (y_j)` under the known densities.
pub fn lrt_statistic(x: &SampleSet, y: &SampleSet, p: &SettingSpec, q: &SettingSpec) -> Result<f64> {
    ensure_same_dim(x, y)?;
    for s in [p, q] {
        if s.d != x.dim() {
            return Err(RksError::DimensionMismatch {
                expected: s.d,
                found: x.dim(),
            });
        }
    }
    let log_ratio = |z: &[f64]| p.log_density(z) - q.log_density(z);
    let sx: f64 = x.rows().map(log_ratio).sum();
    let sy: f64 = y.rows().map(log_ratio).sum();
    Ok(sx - sy)
}

/// Likelihood-ratio oracle for a setting's `P` against its `Q`.
pub fn lrt_oracle(x: &SampleSet, y: &SampleSet, setting: &Setting) -> Result<f64> {
    lrt_statistic(x, y, &setting.spec(Role::P), &setting.spec(Role::Q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{sample, SettingKind};
    use crate::model::Label;
    use crate::seed::rng_from;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn uni(v: &[f64], l: Label) -> SampleSet {
        SampleSet::from_values(v, l).unwrap()
    }

    #[test]
    fn median_heuristic_examples() {
        let x = uni(&[0.0], Label::X);
        assert_eq!(median_heuristic(&x, &uni(&[2.0], Label::Y)).unwrap(), 4.0);
        assert_eq!(median_heuristic(&uni(&[0.0, 1.0], Label::X), &uni(&[2.0], Label::Y)).unwrap(), 1.0);
        assert_eq!(median_heuristic(&uni(&[3.0, 3.0], Label::X), &uni(&[3.0], Label::Y)).unwrap(), 1.0);
        // even count: midpoint of {1, 4, 9, 1, 4, 1} sorted -> (1 + 4) / 2
        let h = median_heuristic(&uni(&[0.0, 1.0], Label::X), &uni(&[2.0, 3.0], Label::Y)).unwrap();
        assert_eq!(h, 2.5);
    }

    #[test]
    fn kernel_mmd_examples() {
        let x = SampleSet::from_rows(&[[0.0, 0.0]], Label::X).unwrap();
        let y = SampleSet::from_rows(&[[2.0, 0.0]], Label::Y).unwrap();
        let v = kernel_mmd2(&x, &y, KernelSpec::Polynomial(1), Estimator::Biased).unwrap();
        assert_eq!(v, 4.0);
        let g = kernel_mmd2(
            &uni(&[0.0], Label::X),
            &uni(&[2.0], Label::Y),
            KernelSpec::Gaussian(Bandwidth::Fixed(4.0)),
            Estimator::Biased,
        )
        .unwrap();
        assert!((g - 2.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let z = uni(&[0.3, -1.2, 2.0], Label::X);
        for spec in [KernelSpec::Polynomial(2), KernelSpec::Gaussian(Bandwidth::MedianHeuristic)] {
            assert!(kernel_mmd2(&z, &z, spec, Estimator::Biased).unwrap().abs() < 1e-12);
        }
        assert!(matches!(
            kernel_mmd2(&x, &y, KernelSpec::Polynomial(1), Estimator::Unbiased),
            Err(RksError::TooFewSamples(_))
        ));
        assert!(kernel_mmd2(&x, &y, KernelSpec::Polynomial(4), Estimator::Biased).is_err());
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy_distance(&uni(&[0.0], Label::X), &uni(&[2.0], Label::Y)).unwrap(), 4.0);
        let z = uni(&[0.0, 2.0], Label::X);
        assert_eq!(energy_distance(&z, &z).unwrap(), 0.0);
        assert_eq!(energy_distance(&uni(&[0.0], Label::X), &uni(&[1.0, 3.0], Label::Y)).unwrap(), 3.0);
    }

    #[test]
    fn lrt_null_is_zero_and_antisymmetric() {
        let s = Setting::preset(SettingKind::TCoord, 3).unwrap();
        let x = sample(&s.p(), 20, 1).unwrap();
        let y = sample(&s.q(), 25, 2).unwrap();
        assert_eq!(lrt_statistic(&x, &y, &s.p(), &s.p()).unwrap(), 0.0);
        let a = lrt_oracle(&x, &y, &s).unwrap();
        let b = lrt_oracle(&y, &x, &s).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn lrt_ball_shift_closed_form() {
        let v = 0.7;
        let s = Setting::new(SettingKind::BallShift, 1, v).unwrap();
        let x = sample(&s.p(), 13, 3).unwrap();
        let y = sample(&s.q(), 17, 4).unwrap();
        let (m, n) = (13.0, 17.0);
        let sum = |s: &SampleSet| s.data().iter().sum::<f64>();
        let closed = v * (sum(&y) - sum(&x)) - (n - m) * v * v / 2.0;
        assert!((lrt_oracle(&x, &y, &s).unwrap() - closed).abs() < 1e-10);
    }

    #[test]
    fn unbiased_mmd_is_centered_under_the_null() {
        let reps = 500;
        let mut rng = rng_from(42);
        let mut vals = Vec::with_capacity(reps);
        for _ in 0..reps {
            let data: Vec<f64> = (0..40 * 2).map(|_| rng.sample(StandardNormal)).collect();
            let x = SampleSet::new(data[..40].to_vec(), 2, Label::X).unwrap();
            let y = SampleSet::new(data[40..].to_vec(), 2, Label::Y).unwrap();
            vals.push(kernel_mmd2(&x, &y, KernelSpec::Gaussian(Bandwidth::Fixed(2.0)), Estimator::Unbiased).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (reps as f64).sqrt(), "mean {mean}, sd {sd}");
    }

    #[test]
    fn biased_statistics_nonnegative_and_symmetric() {
        let mut rng = rng_from(5);
        for _ in 0..30 {
            let mut draw = |n: usize| {
                let data: Vec<f64> = (0..n * 3).map(|_| rng.sample(StandardNormal)).collect();
                SampleSet::new(data, 3, Label::X).unwrap()
            };
            let (x, y) = (draw(9), draw(12));
            for spec in [
                KernelSpec::Polynomial(1),
                KernelSpec::Polynomial(2),
                KernelSpec::Polynomial(3),
                KernelSpec::Gaussian(Bandwidth::MedianHeuristic),
            ] {
                let a = kernel_mmd2(&x, &y, spec, Estimator::Biased).unwrap();
                assert!(a >= -1e-12);
                assert_eq!(a, kernel_mmd2(&y, &x, spec, Estimator::Biased).unwrap());
            }
            let e = energy_distance(&x, &y).unwrap();
            assert!(e >= 0.0);
            assert_eq!(e, energy_distance(&y, &x).unwrap());
        }
    }
}
