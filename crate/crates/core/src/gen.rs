//! Seeded samplers for the five synthetic settings.
//!
//! | setting         | P            | Q (axis 1 differs unless noted) |
//! |-----------------|--------------|---------------------------------|
//! | `pancake-shift` | N(0,1) x N(0,16 I) | axis 1 ~ N(v, 1)          |
//! | `ball-shift`    | N(0, I)      | axis 1 ~ N(v, 1)                |
//! | `t-coord`       | N(0, I)      | axis 1 ~ t(v)                   |
//! | `var-one`       | N(0, I)      | axis 1 ~ N(0, v)                |
//! | `var-all`       | N(0, I)      | N(0, v I)                       |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, RksError};
use crate::model::{Label, SampleSet};
use crate::seed::rng_from;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const PANCAKE_SD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Deserialize)]
#[serde(try_from = "String")]
pub enum SettingKind {
    PancakeShift,
    BallShift,
    TCoord,
    VarOne,
    VarAll,
}

impl SettingKind {
    pub const ALL: [SettingKind; 5] = [
        SettingKind::PancakeShift,
        SettingKind::BallShift,
        SettingKind::TCoord,
        SettingKind::VarOne,
        SettingKind::VarAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SettingKind::PancakeShift => "pancake-shift",
            SettingKind::BallShift => "ball-shift",
            SettingKind::TCoord => "t-coord",
            SettingKind::VarOne => "var-one",
            SettingKind::VarAll => "var-all",
        }
    }

    /// Default `v` for the full-scale benchmark.
    pub fn preset_v(self) -> f64 {
        match self {
            SettingKind::PancakeShift => 0.3,
            SettingKind::BallShift => 0.2,
            SettingKind::TCoord => 3.0,
            SettingKind::VarOne => 1.4,
            SettingKind::VarAll => 1.2,
        }
    }
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SettingKind {
    type Err = RksError;

    fn from_str(s: &str) -> Result<Self> {
        SettingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RksError::UnknownSetting(s.to_string()))
    }
}

impl TryFrom<String> for SettingKind {
    type Error = RksError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    P,
    Q,
}

/// One distribution of a setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettingSpec {
    pub kind: SettingKind,
    pub d: usize,
    pub v: f64,
    pub role: Role,
}

/// A setting with both distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setting {
    pub kind: SettingKind,
    pub d: usize,
    pub v: f64,
}

impl Setting {
    pub fn new(kind: SettingKind, d: usize, v: f64) -> Result<Self> {
        let s = Self { kind, d, v };
        s.spec(Role::P).validate()?;
        Ok(s)
    }

    pub fn preset(kind: SettingKind, d: usize) -> Result<Self> {
        Self::new(kind, d, kind.preset_v())
    }

    pub fn spec(&self, role: Role) -> SettingSpec {
        SettingSpec {
            kind: self.kind,
            d: self.d,
            v: self.v,
            role,
        }
    }

    pub fn p(&self) -> SettingSpec {
        self.spec(Role::P)
    }

    pub fn q(&self) -> SettingSpec {
        self.spec(Role::Q)
    }
}

impl SettingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(RksError::InvalidSpec("dimension must be at least 1".into()));
        }
        if !self.v.is_finite() {
            return Err(RksError::InvalidSpec("v must be finite".into()));
        }
        match self.kind {
            SettingKind::VarOne | SettingKind::VarAll if self.v <= 0.0 => Err(RksError::InvalidSpec(
                format!("{}: variance v must be positive", self.kind),
            )),
            SettingKind::TCoord if self.v <= 0.0 => Err(RksError::InvalidSpec(
                "t-coord: degrees of freedom must be positive".into(),
            )),
            SettingKind::TCoord if self.v <= 2.0 => {
                log::warn!(
                    "t-coord with v = {} has infinite variance; moment conditions for the asymptotic null fail",
                    self.v
                );
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Draw one point into `out`.
    pub fn draw_point<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let z = |rng: &mut R| rng.sample::<f64, _>(StandardNormal);
        for (i, o) in out.iter_mut().enumerate() {
            let axis1 = i == 0;
            *o = match (self.kind, self.role) {
                (SettingKind::PancakeShift, role) => {
                    if axis1 {
                        z(rng) + if role == Role::Q { self.v } else { 0.0 }
                    } else {
                        PANCAKE_SD * z(rng)
                    }
                }
                (SettingKind::BallShift, Role::Q) if axis1 => z(rng) + self.v,
                (SettingKind::TCoord, Role::Q) if axis1 => {
                    let num = z(rng);
                    let chi = ChiSquared::new(self.v).expect("validated degrees of freedom");
                    num / (chi.sample(rng) / self.v).sqrt()
                }
                (SettingKind::VarOne, Role::Q) if axis1 => self.v.sqrt() * z(rng),
                (SettingKind::VarAll, Role::Q) => self.v.sqrt() * z(rng),
                _ => z(rng),
            };
        }
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let normal = |t: f64, mu: f64, var: f64| -0.5 * (t - mu).powi(2) / var - 0.5 * var.ln() - LN_SQRT_2PI;
        x.iter()
            .enumerate()
            .map(|(i, &t)| {
                let axis1 = i == 0;
                match (self.kind, self.role) {
                    (SettingKind::PancakeShift, role) => {
                        if axis1 {
                            normal(t, if role == Role::Q { self.v } else { 0.0 }, 1.0)
                        } else {
                            normal(t, 0.0, PANCAKE_SD * PANCAKE_SD)
                        }
                    }
                    (SettingKind::BallShift, Role::Q) if axis1 => normal(t, self.v, 1.0),
                    (SettingKind::TCoord, Role::Q) if axis1 => {
                        let nu = self.v;
                        ln_gamma((nu + 1.0) / 2.0)
                            - ln_gamma(nu / 2.0)
                            - 0.5 * (nu * std::f64::consts::PI).ln()
                            - (nu + 1.0) / 2.0 * (t * t / nu).ln_1p()
                    }
                    (SettingKind::VarOne, Role::Q) if axis1 => normal(t, 0.0, self.v),
                    (SettingKind::VarAll, Role::Q) => normal(t, 0.0, self.v),
                    _ => normal(t, 0.0, 1.0),
                }
            })
            .sum()
    }
}

/// `n` i.i.d. draws from `spec`.
pub fn sample(spec: &SettingSpec, n: usize, seed: u64) -> Result<SampleSet> {
    spec.validate()?;
    if n == 0 {
        return Err(RksError::InvalidSpec("sample size must be at least 1".into()));
    }
    let mut rng = rng_from(seed);
    let mut data = vec![0.0; n * spec.d];
    for row in data.chunks_exact_mut(spec.d) {
        spec.draw_point(&mut rng, row);
    }
    let label = match spec.role {
        Role::P => Label::X,
        Role::Q => Label::Y,
    };
    Ok(SampleSet::new(data, spec.d, label)?.with_seed(seed))
}

/// `m + n` i.i.d. draws from the mixture `(m P + n Q) / (m + n)`, split into
/// a pseudo-x set (first `m`) and a pseudo-y set (last `n`).
pub fn sample_null_mixture(
    p: &SettingSpec,
    q: &SettingSpec,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<(SampleSet, SampleSet)> {
    p.validate()?;
    q.validate()?;
    if p.d != q.d {
        return Err(RksError::InvalidSpec(format!("dimensions differ: {} vs {}", p.d, q.d)));
    }
    if m == 0 || n == 0 {
        return Err(RksError::InvalidSpec("both sample sizes must be at least 1".into()));
    }
    let d = p.d;
    let mut rng = rng_from(seed);
    let weight_p = m as f64 / (m + n) as f64;
    let mut data = vec![0.0; (m + n) * d];
    for row in data.chunks_exact_mut(d) {
        if rng.random_bool(weight_p) {
            p.draw_point(&mut rng, row);
        } else {
            q.draw_point(&mut rng, row);
        }
    }
    let y = data.split_off(m * d);
    Ok((
        SampleSet::new(data, d, Label::X)?.with_seed(seed),
        SampleSet::new(y, d, Label::Y)?.with_seed(seed),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_moments(s: &SampleSet, j: usize) -> (f64, f64) {
        let n = s.len() as f64;
        let mean = s.rows().map(|r| r[j]).sum::<f64>() / n;
        let var = s.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn names_round_trip() {
        for k in SettingKind::ALL {
            assert_eq!(k.name().parse::<SettingKind>().unwrap(), k);
        }
        assert!(matches!("nope".parse::<SettingKind>(), Err(RksError::UnknownSetting(_))));
    }

    #[test]
    fn var_all_covariance() {
        let s = sample(&Setting::new(SettingKind::VarAll, 2, 1.2).unwrap().q(), 100_000, 1).unwrap();
        let n = s.len() as f64;
        let mut cov = [[0.0; 2]; 2];
        for r in s.rows() {
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += r[i] * r[j] / n;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.2 } else { 0.0 };
                assert!((cov[i][j] - target).abs() < 0.03, "{cov:?}");
            }
        }
    }

    #[test]
    fn pancake_variances() {
        let n = 100_000;
        let s = sample(&Setting::new(SettingKind::PancakeShift, 2, 0.3).unwrap().p(), n, 2).unwrap();
        for (j, var) in [(0usize, 1.0f64), (1, 16.0)] {
            let (_, v) = column_moments(&s, j);
            // standard error of a normal sample variance: var * sqrt(2/(n-1))
            let se = var * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((v - var).abs() < 3.0 * se, "axis {j}: {v}");
        }
        let q = sample(&Setting::new(SettingKind::PancakeShift, 2, 0.3).unwrap().q(), n, 3).unwrap();
        let (mean, _) = column_moments(&q, 0);
        assert!((mean - 0.3).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn t_coordinate_variance() {
        // t(nu) variance is nu / (nu - 2); use nu = 5 for a finite fourth moment
        let s = sample(&Setting::new(SettingKind::TCoord, 2, 5.0).unwrap().q(), 200_000, 4).unwrap();
        let (_, v) = column_moments(&s, 0);
        assert!((v - 5.0 / 3.0).abs() < 0.05, "{v}");
        // nu = 3: heavy tails, looser band
        let s = sample(&Setting::new(SettingKind::TCoord, 1, 3.0).unwrap().q(), 200_000, 5).unwrap();
        let (_, v) = column_moments(&s, 0);
        assert!((v - 3.0).abs() < 0.5, "{v}");
    }

    #[test]
    fn var_one_and_ball_shift() {
        let n = 100_000;
        let s = sample(&Setting::new(SettingKind::VarOne, 3, 1.4).unwrap().q(), n, 6).unwrap();
        assert!((column_moments(&s, 0).1 - 1.4).abs() < 0.03);
        assert!((column_moments(&s, 2).1 - 1.0).abs() < 0.03);
        let s = sample(&Setting::new(SettingKind::BallShift, 2, 0.2).unwrap().q(), n, 7).unwrap();
        assert!((column_moments(&s, 0).0 - 0.2).abs() < 0.015);
        assert!(column_moments(&s, 1).0.abs() < 0.015);
    }

    #[test]
    fn deterministic() {
        let spec = Setting::preset(SettingKind::TCoord, 3).unwrap().q();
        assert_eq!(sample(&spec, 50, 9).unwrap(), sample(&spec, 50, 9).unwrap());
        assert_ne!(sample(&spec, 50, 9).unwrap(), sample(&spec, 50, 10).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(Setting::new(SettingKind::VarAll, 2, 0.0).is_err());
        assert!(Setting::new(SettingKind::TCoord, 2, -1.0).is_err());
        assert!(Setting::new(SettingKind::BallShift, 0, 1.0).is_err());
        let p = Setting::preset(SettingKind::BallShift, 2).unwrap();
        assert!(sample(&p.p(), 0, 1).is_err());
        assert!(sample_null_mixture(&p.p(), &p.q(), 0, 5, 1).is_err());
        let other = Setting::preset(SettingKind::BallShift, 3).unwrap();
        assert!(sample_null_mixture(&p.p(), &other.q(), 5, 5, 1).is_err());
    }

    #[test]
    fn mixture_component_frequency() {
        // pancake P and Q differ only through the axis-1 mean, so use a huge
        // shift to read the component off each draw
        let s = Setting::new(SettingKind::BallShift, 1, 1000.0).unwrap();
        let (m, n) = (30_000usize, 70_000usize);
        let (x, y) = sample_null_mixture(&s.p(), &s.q(), m, n, 11).unwrap();
        let from_p = x.rows().chain(y.rows()).filter(|r| r[0] < 500.0).count() as f64;
        let total = (m + n) as f64;
        let p = m as f64 / total;
        let sd = (total * p * (1.0 - p)).sqrt();
        assert!((from_p - total * p).abs() < 3.0 * sd);
        assert_eq!((x.len(), y.len()), (m, n));
    }

    #[test]
    fn identical_components_match_p() {
        let s = Setting::preset(SettingKind::VarOne, 2).unwrap();
        let (x, y) = sample_null_mixture(&s.p(), &s.p(), 20_000, 20_000, 12).unwrap();
        for set in [&x, &y] {
            let (mean, var) = column_moments(set, 0);
            assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn log_densities_integrate_to_one() {
        // trapezoid on a wide grid, axis 1 only
        for kind in SettingKind::ALL {
            for role in [Role::P, Role::Q] {
                let spec = SettingSpec { kind, d: 1, v: kind.preset_v(), role };
                let h = 1e-3;
                let total: f64 = (-60_000..=60_000)
                    .map(|i| spec.log_density(&[i as f64 * h]).exp() * h)
                    .sum();
                assert!((total - 1.0).abs() < 1e-3, "{kind} {role:?}: {total}");
            }
        }
    }
}
