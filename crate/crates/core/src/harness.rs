//! Replicated null/alternative experiments and ROC curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{energy_distance, kernel_mmd2, lrt_oracle, Bandwidth, Estimator, KernelSpec};
use crate::error::{Result, RksError};
use crate::gen::{sample, sample_null_mixture, Setting, SettingKind};
use crate::model::SampleSet;
use crate::opt::OptConfig;
use crate::ridge::Objective;
use crate::seed::derive_seed;
use crate::statistic::{compute_rks, K0Method, RksConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// RKS statistic of the given degree.
    Rks(u32),
    KmmdPoly(u32),
    KmmdGauss,
    Energy,
    Lrt,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Rks(0),
        Method::Rks(1),
        Method::Rks(2),
        Method::Rks(3),
        Method::KmmdPoly(1),
        Method::KmmdPoly(2),
        Method::KmmdPoly(3),
        Method::KmmdGauss,
        Method::Energy,
        Method::Lrt,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Rks(k) => write!(f, "rks-k{k}"),
            Method::KmmdPoly(p) => write!(f, "kmmd-poly{p}"),
            Method::KmmdGauss => f.write_str("kmmd-gauss"),
            Method::Energy => f.write_str("energy"),
            Method::Lrt => f.write_str("lrt"),
        }
    }
}

impl FromStr for Method {
    type Err = RksError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| RksError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Everything a method needs besides the two samples.
#[derive(Debug, Clone)]
pub struct MethodContext {
    pub opt: OptConfig,
    pub k0_method: K0Method,
    pub estimator: Estimator,
    /// Required for `lrt`.
    pub setting: Option<Setting>,
}

impl Default for MethodContext {
    fn default() -> Self {
        Self {
            opt: OptConfig::default(),
            k0_method: K0Method::Logistic,
            estimator: Estimator::Biased,
            setting: None,
        }
    }
}

impl MethodContext {
    pub fn rks_config(&self, k: u32) -> RksConfig {
        RksConfig {
            k,
            opt: self.opt.clone(),
            surrogate_k0: self.k0_method,
            ..RksConfig::default()
        }
    }
}

pub fn method_statistic(method: Method, x: &SampleSet, y: &SampleSet, ctx: &MethodContext, seed: u64) -> Result<f64> {
    match method {
        Method::Rks(k) => Ok(compute_rks(x, y, &ctx.rks_config(k), seed)?.value),
        Method::KmmdPoly(p) => kernel_mmd2(x, y, KernelSpec::Polynomial(p), ctx.estimator),
        Method::KmmdGauss => kernel_mmd2(x, y, KernelSpec::Gaussian(Bandwidth::MedianHeuristic), ctx.estimator),
        Method::Energy => energy_distance(x, y),
        Method::Lrt => {
            let setting = ctx
                .setting
                .as_ref()
                .ok_or_else(|| RksError::UnknownSetting("lrt needs a known setting".into()))?;
            lrt_oracle(x, y, setting)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub opt: OptConfig,
    pub k0_method: K0Method,
    pub estimator: Estimator,
}

impl ExperimentConfig {
    pub fn new(setting: Setting, m: usize, n: usize, reps: usize, methods: Vec<Method>) -> Self {
        Self {
            setting,
            m,
            n,
            reps,
            methods,
            seed: 0,
            output: None,
            opt: OptConfig::default(),
            k0_method: K0Method::Logistic,
            estimator: Estimator::Biased,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(RksError::InvalidConfig("reps must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(RksError::InvalidConfig("methods must be nonempty".into()));
        }
        if self.m == 0 || self.n == 0 {
            return Err(RksError::InvalidConfig("m and n must be positive".into()));
        }
        self.setting.p().validate()?;
        self.setting.q().validate()?;
        self.opt.validate()
    }

    pub fn context(&self) -> MethodContext {
        MethodContext {
            opt: self.opt.clone(),
            k0_method: self.k0_method,
            estimator: self.estimator,
            setting: Some(self.setting),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| RksError::InvalidConfig(e.to_string()))?;
        raw.into_config()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout: one flat table.
///
/// ```toml
/// setting = "pancake-shift"   # pancake-shift | ball-shift | t-coord | var-one | var-all
/// d = 4
/// v = 0.5                     # optional, defaults to the setting preset
/// m = 128
/// n = 128
/// reps = 30
/// methods = ["rks-k0", "kmmd-gauss"]
/// seed = 0
/// output = "results.csv"      # optional
/// k0_method = "logistic"      # logistic | grid
/// estimator = "biased"        # biased | unbiased
/// # optimizer: learning_rate, iterations, beta1, beta2, epsilon_adam,
/// # lambda, neurons, restarts, objective ("log" | "no-log"), init_scale
/// ```
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    setting: SettingKind,
    d: usize,
    v: Option<f64>,
    m: usize,
    n: usize,
    reps: usize,
    methods: Vec<String>,
    #[serde(default)]
    seed: u64,
    output: Option<PathBuf>,
    k0_method: Option<K0Method>,
    estimator: Option<String>,
    learning_rate: Option<f64>,
    iterations: Option<usize>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon_adam: Option<f64>,
    lambda: Option<f64>,
    neurons: Option<usize>,
    restarts: Option<usize>,
    objective: Option<Objective>,
    init_scale: Option<f64>,
}

impl RawConfig {
    fn into_config(self) -> Result<ExperimentConfig> {
        let setting = match self.v {
            Some(v) => Setting::new(self.setting, self.d, v)?,
            None => Setting::preset(self.setting, self.d)?,
        };
        let methods = self.methods.iter().map(|s| s.parse()).collect::<Result<Vec<Method>>>()?;
        let mut opt = OptConfig::default();
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { opt.$field = v; })*
            };
        }
        set!(learning_rate, iterations, beta1, beta2, epsilon_adam, lambda, neurons, restarts, objective, init_scale);
        let estimator = match self.estimator.as_deref() {
            None | Some("biased") => Estimator::Biased,
            Some("unbiased") => Estimator::Unbiased,
            Some(other) => return Err(RksError::InvalidConfig(format!("unknown estimator `{other}`"))),
        };
        let cfg = ExperimentConfig {
            setting,
            m: self.m,
            n: self.n,
            reps: self.reps,
            methods,
            seed: self.seed,
            output: self.output,
            opt,
            k0_method: self.k0_method.unwrap_or_default(),
            estimator,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Null,
    Alt,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Null => "null",
            Condition::Alt => "alt",
        })
    }
}

impl FromStr for Condition {
    type Err = RksError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(Condition::Null),
            "alt" => Ok(Condition::Alt),
            _ => Err(RksError::InvalidConfig(format!("unknown condition `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub replicate: usize,
    pub method: Method,
    pub condition: Condition,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentRecord {
    pub rows: Vec<RecordRow>,
}

const RECORD_HEADER: [&str; 4] = ["replicate", "method", "condition", "value"];

impl ExperimentRecord {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_io = |e: csv::Error| RksError::Io(e.into());
        w.write_record(RECORD_HEADER).map_err(to_io)?;
        for r in &self.rows {
            w.write_record([
                r.replicate.to_string(),
                r.method.to_string(),
                r.condition.to_string(),
                format!("{:?}", r.value),
            ])
            .map_err(to_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| RksError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |msg: String| RksError::Parse { line, msg };
            if rec.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", rec.len())));
            }
            rows.push(RecordRow {
                replicate: rec[0].trim().parse().map_err(|e| bad(format!("replicate: {e}")))?,
                method: rec[1].trim().parse().map_err(|e: RksError| bad(e.to_string()))?,
                condition: rec[2].trim().parse().map_err(|e: RksError| bad(e.to_string()))?,
                value: rec[3].trim().parse().map_err(|e| bad(format!("value: {e}")))?,
            });
        }
        Ok(Self { rows })
    }

    /// Null and alternative values of one method, in replicate order.
    pub fn values(&self, method: Method) -> (Vec<f64>, Vec<f64>) {
        let pick = |c| {
            self.rows
                .iter()
                .filter(|r| r.method == method && r.condition == c)
                .map(|r| r.value)
                .collect()
        };
        (pick(Condition::Null), pick(Condition::Alt))
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut ms: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        ms.sort();
        ms.dedup();
        ms
    }

    pub fn roc_curves(&self) -> Result<BTreeMap<Method, RocCurve>> {
        self.methods()
            .into_iter()
            .map(|m| {
                let (null, alt) = self.values(m);
                Ok((m, roc_from_stats(&null, &alt)?))
            })
            .collect()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let ctx = cfg.context();
    let (p, q) = (cfg.setting.p(), cfg.setting.q());
    let per_rep = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<RecordRow>> {
            let idx = r as u64;
            let (nx, ny) = sample_null_mixture(&p, &q, cfg.m, cfg.n, derive_seed(cfg.seed, "null", idx))?;
            let ax = sample(&p, cfg.m, derive_seed(cfg.seed, "alt-x", idx))?;
            let ay = sample(&q, cfg.n, derive_seed(cfg.seed, "alt-y", idx))?;
            let stat_seed = derive_seed(cfg.seed, "stat", idx);
            let mut rows = Vec::with_capacity(2 * cfg.methods.len());
            for &method in &cfg.methods {
                for (condition, x, y) in [(Condition::Null, &nx, &ny), (Condition::Alt, &ax, &ay)] {
                    let value = method_statistic(method, x, y, &ctx, stat_seed)?;
                    rows.push(RecordRow {
                        replicate: r,
                        method,
                        condition,
                        value,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentRecord {
        rows: per_rep.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve of "reject when the statistic is at least the threshold".
pub fn roc_from_stats(null_vals: &[f64], alt_vals: &[f64]) -> Result<RocCurve> {
    if null_vals.is_empty() || alt_vals.is_empty() {
        return Err(RksError::EmptyInput);
    }
    if null_vals.iter().chain(alt_vals).any(|v| v.is_nan()) {
        return Err(RksError::InvalidSample("NaN statistic".into()));
    }
    let mut null = null_vals.to_vec();
    let mut alt = alt_vals.to_vec();
    null.sort_by(f64::total_cmp);
    alt.sort_by(f64::total_cmp);
    let (nn, na) = (null.len(), alt.len());

    // 2 * #{alt > null} + #{alt == null}, exact in integers
    let mut twice_wins: u128 = 0;
    for &a in &alt {
        let below = null.partition_point(|&v| v < a) as u128;
        let le = null.partition_point(|&v| v <= a) as u128;
        twice_wins += 2 * below + (le - below);
    }
    let total = 2 * (nn as u128) * (na as u128);
    // the smaller side is divided directly and the other taken as its
    // complement, so swapping the arguments sums to exactly 1
    let auc = if 2 * twice_wins <= total {
        twice_wins as f64 / total as f64
    } else {
        1.0 - (total - twice_wins) as f64 / total as f64
    };

    let mut thresholds: Vec<f64> = null.iter().chain(&alt).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    points.push((0.0, 0.0));
    for t in thresholds {
        let fpr = (nn - null.partition_point(|&v| v < t)) as f64 / nn as f64;
        let tpr = (na - alt.partition_point(|&v| v < t)) as f64 / na as f64;
        points.push((fpr, tpr));
    }
    Ok(RocCurve { points, auc })
}

pub fn write_roc_csv<W: Write>(curves: &BTreeMap<Method, RocCurve>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| RksError::Io(e.into());
    w.write_record(["method", "fpr", "tpr"]).map_err(to_io)?;
    for (m, c) in curves {
        for (fpr, tpr) in &c.points {
            w.write_record([m.to_string(), format!("{fpr:?}"), format!("{tpr:?}")])
                .map_err(to_io)?;
        }
    }
    w.flush()?;
    Ok(())
}
