//! Permutation calibration and the fixed-threshold test.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RksError};
use crate::model::{ensure_same_dim, Label, SampleSet};
use crate::seed::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMode {
    /// `(1 + #{T_pi >= T}) / (B + 1)`, exactly valid.
    #[default]
    PlusOne,
    /// `#{T_pi >= T} / (B + 1)`, the count without the observed statistic.
    PaperExact,
}

impl FromStr for PValueMode {
    type Err = RksError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plusone" | "plus-one" => Ok(Self::PlusOne),
            "paper" | "paper-exact" => Ok(Self::PaperExact),
            _ => Err(RksError::InvalidConfig(format!("unknown p-value mode `{s}`"))),
        }
    }
}

impl fmt::Display for PValueMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PlusOne => "plusone",
            Self::PaperExact => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub observed: f64,
    pub permuted: Vec<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub mode: PValueMode,
}

pub type Statistic<'a> = dyn Fn(&SampleSet, &SampleSet) -> Result<f64> + Sync + 'a;

/// p-value from the observed statistic and its permutation replicates.
pub fn p_value(observed: f64, permuted: &[f64], mode: PValueMode) -> f64 {
    let exceed = permuted.iter().filter(|&&t| t >= observed).count();
    let num = match mode {
        PValueMode::PlusOne => exceed + 1,
        PValueMode::PaperExact => exceed,
    };
    num as f64 / (permuted.len() + 1) as f64
}

/// Splits a uniformly shuffled pooled sample into pseudo-samples of sizes `m` and `n`.
pub fn permute_split(x: &SampleSet, y: &SampleSet, seed: u64, index: u64) -> Result<(SampleSet, SampleSet)> {
    let (m, d) = (x.len(), x.dim());
    let mut order: Vec<usize> = (0..m + y.len()).collect();
    order.shuffle(&mut derived_rng(seed, "perm", index));
    let gather = |idx: &[usize], label| {
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(if i < m { x.row(i) } else { y.row(i - m) });
        }
        SampleSet::new(data, d, label)
    };
    Ok((gather(&order[..m], Label::X)?, gather(&order[m..], Label::Y)?))
}

pub fn permutation_test(
    x: &SampleSet,
    y: &SampleSet,
    statistic: &Statistic<'_>,
    permutations: usize,
    alpha: f64,
    seed: u64,
    mode: PValueMode,
) -> Result<PermutationResult> {
    ensure_same_dim(x, y)?;
    if permutations == 0 {
        return Err(RksError::InvalidConfig("need at least one permutation".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RksError::InvalidConfig(format!("alpha {alpha} not in [0, 1]")));
    }
    let observed = statistic(x, y)?;
    let permuted = (0..permutations as u64)
        .into_par_iter()
        .map(|j| {
            let (px, py) = permute_split(x, y, seed, j)?;
            statistic(&px, &py)
        })
        .collect::<Result<Vec<f64>>>()?;
    let p = p_value(observed, &permuted, mode);
    Ok(PermutationResult {
        observed,
        permuted,
        p_value: p,
        reject: p <= alpha,
        alpha,
        mode,
    })
}

/// `c (m + n)^{-1/4}`.
pub fn fixed_threshold(m: usize, n: usize, c: f64) -> f64 {
    c * ((m + n) as f64).powf(-0.25)
}

pub fn fixed_threshold_test(t: f64, m: usize, n: usize, c: f64) -> bool {
    t > fixed_threshold(m, n, c)
}
