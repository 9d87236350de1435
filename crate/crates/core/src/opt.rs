//! Adam with a nonnegativity projection on the offsets, best-iterate tracking
//! and independent restarts.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Result, RksError};
use crate::ridge::{forward, grad_from_forward, Objective, RidgeNetwork};
use crate::model::StandardizedPair;
use crate::seed::{derive_seed, rng_from};

/// Iterates whose path seminorm falls below this score zero.
pub const MIN_SEMINORM: f64 = 1e-12;
const PERTURBATION_SD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    pub lambda: f64,
    pub neurons: usize,
    pub restarts: usize,
    pub objective: Objective,
    pub init_scale: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 200,
            beta1: 0.9,
            beta2: 0.99,
            epsilon_adam: 1e-8,
            lambda: 1.0,
            neurons: 10,
            restarts: 3,
            objective: Objective::Log,
            init_scale: 1.0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(RksError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon_adam > 0.0) {
            return bad("epsilon_adam must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be positive");
        }
        if self.iterations == 0 || self.neurons == 0 || self.restarts == 0 {
            return bad("iterations, neurons and restarts must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptTrace {
    /// `(iteration, unit-ball MMD)`; iteration 0 is the initialization.
    pub values: Vec<(usize, f64)>,
    pub best_iteration: usize,
    pub best_mmd: f64,
    /// Best iterate rescaled to unit path seminorm.
    pub best_net: RidgeNetwork,
    pub initial_net: RidgeNetwork,
    /// Times a zero discrepancy forced a random perturbation instead of a step.
    pub perturbations: usize,
    /// Restart that produced this trace.
    pub restart: usize,
}

/// Random starting network: `w ~ N(0, s^2/d)`, `a ~ N(0, (s/N)^2)`, `b ~ U[0, 0.5]`.
pub fn initialize(dim: usize, k: u32, cfg: &OptConfig, rng: &mut impl Rng) -> Result<RidgeNetwork> {
    let w_sd = cfg.init_scale / (dim as f64).sqrt();
    let a_sd = cfg.init_scale / cfg.neurons as f64;
    let mut params = Vec::with_capacity(cfg.neurons * (dim + 2));
    for _ in 0..cfg.neurons {
        params.push(a_sd * rng.sample::<f64, _>(StandardNormal));
        for _ in 0..dim {
            params.push(w_sd * rng.sample::<f64, _>(StandardNormal));
        }
        params.push(rng.random_range(0.0..=0.5));
    }
    RidgeNetwork::from_params(params, dim, k)
}

/// Unit-ball MMD of an iterate given its signed discrepancy.
fn unit_ball_value(disc: f64, seminorm: f64) -> f64 {
    if seminorm < MIN_SEMINORM {
        0.0
    } else {
        disc.abs() / seminorm
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &OptConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon_adam);
        }
    }
}

fn project_offsets(params: &mut [f64], dim: usize) {
    for block in params.chunks_exact_mut(dim + 2) {
        if block[dim + 1] < 0.0 {
            block[dim + 1] = 0.0;
        }
    }
}

/// One optimizer run from a random start.
pub fn optimize(pair: &StandardizedPair, k: u32, cfg: &OptConfig, seed: u64) -> Result<OptTrace> {
    if k == 0 {
        return Err(RksError::UnsupportedDegree(0));
    }
    cfg.validate()?;
    let dim = pair.dim();
    let mut rng = rng_from(seed);
    let initial = initialize(dim, k, cfg, &mut rng)?;
    let mut net = initial.clone();
    let mut adam = Adam::new(net.params().len());
    let mut perturbations = 0;

    let mut values = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(usize, f64, RidgeNetwork)> = None;
    let mut record = |t: usize, net: &RidgeNetwork, disc: f64, values: &mut Vec<(usize, f64)>| {
        let s = net.path_seminorm();
        let v = unit_ball_value(disc, s);
        values.push((t, v));
        if best.as_ref().is_none_or(|(_, b, _)| v > *b) {
            let unit = if s >= MIN_SEMINORM { net.scale_outer(1.0 / s) } else { net.clone() };
            best = Some((t, v, unit));
        }
    };

    let mut fp = forward(&net, pair, true);
    record(0, &net, fp.discrepancy(&net), &mut values);
    for t in 1..=cfg.iterations {
        match grad_from_forward(&net, &fp, cfg.lambda, cfg.objective) {
            Ok(grad) => {
                adam.step(net.params_mut(), &grad, cfg);
            }
            Err(RksError::ZeroDiscrepancy) => {
                perturbations += 1;
                for p in net.params_mut() {
                    *p += PERTURBATION_SD * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Err(e) => return Err(e),
        }
        project_offsets(net.params_mut(), dim);
        if net.params().iter().any(|p| !p.is_finite()) {
            log::warn!("optimizer diverged at iteration {t}; keeping best iterate so far");
            break;
        }
        fp = forward(&net, pair, true);
        record(t, &net, fp.discrepancy(&net), &mut values);
    }

    let (best_iteration, best_mmd, best_net) = best.expect("initial iterate is always recorded");
    Ok(OptTrace {
        values,
        best_iteration,
        best_mmd,
        best_net,
        initial_net: initial,
        perturbations,
        restart: 0,
    })
}

/// Seed used for restart `r` of a multi-restart run.
pub fn restart_seed(master_seed: u64, r: usize) -> u64 {
    derive_seed(master_seed, "restart", r as u64)
}

/// Best of `cfg.restarts` independent runs; ties go to the lowest restart index.
pub fn multi_restart(pair: &StandardizedPair, k: u32, cfg: &OptConfig, master_seed: u64) -> Result<OptTrace> {
    cfg.validate()?;
    if cfg.restarts == 1 {
        return optimize(pair, k, cfg, restart_seed(master_seed, 0));
    }
    let runs: Vec<OptTrace> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            optimize(pair, k, cfg, restart_seed(master_seed, r)).map(|mut tr| {
                tr.restart = r;
                tr
            })
        })
        .collect::<Result<_>>()?;
    let mut best: Option<OptTrace> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.best_mmd > b.best_mmd) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}
