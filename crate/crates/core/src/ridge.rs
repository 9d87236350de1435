//! Two-layer ridge-spline networks `f(x) = sum_j a_j (w_j^T x - b_j)_+^k`.
//!
//! Parameters are stored flat, one block of `d + 2` values per neuron laid out
//! as `[a, w_1, .., w_d, b]`. Gradients share the layout, which is what the
//! optimizer consumes.

use std::io::{BufRead, Write};

use crate::error::{Result, RksError};
use crate::model::{dot, StandardizedPair};

/// Truncated power `(t)_+^k`, with `(t)_+^0 = 1{t >= 0}`.
#[inline]
pub fn ridge_power(t: f64, k: u32) -> f64 {
    match k {
        0 => {
            if t >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        _ if t > 0.0 => t.powi(k as i32),
        _ => 0.0,
    }
}

/// Derivative of `ridge_power` for `k >= 1`; zero at the kink.
#[inline]
fn ridge_power_deriv(t: f64, k: u32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    match k {
        1 => 1.0,
        _ => f64::from(k) * t.powi(k as i32 - 1),
    }
}

/// `||w||^k` with `||w||^0 = 1` everywhere.
#[inline]
fn norm_pow(w: &[f64], k: u32) -> f64 {
    if k == 0 {
        1.0
    } else {
        dot(w, w).sqrt().powi(k as i32)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NeuronRef<'a> {
    pub a: f64,
    pub w: &'a [f64],
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeNetwork {
    params: Vec<f64>,
    dim: usize,
    k: u32,
}

/// Which Lagrangian criterion the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `-(1/k) log(|D|/N) + lambda/(k N) * S`
    #[default]
    Log,
    /// `-(1/(k N)) |D| + (lambda/k) (S/N)^2`
    NoLog,
}

impl std::str::FromStr for Objective {
    type Err = RksError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Objective::Log),
            "no-log" | "nolog" => Ok(Objective::NoLog),
            other => Err(RksError::InvalidConfig(format!("unknown objective `{other}`"))),
        }
    }
}

impl RidgeNetwork {
    /// Build from `(a, w, b)` triples.
    pub fn new(neurons: &[(f64, Vec<f64>, f64)], k: u32) -> Result<Self> {
        let dim = neurons.first().map(|n| n.1.len()).ok_or(RksError::EmptyInput)?;
        let mut params = Vec::with_capacity(neurons.len() * (dim + 2));
        for (a, w, b) in neurons {
            if w.len() != dim {
                return Err(RksError::DimensionMismatch {
                    expected: dim,
                    found: w.len(),
                });
            }
            params.push(*a);
            params.extend_from_slice(w);
            params.push(*b);
        }
        Self::from_params(params, dim, k)
    }

    /// Build from the flat `[a, w.., b]` layout.
    pub fn from_params(params: Vec<f64>, dim: usize, k: u32) -> Result<Self> {
        if dim == 0 || params.is_empty() || !params.len().is_multiple_of(dim + 2) {
            return Err(RksError::InvalidConfig(format!(
                "{} parameters do not form neurons of dimension {dim}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(RksError::InvalidConfig("non-finite network parameter".into()));
        }
        let net = Self { params, dim, k };
        if net.neurons().any(|n| n.b < 0.0) {
            return Err(RksError::InvalidConfig("offsets b must be nonnegative".into()));
        }
        Ok(net)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.params.len() / (self.dim + 2)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn neuron(&self, j: usize) -> NeuronRef<'_> {
        let s = self.dim + 2;
        let block = &self.params[j * s..(j + 1) * s];
        NeuronRef {
            a: block[0],
            w: &block[1..=self.dim],
            b: block[self.dim + 1],
        }
    }

    pub fn neurons(&self) -> impl Iterator<Item = NeuronRef<'_>> + '_ {
        (0..self.len()).map(move |j| self.neuron(j))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(RksError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.neurons()
            .map(|n| n.a * ridge_power(dot(n.w, x) - n.b, self.k))
            .sum()
    }

    /// `sum_j |a_j| ||w_j||^k`.
    pub fn path_seminorm(&self) -> f64 {
        self.neurons().map(|n| n.a.abs() * norm_pow(n.w, self.k)).sum()
    }

    /// Multiply every outer weight by `c`.
    pub fn scale_outer(&self, c: f64) -> Self {
        let mut out = self.clone();
        let s = self.dim + 2;
        for block in out.params.chunks_exact_mut(s) {
            block[0] *= c;
        }
        out
    }

    /// Divide the outer weights by the path seminorm.
    pub fn normalize_to_unit_ball(&self) -> Result<(Self, f64)> {
        let norm = self.path_seminorm();
        if !(norm > 0.0) {
            return Err(RksError::ZeroSeminorm);
        }
        Ok((self.scale_outer(1.0 / norm), norm))
    }

    /// Network holding the neurons of both operands.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(RksError::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if other.k != self.k {
            return Err(RksError::UnsupportedDegree(other.k));
        }
        let mut params = self.params.clone();
        params.extend_from_slice(&other.params);
        Self::from_params(params, self.dim, self.k)
    }

    /// Signed empirical discrepancy `P_m f - Q_n f`.
    pub fn discrepancy(&self, pair: &StandardizedPair) -> Result<f64> {
        if pair.dim() != self.dim {
            return Err(RksError::DimensionMismatch {
                expected: self.dim,
                found: pair.dim(),
            });
        }
        let mean = |s: &crate::model::SampleSet| {
            s.rows().map(|r| self.eval_unchecked(r)).sum::<f64>() / s.len() as f64
        };
        Ok(mean(&pair.x) - mean(&pair.y))
    }

    /// Write the witness record: a `k,d` line, then one `a,w_1..w_d,b` line per neuron.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},{}", self.k, self.dim)?;
        for n in self.neurons() {
            let mut fields = vec![n.a.to_string()];
            fields.extend(n.w.iter().map(|v| v.to_string()));
            fields.push(n.b.to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i as u64 + 1, other)),
        });
        let parse_err = |line: u64, msg: String| RksError::Parse { line, msg };
        let (line, head) = lines.next().ok_or(RksError::EmptyInput)?;
        let head = head?;
        let hdr: Vec<&str> = head.split(',').map(str::trim).collect();
        if hdr.len() != 2 {
            return Err(parse_err(line, "expected `k,d` header".into()));
        }
        let k: u32 = hdr[0].parse().map_err(|_| parse_err(line, "bad degree".into()))?;
        let dim: usize = hdr[1].parse().map_err(|_| parse_err(line, "bad dimension".into()))?;
        let mut params = Vec::new();
        for (line, text) in lines {
            let text = text?;
            let fields: Vec<f64> = text
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(line, format!("bad neuron record `{text}`")))?;
            if fields.len() != dim + 2 {
                return Err(parse_err(line, format!("expected {} fields", dim + 2)));
            }
            params.extend(fields);
        }
        Self::from_params(params, dim, k)
    }
}

/// Per-neuron empirical quantities for one pass over the data.
pub(crate) struct ForwardPass {
    /// `delta_j = P_m sigma_j - Q_n sigma_j`
    pub delta: Vec<f64>,
    /// `d delta_j / d w_j`, row-major `N x d`
    pub ddelta_dw: Vec<f64>,
    /// `d delta_j / d b_j`
    pub ddelta_db: Vec<f64>,
}

impl ForwardPass {
    pub fn discrepancy(&self, net: &RidgeNetwork) -> f64 {
        net.neurons().zip(&self.delta).map(|(n, d)| n.a * d).sum()
    }
}

pub(crate) fn forward(net: &RidgeNetwork, pair: &StandardizedPair, with_grad: bool) -> ForwardPass {
    let d = net.dim();
    let k = net.k();
    let n_neurons = net.len();
    let mut delta = vec![0.0; n_neurons];
    let mut ddw = vec![0.0; if with_grad { n_neurons * d } else { 0 }];
    let mut ddb = vec![0.0; if with_grad { n_neurons } else { 0 }];
    let mut gw = vec![0.0; d];
    for (j, n) in net.neurons().enumerate() {
        let mut side = |s: &crate::model::SampleSet, sign: f64| {
            let inv = sign / s.len() as f64;
            let mut sum = 0.0;
            let mut gb = 0.0;
            gw.iter_mut().for_each(|g| *g = 0.0);
            for row in s.rows() {
                let t = dot(n.w, row) - n.b;
                sum += ridge_power(t, k);
                if with_grad {
                    let dv = ridge_power_deriv(t, k);
                    if dv != 0.0 {
                        gb += dv;
                        for (g, z) in gw.iter_mut().zip(row) {
                            *g += dv * z;
                        }
                    }
                }
            }
            delta[j] += sum * inv;
            if with_grad {
                ddb[j] -= gb * inv;
                for (dst, g) in ddw[j * d..(j + 1) * d].iter_mut().zip(gw.iter()) {
                    *dst += g * inv;
                }
            }
        };
        // x and y sums are kept separate so identical samples cancel exactly
        side(&pair.x, 1.0);
        side(&pair.y, -1.0);
    }
    ForwardPass {
        delta,
        ddelta_dw: ddw,
        ddelta_db: ddb,
    }
}

fn check_objective_inputs(net: &RidgeNetwork, pair: &StandardizedPair, lambda: f64) -> Result<()> {
    if net.k() == 0 {
        return Err(RksError::UnsupportedDegree(0));
    }
    if pair.dim() != net.dim() {
        return Err(RksError::DimensionMismatch {
            expected: net.dim(),
            found: pair.dim(),
        });
    }
    if !(lambda > 0.0) {
        return Err(RksError::InvalidConfig("lambda must be positive".into()));
    }
    Ok(())
}

/// Value of the selected Lagrangian objective.
pub fn objective_value(
    net: &RidgeNetwork,
    pair: &StandardizedPair,
    lambda: f64,
    objective: Objective,
) -> Result<f64> {
    check_objective_inputs(net, pair, lambda)?;
    let fp = forward(net, pair, false);
    let disc = fp.discrepancy(net);
    objective_from_parts(disc, net.path_seminorm(), net, lambda, objective)
}

fn objective_from_parts(
    disc: f64,
    seminorm: f64,
    net: &RidgeNetwork,
    lambda: f64,
    objective: Objective,
) -> Result<f64> {
    let k = f64::from(net.k());
    let n = net.len() as f64;
    match objective {
        Objective::Log => {
            if disc == 0.0 {
                return Err(RksError::ZeroDiscrepancy);
            }
            Ok(-(disc.abs() / n).ln() / k + lambda / (k * n) * seminorm)
        }
        Objective::NoLog => Ok(-disc.abs() / (k * n) + lambda / k * (seminorm / n).powi(2)),
    }
}

/// Exact gradient of the objective, in the flat `[a, w.., b]` layout.
pub fn grad_objective(
    net: &RidgeNetwork,
    pair: &StandardizedPair,
    lambda: f64,
    objective: Objective,
) -> Result<Vec<f64>> {
    check_objective_inputs(net, pair, lambda)?;
    let fp = forward(net, pair, true);
    grad_from_forward(net, &fp, lambda, objective)
}

pub(crate) fn grad_from_forward(
    net: &RidgeNetwork,
    fp: &ForwardPass,
    lambda: f64,
    objective: Objective,
) -> Result<Vec<f64>> {
    let d = net.dim();
    let k = net.k();
    let kf = f64::from(k);
    let n = net.len() as f64;
    let disc = fp.discrepancy(net);

    // coefficient on dD/dtheta and on dS/dtheta
    let (c_disc, c_pen) = match objective {
        Objective::Log => {
            if disc == 0.0 {
                return Err(RksError::ZeroDiscrepancy);
            }
            (-1.0 / (kf * disc), lambda / (kf * n))
        }
        Objective::NoLog => {
            let sign = if disc > 0.0 {
                1.0
            } else if disc < 0.0 {
                -1.0
            } else {
                0.0
            };
            let s = net.path_seminorm();
            (-sign / (kf * n), 2.0 * lambda / kf * s / (n * n))
        }
    };

    let mut grad = vec![0.0; net.params().len()];
    for (j, (neuron, block)) in net.neurons().zip(grad.chunks_exact_mut(d + 2)).enumerate() {
        let wnorm = dot(neuron.w, neuron.w).sqrt();
        let wk = wnorm.powi(k as i32);
        let a_sign = if neuron.a > 0.0 {
            1.0
        } else if neuron.a < 0.0 {
            -1.0
        } else {
            0.0
        };
        // d||w||^k/dw = k ||w||^(k-2) w, zero vector at w = 0
        let dnorm_coef = if wnorm > 0.0 {
            kf * wnorm.powi(k as i32 - 2)
        } else {
            0.0
        };

        block[0] = c_disc * fp.delta[j] + c_pen * a_sign * wk;
        for i in 0..d {
            block[1 + i] = c_disc * neuron.a * fp.ddelta_dw[j * d + i]
                + c_pen * neuron.a.abs() * dnorm_coef * neuron.w[i];
        }
        block[d + 1] = c_disc * neuron.a * fp.ddelta_db[j];
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Label, SampleSet};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn single(a: f64, w: &[f64], b: f64, k: u32) -> RidgeNetwork {
        RidgeNetwork::new(&[(a, w.to_vec(), b)], k).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(single(1.0, &[1.0, 0.0], 0.0, 1).eval(&[2.0, 0.0]).unwrap(), 2.0);
        // boundary counts as active at k = 0
        assert_eq!(single(1.0, &[1.0, 0.0], 0.5, 0).eval(&[0.5, 7.0]).unwrap(), 1.0);
        let net = RidgeNetwork::new(&[(1.0, vec![0.3, -0.2], 0.1), (-1.0, vec![0.3, -0.2], 0.1)], 2)
            .unwrap();
        for x in [[0.0, 0.0], [3.0, 1.0], [-2.0, 5.0]] {
            assert_eq!(net.eval(&x).unwrap(), 0.0);
        }
        assert!(matches!(
            single(1.0, &[1.0, 0.0], 0.0, 1).eval(&[1.0]),
            Err(RksError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seminorm_examples() {
        assert_eq!(single(2.0, &[3.0, 4.0], 1.0, 1).path_seminorm(), 10.0);
        assert_eq!(single(2.0, &[3.0, 4.0], 1.0, 2).path_seminorm(), 50.0);
        assert_eq!(single(-3.0, &[0.1, 0.1], 0.0, 0).path_seminorm(), 3.0);
        assert_eq!(single(-3.0, &[0.0, 0.0], 0.0, 0).path_seminorm(), 3.0);
    }

    #[test]
    fn normalize_examples() {
        let (n, s) = single(2.0, &[3.0, 4.0], 1.0, 1).normalize_to_unit_ball().unwrap();
        assert_eq!(s, 10.0);
        assert!((n.neuron(0).a - 0.2).abs() < 1e-15);
        let unit = single(1.0, &[0.6, 0.8], 0.0, 1);
        let (n, s) = unit.normalize_to_unit_ball().unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert!((n.neuron(0).a - 1.0).abs() < 1e-15);
        let (n, s) = single(4.0, &[1.0, 0.0], 0.0, 2).normalize_to_unit_ball().unwrap();
        assert_eq!((n.neuron(0).a, s), (1.0, 4.0));
        assert!(matches!(
            single(0.0, &[1.0, 0.0], 0.0, 1).normalize_to_unit_ball(),
            Err(RksError::ZeroSeminorm)
        ));
    }

    #[test]
    fn rejects_negative_offsets() {
        assert!(RidgeNetwork::new(&[(1.0, vec![1.0], -0.1)], 1).is_err());
    }

    fn pair_of(x: &[&[f64]], y: &[&[f64]]) -> StandardizedPair {
        StandardizedPair::unscaled(
            SampleSet::from_rows(x, Label::X).unwrap(),
            SampleSet::from_rows(y, Label::Y).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_active_point_derivatives() {
        // f contribution alone: x = (2,0) active, y far in the inactive region
        let net = single(1.0, &[1.0, 0.0], 0.0, 1);
        let pair = pair_of(&[&[2.0, 0.0]], &[&[-5.0, 0.0]]);
        let fp = forward(&net, &pair, true);
        assert_eq!(fp.delta[0], 2.0);
        assert_eq!(fp.ddelta_dw[0], 2.0);
        assert_eq!(fp.ddelta_dw[1], 0.0);
        assert_eq!(fp.ddelta_db[0], -1.0);
    }

    #[test]
    fn inactive_neuron_has_zero_data_gradient() {
        let net = RidgeNetwork::new(&[(0.7, vec![1.0, 0.0], 0.5), (1.3, vec![0.0, 1.0], 10.0)], 2)
            .unwrap();
        let pair = pair_of(&[&[2.0, 1.0], &[1.0, 3.0]], &[&[-1.0, 0.0], &[0.0, 2.0]]);
        for obj in [Objective::Log, Objective::NoLog] {
            let g = grad_objective(&net, &pair, 1.0, obj).unwrap();
            // second neuron occupies [4..8): its b gradient and the data part of w vanish
            assert_eq!(g[7], 0.0);
            assert_eq!(g[5], 0.0);
        }
        // Log penalty part alone: lambda/(kN) * |a| * 2w = 0.25 * 1.3 * 2
        let g = grad_objective(&net, &pair, 1.0, Objective::Log).unwrap();
        assert!((g[6] - 0.65).abs() < 1e-15);
    }

    #[test]
    fn zero_degree_rejected() {
        let net = single(1.0, &[1.0], 0.0, 0);
        let pair = pair_of(&[&[1.0]], &[&[0.0]]);
        assert!(matches!(
            grad_objective(&net, &pair, 1.0, Objective::Log),
            Err(RksError::UnsupportedDegree(0))
        ));
    }

    #[test]
    fn zero_discrepancy_rejected_for_log_only() {
        let net = single(1.0, &[1.0], 0.0, 1);
        let pair = pair_of(&[&[1.0], &[2.0]], &[&[1.0], &[2.0]]);
        assert!(matches!(
            grad_objective(&net, &pair, 1.0, Objective::Log),
            Err(RksError::ZeroDiscrepancy)
        ));
        assert!(grad_objective(&net, &pair, 1.0, Objective::NoLog).is_ok());
    }

    #[test]
    fn witness_round_trip() {
        let net = RidgeNetwork::new(&[(0.25, vec![0.1, -2.5], 0.0), (-1.5, vec![1e-3, 7.0], 3.25)], 3)
            .unwrap();
        let mut buf = Vec::new();
        net.write_csv(&mut buf).unwrap();
        let back = RidgeNetwork::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    fn random_net(rng: &mut impl Rng, n: usize, d: usize, k: u32) -> RidgeNetwork {
        let triples: Vec<_> = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                (a, w, rng.random_range(0.0..1.0))
            })
            .collect();
        RidgeNetwork::new(&triples, k).unwrap()
    }

    proptest! {
        #[test]
        fn positive_homogeneity(seed in 0u64..10_000, c in 0.01f64..100.0, k in 0u32..4) {
            let mut rng = crate::seed::rng_from(seed);
            let net = random_net(&mut rng, 3, 2, k);
            let scaled = net.scale_outer(c);
            let x = [rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)];
            let (e0, e1) = (net.eval(&x).unwrap(), scaled.eval(&x).unwrap());
            prop_assert!((e1 - c * e0).abs() <= 1e-12 * (1.0 + (c * e0).abs()));
            let (s0, s1) = (net.path_seminorm(), scaled.path_seminorm());
            prop_assert!((s1 - c * s0).abs() <= 1e-12 * (c * s0));
        }

        #[test]
        fn degree_homogeneity_per_neuron(seed in 0u64..10_000, c in 0.1f64..10.0, k in 0u32..4) {
            let mut rng = crate::seed::rng_from(seed);
            let net = random_net(&mut rng, 1, 3, k);
            let n = net.neuron(0);
            let stretched = single(n.a, &n.w.iter().map(|v| v * c).collect::<Vec<_>>(), n.b * c, k);
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let ck = c.powi(k as i32);
            let (e0, e1) = (net.eval(&x).unwrap(), stretched.eval(&x).unwrap());
            prop_assert!((e1 - ck * e0).abs() <= 1e-10 * (1.0 + (ck * e0).abs()));
            let (s0, s1) = (net.path_seminorm(), stretched.path_seminorm());
            prop_assert!((s1 - ck * s0).abs() <= 1e-12 * ck * s0);
        }

        #[test]
        fn seminorm_adds_under_concat(seed in 0u64..10_000, k in 0u32..4) {
            let mut rng = crate::seed::rng_from(seed);
            let a = random_net(&mut rng, 2, 2, k);
            let b = random_net(&mut rng, 3, 2, k);
            let joined = a.concat(&b).unwrap();
            let parts = a.path_seminorm() + b.path_seminorm();
            // equal up to summation order
            prop_assert!((joined.path_seminorm() - parts).abs() <= 1e-14 * parts);
        }

        #[test]
        fn normalized_eval_scales_exactly(seed in 0u64..10_000, k in 0u32..4) {
            let mut rng = crate::seed::rng_from(seed);
            let net = random_net(&mut rng, 4, 2, k);
            let (unit, s) = net.normalize_to_unit_ball().unwrap();
            prop_assert!((unit.path_seminorm() - 1.0).abs() <= 1e-12);
            let x = [rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)];
            let (e0, e1) = (net.eval(&x).unwrap(), unit.eval(&x).unwrap());
            prop_assert!((e1 - e0 / s).abs() <= 1e-12 * (1.0 + e0.abs() / s));
        }
    }
}
