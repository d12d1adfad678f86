//! Contextual off-policy evaluation: logged data, the IPS and PI
//! estimators, contextual safe designs and the error-bound calculators.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Bernoulli, Distribution};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{FeatureMatrix, FwOptions, JointSolver, SafetyBlock};
use crate::numerics::{dot, pseudo_inverse_psd, symmetric_eigen, Ellipsoid, Matrix};
use crate::tabular::{g_tabular, safe_design_boxed_joint, water_fill, BoxedBlock, Policy, RewardBox};

/// Eigenvalues of `G(π_e(·|x))` at or below this are treated as zero.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// One action distribution per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualPolicy {
    rows: Vec<Policy>,
}

impl ContextualPolicy {
    pub fn new(rows: Vec<Policy>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidPolicy("no contexts".into()));
        };
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::DimensionMismatch("contexts have different action counts".into()));
        }
        Ok(Self { rows })
    }

    /// The same policy in every one of `n_contexts` contexts.
    pub fn repeated(policy: Policy, n_contexts: usize) -> Result<Self> {
        Self::new(vec![policy; n_contexts])
    }

    pub fn uniform(n_contexts: usize, k: usize) -> Self {
        Self {
            rows: vec![Policy::uniform(k); n_contexts],
        }
    }

    pub fn num_contexts(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Policy] {
        &self.rows
    }

    pub fn row(&self, x: usize) -> &Policy {
        &self.rows[x]
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.rows[x][a]
    }

    /// `max_x max_a 1/π(a|x)`.
    pub fn g_tabular(&self) -> f64 {
        self.rows.iter().map(g_tabular).fold(0.0, f64::max)
    }

    /// `max_x max_a aᵀ G(π(·|x))⁻¹ a`.
    pub fn g_linear(&self, features: &FeatureMatrix, ridge: f64) -> Result<f64> {
        self.rows
            .iter()
            .map(|p| crate::linear::g_value(p, features, ridge))
            .try_fold(0.0f64, |m, g| Ok(m.max(g?)))
    }

    pub fn into_rows(self) -> Vec<Policy> {
        self.rows
    }
}

/// Distribution `C` over a finite set of context ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDistribution {
    weights: Vec<f64>,
}

impl ContextDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("no contexts".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("context weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("context weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }
}

/// Ground truth used to simulate rewards.
#[derive(Debug, Clone)]
pub enum RewardModel {
    /// Mean table `means[x][a] ∈ [0,1]`; rewards are Bernoulli.
    Tabular { means: Vec<Vec<f64>> },
    /// Means `aᵀθ_x` plus Gaussian noise of scale `noise`, clipped to [0,1]
    /// when `clip` is set.
    Linear {
        features: FeatureMatrix,
        thetas: Vec<Vec<f64>>,
        noise: f64,
        clip: bool,
    },
}

impl RewardModel {
    pub fn tabular(means: Vec<Vec<f64>>) -> Result<Self> {
        if means.is_empty() || means.iter().any(|m| m.len() != means[0].len()) {
            return Err(Error::DimensionMismatch("ragged mean table".into()));
        }
        if means.iter().flatten().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidInput("tabular means must lie in [0, 1]".into()));
        }
        Ok(Self::Tabular { means })
    }

    pub fn num_contexts(&self) -> usize {
        match self {
            Self::Tabular { means } => means.len(),
            Self::Linear { thetas, .. } => thetas.len(),
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Self::Tabular { means } => means[0].len(),
            Self::Linear { features, .. } => features.num_actions(),
        }
    }

    pub fn mean(&self, x: usize, a: usize) -> f64 {
        match self {
            Self::Tabular { means } => means[x][a],
            Self::Linear { features, thetas, .. } => dot(&features.column(a), &thetas[x]),
        }
    }

    pub fn means(&self, x: usize) -> Vec<f64> {
        (0..self.num_actions()).map(|a| self.mean(x, a)).collect()
    }

    /// `V(π) = Σ_x C(x) π(·|x)ᵀ r̄(x,·)`.
    pub fn value(&self, policy: &ContextualPolicy, ctx: &ContextDistribution) -> f64 {
        (0..ctx.len())
            .map(|x| ctx.weight(x) * policy.row(x).value(&self.means(x)))
            .sum()
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> f64 {
        let mean = self.mean(x, a);
        match self {
            Self::Tabular { .. } => {
                let coin = Bernoulli::new(mean).expect("mean validated in [0, 1]");
                if coin.sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Linear { noise, clip, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                let r = mean + noise * z;
                if *clip {
                    r.clamp(0.0, 1.0)
                } else {
                    r
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub context: usize,
    pub action: usize,
    pub reward: f64,
    pub logging_prob: f64,
}

/// Data `(x_t, a_t, r_t)` collected by a logging policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    records: Vec<LogRecord>,
    logging: ContextualPolicy,
}

impl LoggedDataset {
    pub fn new(records: Vec<LogRecord>, logging: ContextualPolicy) -> Result<Self> {
        for (t, r) in records.iter().enumerate() {
            if r.context >= logging.num_contexts() || r.action >= logging.num_actions() {
                return Err(Error::InvalidInput(format!("record {t} is out of range")));
            }
            let p = logging.prob(r.context, r.action);
            if p <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "record {t} has zero logging probability"
                )));
            }
            if (p - r.logging_prob).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "record {t} logging probability {} disagrees with the policy ({p})",
                    r.logging_prob
                )));
            }
        }
        Ok(Self { records, logging })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn logging(&self) -> &ContextualPolicy {
        &self.logging
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `context,action,reward,logging_prob`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads records written by [`LoggedDataset::write_csv`]; the logging
    /// policy is supplied separately and checked against every row.
    pub fn read_csv<R: Read>(r: R, logging: ContextualPolicy) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<LogRecord>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(records, logging)
    }
}

fn sampler(p: &Policy) -> WeightedIndex<f64> {
    WeightedIndex::new(p.probs()).expect("policies have positive total mass")
}

/// Simulates `n` rounds: `x ~ C`, `a ~ π_e(·|x)`, `r` from the model.
pub fn collect_dataset<R: Rng + ?Sized>(
    model: &RewardModel,
    logging: &ContextualPolicy,
    ctx: &ContextDistribution,
    n: usize,
    rng: &mut R,
) -> Result<LoggedDataset> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    if logging.num_contexts() != ctx.len() || model.num_contexts() != ctx.len() {
        return Err(Error::DimensionMismatch("context counts differ".into()));
    }
    if logging.num_actions() != model.num_actions() {
        return Err(Error::DimensionMismatch("action counts differ".into()));
    }
    let contexts = WeightedIndex::new(ctx.weights()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let actions: Vec<_> = logging.rows().iter().map(sampler).collect();
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let x = contexts.sample(rng);
        let a = actions[x].sample(rng);
        let reward = model.sample_reward(x, a, rng);
        records.push(LogRecord {
            context: x,
            action: a,
            reward,
            logging_prob: logging.prob(x, a),
        });
    }
    LoggedDataset::new(records, logging.clone())
}

/// Per-record IPS terms `π(a_t|x_t)/π_e(a_t|x_t)·r_t`.
pub fn ips_terms(data: &LoggedDataset, target: &ContextualPolicy) -> Vec<f64> {
    data.records
        .iter()
        .map(|r| target.prob(r.context, r.action) / r.logging_prob * r.reward)
        .collect()
}

/// `(1/n) Σ_t π(a_t|x_t)/π_e(a_t|x_t)·r_t`.
pub fn ips_value(data: &LoggedDataset, target: &ContextualPolicy) -> f64 {
    let terms = ips_terms(data, target);
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Per-record PI terms `r_t·(A π(·|x_t))ᵀ G(π_e(·|x_t))⁺ a_t`.
pub fn pi_terms(data: &LoggedDataset, target: &ContextualPolicy, features: &FeatureMatrix) -> Result<Vec<f64>> {
    let logging = data.logging();
    if features.num_actions() != logging.num_actions() {
        return Err(Error::DimensionMismatch("features and policies disagree on K".into()));
    }
    let weights: Vec<Vec<f64>> = (0..logging.num_contexts())
        .map(|x| -> Result<Vec<f64>> {
            let g = features.design_matrix(logging.row(x).probs(), 0.0);
            let ginv = pseudo_inverse_psd(&g, EIGEN_FLOOR)?;
            Ok(ginv.matvec(&features.combine(target.row(x).probs())))
        })
        .collect::<Result<_>>()?;
    Ok(data
        .records
        .iter()
        .map(|r| r.reward * dot(&weights[r.context], &features.column(r.action)))
        .collect())
}

/// The pseudo-inverse estimator.
pub fn pi_value(data: &LoggedDataset, target: &ContextualPolicy, features: &FeatureMatrix) -> Result<f64> {
    let terms = pi_terms(data, target, features)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Smallest eigenvalue of `G(π(·|x))` above [`EIGEN_FLOOR`], minimized over
/// contexts.
pub fn lambda_star(policy: &ContextualPolicy, features: &FeatureMatrix) -> Result<f64> {
    let mut best = f64::INFINITY;
    for p in policy.rows() {
        let (values, _) = symmetric_eigen(&features.design_matrix(p.probs(), 0.0))?;
        if let Some(&v) = values.iter().find(|v| **v > EIGEN_FLOOR) {
            best = best.min(v);
        }
    }
    Ok(best)
}

/// `7·g·√(|X|·log(4K|X|n/δ) / (2n))`.
pub fn ips_error_bound(g: f64, n_contexts: usize, k: usize, n: usize, delta: f64) -> f64 {
    let x = n_contexts as f64;
    let n = n as f64;
    7.0 * g * (x * (4.0 * k as f64 * x * n / delta).ln() / (2.0 * n)).sqrt()
}

/// `3·g·√(d|X|·log(n / (δ·min{1, √λ*})) / n)`.
pub fn pi_error_bound(g: f64, d: usize, n_contexts: usize, n: usize, delta: f64, lambda_star: f64) -> f64 {
    let n = n as f64;
    let shrink = lambda_star.sqrt().min(1.0);
    3.0 * g * ((d * n_contexts) as f64 * (n / (delta * shrink)).ln() / n).sqrt()
}

/// Tabular contextual safe design. Without side information each context
/// is water-filled on its own; with it, one LP couples the contexts through
/// the `C`-weighted worst case over the boxes.
pub fn contextual_safe_design_tabular(
    pi0: &ContextualPolicy,
    alpha: f64,
    boxes: &[RewardBox],
    ctx: &ContextDistribution,
    side_info: bool,
) -> Result<ContextualPolicy> {
    if pi0.num_contexts() != ctx.len() {
        return Err(Error::DimensionMismatch("context counts differ".into()));
    }
    if !side_info {
        let rows = pi0
            .rows()
            .iter()
            .map(|p| water_fill(p, alpha))
            .collect::<Result<Vec<_>>>()?;
        return ContextualPolicy::new(rows);
    }
    if boxes.len() != ctx.len() {
        return Err(Error::DimensionMismatch("one reward box per context is required".into()));
    }
    let blocks: Vec<BoxedBlock<'_>> = pi0
        .rows()
        .iter()
        .zip(boxes)
        .enumerate()
        .map(|(x, (p, b))| BoxedBlock {
            weight: ctx.weight(x),
            pi0: p,
            reward_box: b,
        })
        .collect();
    let (rows, _) = safe_design_boxed_joint(&blocks, alpha)?;
    ContextualPolicy::new(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualDesign {
    pub policy: ContextualPolicy,
    pub g_value: f64,
    pub safety_margin: f64,
    pub iterations: usize,
    pub cuts_generated: usize,
    pub converged: bool,
}

/// `Σ_x C(x)·min_{θ∈Θ_x} (π(·|x) − απ0(·|x))ᵀ Aᵀ θ`.
pub fn contextual_safety_margin(
    policy: &ContextualPolicy,
    pi0: &ContextualPolicy,
    alpha: f64,
    features: &FeatureMatrix,
    ellipsoids: &[Ellipsoid],
    ctx: &ContextDistribution,
) -> f64 {
    (0..ctx.len())
        .map(|x| {
            let delta: Vec<f64> = policy
                .row(x)
                .probs()
                .iter()
                .zip(pi0.row(x).probs())
                .map(|(p, q)| p - alpha * q)
                .collect();
            let ad = features.combine(&delta);
            let e = &ellipsoids[x];
            ctx.weight(x) * (dot(&ad, e.center()) - e.shape().quad_form(&ad).max(0.0).sqrt())
        })
        .sum()
}

/// Linear contextual safe design: Frank–Wolfe over the product of
/// simplices with one `C`-weighted safety constraint.
pub fn contextual_safe_design_linear(
    pi0: &ContextualPolicy,
    alpha: f64,
    features: &FeatureMatrix,
    ellipsoids: &[Ellipsoid],
    ctx: &ContextDistribution,
    opts: &FwOptions,
) -> Result<ContextualDesign> {
    if pi0.num_contexts() != ctx.len() || ellipsoids.len() != ctx.len() {
        return Err(Error::DimensionMismatch("context counts differ".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let blocks = (0..ctx.len())
        .map(|x| SafetyBlock {
            weight: ctx.weight(x),
            pi0: pi0.row(x),
            theta_set: &ellipsoids[x],
        })
        .collect();
    let solver = JointSolver::new(features, blocks, alpha, true, *opts)?;
    let start = pi0.rows().iter().map(|p| p.probs().to_vec()).collect();
    let r = solver.solve(start)?;
    Ok(ContextualDesign {
        policy: ContextualPolicy::new(r.policies)?,
        g_value: r.g_value,
        safety_margin: r.safety_margin,
        iterations: r.iterations,
        cuts_generated: r.cuts_generated,
        converged: r.converged,
    })
}

/// Design matrix helper re-exported for estimator diagnostics.
pub fn logging_design_matrix(policy: &ContextualPolicy, features: &FeatureMatrix, x: usize) -> Matrix {
    features.design_matrix(policy.row(x).probs(), 0.0)
}
