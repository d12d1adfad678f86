//! Tabular safe designs: the mixture baseline, water-filling, and the
//! box-side-information linear program.
//!
//! A design here is a distribution over `K` unrelated actions; its quality is
//! `g(π) = max_a 1/π(a)`, so every method below is really maximizing the
//! smallest action probability subject to the safety requirement
//! `(π − απ0)ᵀ r ≥ 0` for every plausible reward vector `r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus};

/// Entries above `-NEG_TOL` are clamped to zero on construction.
pub const NEG_TOL: f64 = 1e-12;
/// Sums within this distance of 1 are renormalized silently.
pub const SUM_TOL: f64 = 1e-9;

/// A probability vector over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Policy(Vec<f64>);

impl Policy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPolicy("empty action set".into()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidPolicy("non-finite probability".into()));
        }
        if let Some(p) = probs.iter().find(|&&p| p < -NEG_TOL) {
            return Err(Error::InvalidPolicy(format!("negative probability {p}")));
        }
        let mut probs: Vec<f64> = probs.into_iter().map(|p| p.max(0.0)).collect();
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidPolicy(format!("probabilities sum to {sum}")));
        }
        if sum != 1.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn point_mass(k: usize, action: usize) -> Self {
        let mut p = vec![0.0; k];
        p[action] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// `(1 − t)·self + t·other`.
    pub fn toward(&self, other: &Policy, t: f64) -> Policy {
        let probs = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Policy(probs)
    }

    pub fn value(&self, rewards: &[f64]) -> f64 {
        self.0.iter().zip(rewards).map(|(p, r)| p * r).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Policy {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Policy::new(v)
    }
}

impl From<Policy> for Vec<f64> {
    fn from(p: Policy) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for Policy {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Coordinate-wise interval `[L, U] ⊆ [0, 1]^K` known to contain the mean rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RewardBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch("box bounds differ in length".into()));
        }
        for (a, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(0.0 <= l && l <= u && u <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "box entry {a} must satisfy 0 ≤ L ≤ U ≤ 1, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]^K`: no side information.
    pub fn unit(k: usize) -> Self {
        Self {
            lower: vec![0.0; k],
            upper: vec![1.0; k],
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `max_a 1/π(a)`; infinite when some action has zero mass.
pub fn g_tabular(pi: &Policy) -> f64 {
    let m = pi.min_prob();
    if m <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / m
    }
}

/// Smallest mixing weight on `π0` that keeps the mixture safe without side
/// information. Uniform `π0` needs no mixing at all.
pub fn beta_star(pi0: &Policy, alpha: f64) -> f64 {
    let k = pi0.len() as f64;
    let floor = 1.0 / (k * pi0.max_prob());
    if 1.0 - floor <= 1e-15 {
        return 0.0;
    }
    ((alpha - floor) / (1.0 - floor)).max(0.0)
}

/// `β·π0 + (1 − β)/K`.
pub fn mixture_policy(pi0: &Policy, beta: f64) -> Policy {
    let k = pi0.len() as f64;
    Policy(
        pi0.probs()
            .iter()
            .map(|p| beta * p + (1.0 - beta) / k)
            .collect(),
    )
}

/// Water-filling: keep `α·π0`, then pour the freed `1 − α` mass onto the
/// lowest actions until their levels meet. Ties sort by action index.
pub fn water_fill(pi0: &Policy, alpha: f64) -> Result<Policy> {
    check_alpha(alpha)?;
    let k = pi0.len();
    let scaled: Vec<f64> = pi0.probs().iter().map(|p| alpha * p).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| scaled[i].total_cmp(&scaled[j]).then(i.cmp(&j)));

    // suffix[i] = Σ_{j ≥ i} scaled[order[j]]
    let mut suffix = vec![0.0; k + 1];
    for i in (0..k).rev() {
        suffix[i] = suffix[i + 1] + scaled[order[i]];
    }
    // Largest k' (1-based) with k'·π'(k') + Σ_{i>k'} π'(i) ≤ 1.
    let filled = (1..=k)
        .rev()
        .find(|&kk| kk as f64 * scaled[order[kk - 1]] + suffix[kk] <= 1.0 + 1e-12)
        .unwrap_or(1);
    let level = (1.0 - suffix[filled]) / filled as f64;
    let mut out = scaled;
    for &a in &order[..filled] {
        out[a] = level;
    }
    Ok(Policy(out))
}

/// `min_{r ∈ [L,U]} (π − απ0)ᵀ r`, evaluated coordinate-wise.
pub fn box_safety_margin(pi: &Policy, pi0: &Policy, alpha: f64, b: &RewardBox) -> f64 {
    pi.probs()
        .iter()
        .zip(pi0.probs())
        .zip(b.lower().iter().zip(b.upper()))
        .map(|((p, q), (l, u))| {
            let delta = p - alpha * q;
            (delta * l).min(delta * u)
        })
        .sum()
}

/// One context's share of a jointly constrained boxed design.
#[derive(Debug, Clone)]
pub struct BoxedBlock<'a> {
    pub weight: f64,
    pub pi0: &'a Policy,
    pub reward_box: &'a RewardBox,
}

/// Jointly maximizes the smallest probability over all blocks subject to
/// `Σ_x w_x · min_{r ∈ box_x} (π_x − απ0_x)ᵀ r ≥ 0`.
///
/// Each coordinate-wise minimum is linearized with an auxiliary `z ≤ δ·L`,
/// `z ≤ δ·U`. Returns the per-block policies and the optimal `γ`.
pub fn safe_design_boxed_joint(blocks: &[BoxedBlock<'_>], alpha: f64) -> Result<(Vec<Policy>, f64)> {
    check_alpha(alpha)?;
    if blocks.is_empty() {
        return Err(Error::InvalidInput("no blocks".into()));
    }
    for b in blocks {
        if b.pi0.len() != b.reward_box.len() {
            return Err(Error::DimensionMismatch("policy and box lengths differ".into()));
        }
    }
    // Layout: [π_0 .. π_{X-1}] [z_0 .. z_{X-1}] γ
    let sizes: Vec<usize> = blocks.iter().map(|b| b.pi0.len()).collect();
    let n_pi: usize = sizes.iter().sum();
    let n = 2 * n_pi + 1;
    let gamma = n - 1;
    let mut c = vec![0.0; n];
    c[gamma] = 1.0;
    let mut lp = LinearProgram::maximize(c);
    lp.set_free(gamma);
    for j in n_pi..2 * n_pi {
        lp.set_free(j);
    }
    let mut safety = vec![0.0; n];
    let mut offset = 0;
    for (b, &k) in blocks.iter().zip(&sizes) {
        let mut simplex = vec![0.0; n];
        for a in 0..k {
            let pi = offset + a;
            let z = n_pi + offset + a;
            simplex[pi] = 1.0;

            let mut floor = vec![0.0; n];
            floor[pi] = 1.0;
            floor[gamma] = -1.0;
            lp.add_ge(floor, 0.0);

            let target = alpha * b.pi0[a];
            for bound in [b.reward_box.lower()[a], b.reward_box.upper()[a]] {
                // bound·π − z ≥ bound·απ0
                let mut row = vec![0.0; n];
                row[pi] = bound;
                row[z] = -1.0;
                lp.add_ge(row, bound * target);
            }
            safety[z] = b.weight;
        }
        lp.add_eq(simplex, 1.0);
        offset += k;
    }
    lp.add_ge(safety, 0.0);

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible),
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let mut policies = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for &k in &sizes {
        policies.push(Policy::new(sol.point[offset..offset + k].to_vec())?);
        offset += k;
    }
    Ok((policies, sol.point[gamma]))
}

/// Optimal safe design under box side information, solved as one linear
/// program over `(π, z, γ)`. Returns the policy and `γ = min_a π(a)`.
pub fn safe_design_boxed(pi0: &Policy, alpha: f64, reward_box: &RewardBox) -> Result<(Policy, f64)> {
    let block = BoxedBlock {
        weight: 1.0,
        pi0,
        reward_box,
    };
    let (mut policies, gamma) = safe_design_boxed_joint(&[block], alpha)?;
    Ok((policies.remove(0), gamma))
}

/// The same design through the dual reformulation of the inner minimization:
/// variables `(π, z₁, z₂, γ)` with `z₁ − z₂ = π − απ0`, `Lᵀz₁ − Uᵀz₂ ≥ 0`.
/// Kept as an independent route for cross-checking [`safe_design_boxed`].
pub fn safe_design_boxed_dual(pi0: &Policy, alpha: f64, reward_box: &RewardBox) -> Result<(Policy, f64)> {
    check_alpha(alpha)?;
    let k = pi0.len();
    if reward_box.len() != k {
        return Err(Error::DimensionMismatch("policy and box lengths differ".into()));
    }
    // Layout: π (k), z1 (k), z2 (k), γ
    let n = 3 * k + 1;
    let gamma = n - 1;
    let mut c = vec![0.0; n];
    c[gamma] = 1.0;
    let mut lp = LinearProgram::maximize(c);
    lp.set_free(gamma);
    let mut simplex = vec![0.0; n];
    let mut dual_obj = vec![0.0; n];
    for a in 0..k {
        simplex[a] = 1.0;
        let mut floor = vec![0.0; n];
        floor[a] = 1.0;
        floor[gamma] = -1.0;
        lp.add_ge(floor, 0.0);

        let mut link = vec![0.0; n];
        link[k + a] = 1.0;
        link[2 * k + a] = -1.0;
        link[a] = -1.0;
        lp.add_eq(link, -alpha * pi0[a]);

        dual_obj[k + a] = reward_box.lower()[a];
        dual_obj[2 * k + a] = -reward_box.upper()[a];
    }
    lp.add_eq(simplex, 1.0);
    lp.add_ge(dual_obj, 0.0);
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible),
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    Ok((Policy::new(sol.point[..k].to_vec())?, sol.point[gamma]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixtureVerdict {
    /// No safe policy has a smaller `g` than the best mixture.
    ProvablyOptimal,
    /// A safe policy strictly better than the best mixture.
    SuboptimalWitness(Policy),
}

/// Decides whether the best safe mixture `π_{β*}` is already optimal without
/// side information. When it is not, the water-filling policy is returned as
/// a witness with strictly smaller `g`.
pub fn mixture_optimality_verdict(pi0: &Policy, alpha: f64) -> Result<MixtureVerdict> {
    check_alpha(alpha)?;
    let k = pi0.len() as f64;
    let mut distinct: Vec<f64> = pi0.probs().to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    if distinct.len() <= 2 || alpha <= 1.0 / (k * pi0.max_prob()) {
        return Ok(MixtureVerdict::ProvablyOptimal);
    }
    let mix = mixture_policy(pi0, beta_star(pi0, alpha));
    let wf = water_fill(pi0, alpha)?;
    // Water-filling is optimal, so if it cannot beat the mixture nothing can
    // (this happens e.g. at α = 1 where both collapse to π0).
    if g_tabular(&wf) < g_tabular(&mix) - 1e-9 {
        Ok(MixtureVerdict::SuboptimalWitness(wf))
    } else {
        Ok(MixtureVerdict::ProvablyOptimal)
    }
}
