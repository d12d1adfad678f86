//! Safe phased elimination against a known default action.
//!
//! Action 0 is the default arm whose mean is known to the learner. Each
//! phase solves a safe design over the surviving arms using the previous
//! phase's confidence intervals, pulls the arms in ascending order in one
//! batch each, and then eliminates arms that look clearly worse.

use std::io::Write;

use rand::distr::{Bernoulli, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus};
use crate::tabular::Policy;

/// Slack allowed on `γ` when the second program maximizes `π(0)`.
const LEX_SLACK: f64 = 1e-12;

/// Arm means `r̄(0), r̄(1), …, r̄(K)` with Bernoulli rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditInstance {
    means: Vec<f64>,
}

impl BanditInstance {
    pub fn new(means: Vec<f64>) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::InvalidInput("need the default arm and at least one other".into()));
        }
        if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidInput("arm means must lie in [0, 1]".into()));
        }
        Ok(Self { means })
    }

    /// Number of non-default arms `K`.
    pub fn num_arms(&self) -> usize {
        self.means.len() - 1
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn mean(&self, a: usize) -> f64 {
        self.means[a]
    }

    pub fn default_mean(&self) -> f64 {
        self.means[0]
    }

    pub fn best_mean(&self) -> f64 {
        self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn pull<R: Rng + ?Sized>(&self, a: usize, rng: &mut R) -> f64 {
        let coin = Bernoulli::new(self.means[a]).expect("means validated in [0, 1]");
        if coin.sample(rng) {
            1.0
        } else {
            0.0
        }
    }
}

/// Everything SafePE knew and did during one phase. Vectors are indexed by
/// arm over all `K + 1` arms; entries of eliminated arms are left at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub h: usize,
    pub surviving: Vec<usize>,
    pub epsilon: f64,
    /// `L_h`, with `L_h(0) = r̄(0)`.
    pub lower: Vec<f64>,
    /// `U_h`, with `U_h(0) = r̄(0)`.
    pub upper: Vec<f64>,
    pub design: Policy,
    /// `g_h(π_h)`; infinite when a surviving arm gets no mass.
    pub g: f64,
    /// Planned pulls `N_h(a)`.
    pub budget: Vec<u64>,
    /// Pulls actually made (smaller than `budget` only when the horizon cut the phase).
    pub counts: Vec<u64>,
    /// `r̂_h`, with `r̂_h(0) = r̄(0)`.
    pub means_hat: Vec<f64>,
    /// Whether the phase ran to the end and performed elimination.
    pub completed: bool,
    pub eliminated: Vec<usize>,
}

/// Trace of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `Σ_{s≤t} r̄(a_s)` for each round.
    pub cum_true_mean: Vec<f64>,
    pub phases: Vec<PhaseState>,
    /// `t·max_a r̄(a) − Σ_{s≤t} r̄(a_s)` at the horizon.
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub h: usize,
    pub epsilon: f64,
    pub surviving: Vec<usize>,
    pub design: Vec<f64>,
    pub pulls: u64,
    pub completed: bool,
    pub eliminated: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub regret: f64,
    pub update_count: usize,
    pub worst_slack: f64,
    pub phases: Vec<PhaseSummary>,
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    action: usize,
    reward: f64,
    cum_true_mean: f64,
}

impl RunLog {
    /// Builds a log from a fixed action sequence; no phases are recorded.
    pub fn from_pulls(instance: &BanditInstance, actions: Vec<usize>, rewards: Vec<f64>) -> Result<Self> {
        if actions.len() != rewards.len() {
            return Err(Error::DimensionMismatch("actions and rewards differ in length".into()));
        }
        if let Some(a) = actions.iter().find(|a| **a > instance.num_arms()) {
            return Err(Error::InvalidInput(format!("unknown arm {a}")));
        }
        let mut total = 0.0;
        let cum_true_mean = actions
            .iter()
            .map(|&a| {
                total += instance.mean(a);
                total
            })
            .collect();
        let mut log = Self {
            actions,
            rewards,
            cum_true_mean,
            phases: Vec::new(),
            regret: 0.0,
        };
        log.regret = log.regret_at(instance, log.len());
        Ok(log)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Pseudo-regret after the first `t` rounds.
    pub fn regret_at(&self, instance: &BanditInstance, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        t as f64 * instance.best_mean() - self.cum_true_mean[t - 1]
    }

    pub fn summary(&self, instance: &BanditInstance, alpha: f64) -> RunSummary {
        RunSummary {
            rounds: self.len(),
            regret: self.regret,
            update_count: audit_updates(self),
            worst_slack: audit_safety(self, instance, alpha),
            phases: self
                .phases
                .iter()
                .map(|p| PhaseSummary {
                    h: p.h,
                    epsilon: p.epsilon,
                    surviving: p.surviving.clone(),
                    design: p.design.probs().to_vec(),
                    pulls: p.counts.iter().sum(),
                    completed: p.completed,
                    eliminated: p.eliminated.clone(),
                })
                .collect(),
        }
    }

    /// CSV with header `round,action,reward,cum_true_mean`; rounds start at 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in 0..self.len() {
            out.serialize(RoundRow {
                round: t + 1,
                action: self.actions[t],
                reward: self.rewards[t],
                cum_true_mean: self.cum_true_mean[t],
            })
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, instance: &BanditInstance, alpha: f64, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.summary(instance, alpha)).map_err(|e| Error::Io(e.to_string()))
    }
}

/// `max_{a ∈ surviving \ {0}} 1/π(a)`, or 1 when only the default survives.
pub fn phase_g(design: &Policy, surviving: &[usize]) -> f64 {
    surviving
        .iter()
        .filter(|&&a| a != 0)
        .map(|&a| 1.0 / design[a])
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .unwrap_or(1.0)
}

/// Safe design over the surviving arms: maximize the smallest mass on a
/// non-default arm subject to `Σ_{a≠0} π(a)L(a) + π(0)r̄(0) ≥ αr̄(0)`,
/// then, among the optima, maximize `π(0)`. The returned policy covers all
/// arms; eliminated arms get zero mass.
pub fn phase_design(surviving: &[usize], lower: &[f64], r0: f64, alpha: f64) -> Result<Policy> {
    if !surviving.contains(&0) {
        return Err(Error::InvalidInput("the default arm must survive".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if surviving.iter().any(|&a| a >= lower.len()) {
        return Err(Error::DimensionMismatch("surviving arm outside the bound vector".into()));
    }
    let k_all = lower.len();
    let m = surviving.len();
    if m == 1 {
        return Ok(Policy::point_mass(k_all, 0));
    }
    let value: Vec<f64> = surviving.iter().map(|&a| if a == 0 { r0 } else { lower[a] }).collect();

    // Variables: π over the surviving arms, then γ.
    let gamma = m;
    let mut c = vec![0.0; m + 1];
    c[gamma] = 1.0;
    let mut lp = LinearProgram::maximize(c);
    lp.set_free(gamma);
    let mut simplex = vec![1.0; m + 1];
    simplex[gamma] = 0.0;
    lp.add_eq(simplex.clone(), 1.0);
    let mut safety = value.clone();
    safety.push(0.0);
    lp.add_ge(safety.clone(), alpha * r0);
    for (i, &a) in surviving.iter().enumerate() {
        if a != 0 {
            let mut row = vec![0.0; m + 1];
            row[i] = 1.0;
            row[gamma] = -1.0;
            lp.add_ge(row, 0.0);
        }
    }
    let first = solve_lp(&lp)?;
    if first.status != LpStatus::Optimal {
        return Err(Error::NumericalFailure(0));
    }
    let gamma_star = first.point[gamma].max(0.0);

    let mut c = vec![0.0; m];
    c[0] = 1.0;
    let mut lex = LinearProgram::maximize(c);
    lex.add_eq(vec![1.0; m], 1.0);
    lex.add_ge(value, alpha * r0);
    let floor = (gamma_star - LEX_SLACK).max(0.0);
    for (i, &a) in surviving.iter().enumerate() {
        if a != 0 {
            lex.set_bounds(i, floor, f64::INFINITY);
        }
    }
    let second = solve_lp(&lex)?;
    let local = if second.status == LpStatus::Optimal {
        second.point
    } else {
        first.point[..m].to_vec()
    };

    let mut probs = vec![0.0; k_all];
    for (i, &a) in surviving.iter().enumerate() {
        probs[a] = local[i].max(0.0);
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Policy::new(probs)
}

/// `log(K·T⁴/δ)`.
pub fn confidence_log(k: usize, horizon: usize, delta: f64) -> f64 {
    (k as f64).ln() + 4.0 * (horizon as f64).ln() - delta.ln()
}

/// `ceil(0.5·π(a)·g·ε⁻²·log)`, saturating.
fn pull_budget(p: f64, g: f64, epsilon: f64, log_term: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    let n = (0.5 * p * g * log_term / (epsilon * epsilon)).ceil();
    if n.is_finite() {
        n as u64
    } else {
        u64::MAX
    }
}

/// Runs SafePE for `horizon` rounds.
pub fn run_safepe<R: Rng + ?Sized>(
    instance: &BanditInstance,
    horizon: usize,
    alpha: f64,
    delta: f64,
    rng: &mut R,
) -> Result<RunLog> {
    if horizon == 0 {
        return Err(Error::InvalidInput("T must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let k_all = instance.num_arms() + 1;
    let r0 = instance.default_mean();
    let log_term = confidence_log(instance.num_arms(), horizon, delta);

    let mut surviving: Vec<usize> = (0..k_all).collect();
    let mut lower = vec![0.0; k_all];
    let mut upper = vec![1.0; k_all];
    lower[0] = r0;
    upper[0] = r0;

    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut cum_true_mean = Vec::with_capacity(horizon);
    let mut total = 0.0;
    let mut phases = Vec::new();

    for h in 1.. {
        let epsilon = 0.5f64.powi(h as i32);
        let design = phase_design(&surviving, &lower, r0, alpha)?;
        let g = phase_g(&design, &surviving);
        let mut budget = vec![0u64; k_all];
        for &a in &surviving {
            budget[a] = pull_budget(design[a], g, epsilon, log_term);
        }
        let mut counts = vec![0u64; k_all];
        let mut sums = vec![0.0; k_all];
        for &a in &surviving {
            while counts[a] < budget[a] && actions.len() < horizon {
                let r = instance.pull(a, rng);
                actions.push(a);
                rewards.push(r);
                total += instance.mean(a);
                cum_true_mean.push(total);
                counts[a] += 1;
                sums[a] += r;
            }
        }
        let mut means_hat = vec![0.0; k_all];
        means_hat[0] = r0;
        for &a in surviving.iter().filter(|&&a| a != 0 && counts[a] > 0) {
            means_hat[a] = sums[a] / counts[a] as f64;
        }
        let finished = surviving.iter().all(|&a| counts[a] >= budget[a]);
        let mut state = PhaseState {
            h,
            surviving: surviving.clone(),
            epsilon,
            lower: lower.clone(),
            upper: upper.clone(),
            design,
            g,
            budget,
            counts,
            means_hat,
            completed: false,
            eliminated: Vec::new(),
        };
        if !finished || actions.len() >= horizon {
            phases.push(state);
            break;
        }

        for &a in surviving.iter().filter(|&&a| a != 0) {
            let width = (log_term / (2.0 * state.counts[a] as f64)).sqrt();
            lower[a] = state.means_hat[a] - width;
            upper[a] = state.means_hat[a] + width;
        }
        let best = surviving
            .iter()
            .map(|&a| state.means_hat[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let eliminated: Vec<usize> = surviving
            .iter()
            .copied()
            .filter(|&a| a != 0 && state.means_hat[a] <= best - 2.0 * epsilon)
            .collect();
        surviving.retain(|a| !eliminated.contains(a));
        for &a in &eliminated {
            lower[a] = 0.0;
            upper[a] = 0.0;
        }
        state.completed = true;
        state.eliminated = eliminated;
        phases.push(state);
    }

    let mut log = RunLog {
        actions,
        rewards,
        cum_true_mean,
        phases,
        regret: 0.0,
    };
    log.regret = log.regret_at(instance, log.len());
    Ok(log)
}

/// `min_t Σ_{s≤t} r̄(a_s) − α·t·r̄(0)`; negative means some prefix was unsafe.
pub fn audit_safety(log: &RunLog, instance: &BanditInstance, alpha: f64) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let r0 = instance.default_mean();
    log.cum_true_mean
        .iter()
        .enumerate()
        .map(|(t, c)| c - alpha * (t + 1) as f64 * r0)
        .fold(f64::INFINITY, f64::min)
}

/// Number of rounds whose action differs from the previous round's.
pub fn audit_updates(log: &RunLog) -> usize {
    log.actions.windows(2).filter(|w| w[0] != w[1]).count()
}

/// `(K+1)·ceil(log2(2T)) + 1`.
pub fn update_bound(k: usize, horizon: usize) -> usize {
    (k + 1) * (2.0 * horizon as f64).log2().ceil() as usize + 1
}
