//! Linear safe optimal design.
//!
//! Actions are feature vectors (columns of a `d × K` matrix `A`) and the
//! design objective is the G-optimal criterion
//! `g(π) = max_a aᵀ G(π)⁻¹ a` with `G(π) = Σ_a π(a) a aᵀ`. The safety
//! requirement `(π − απ0)ᵀ Aᵀ θ ≥ 0` must hold for every `θ` in a confidence
//! ellipsoid; its minimum over the ellipsoid has a closed form, and the
//! Frank–Wolfe solver enforces it through cutting planes generated at the
//! worst-case `θ`.
//!
//! The solver is written for a product of simplices (one block per context)
//! with a single weighted safety constraint, so the contextual design reuses
//! it unchanged; the single-context problem is the one-block case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus};
use crate::numerics::{dot, norm, Cholesky, Ellipsoid, Matrix};
use crate::tabular::Policy;

/// Maximum number of cuts one inner solve may add.
pub const MAX_CUTS_PER_SOLVE: usize = 200;

const COLUMN_NORM_TOL: f64 = 1e-9;
const STALL_WINDOW: usize = 5;
const BUNDLE_TRIGGER: f64 = 1e-3;
/// Cuts left slack by this many consecutive solves are dropped.
const CUT_IDLE_LIMIT: usize = 10;

/// `d × K` matrix whose columns are the action feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    a: Matrix,
}

impl FeatureMatrix {
    pub fn new(a: Matrix) -> Result<Self> {
        if a.cols() == 0 || a.rows() == 0 {
            return Err(Error::InvalidInput("feature matrix must be non-empty".into()));
        }
        for j in 0..a.cols() {
            let n = norm(&a.column(j));
            if n > 1.0 + COLUMN_NORM_TOL {
                return Err(Error::InvalidInput(format!("feature column {j} has norm {n} > 1")));
            }
        }
        Ok(Self { a })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_columns(columns)?)
    }

    /// Standard basis of `ℝᴷ`: the tabular case.
    pub fn identity(k: usize) -> Self {
        Self {
            a: Matrix::identity(k),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.a.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.a.column(j)
    }

    /// `A·w` for a weight vector over actions.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        self.a.matvec(weights)
    }

    /// `Aᵀθ`: every action's mean reward under `θ`.
    pub fn rewards(&self, theta: &[f64]) -> Vec<f64> {
        self.a.tr_matvec(theta)
    }

    /// `G(π) + ridge·I`.
    pub fn design_matrix(&self, pi: &[f64], ridge: f64) -> Matrix {
        let d = self.dim();
        let mut g = Matrix::zeros(d, d);
        for (j, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for r in 0..d {
                let ar = self.a[(r, j)] * w;
                if ar == 0.0 {
                    continue;
                }
                for c in r..d {
                    g[(r, c)] += ar * self.a[(c, j)];
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                g[(r, c)] = g[(c, r)];
            }
            g[(r, r)] += ridge;
        }
        g
    }
}

/// Per-policy quantities derived from one factorization of `G(π)`.
struct DesignEval {
    /// `G⁻¹ a_j` for every column, stored column-major.
    solved: Vec<Vec<f64>>,
    /// `a_jᵀ G⁻¹ a_j`.
    variances: Vec<f64>,
}

impl DesignEval {
    fn new(features: &FeatureMatrix, pi: &[f64], ridge: f64) -> Result<Self> {
        let chol = Cholesky::factor(&features.design_matrix(pi, ridge))?;
        let mut solved = Vec::with_capacity(features.num_actions());
        let mut variances = Vec::with_capacity(features.num_actions());
        for j in 0..features.num_actions() {
            let a = features.column(j);
            let w = chol.solve(&a);
            variances.push(dot(&a, &w));
            solved.push(w);
        }
        Ok(Self { solved, variances })
    }

    /// Largest variance and the lowest column index achieving it.
    fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.variances[0]);
        for (j, &v) in self.variances.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (j, v);
            }
        }
        best
    }

    /// `∂ (a_kᵀ G⁻¹ a_k) / ∂ π(i) = −(a_kᵀ G⁻¹ a_i)²`.
    fn piece_gradient(&self, features: &FeatureMatrix, k: usize) -> Vec<f64> {
        let ak = features.column(k);
        self.solved.iter().map(|w| -dot(&ak, w).powi(2)).collect()
    }
}

/// `max_a aᵀ (G(π) + ridge·I)⁻¹ a`.
pub fn g_value(pi: &Policy, features: &FeatureMatrix, ridge: f64) -> Result<f64> {
    check_len(pi, features)?;
    Ok(DesignEval::new(features, pi.probs(), ridge)?.argmax().1)
}

/// Gradient of [`g_value`] through its maximizing column
/// (lowest index on ties): `H(π)_i = −(a_maxᵀ G(π)⁻¹ a_i)²`.
pub fn g_gradient(pi: &Policy, features: &FeatureMatrix, ridge: f64) -> Result<Vec<f64>> {
    check_len(pi, features)?;
    let eval = DesignEval::new(features, pi.probs(), ridge)?;
    let (k, _) = eval.argmax();
    Ok(eval.piece_gradient(features, k))
}

fn check_len(pi: &Policy, features: &FeatureMatrix) -> Result<()> {
    if pi.len() != features.num_actions() {
        return Err(Error::DimensionMismatch(format!(
            "policy over {} actions, feature matrix has {}",
            pi.len(),
            features.num_actions()
        )));
    }
    Ok(())
}

/// `argmax_{θ∈Θ} vᵀθ = θ̄ + Σ̄v / √(vᵀΣ̄v)`; the center when `v` vanishes.
pub fn worst_case_theta(v: &[f64], e: &Ellipsoid) -> Vec<f64> {
    let q = e.shape().quad_form(v);
    if norm(v) <= 1e-12 || q <= 0.0 {
        return e.center().to_vec();
    }
    let s = q.sqrt();
    let sv = e.shape().matvec(v);
    e.center().iter().zip(sv).map(|(c, x)| c + x / s).collect()
}

/// A single-context linear safe design problem.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub features: FeatureMatrix,
    pub pi0: Policy,
    pub alpha: f64,
    pub theta_set: Ellipsoid,
}

impl DesignProblem {
    pub fn new(features: FeatureMatrix, pi0: Policy, alpha: f64, theta_set: Ellipsoid) -> Result<Self> {
        check_len(&pi0, &features)?;
        if theta_set.dim() != features.dim() {
            return Err(Error::DimensionMismatch(format!(
                "ellipsoid lives in ℝ^{} but features in ℝ^{}",
                theta_set.dim(),
                features.dim()
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self {
            features,
            pi0,
            alpha,
            theta_set,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.features.num_actions()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }
}

/// `min_{θ∈Θ} (π − απ0)ᵀ Aᵀ θ`, in closed form. Nonnegative iff `π` is safe.
pub fn safety_margin(pi: &Policy, prob: &DesignProblem) -> f64 {
    block_margin(&prob.features, pi.probs(), &prob.pi0, prob.alpha, &prob.theta_set)
}

/// `(π − απ0)ᵀ Aᵀ θ̄`: the margin at the ellipsoid center only.
pub fn safety_margin_at_center(pi: &Policy, prob: &DesignProblem) -> f64 {
    let delta = shifted(pi.probs(), &prob.pi0, prob.alpha);
    dot(&prob.features.combine(&delta), prob.theta_set.center())
}

fn shifted(pi: &[f64], pi0: &Policy, alpha: f64) -> Vec<f64> {
    pi.iter().zip(pi0.probs()).map(|(p, q)| p - alpha * q).collect()
}

fn block_margin(features: &FeatureMatrix, pi: &[f64], pi0: &Policy, alpha: f64, e: &Ellipsoid) -> f64 {
    let ad = features.combine(&shifted(pi, pi0, alpha));
    dot(&ad, e.center()) - e.shape().quad_form(&ad).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwOptions {
    pub max_iters: usize,
    pub ridge: f64,
    pub tol_rel: f64,
    pub cut_tolerance: f64,
    pub line_search_points: usize,
}

impl Default for FwOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            ridge: 1e-9,
            tol_rel: 1e-6,
            cut_tolerance: 1e-7,
            line_search_points: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub g_value: f64,
    pub safety_margin: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub policy: Policy,
    pub g_value: f64,
    pub width: f64,
    /// `+∞` when the design was computed without a safety constraint.
    pub safety_margin: f64,
    pub iterations: usize,
    pub cuts_generated: usize,
    pub converged: bool,
    /// One record per iterate, starting with `π⁽⁰⁾`.
    pub trace: Vec<IterateRecord>,
}

/// One block (context) of a joint design.
#[derive(Debug, Clone)]
pub(crate) struct SafetyBlock<'a> {
    pub weight: f64,
    pub pi0: &'a Policy,
    pub theta_set: &'a Ellipsoid,
}

/// Result of the block solver before it is specialized.
#[derive(Debug, Clone)]
pub(crate) struct JointResult {
    pub policies: Vec<Policy>,
    pub g_value: f64,
    pub safety_margin: f64,
    pub iterations: usize,
    pub cuts_generated: usize,
    pub converged: bool,
    pub trace: Vec<IterateRecord>,
}

/// A linear cut `row·π ≥ rhs` over the stacked block variables, together
/// with the worst-case parameters that produced it.
#[derive(Debug, Clone)]
struct Cut {
    row: Vec<f64>,
    rhs: f64,
    thetas: Vec<Vec<f64>>,
    idle: usize,
}

pub(crate) struct JointSolver<'a> {
    features: &'a FeatureMatrix,
    blocks: Vec<SafetyBlock<'a>>,
    alpha: f64,
    safe: bool,
    opts: FwOptions,
    cuts: Vec<Cut>,
    k: usize,
}

impl<'a> JointSolver<'a> {
    pub fn new(
        features: &'a FeatureMatrix,
        blocks: Vec<SafetyBlock<'a>>,
        alpha: f64,
        safe: bool,
        opts: FwOptions,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidInput("at least one block is required".into()));
        }
        let k = features.num_actions();
        for b in &blocks {
            check_len(b.pi0, features)?;
            if b.theta_set.dim() != features.dim() {
                return Err(Error::DimensionMismatch("ellipsoid dimension".into()));
            }
        }
        if features.dim() > k {
            return Err(Error::InvalidInput(format!(
                "{k} actions cannot span ℝ^{}; G(π) is singular for every π",
                features.dim()
            )));
        }
        Ok(Self {
            features,
            blocks,
            alpha,
            safe,
            opts,
            cuts: Vec::new(),
            k,
        })
    }

    fn n_vars(&self) -> usize {
        self.blocks.len() * self.k
    }

    fn block<'s>(&self, x: &'s [f64], b: usize) -> &'s [f64] {
        &x[b * self.k..(b + 1) * self.k]
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        if !self.safe {
            return f64::INFINITY;
        }
        self.blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                blk.weight * block_margin(self.features, self.block(x, b), blk.pi0, self.alpha, blk.theta_set)
            })
            .sum()
    }

    fn evals(&self, x: &[f64]) -> Result<Vec<DesignEval>> {
        (0..self.blocks.len())
            .map(|b| DesignEval::new(self.features, self.block(x, b), self.opts.ridge))
            .collect()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mut g = f64::NEG_INFINITY;
        for b in 0..self.blocks.len() {
            match DesignEval::new(self.features, self.block(x, b), self.opts.ridge) {
                Ok(e) => g = g.max(e.argmax().1),
                Err(_) => return f64::INFINITY,
            }
        }
        g
    }

    /// Gradient through the single maximizing (block, column) pair.
    fn max_piece_gradient(&self, evals: &[DesignEval]) -> Vec<f64> {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (b, e) in evals.iter().enumerate() {
            let (j, v) = e.argmax();
            if v > best.2 {
                best = (b, j, v);
            }
        }
        let mut grad = vec![0.0; self.n_vars()];
        let piece = evals[best.0].piece_gradient(self.features, best.1);
        grad[best.0 * self.k..(best.0 + 1) * self.k].copy_from_slice(&piece);
        grad
    }

    fn cut_at(&self, x: &[f64]) -> Cut {
        let mut row = vec![0.0; self.n_vars()];
        let mut rhs = 0.0;
        let mut thetas = Vec::with_capacity(self.blocks.len());
        for (b, blk) in self.blocks.iter().enumerate() {
            // Worst case for (π − απ0)ᵀAᵀθ is the maximizer of (απ0 − π)ᵀAᵀθ.
            let neg: Vec<f64> = shifted(self.block(x, b), blk.pi0, self.alpha)
                .into_iter()
                .map(|v| -v)
                .collect();
            let theta = worst_case_theta(&self.features.combine(&neg), blk.theta_set);
            let rewards = self.features.rewards(&theta);
            for (j, r) in rewards.iter().enumerate() {
                row[b * self.k + j] = blk.weight * r;
            }
            rhs += blk.weight * self.alpha * blk.pi0.value(&rewards);
            thetas.push(theta);
        }
        Cut {
            row,
            rhs,
            thetas,
            idle: 0,
        }
    }

    fn base_program(&self, objective: Vec<f64>) -> LinearProgram {
        let n = objective.len();
        let mut lp = LinearProgram::minimize(objective);
        for b in 0..self.blocks.len() {
            let mut row = vec![0.0; n];
            row[b * self.k..(b + 1) * self.k].iter_mut().for_each(|v| *v = 1.0);
            lp.add_eq(row, 1.0);
        }
        lp
    }

    fn add_cuts(&self, lp: &mut LinearProgram, extra: &[(usize, f64)]) {
        let n = lp.num_vars();
        for cut in &self.cuts {
            let mut row = cut.row.clone();
            row.resize(n, 0.0);
            for &(var, coef) in extra {
                row[var] = coef;
            }
            lp.add_ge(row, cut.rhs);
        }
    }

    /// Solves `min objectiveᵀs` over the stacked simplices and the safe set,
    /// adding cuts until the minimizer is safe within `cut_tolerance`.
    /// `extra_cols` extra variables are appended (free), with `configure`
    /// adding their rows; `cut_extra` gives their coefficients in each cut.
    fn cutting_plane_solve(
        &mut self,
        objective: Vec<f64>,
        configure: &dyn Fn(&mut LinearProgram),
        cut_extra: &[(usize, f64)],
        accept: &dyn Fn(&[f64], f64) -> bool,
    ) -> Result<(Vec<f64>, usize)> {
        let n = self.n_vars();
        let mut added = 0;
        self.cuts.retain(|c| c.idle < CUT_IDLE_LIMIT);
        loop {
            let mut lp = self.base_program(objective.clone());
            configure(&mut lp);
            if self.safe {
                self.add_cuts(&mut lp, cut_extra);
            }
            let sol = solve_lp(&lp)?;
            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => return Err(Error::Infeasible),
                LpStatus::Unbounded => return Err(Error::Unbounded),
            }
            let x: Vec<f64> = sol.point[..n].iter().map(|v| v.max(0.0)).collect();
            if !self.safe {
                return Ok((sol.point, added));
            }
            for cut in &mut self.cuts {
                let extra: f64 = cut_extra.iter().map(|&(var, coef)| coef * sol.point[var]).sum();
                let slack = dot(&cut.row, &sol.point[..n]) + extra - cut.rhs;
                if slack <= 1e-7 * (1.0 + cut.rhs.abs()) {
                    cut.idle = 0;
                } else {
                    cut.idle += 1;
                }
            }
            let m = self.margin(&x);
            if accept(&sol.point, m) {
                return Ok((sol.point, added));
            }
            if added >= MAX_CUTS_PER_SOLVE {
                return Err(Error::CutLimitExceeded(MAX_CUTS_PER_SOLVE));
            }
            let cut = self.cut_at(&x);
            self.cuts.push(cut);
            added += 1;
        }
    }

    /// Linear minimization oracle: `argmin gradᵀs` over the safe set.
    fn linear_oracle(&mut self, grad: &[f64], current: &[f64]) -> Result<(Vec<f64>, usize)> {
        if grad.iter().all(|g| *g == 0.0) {
            return Ok((current.to_vec(), 0));
        }
        if !self.safe {
            // Vertex of each simplex at the smallest gradient entry; blocks
            // with a zero gradient stay put.
            let mut s = current.to_vec();
            for b in 0..self.blocks.len() {
                let gb = &grad[b * self.k..(b + 1) * self.k];
                if gb.iter().all(|g| *g == 0.0) {
                    continue;
                }
                let mut best = 0;
                for (j, &g) in gb.iter().enumerate() {
                    if g < gb[best] {
                        best = j;
                    }
                }
                let blk = &mut s[b * self.k..(b + 1) * self.k];
                blk.iter_mut().for_each(|v| *v = 0.0);
                blk[best] = 1.0;
            }
            return Ok((s, 0));
        }
        let tol = self.opts.cut_tolerance;
        let (point, added) =
            self.cutting_plane_solve(grad.to_vec(), &|_| {}, &[], &|_, m| m >= -tol)?;
        Ok((point[..self.n_vars()].to_vec(), added))
    }

    /// Direction from the cutting-plane model of `g`: minimizes the largest
    /// linearization `v_k + ∇v_kᵀ(s − π)` over every (block, column) piece.
    /// Used when the single-piece step makes no progress at a kink.
    fn bundle_oracle(&mut self, evals: &[DesignEval], current: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = self.n_vars();
        let t = n;
        let mut objective = vec![0.0; n + 1];
        objective[t] = 1.0;
        let g_max = evals
            .iter()
            .map(|e| e.argmax().1)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for (b, e) in evals.iter().enumerate() {
            let x = self.block(current, b);
            for j in 0..self.k {
                // Pieces far below the max cannot become active within a step.
                if e.variances[j] < 0.5 * g_max {
                    continue;
                }
                let grad = e.piece_gradient(self.features, j);
                // t − ∇ᵀs ≥ v − ∇ᵀπ
                let mut row = vec![0.0; n + 1];
                row[t] = 1.0;
                for (i, gi) in grad.iter().enumerate() {
                    row[b * self.k + i] = -gi;
                }
                let rhs = e.variances[j] - dot(&grad, x);
                rows.push((row, rhs));
            }
        }
        let configure = move |lp: &mut LinearProgram| {
            lp.set_free(t);
            for (row, rhs) in &rows {
                lp.add_ge(row.clone(), *rhs);
            }
        };
        let tol = self.opts.cut_tolerance;
        let (point, added) = self.cutting_plane_solve(objective, &configure, &[], &|_, m| m >= -tol)?;
        Ok((point[..n].to_vec(), added))
    }

    /// Finds a start with margin ≥ −cut_tolerance by maximizing the
    /// cutting-plane model of the margin (capped at 0).
    fn restore(&mut self, start: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = self.n_vars();
        let t = n;
        let mut objective = vec![0.0; n + 1];
        objective[t] = -1.0;
        // Seed the model with the cut at the start point.
        let seed = self.cut_at(start);
        self.cuts.push(seed);
        let tol = self.opts.cut_tolerance;
        let configure = move |lp: &mut LinearProgram| {
            lp.set_bounds(t, f64::NEG_INFINITY, 0.0);
        };
        let (point, added) = self.cutting_plane_solve(
            objective,
            &configure,
            &[(t, -1.0)],
            &|p, m| m >= -tol || p[t] < -tol,
        )?;
        let x = point[..n].to_vec();
        let m = self.margin(&x);
        if m < -tol {
            return Err(Error::InfeasibleStart(point[t].max(m)));
        }
        Ok((x, added + 1))
    }

    fn line_search(&self, from: &[f64], to: &[f64], g_from: f64) -> (f64, f64) {
        let at = |eta: f64| -> f64 {
            let x: Vec<f64> = from
                .iter()
                .zip(to)
                .map(|(a, b)| (1.0 - eta) * a + eta * b)
                .collect();
            self.objective(&x)
        };
        let pts = self.opts.line_search_points.max(2);
        let mut best = (0.0, g_from);
        let mut best_i = 0;
        for i in 1..pts {
            let eta = i as f64 / (pts - 1) as f64;
            let v = at(eta);
            if v < best.1 {
                best = (eta, v);
                best_i = i;
            }
        }
        let h = 1.0 / (pts - 1) as f64;
        let mut lo = (best_i as f64 - 1.0).max(0.0) * h;
        let mut hi = ((best_i as f64 + 1.0) * h).min(1.0);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let mut f1 = at(x1);
        let mut f2 = at(x2);
        while hi - lo > 1e-6 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = at(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = at(x2);
            }
        }
        for (eta, v) in [(x1, f1), (x2, f2)] {
            if v < best.1 {
                best = (eta, v);
            }
        }
        best
    }

    pub fn solve(mut self, start: Vec<Vec<f64>>) -> Result<JointResult> {
        let n = self.n_vars();
        let mut x: Vec<f64> = start.concat();
        debug_assert_eq!(x.len(), n);
        let mut cuts_generated = 0;
        if self.safe && self.margin(&x) < -1e-6 {
            let (restored, added) = self.restore(&x)?;
            x = restored;
            cuts_generated += added;
        }
        let mut g = self.objective(&x);
        let mut trace = vec![IterateRecord {
            g_value: g,
            safety_margin: self.margin(&x),
            step: 0.0,
        }];
        let mut stalled = 0;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.opts.max_iters {
            iterations += 1;
            let evals = self.evals(&x)?;
            let grad = self.max_piece_gradient(&evals);
            let (s, added) = self.linear_oracle(&grad, &x)?;
            cuts_generated += added;
            let (mut eta, mut g_new) = self.line_search(&x, &s, g);
            let mut target = s;
            if (g - g_new) / g < BUNDLE_TRIGGER {
                let (s2, added) = self.bundle_oracle(&evals, &x)?;
                cuts_generated += added;
                let (eta2, g2) = self.line_search(&x, &s2, g);
                if g2 < g_new {
                    eta = eta2;
                    g_new = g2;
                    target = s2;
                }
            }
            if g_new < g {
                x = x
                    .iter()
                    .zip(&target)
                    .map(|(a, b)| (1.0 - eta) * a + eta * b)
                    .collect();
            } else {
                eta = 0.0;
                g_new = g;
            }
            let rel = (g - g_new) / g;
            g = g_new;
            trace.push(IterateRecord {
                g_value: g,
                safety_margin: self.margin(&x),
                step: eta,
            });
            if rel < self.opts.tol_rel {
                stalled += 1;
                if stalled >= STALL_WINDOW {
                    converged = true;
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        let policies = (0..self.blocks.len())
            .map(|b| Policy::new(self.block(&x, b).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointResult {
            policies,
            g_value: g,
            safety_margin: self.margin(&x),
            iterations,
            cuts_generated,
            converged,
            trace,
        })
    }
}

/// Linear minimization step of the safe Frank–Wolfe solver:
/// `argmin gradientᵀπ` over the simplex intersected with the safe set,
/// by cutting planes from an empty cut set. Returns the minimizer and the
/// worst-case parameters that generated each cut.
pub fn solve_inner_lp(
    gradient: &[f64],
    prob: &DesignProblem,
    cut_tolerance: f64,
) -> Result<(Policy, Vec<Vec<f64>>)> {
    if gradient.len() != prob.num_actions() {
        return Err(Error::DimensionMismatch("gradient length".into()));
    }
    let opts = FwOptions {
        cut_tolerance,
        ..FwOptions::default()
    };
    let blocks = vec![SafetyBlock {
        weight: 1.0,
        pi0: &prob.pi0,
        theta_set: &prob.theta_set,
    }];
    let mut solver = JointSolver::new(&prob.features, blocks, prob.alpha, true, opts)?;
    if prob.pi0.len() > 0 && solver.margin(prob.pi0.probs()) < -1e-6 {
        // Check that the safe set is non-empty before asking for a minimizer.
        solver.restore(prob.pi0.probs()).map_err(|_| Error::Infeasible)?;
        solver.cuts.clear();
    }
    let tol = cut_tolerance;
    let (point, _) = solver.cutting_plane_solve(gradient.to_vec(), &|_| {}, &[], &|_, m| m >= -tol)?;
    let pi = Policy::new(point[..prob.num_actions()].to_vec())?;
    let cuts = solver.cuts.into_iter().map(|c| c.thetas.concat()).collect();
    Ok((pi, cuts))
}

fn into_design(r: JointResult) -> DesignResult {
    let JointResult {
        mut policies,
        g_value,
        safety_margin,
        iterations,
        cuts_generated,
        converged,
        trace,
    } = r;
    DesignResult {
        policy: policies.remove(0),
        g_value,
        width: g_value.sqrt(),
        safety_margin,
        iterations,
        cuts_generated,
        converged,
        trace,
    }
}

/// Safe optimal design by Frank–Wolfe with cutting planes, started at `π0`.
pub fn frank_wolfe_safe(prob: &DesignProblem, opts: &FwOptions) -> Result<DesignResult> {
    let blocks = vec![SafetyBlock {
        weight: 1.0,
        pi0: &prob.pi0,
        theta_set: &prob.theta_set,
    }];
    let solver = JointSolver::new(&prob.features, blocks, prob.alpha, true, *opts)?;
    solver.solve(vec![prob.pi0.probs().to_vec()]).map(into_design)
}

/// Unconstrained G-optimal design (Frank–Wolfe from the uniform policy).
pub fn g_optimal(features: &FeatureMatrix, opts: &FwOptions) -> Result<DesignResult> {
    let k = features.num_actions();
    let uniform = Policy::uniform(k);
    let ball = Ellipsoid::unit_ball(features.dim());
    let blocks = vec![SafetyBlock {
        weight: 1.0,
        pi0: &uniform,
        theta_set: &ball,
    }];
    let solver = JointSolver::new(features, blocks, 0.0, false, *opts)?;
    solver.solve(vec![uniform.probs().to_vec()]).map(into_design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::numerics::{sample_ellipsoid_uniform, sample_simplex, sample_unit_sphere, seeded_rng, SeededRng};

    fn illustrative(theta_bar: [f64; 2]) -> DesignProblem {
        DesignProblem::new(
            FeatureMatrix::identity(2),
            Policy::new(vec![0.2, 0.8]).unwrap(),
            0.9,
            Ellipsoid::new(theta_bar.to_vec(), Matrix::identity(2).scaled(0.1)).unwrap(),
        )
        .unwrap()
    }

    fn random_problem(rng: &mut SeededRng, d: usize, k: usize, alpha: f64) -> DesignProblem {
        let cols: Vec<Vec<f64>> = (0..k).map(|_| sample_unit_sphere(rng, d)).collect();
        let pi0 = Policy::new(sample_simplex(rng, k)).unwrap();
        let center: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..2.0)).collect();
        DesignProblem::new(
            FeatureMatrix::from_columns(&cols).unwrap(),
            pi0,
            alpha,
            Ellipsoid::new(center, Matrix::identity(d)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn feature_matrix_rejects_long_columns() {
        let m = Matrix::from_columns(&[vec![1.0, 0.5]]).unwrap();
        assert!(FeatureMatrix::new(m).is_err());
    }

    #[test]
    fn g_value_examples() {
        let a = FeatureMatrix::identity(2);
        let g = g_value(&Policy::uniform(2), &a, 0.0).unwrap();
        assert!((g - 2.0).abs() < 1e-12);
        assert!((g.sqrt() - 1.414).abs() < 1e-3);
        let g = g_value(&Policy::new(vec![0.33, 0.67]).unwrap(), &a, 0.0).unwrap();
        assert!((g - 1.0 / 0.33).abs() < 1e-12);
        assert!((g.sqrt() - 1.74).abs() < 1e-2);
        assert!(matches!(
            g_value(&Policy::new(vec![1.0, 0.0]).unwrap(), &a, 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn orthonormal_columns_uniform_gives_k() {
        // Rotated basis of ℝ³: G(uniform) = I/3 so every variance is 3.
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let a = FeatureMatrix::from_columns(&[vec![c, c, 0.0], vec![-c, c, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let g = g_value(&Policy::uniform(3), &a, 0.0).unwrap();
        assert!((g - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let a = FeatureMatrix::identity(2);
        let h = g_gradient(&Policy::new(vec![0.25, 0.75]).unwrap(), &a, 0.0).unwrap();
        assert!((h[0] + 16.0).abs() < 1e-9 && h[1].abs() < 1e-12);
        let h = g_gradient(&Policy::uniform(2), &a, 0.0).unwrap();
        assert!((h[0] + 4.0).abs() < 1e-9 && h[1].abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seeded_rng(12);
        let mut checked = 0;
        while checked < 100 {
            let d = rng.random_range(2..5);
            let k = rng.random_range(d..d + 5);
            let cols: Vec<Vec<f64>> = (0..k).map(|_| sample_unit_sphere(&mut rng, d)).collect();
            let a = FeatureMatrix::from_columns(&cols).unwrap();
            let pi = Policy::new(sample_simplex(&mut rng, k)).unwrap();
            let eval = DesignEval::new(&a, pi.probs(), 0.0).unwrap();
            let mut v = eval.variances.clone();
            v.sort_by(|x, y| y.total_cmp(x));
            if v[0] - v[1] < 1e-3 * v[0] || v[0] > 1e3 || pi.min_prob() < 1e-3 {
                continue;
            }
            let h = g_gradient(&pi, &a, 0.0).unwrap();
            // Differentiate the unnormalized objective coordinate-wise.
            let f = |x: &[f64]| -> f64 {
                DesignEval::new(&a, x, 0.0).unwrap().argmax().1
            };
            let eps = 1e-7;
            let scale = h.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for i in 0..k {
                let mut up = pi.probs().to_vec();
                let mut dn = pi.probs().to_vec();
                up[i] += eps;
                dn[i] -= eps;
                let fd = (f(&up) - f(&dn)) / (2.0 * eps);
                assert!(
                    (fd - h[i]).abs() <= 1e-4 * scale,
                    "coord {i}: fd {fd} vs analytic {}",
                    h[i]
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn worst_case_theta_examples() {
        let e = Ellipsoid::unit_ball(2);
        assert_eq!(worst_case_theta(&[0.0, 0.0], &e), vec![0.0, 0.0]);
        let t = worst_case_theta(&[3.0, 4.0], &e);
        assert!((t[0] - 0.6).abs() < 1e-15 && (t[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn worst_case_theta_beats_samples() {
        let mut rng = seeded_rng(44);
        let shape = Matrix::from_rows(&[vec![1.0, 0.2, 0.1], vec![0.2, 0.5, 0.0], vec![0.1, 0.0, 0.8]])
            .unwrap();
        let e = Ellipsoid::new(vec![0.5, -1.0, 2.0], shape).unwrap();
        let v = [0.3, -0.7, 1.1];
        let best = worst_case_theta(&v, &e);
        let val = dot(&v, &best);
        assert!((val - e.support(&v)).abs() < 1e-8);
        assert!(e.mahalanobis_sq(&best) <= 1.0 + 1e-10);
        let mut sampled_max = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let th = sample_ellipsoid_uniform(&e, &mut rng);
            let s = dot(&v, &th);
            assert!(s <= val + 1e-12);
            sampled_max = sampled_max.max(s);
        }
        assert!(val - sampled_max <= 0.01);
    }

    #[test]
    fn margin_examples() {
        let prob = illustrative([1.0, 2.0]);
        let pg = Policy::uniform(2);
        let at_center = safety_margin_at_center(&pg, &prob);
        assert!((at_center + 0.12).abs() < 1e-12);
        assert!(safety_margin(&pg, &prob) <= -0.12);

        let loose = DesignProblem::new(
            FeatureMatrix::identity(2),
            Policy::new(vec![0.2, 0.8]).unwrap(),
            0.0,
            Ellipsoid::new(vec![10.0, 10.0], Matrix::identity(2).scaled(0.01)).unwrap(),
        )
        .unwrap();
        assert!(safety_margin(&Policy::new(vec![0.7, 0.3]).unwrap(), &loose) > 0.0);
    }

    #[test]
    fn margin_matches_sampled_minimum() {
        let mut rng = seeded_rng(90);
        for _ in 0..5 {
            let alpha: f64 = rng.random();
            let prob = random_problem(&mut rng, 3, 6, alpha);
            let pi = Policy::new(sample_simplex(&mut rng, 6)).unwrap();
            let closed = safety_margin(&pi, &prob);
            let delta = shifted(pi.probs(), &prob.pi0, prob.alpha);
            let ad = prob.features.combine(&delta);
            let mut sampled = f64::INFINITY;
            for _ in 0..10_000 {
                let th = sample_ellipsoid_uniform(&prob.theta_set, &mut rng);
                sampled = sampled.min(dot(&ad, &th));
            }
            assert!(sampled >= closed - 1e-12);
            // Uniform samples approach the boundary slowly in the tail.
            let spread = prob.theta_set.shape().quad_form(&ad).sqrt();
            assert!(closed >= sampled - 0.05 * spread.max(1e-3));
        }
    }

    #[test]
    fn inner_lp_alpha_zero_is_vertex() {
        let prob = DesignProblem::new(
            FeatureMatrix::identity(2),
            Policy::new(vec![0.2, 0.8]).unwrap(),
            0.0,
            Ellipsoid::new(vec![2.0, 2.0], Matrix::identity(2).scaled(0.01)).unwrap(),
        )
        .unwrap();
        let (pi, cuts) = solve_inner_lp(&[-3.0, -1.0], &prob, 1e-7).unwrap();
        assert!((pi[0] - 1.0).abs() < 1e-12);
        assert!(cuts.is_empty());
    }

    #[test]
    fn inner_lp_respects_binding_cut() {
        // Gradient favors action 0; the safe set is {t ≤ t*} for π = (t, 1 − t).
        let prob = illustrative([1.0, 2.0]);
        let (pi, cuts) = solve_inner_lp(&[-1.0, 0.0], &prob, 1e-7).unwrap();
        assert!(!cuts.is_empty());
        assert!(safety_margin(&pi, &prob) >= -1e-7);
        // Parametric scan for the largest safe t.
        let mut t_star = 0.0;
        for i in 0..=100_000 {
            let t = i as f64 / 100_000.0;
            let p = Policy::new(vec![t, 1.0 - t]).unwrap();
            if safety_margin(&p, &prob) >= 0.0 {
                t_star = t;
            }
        }
        assert!((pi[0] - t_star).abs() < 1e-4, "{} vs {t_star}", pi[0]);
    }

    #[test]
    fn illustrative_examples() {
        let opts = FwOptions::default();
        let r = frank_wolfe_safe(&illustrative([1.0, 2.0]), &opts).unwrap();
        assert!((r.policy[0] - 0.330).abs() <= 0.005, "{:?}", r.policy);
        assert!(r.width >= 1.73 && r.width <= 1.75);
        assert!(r.safety_margin >= -1e-6);

        let r = frank_wolfe_safe(&illustrative([2.0, 1.0]), &opts).unwrap();
        assert!((r.policy[0] - 0.5).abs() <= 1e-3, "{:?}", r.policy);
        assert!((r.width - 2f64.sqrt()).abs() <= 1e-3);

        let r = g_optimal(&FeatureMatrix::identity(2), &opts).unwrap();
        assert!((r.policy[0] - 0.5).abs() <= 1e-4);
        let r = g_optimal(&FeatureMatrix::identity(5), &opts).unwrap();
        assert!((r.g_value - 5.0).abs() <= 1e-6);
    }

    #[test]
    fn g_optimal_meets_kiefer_wolfowitz() {
        let mut rng = seeded_rng(5);
        for d in [2, 4] {
            let cols: Vec<Vec<f64>> = (0..100).map(|_| sample_unit_sphere(&mut rng, d)).collect();
            let a = FeatureMatrix::from_columns(&cols).unwrap();
            let r = g_optimal(&a, &FwOptions::default()).unwrap();
            assert!(r.g_value >= d as f64 - 1e-6);
            assert!(r.g_value <= 1.05 * d as f64, "d={d} g={}", r.g_value);
        }
    }

    #[test]
    fn alpha_zero_safe_design_near_d() {
        let mut rng = seeded_rng(6);
        let prob = random_problem(&mut rng, 3, 30, 0.0);
        let r = frank_wolfe_safe(&prob, &FwOptions::default()).unwrap();
        assert!(r.g_value <= 3.0 * 1.05, "g={}", r.g_value);
    }

    #[test]
    fn iterates_are_monotone_and_safe() {
        let mut rng = seeded_rng(8);
        for _ in 0..3 {
            let prob = random_problem(&mut rng, 3, 20, 0.9);
            let r = frank_wolfe_safe(&prob, &FwOptions::default()).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1].g_value <= w[0].g_value + 1e-12);
            }
            for rec in &r.trace {
                assert!(rec.safety_margin >= -1e-6, "margin {}", rec.safety_margin);
            }
        }
    }
}
