//! Dense two-phase simplex.
//!
//! Programs are stated as `minimize cᵀx` subject to equality rows,
//! `row·x ≥ rhs` rows and per-variable bounds (lower defaults to 0, upper to
//! +∞; either may be infinite). The solver rewrites everything into
//! standard form `A y = b, y ≥ 0` and runs a tableau simplex, periodically
//! rebuilt from the original rows. Bland's rule takes over on long
//! degenerate stretches, so the method cannot cycle.

use crate::error::{Error, Result};

/// Feasibility tolerance shared by every caller that asks "is this safe?".
pub const FEAS_TOL: f64 = 1e-7;

/// Pivot cap; reaching it is reported as [`Error::NumericalFailure`].
pub const MAX_PIVOTS: usize = 100_000;

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-9;
const RATIO_SLACK: f64 = 1e-9;
const REFACTOR_EVERY: usize = 50;
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    eq_constraints: Vec<(Vec<f64>, f64)>,
    ineq_constraints: Vec<(Vec<f64>, f64)>,
    lower_bounds: Vec<f64>,
    upper_bounds: Vec<f64>,
}

impl LinearProgram {
    /// `minimize objectiveᵀx` with `x ≥ 0` and no constraints yet.
    pub fn minimize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            eq_constraints: Vec::new(),
            ineq_constraints: Vec::new(),
            lower_bounds: vec![0.0; n],
            upper_bounds: vec![f64::INFINITY; n],
        }
    }

    /// `maximize objectiveᵀx`, stored as minimizing the negation.
    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::minimize(objective.into_iter().map(|v| -v).collect())
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn eq_constraints(&self) -> &[(Vec<f64>, f64)] {
        &self.eq_constraints
    }

    pub fn ineq_constraints(&self) -> &[(Vec<f64>, f64)] {
        &self.ineq_constraints
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower_bounds
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper_bounds
    }

    /// `row·x = rhs`.
    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.eq_constraints.push((row, rhs));
        self
    }

    /// `row·x ≥ rhs`.
    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.ineq_constraints.push((row, rhs));
        self
    }

    /// `row·x ≤ rhs`, stored as `−row·x ≥ −rhs`.
    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.ineq_constraints
            .push((row.into_iter().map(|v| -v).collect(), -rhs));
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower_bounds[var] = lower;
        self.upper_bounds[var] = upper;
        self
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.set_bounds(var, f64::NEG_INFINITY, f64::INFINITY)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let rows = self.eq_constraints.iter().chain(&self.ineq_constraints);
        for (row, rhs) in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "constraint row has {} entries, program has {n} variables",
                    row.len()
                )));
            }
            if !rhs.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("constraint"));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective"));
        }
        for (l, u) in self.lower_bounds.iter().zip(&self.upper_bounds) {
            if l > u || l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY
            {
                return Err(Error::InvalidInput(format!("bad variable bounds [{l}, {u}]")));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, rhs) in &self.eq_constraints {
            worst = worst.max((dot(row, x) - rhs).abs());
        }
        for (row, rhs) in &self.ineq_constraints {
            worst = worst.max(rhs - dot(row, x));
        }
        for ((v, l), u) in x.iter().zip(&self.lower_bounds).zip(&self.upper_bounds) {
            worst = worst.max(l - v).max(v - u);
        }
        worst
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Vec<f64>,
    pub value: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// How an original variable is expressed through standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + y[col]
    Shifted { col: usize, offset: f64 },
    /// x = offset − y[col]
    Mirrored { col: usize, offset: f64 },
    /// x = y[pos] − y[neg]
    Split { pos: usize, neg: usize },
}

struct Tableau {
    /// m rows of width `ncols + 1`; the last entry is the right-hand side.
    rows: Vec<Vec<f64>>,
    /// The rows as first built, kept to rebuild `rows` from the basis.
    original: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
    pivots: usize,
}

impl Tableau {
    fn new(rows: Vec<Vec<f64>>, basis: Vec<usize>, ncols: usize) -> Self {
        Self {
            original: rows.clone(),
            rows,
            basis,
            ncols,
            pivots: 0,
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        pivot_rows(&mut self.rows, r, c);
        self.basis[r] = c;
        self.pivots += 1;
    }

    fn remove_row(&mut self, r: usize) {
        self.rows.remove(r);
        self.original.remove(r);
        self.basis.remove(r);
    }

    /// Recomputes `B⁻¹[A | b]` from the original rows by Gauss–Jordan
    /// elimination with partial pivoting, discarding accumulated round-off.
    /// Keeps the current tableau if the basis looks singular.
    fn refactor(&mut self) {
        let m = self.rows.len();
        let mut work = self.original.clone();
        let mut used = vec![false; m];
        let mut order = Vec::with_capacity(m);
        for &col in &self.basis {
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in work.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let v = row[col].abs();
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            match best {
                Some((i, v)) if v > 1e-11 => {
                    pivot_rows(&mut work, i, col);
                    used[i] = true;
                    order.push(i);
                }
                _ => return,
            }
        }
        self.rows = order.iter().map(|&i| work[i].clone()).collect();
        self.original = order.iter().map(|&i| self.original[i].clone()).collect();
        for row in self.rows.iter_mut() {
            let rhs = &mut row[self.ncols];
            if *rhs < 0.0 && *rhs > -FEAS_TOL {
                *rhs = 0.0;
            }
        }
    }

    /// Reduced costs `c_j − c_Bᵀ B⁻¹ A_j` for the current basis, plus the
    /// objective value `c_Bᵀ b`.
    fn reduced_costs(&self, cost: &[f64]) -> (Vec<f64>, f64) {
        let mut red = cost.to_vec();
        let mut value = 0.0;
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb == 0.0 {
                continue;
            }
            for (rj, v) in red.iter_mut().zip(row.iter()) {
                *rj -= cb * v;
            }
            value += cb * row[self.ncols];
        }
        (red, value)
    }

    /// Runs the simplex method minimizing `cost`. Entering columns follow
    /// Dantzig's rule and leaving rows a two-pass (Harris) ratio test that
    /// prefers large pivots; after a long run of degenerate pivots both
    /// switch to Bland's rule until the objective strictly improves.
    /// Columns with `allowed[j] == false` never enter. Returns `false` when
    /// unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<bool> {
        let tol = COST_EPS * cost.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        let mut best_value = f64::INFINITY;
        let mut stalled = 0;
        let mut rechecked = false;
        loop {
            if self.pivots >= MAX_PIVOTS {
                return Err(Error::NumericalFailure(MAX_PIVOTS));
            }
            let (red, value) = self.reduced_costs(cost);
            if value < best_value - tol {
                best_value = value;
                stalled = 0;
            } else {
                stalled += 1;
            }
            let bland = stalled > DEGENERATE_STREAK;
            let candidates = (0..self.ncols).filter(|&j| allowed[j] && red[j] < -tol);
            let entering = if bland {
                candidates.min()
            } else {
                candidates.min_by(|&i, &j| red[i].total_cmp(&red[j]).then(i.cmp(&j)))
            };
            let Some(c) = entering else {
                return Ok(true);
            };
            let leaving = if bland {
                self.bland_row(c)
            } else {
                self.harris_row(c)
            };
            match leaving {
                Some(r) => {
                    self.pivot(r, c);
                    rechecked = false;
                    if self.pivots % REFACTOR_EVERY == 0 {
                        self.refactor();
                    }
                }
                None if !rechecked => {
                    self.refactor();
                    rechecked = true;
                }
                None => return Ok(false),
            }
        }
    }

    fn harris_row(&self, c: usize) -> Option<usize> {
        let rhs = self.ncols;
        let mut bound = f64::INFINITY;
        for row in &self.rows {
            let a = row[c];
            if a > PIVOT_EPS {
                bound = bound.min((row[rhs].max(0.0) + RATIO_SLACK) / a);
            }
        }
        if bound.is_infinite() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            let a = row[c];
            if a <= PIVOT_EPS || row[rhs].max(0.0) / a > bound {
                continue;
            }
            if best.is_none_or(|(bi, ba)| a > ba || (a == ba && self.basis[i] < self.basis[bi])) {
                best = Some((i, a));
            }
        }
        best.map(|(i, _)| i)
    }

    fn bland_row(&self, c: usize) -> Option<usize> {
        let rhs = self.ncols;
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            let a = row[c];
            if a <= PIVOT_EPS {
                continue;
            }
            let ratio = row[rhs].max(0.0) / a;
            best = match best {
                Some((bi, br))
                    if ratio > br + 1e-12 || (ratio >= br - 1e-12 && self.basis[i] > self.basis[bi]) =>
                {
                    Some((bi, br))
                }
                _ => Some((i, ratio)),
            };
        }
        best.map(|(i, _)| i)
    }
}

fn pivot_rows(rows: &mut [Vec<f64>], r: usize, c: usize) {
    let p = rows[r][c];
    for v in rows[r].iter_mut() {
        *v /= p;
    }
    let prow = rows[r].clone();
    for (i, row) in rows.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[c];
        if f == 0.0 {
            continue;
        }
        for (v, pv) in row.iter_mut().zip(&prow) {
            *v -= f * pv;
        }
        row[c] = 0.0;
    }
}

/// Solves the program. Infeasibility and unboundedness are reported through
/// [`LpSolution::status`]; only malformed input or pivot exhaustion error.
pub fn solve_lp(p: &LinearProgram) -> Result<LpSolution> {
    p.validate()?;
    let n = p.num_vars();

    // Column layout for the structural variables.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (p.lower_bounds[j], p.upper_bounds[j]);
        if l.is_finite() {
            maps.push(VarMap::Shifted { col: ncols, offset: l });
            if u.is_finite() {
                upper_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(VarMap::Mirrored { col: ncols, offset: u });
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }
    let n_struct = ncols;

    // Standard-form rows: (coefficients over structural columns, rhs, slack sign).
    // slack sign: 0 = equality, -1 = surplus (≥ row), +1 = slack (≤ row).
    let mut std_rows: Vec<(Vec<f64>, f64, i8)> = Vec::new();
    let translate = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; n_struct];
        let mut rhs = rhs;
        for (j, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shifted { col, offset } => {
                    out[col] += a;
                    rhs -= a * offset;
                }
                VarMap::Mirrored { col, offset } => {
                    out[col] -= a;
                    rhs -= a * offset;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] += a;
                    out[neg] -= a;
                }
            }
        }
        (out, rhs)
    };
    for (row, rhs) in &p.eq_constraints {
        let (r, b) = translate(row, *rhs);
        std_rows.push((r, b, 0));
    }
    for (row, rhs) in &p.ineq_constraints {
        let (r, b) = translate(row, *rhs);
        std_rows.push((r, b, -1));
    }
    for &(col, cap) in &upper_rows {
        let mut r = vec![0.0; n_struct];
        r[col] = 1.0;
        std_rows.push((r, cap, 1));
    }

    // Equilibrate rows so pivot and ratio tolerances mean the same thing
    // everywhere; slacks are rescaled implicitly.
    for (coef, rhs, _) in std_rows.iter_mut() {
        let scale = coef.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            coef.iter_mut().for_each(|v| *v /= scale);
            *rhs /= scale;
        }
    }

    let m = std_rows.len();
    let n_slack = std_rows.iter().filter(|r| r.2 != 0).count();
    let slack_base = n_struct;
    let art_base = slack_base + n_slack;

    // Decide which rows need an artificial variable.
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut n_art = 0;
    let mut slack_idx = slack_base;
    let mut pending: Vec<usize> = Vec::new();
    for (i, (coef, rhs, sign)) in std_rows.into_iter().enumerate() {
        let mut coef = coef;
        let mut rhs = rhs;
        let mut slack_coef = f64::from(sign);
        let this_slack = if sign != 0 {
            let s = slack_idx;
            slack_idx += 1;
            Some(s)
        } else {
            None
        };
        if rhs < 0.0 {
            coef.iter_mut().for_each(|v| *v = -*v);
            rhs = -rhs;
            slack_coef = -slack_coef;
        }
        let mut full = coef;
        full.resize(art_base, 0.0);
        if let Some(s) = this_slack {
            full[s] = slack_coef;
        }
        if let Some(s) = this_slack.filter(|_| slack_coef > 0.0) {
            basis.push(s);
            full.push(rhs);
            rows.push(full);
        } else {
            basis.push(usize::MAX);
            pending.push(i);
            full.push(rhs);
            rows.push(full);
            n_art += 1;
        }
    }
    let total = art_base + n_art;
    for row in rows.iter_mut() {
        let rhs = row.pop().unwrap();
        row.resize(total, 0.0);
        row.push(rhs);
    }
    for (k, &i) in pending.iter().enumerate() {
        rows[i][art_base + k] = 1.0;
        basis[i] = art_base + k;
    }

    let mut tab = Tableau::new(rows, basis, total);

    // Phase 1.
    if n_art > 0 {
        let mut cost1 = vec![0.0; total];
        for c in cost1.iter_mut().skip(art_base) {
            *c = 1.0;
        }
        let allowed = vec![true; total];
        tab.optimize(&cost1, &allowed)?;
        tab.refactor();
        let (_, infeas) = tab.reduced_costs(&cost1);
        if infeas > FEAS_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                point: vec![f64::NAN; n],
                value: f64::NAN,
            });
        }
        // Drive remaining artificials out of the basis or drop redundant rows.
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= art_base {
                let mut col: Option<(usize, f64)> = None;
                for j in 0..art_base {
                    let v = tab.rows[r][j].abs();
                    if v > PIVOT_EPS && col.is_none_or(|(_, b)| v > b) {
                        col = Some((j, v));
                    }
                }
                let col = col.map(|(j, _)| j);
                match col {
                    Some(c) => {
                        tab.pivot(r, c);
                        r += 1;
                    }
                    None => {
                        tab.remove_row(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2 over structural + slack columns.
    let mut cost2 = vec![0.0; total];
    for (j, &c) in p.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shifted { col, .. } => cost2[col] += c,
            VarMap::Mirrored { col, .. } => cost2[col] -= c,
            VarMap::Split { pos, neg } => {
                cost2[pos] += c;
                cost2[neg] -= c;
            }
        }
    }
    let allowed: Vec<bool> = (0..total).map(|j| j < art_base).collect();
    tab.refactor();
    let bounded = tab.optimize(&cost2, &allowed)?;
    tab.refactor();
    if !bounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            point: vec![f64::NAN; n],
            value: f64::NEG_INFINITY,
        });
    }

    let mut y = vec![0.0; total];
    for (row, &b) in tab.rows.iter().zip(&tab.basis) {
        y[b] = row[total].max(0.0);
    }
    let point: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shifted { col, offset } => offset + y[col],
            VarMap::Mirrored { col, offset } => offset - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let value = p.evaluate(&point);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        point,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::numerics::seeded_rng;

    #[test]
    fn one_dimensional_max() {
        let mut lp = LinearProgram::minimize(vec![-1.0]);
        lp.add_le(vec![1.0], 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.point[0] - 1.0).abs() < 1e-12);
        assert!((s.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut lp = LinearProgram::minimize(vec![1.0]);
        lp.add_ge(vec![1.0], 2.0).add_le(vec![1.0], 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LinearProgram::minimize(vec![-1.0, 0.0]);
        lp.add_ge(vec![1.0, -1.0], 0.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_mirrored_variables() {
        // min x + y, x free with x ≥ -3 via a row, y ≤ 2 with no lower bound, x + y ≥ -5.
        let mut lp = LinearProgram::minimize(vec![1.0, -1.0]);
        lp.set_free(0)
            .set_bounds(1, f64::NEG_INFINITY, 2.0)
            .add_ge(vec![1.0, 0.0], -3.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.point[0] + 3.0).abs() < 1e-12);
        assert!((s.point[1] - 2.0).abs() < 1e-12);
        assert!((s.value + 5.0).abs() < 1e-12);
    }

    #[test]
    fn equality_with_redundant_row() {
        let mut lp = LinearProgram::minimize(vec![1.0, 2.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0).add_eq(vec![2.0, 2.0], 2.0);
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_programs_identical_answers() {
        let mut rng = seeded_rng(1);
        let lp = random_program(&mut rng, 6, 4);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(
            a.point.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.point.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    /// Box-bounded random program: `0 ≤ x ≤ 1`, random `≥` rows.
    fn random_program(rng: &mut crate::numerics::SeededRng, n: usize, m: usize) -> LinearProgram {
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut lp = LinearProgram::minimize(c);
        for j in 0..n {
            lp.set_bounds(j, 0.0, 1.0);
        }
        for _ in 0..m {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rhs = rng.random_range(-1.0..0.5);
            lp.add_ge(row, rhs);
        }
        lp
    }

    /// Enumerates all vertices of `{x : Gx ≥ h}` (bounds written as rows) by
    /// solving every n×n subsystem with Gaussian elimination.
    fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
        let n = lp.num_vars();
        let mut rows: Vec<(Vec<f64>, f64)> = lp.ineq_constraints().to_vec();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push((e.clone(), lp.lower_bounds()[j]));
            rows.push((e.iter().map(|v| -v).collect(), -lp.upper_bounds()[j]));
        }
        let m = rows.len();
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            if let Some(x) = solve_square(&idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())
            {
                let feasible = rows.iter().all(|(r, h)| dot(r, &x) >= h - 1e-9);
                if feasible {
                    let v = lp.evaluate(&x);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
            // next combination
            let mut k = n;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if idx[k] < m - n + k {
                    idx[k] += 1;
                    for t in k + 1..n {
                        idx[t] = idx[t - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn solve_square(sys: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
        let n = sys.len();
        let mut a: Vec<Vec<f64>> = sys
            .iter()
            .map(|(r, h)| {
                let mut v = r.clone();
                v.push(*h);
                v
            })
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            for i in 0..n {
                if i != col {
                    let f = a[i][col] / a[col][col];
                    for k in col..=n {
                        a[i][k] -= f * a[col][k];
                    }
                }
            }
        }
        Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut rng = seeded_rng(2024);
        for _ in 0..40 {
            let lp = random_program(&mut rng, 6, 4);
            let s = solve_lp(&lp).unwrap();
            match vertex_enumeration(&lp) {
                Some(v) => {
                    assert_eq!(s.status, LpStatus::Optimal);
                    assert!((s.value - v).abs() <= 1e-7, "{} vs {}", s.value, v);
                    assert!(lp.max_violation(&s.point) <= FEAS_TOL);
                }
                None => assert_eq!(s.status, LpStatus::Infeasible),
            }
        }
    }

    #[test]
    fn degenerate_cut_programs_stay_feasible() {
        // Many rows through one interior point of the simplex: heavy degeneracy.
        let mut rng = seeded_rng(77);
        for _ in 0..30 {
            let n = rng.random_range(10..40);
            let m = rng.random_range(10..50);
            let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let su: f64 = u.iter().sum();
            u.iter_mut().for_each(|v| *v /= su);
            let c: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..60.0)).collect();
            let mut lp = LinearProgram::minimize(c);
            lp.add_eq(vec![1.0; n], 1.0);
            for _ in 0..m {
                let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..10.0)).collect();
                let rhs = dot(&row, &u);
                lp.add_ge(row, rhs);
            }
            let s = solve_lp(&lp).unwrap();
            assert_eq!(s.status, LpStatus::Optimal);
            assert!(lp.max_violation(&s.point) <= FEAS_TOL, "{}", lp.max_violation(&s.point));
            assert!(s.value <= lp.evaluate(&u) + 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn optimum_beats_any_feasible_point(seed in any::<u64>()) {
                let mut rng = seeded_rng(seed);
                let lp = random_program(&mut rng, 5, 3);
                let s = solve_lp(&lp).unwrap();
                if s.is_optimal() {
                    prop_assert!(lp.max_violation(&s.point) <= FEAS_TOL);
                    for _ in 0..200 {
                        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
                        if lp.max_violation(&x) <= 0.0 {
                            prop_assert!(lp.evaluate(&x) >= s.value - 1e-6);
                        }
                    }
                }
            }
        }
    }
}


