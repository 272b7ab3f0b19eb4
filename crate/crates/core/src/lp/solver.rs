//! Exact rational two-phase simplex.
//!
//! Free variables that are defined by an equality row are substituted out
//! before the tableau is built (the interim `pi`/`q` definitions of the
//! mechanism LPs are of this shape) and recovered afterwards. Pricing is
//! Dantzig's rule; after a run of degenerate pivots the solver falls back
//! to Bland's rule until the objective moves again, which rules out cycling.

use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;

use super::program::{LinearProgram, Sense};
use crate::rational::Q;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value at the optimum (`None` unless `Optimal`).
    pub objective: Option<Q>,
    /// One value per LP variable (empty unless `Optimal`).
    pub values: Vec<Q>,
    pub pivots: usize,
}

impl LpSolution {
    pub fn value(&self, var: usize) -> &Q {
        &self.values[var]
    }
}

const DEGENERATE_STREAK: usize = 64;

type Lin = BTreeMap<usize, Q>;

struct Substitution {
    var: usize,
    /// `var = constant + sum(coef * x)`
    constant: Q,
    expr: Lin,
}

/// Solves `lp` exactly.
pub fn solve(lp: &LinearProgram) -> LpSolution {
    let nv = lp.num_vars();
    // Working copy of rows as maps.
    let mut rows: Vec<(Lin, Sense, Q)> = lp
        .rows
        .iter()
        .map(|r| (r.coeffs.iter().cloned().collect::<Lin>(), r.sense, r.rhs.clone()))
        .collect();
    let mut objective: Lin = lp.objective.iter().cloned().collect();
    let mut obj_const = Q::zero();
    let is_free = |k: usize| lp.vars[k].lower.is_none() && lp.vars[k].upper.is_none();

    // --- presolve: eliminate free variables defined by equality rows ---
    let mut subs: Vec<Substitution> = Vec::new();
    let mut eliminated = vec![false; nv];
    let mut col_count = vec![0usize; nv];
    for (lin, _, _) in &rows {
        for k in lin.keys() {
            col_count[*k] += 1;
        }
    }
    let mut alive = vec![true; rows.len()];
    loop {
        let mut pick: Option<(usize, usize)> = None;
        for (ri, (lin, sense, _)) in rows.iter().enumerate() {
            if !alive[ri] || *sense != Sense::Eq {
                continue;
            }
            for k in lin.keys() {
                if is_free(*k) && !eliminated[*k] {
                    let better = match pick {
                        None => true,
                        Some((_, pk)) => col_count[*k] < col_count[pk],
                    };
                    if better {
                        pick = Some((ri, *k));
                    }
                }
            }
        }
        let Some((ri, var)) = pick else { break };
        let (lin, _, rhs) = rows[ri].clone();
        alive[ri] = false;
        let a = lin[&var].clone();
        let constant = &rhs / &a;
        let mut expr = Lin::new();
        for (k, c) in &lin {
            if *k != var {
                expr.insert(*k, -(c / &a));
            }
        }
        for (rj, (l2, _, r2)) in rows.iter_mut().enumerate() {
            if !alive[rj] {
                continue;
            }
            if let Some(c) = l2.remove(&var) {
                *r2 -= &c * &constant;
                for (k, e) in &expr {
                    let add = &c * e;
                    let entry = l2.entry(*k).or_insert_with(Q::zero);
                    let before_zero = entry.is_zero();
                    *entry += add;
                    if entry.is_zero() {
                        l2.remove(k);
                        if !before_zero {
                            col_count[*k] = col_count[*k].saturating_sub(1);
                        }
                    } else if before_zero {
                        col_count[*k] += 1;
                    }
                }
            }
        }
        if let Some(c) = objective.remove(&var) {
            obj_const += &c * &constant;
            for (k, e) in &expr {
                let entry = objective.entry(*k).or_insert_with(Q::zero);
                *entry += &c * e;
                if entry.is_zero() {
                    objective.remove(k);
                }
            }
        }
        eliminated[var] = true;
        subs.push(Substitution { var, constant, expr });
    }
    // rows that became empty: check consistency
    for (ri, (lin, sense, rhs)) in rows.iter().enumerate() {
        if alive[ri] && lin.is_empty() {
            let ok = match sense {
                Sense::Le => rhs >= &Q::zero(),
                Sense::Ge => rhs <= &Q::zero(),
                Sense::Eq => rhs.is_zero(),
            };
            if !ok {
                return infeasible();
            }
        }
    }

    // --- map remaining variables to non-negative columns ---
    // x_k = offset_k + sum(sign * col)
    struct ColMap {
        offset: Q,
        cols: Vec<(usize, Q)>,
    }
    let mut maps: Vec<Option<ColMap>> = (0..nv).map(|_| None).collect();
    let mut ncols = 0usize;
    let mut extra_rows: Vec<(Lin, Sense, Q)> = Vec::new();
    let mut used = vec![false; nv];
    for (ri, (lin, _, _)) in rows.iter().enumerate() {
        if alive[ri] {
            for k in lin.keys() {
                used[*k] = true;
            }
        }
    }
    for k in objective.keys() {
        used[*k] = true;
    }
    for k in 0..nv {
        if eliminated[k] {
            continue;
        }
        let v = &lp.vars[k];
        if !used[k] {
            // empty column: any feasible value, pick the one closest to zero
            let val = match (&v.lower, &v.upper) {
                (Some(l), _) if l > &Q::zero() => l.clone(),
                (_, Some(u)) if u < &Q::zero() => u.clone(),
                _ => Q::zero(),
            };
            if let (Some(l), Some(u)) = (&v.lower, &v.upper) {
                if l > u {
                    return infeasible();
                }
            }
            maps[k] = Some(ColMap { offset: val, cols: vec![] });
            continue;
        }
        match (&v.lower, &v.upper) {
            (Some(l), u) => {
                let c = ncols;
                ncols += 1;
                if let Some(u) = u {
                    if u < l {
                        return infeasible();
                    }
                    let mut lin = Lin::new();
                    lin.insert(c, Q::one());
                    extra_rows.push((lin, Sense::Le, u - l));
                }
                maps[k] = Some(ColMap { offset: l.clone(), cols: vec![(c, Q::one())] });
            }
            (None, Some(u)) => {
                let c = ncols;
                ncols += 1;
                maps[k] = Some(ColMap { offset: u.clone(), cols: vec![(c, -Q::one())] });
            }
            (None, None) => {
                let c = ncols;
                ncols += 2;
                maps[k] = Some(ColMap { offset: Q::zero(), cols: vec![(c, Q::one()), (c + 1, -Q::one())] });
            }
        }
    }
    let translate = |lin: &Lin, rhs: &mut Q| -> Lin {
        let mut out = Lin::new();
        for (k, a) in lin {
            let m = maps[*k].as_ref().expect("mapped variable");
            *rhs -= a * &m.offset;
            for (c, s) in &m.cols {
                let e = out.entry(*c).or_insert_with(Q::zero);
                *e += a * s;
            }
        }
        out.retain(|_, v| !v.is_zero());
        out
    };
    let mut std_rows: Vec<(Lin, Sense, Q)> = Vec::new();
    for (ri, (lin, sense, rhs)) in rows.iter().enumerate() {
        if !alive[ri] || lin.is_empty() {
            continue;
        }
        let mut r = rhs.clone();
        let l = translate(lin, &mut r);
        std_rows.push((l, *sense, r));
    }
    std_rows.extend(extra_rows);
    let mut cost = vec![Q::zero(); ncols];
    let mut cost_const = obj_const.clone();
    for (k, a) in &objective {
        let m = maps[*k].as_ref().expect("mapped variable");
        cost_const += a * &m.offset;
        for (c, s) in &m.cols {
            cost[*c] += a * s;
        }
    }

    let Some((col_values, opt)) = Tableau::run(ncols, std_rows, cost) else {
        return LpSolution { status: LpStatus::Infeasible, objective: None, values: vec![], pivots: 0 };
    };
    let (col_values, pivots) = match col_values {
        Ok(v) => v,
        Err(pivots) => {
            return LpSolution { status: LpStatus::Unbounded, objective: None, values: vec![], pivots };
        }
    };
    let opt = opt + cost_const;

    // --- postsolve ---
    let mut values = vec![Q::zero(); nv];
    for k in 0..nv {
        if let Some(m) = &maps[k] {
            let mut v = m.offset.clone();
            for (c, s) in &m.cols {
                v += s * &col_values[*c];
            }
            values[k] = v;
        }
    }
    for s in subs.iter().rev() {
        let mut v = s.constant.clone();
        for (k, c) in &s.expr {
            v += c * &values[*k];
        }
        values[s.var] = v;
    }
    LpSolution { status: LpStatus::Optimal, objective: Some(opt), values, pivots }
}

fn infeasible() -> LpSolution {
    LpSolution { status: LpStatus::Infeasible, objective: None, values: vec![], pivots: 0 }
}

struct Tableau {
    /// Row-major constraint coefficients, including slack and artificial columns.
    t: Vec<Vec<Q>>,
    rhs: Vec<Q>,
    basis: Vec<usize>,
    /// Reduced costs for the current phase.
    d: Vec<Q>,
    value: Q,
    ncols: usize,
    blocked: Vec<bool>,
    pivots: usize,
}

type RunResult = Option<(Result<(Vec<Q>, usize), usize>, Q)>;

impl Tableau {
    /// Maximizes `cost · x` over `x >= 0` subject to `rows`.
    /// `None` = infeasible; `Some((Err(pivots), _))` = unbounded.
    fn run(nstruct: usize, rows: Vec<(Lin, Sense, Q)>, cost: Vec<Q>) -> RunResult {
        let mrows = rows.len();
        // normalize rhs >= 0
        let mut rows = rows;
        for (lin, sense, rhs) in rows.iter_mut() {
            if rhs.is_negative() {
                for v in lin.values_mut() {
                    *v = -v.clone();
                }
                *rhs = -rhs.clone();
                *sense = match sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
            }
        }
        let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
        let ncols = nstruct + n_slack + n_art;
        let mut t = vec![vec![Q::zero(); ncols]; mrows];
        let mut rhs = vec![Q::zero(); mrows];
        let mut basis = vec![0usize; mrows];
        let mut is_art = vec![false; ncols];
        let mut s_next = nstruct;
        let mut a_next = nstruct + n_slack;
        for (r, (lin, sense, b)) in rows.into_iter().enumerate() {
            for (c, v) in lin {
                t[r][c] = v;
            }
            rhs[r] = b;
            match sense {
                Sense::Le => {
                    t[r][s_next] = Q::one();
                    basis[r] = s_next;
                    s_next += 1;
                }
                Sense::Ge => {
                    t[r][s_next] = -Q::one();
                    s_next += 1;
                    t[r][a_next] = Q::one();
                    is_art[a_next] = true;
                    basis[r] = a_next;
                    a_next += 1;
                }
                Sense::Eq => {
                    t[r][a_next] = Q::one();
                    is_art[a_next] = true;
                    basis[r] = a_next;
                    a_next += 1;
                }
            }
        }
        let mut tab = Tableau {
            t,
            rhs,
            basis,
            d: vec![Q::zero(); ncols],
            value: Q::zero(),
            ncols,
            blocked: vec![false; ncols],
            pivots: 0,
        };
        if n_art > 0 {
            let phase1: Vec<Q> = (0..ncols).map(|c| if is_art[c] { -Q::one() } else { Q::zero() }).collect();
            tab.price(&phase1);
            let unbounded = tab.iterate();
            debug_assert!(!unbounded, "phase 1 is bounded");
            if tab.value.is_negative() {
                return None;
            }
            // drive artificials out of the basis
            let mut r = 0;
            while r < tab.t.len() {
                if is_art[tab.basis[r]] {
                    let col = (0..ncols).find(|&c| !is_art[c] && !tab.t[r][c].is_zero());
                    match col {
                        Some(c) => {
                            tab.pivot(r, c);
                            r += 1;
                        }
                        None => {
                            tab.t.remove(r);
                            tab.rhs.remove(r);
                            tab.basis.remove(r);
                        }
                    }
                } else {
                    r += 1;
                }
            }
            for (c, a) in is_art.iter().enumerate() {
                if *a {
                    tab.blocked[c] = true;
                }
            }
        }
        let mut full_cost = cost;
        full_cost.resize(ncols, Q::zero());
        tab.price(&full_cost);
        if tab.iterate() {
            return Some((Err(tab.pivots), Q::zero()));
        }
        let mut x = vec![Q::zero(); nstruct];
        for (r, b) in tab.basis.iter().enumerate() {
            if *b < nstruct {
                x[*b] = tab.rhs[r].clone();
            }
        }
        let value = tab.value.clone();
        Some((Ok((x, tab.pivots)), value))
    }

    fn price(&mut self, cost: &[Q]) {
        let mut d = cost.to_vec();
        let mut value = Q::zero();
        for (r, b) in self.basis.iter().enumerate() {
            let cb = &cost[*b];
            if cb.is_zero() {
                continue;
            }
            value += cb * &self.rhs[r];
            for (c, v) in self.t[r].iter().enumerate() {
                if !v.is_zero() {
                    d[c] -= cb * v;
                }
            }
        }
        self.d = d;
        self.value = value;
    }

    /// Runs simplex iterations; returns `true` if unbounded.
    fn iterate(&mut self) -> bool {
        let mut streak = 0usize;
        loop {
            let bland = streak >= DEGENERATE_STREAK;
            let mut enter: Option<usize> = None;
            for c in 0..self.ncols {
                if self.blocked[c] || !self.d[c].is_positive() {
                    continue;
                }
                if bland {
                    enter = Some(c);
                    break;
                }
                if enter.is_none_or(|e| self.d[c] > self.d[e]) {
                    enter = Some(c);
                }
            }
            let Some(col) = enter else { return false };
            let mut leave: Option<(usize, Q)> = None;
            for r in 0..self.t.len() {
                let a = &self.t[r][col];
                if !a.is_positive() {
                    continue;
                }
                let ratio = &self.rhs[r] / a;
                let better = match &leave {
                    None => true,
                    Some((lr, lratio)) => ratio < *lratio || (ratio == *lratio && self.basis[r] < self.basis[*lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
            let Some((row, ratio)) = leave else { return true };
            if ratio.is_zero() {
                streak += 1;
            } else {
                streak = 0;
            }
            self.pivot(row, col);
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        self.pivots += 1;
        let p = self.t[row][col].clone();
        let inv = p.recip();
        let nz: Vec<usize> = (0..self.ncols).filter(|&c| !self.t[row][c].is_zero()).collect();
        for &c in &nz {
            self.t[row][c] *= &inv;
        }
        self.rhs[row] *= &inv;
        let prow: Vec<(usize, Q)> = nz.iter().map(|&c| (c, self.t[row][c].clone())).collect();
        let prhs = self.rhs[row].clone();
        for r in 0..self.t.len() {
            if r == row {
                continue;
            }
            let f = self.t[r][col].clone();
            if f.is_zero() {
                continue;
            }
            let tr = &mut self.t[r];
            for (c, v) in &prow {
                tr[*c] -= &f * v;
            }
            self.rhs[r] -= &f * &prhs;
        }
        let f = self.d[col].clone();
        if !f.is_zero() {
            for (c, v) in &prow {
                self.d[*c] -= &f * v;
            }
            self.value += &f * &prhs;
        }
        self.basis[row] = col;
    }
}
