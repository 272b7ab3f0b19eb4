//! The naive LP over the full support and the succinct LPs over class
//! representatives, in BIC or IC mode with an optional ε slack.
//!
//! On every representative `w` one allocation variable is kept per orbit of
//! cells under `Stab(w)` and one price variable per orbit of bidders, so the
//! stored outcome is automatically fixed by the stabilizer.

use num_traits::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};

use super::aux::{compute_aux_weights, AuxWeights};
use super::program::{LinearProgram, Sense};
use super::solver::{LpSolution, LpStatus};
use crate::error::{Error, Result};
use crate::mechanism::{AuditMode, Mechanism, Outcome};
use crate::model::{Bound, Constraints, DiscreteDistribution, TypeProfile, ValueVector, DEFAULT_MAX_SUPPORT};
use crate::rational::Q;
use crate::symmetry::{bidder_representatives, enumerate_representatives, CellClasses, RepresentativeSet, SymmetryGroup};

/// Incentive notion enforced by the LP.
pub type Mode = AuditMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Naive,
    KItems,
    KBidders,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Naive => "naive",
            Formulation::KItems => "k-items",
            Formulation::KBidders => "k-bidders",
        }
    }
}

/// A built LP together with the bookkeeping needed to read a mechanism
/// back out of its solution.
#[derive(Debug, Clone)]
pub struct LpBuild {
    pub lp: LinearProgram,
    pub formulation: Formulation,
    pub mode: Mode,
    pub epsilon: Q,
    pub group: SymmetryGroup,
    pub reps: RepresentativeSet,
    /// Types with interim variables, per bidder.
    pub types: Vec<Vec<ValueVector>>,
    pub aux: AuxWeights,
    delta: Q,
    classes: Vec<CellClasses>,
    phi: Vec<Vec<usize>>,
    price: Vec<Vec<usize>>,
    pi: Vec<Vec<Vec<usize>>>,
    q: Vec<Vec<usize>>,
}

type Lin = Vec<(usize, Q)>;

/// Naive LP over every support profile (trivial group).
pub fn build_naive(dist: &DiscreteDistribution, cons: &Constraints, epsilon: &Q, mode: Mode) -> Result<LpBuild> {
    build_naive_capped(dist, cons, epsilon, mode, DEFAULT_MAX_SUPPORT)
}

pub fn build_naive_capped(dist: &DiscreteDistribution, cons: &Constraints, epsilon: &Q, mode: Mode, cap: u128) -> Result<LpBuild> {
    let (m, n) = (dist.num_bidders(), dist.num_items());
    let factors = dist.require_factors()?;
    let types = factors.iter().map(|f| f.types().cloned().collect()).collect();
    build(dist, cons, epsilon, mode, Formulation::Naive, SymmetryGroup::trivial(m, n), types, cap)
}

/// Succinct LP for i.i.d. bidders (quotient by all bidder permutations).
pub fn build_succinct_k_items(dist: &DiscreteDistribution, cons: &Constraints, epsilon: &Q, mode: Mode) -> Result<LpBuild> {
    let (m, n) = (dist.num_bidders(), dist.num_items());
    let factors = dist.require_factors()?;
    if factors.iter().any(|f| f != &factors[0]) {
        return Err(Error::MissingRequiredSymmetry("bidders are not identically distributed".into()));
    }
    if cons.demands.iter().any(|c| c != &cons.demands[0]) || cons.budgets.iter().any(|b| b != &cons.budgets[0]) {
        return Err(Error::MissingRequiredSymmetry("bidders have different demands or budgets".into()));
    }
    let types = factors.iter().map(|f| f.types().cloned().collect()).collect();
    build(dist, cons, epsilon, mode, Formulation::KItems, SymmetryGroup::all_bidders(m, n), types, DEFAULT_MAX_SUPPORT)
}

/// Succinct LP for item-symmetric bidders (quotient by all item
/// permutations); interim variables only on non-increasing types.
pub fn build_succinct_k_bidders(dist: &DiscreteDistribution, cons: &Constraints, epsilon: &Q, mode: Mode) -> Result<LpBuild> {
    let (m, n) = (dist.num_bidders(), dist.num_items());
    let factors = dist.require_factors()?;
    if let Some(i) = factors.iter().position(|f| !f.is_item_symmetric()) {
        return Err(Error::MissingRequiredSymmetry(format!("bidder {i} is not item-symmetric")));
    }
    let types = (0..m).map(|i| bidder_representatives(dist, i).into_iter().map(|(v, _)| v).collect()).collect();
    build(dist, cons, epsilon, mode, Formulation::KBidders, SymmetryGroup::all_items(m, n), types, DEFAULT_MAX_SUPPORT)
}

fn qn(k: usize) -> Q {
    Q::from_integer((k as u64).into())
}

#[allow(clippy::too_many_arguments)]
fn build(
    dist: &DiscreteDistribution,
    cons: &Constraints,
    epsilon: &Q,
    mode: Mode,
    formulation: Formulation,
    group: SymmetryGroup,
    types: Vec<Vec<ValueVector>>,
    cap: u128,
) -> Result<LpBuild> {
    let (m, n) = (dist.num_bidders(), dist.num_items());
    if cons.demands.len() != m || cons.budgets.len() != m {
        return Err(Error::DimensionMismatch("constraints do not match the number of bidders".into()));
    }
    let reps = enumerate_representatives(dist, &group, cap)?;
    let aux = compute_aux_weights(dist, &group, &reps.reps, &types)?;
    let classes = reps.reps.iter().map(|w| group.cell_classes(w)).collect::<Result<Vec<_>>>()?;

    let mut lp = LinearProgram::new();
    let mut phi = Vec::with_capacity(reps.len());
    let mut price = Vec::with_capacity(reps.len());
    for (k, cl) in classes.iter().enumerate() {
        phi.push(
            cl.class_cells
                .iter()
                .map(|cells| {
                    let (i, j) = cells[0];
                    lp.add_var(format!("phi_{k}_{i}_{j}"), Some(Q::zero()), Some(Q::one()))
                })
                .collect::<Vec<_>>(),
        );
        price.push(
            cl.class_bidders
                .iter()
                .map(|bs| {
                    let upper = bs.iter().filter_map(|&i| cons.budgets[i].finite().cloned()).min();
                    lp.add_var(format!("p_{k}_{}", bs[0]), None, upper)
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut pi = Vec::with_capacity(m);
    let mut qv = Vec::with_capacity(m);
    for (i, ts) in types.iter().enumerate() {
        pi.push((0..ts.len()).map(|t| (0..n).map(|j| lp.add_var(format!("pi_{i}_{t}_{j}"), None, None)).collect()).collect::<Vec<Vec<usize>>>());
        qv.push((0..ts.len()).map(|t| lp.add_var(format!("q_{i}_{t}"), None, None)).collect::<Vec<usize>>());
    }
    let type_index: Vec<BTreeMap<&ValueVector, usize>> = types.iter().map(|ts| ts.iter().enumerate().map(|(t, v)| (v, t)).collect()).collect();

    // interim definitions
    let mut pi_rows: BTreeMap<(usize, usize, usize), Lin> = BTreeMap::new();
    let mut q_rows: BTreeMap<(usize, usize), Lin> = BTreeMap::new();
    for (key, weight) in &aux.entries {
        let t = type_index[key.bidder][&key.value];
        let cl = &classes[key.rep];
        let var = phi[key.rep][cl.cell_class[key.src_bidder][key.src_item]];
        pi_rows.entry((key.bidder, t, key.item)).or_default().push((var, weight.clone()));
        if key.item == 0 {
            let pvar = price[key.rep][cl.bidder_class[key.src_bidder]];
            q_rows.entry((key.bidder, t)).or_default().push((pvar, weight.clone()));
        }
    }
    for (i, ts) in types.iter().enumerate() {
        for t in 0..ts.len() {
            for j in 0..n {
                let mut row = pi_rows.remove(&(i, t, j)).unwrap_or_default();
                for x in row.iter_mut() {
                    x.1 = -x.1.clone();
                }
                row.push((pi[i][t][j], Q::one()));
                lp.add_row(format!("pidef_{i}_{t}_{j}"), row, Sense::Eq, Q::zero());
            }
            let mut row = q_rows.remove(&(i, t)).unwrap_or_default();
            for x in row.iter_mut() {
                x.1 = -x.1.clone();
            }
            row.push((qv[i][t], Q::one()));
            lp.add_row(format!("qdef_{i}_{t}"), row, Sense::Eq, Q::zero());
        }
    }

    // per-representative feasibility
    for (k, cl) in classes.iter().enumerate() {
        let mut seen: BTreeSet<Lin> = BTreeSet::new();
        for j in 0..n {
            let row: Lin = (0..m).map(|i| (phi[k][cl.cell_class[i][j]], Q::one())).collect();
            let row = super::program::merge_terms(row);
            if seen.insert(row.clone()) {
                lp.add_row(format!("supply_{k}_{j}"), row, Sense::Le, Q::one());
            }
        }
        for i in 0..m {
            if let Bound::Finite(c) = cons.demands[i] {
                if (c as usize) < n {
                    let row: Lin = super::program::merge_terms((0..n).map(|j| (phi[k][cl.cell_class[i][j]], Q::one())).collect());
                    if seen.insert(row.clone()) {
                        lp.add_row(format!("demand_{k}_{i}"), row, Sense::Le, qn(c as usize));
                    }
                }
            }
        }
    }

    let utility = |i: usize, truth: &ValueVector, t_report: usize| -> Lin {
        let mut row: Lin = (0..n).map(|j| (pi[i][t_report][j], truth[j].clone())).collect();
        row.push((qv[i][t_report], -Q::one()));
        row
    };
    for (i, ts) in types.iter().enumerate() {
        for (t, v) in ts.iter().enumerate() {
            lp.add_row(format!("ir_{i}_{t}"), utility(i, v, t), Sense::Ge, Q::zero());
        }
    }

    let mut b = LpBuild {
        lp,
        formulation,
        mode,
        epsilon: epsilon.clone(),
        group,
        reps,
        types,
        aux,
        delta: dist.delta.clone(),
        classes,
        phi,
        price,
        pi,
        q: qv,
    };
    match mode {
        Mode::Bic => b.add_bic_rows(),
        Mode::Ic => b.add_ic_rows(dist)?,
    }

    let mut objective = Vec::new();
    for (k, cl) in b.classes.iter().enumerate() {
        for (c, bs) in cl.class_bidders.iter().enumerate() {
            objective.push((b.price[k][c], &b.reps.weights[k] * qn(bs.len())));
        }
    }
    b.lp.set_objective(objective);
    Ok(b)
}

impl LpBuild {
    fn add_bic_rows(&mut self) {
        let n = self.group.n;
        for (i, ts) in self.types.iter().enumerate() {
            for (t, v) in ts.iter().enumerate() {
                for t2 in 0..ts.len() {
                    if t2 == t {
                        continue;
                    }
                    // u(v→v) − u(v→v′) + ε Σ_j π_ij(v′) ≥ 0
                    let mut row: Lin = (0..n).map(|j| (self.pi[i][t][j], v[j].clone())).collect();
                    row.push((self.q[i][t], -Q::one()));
                    for j in 0..n {
                        row.push((self.pi[i][t2][j], &self.epsilon - &v[j]));
                    }
                    row.push((self.q[i][t2], Q::one()));
                    self.lp.add_row(format!("bic_{i}_{t}_{t2}"), row, Sense::Ge, Q::zero());
                }
                if self.formulation == Formulation::KBidders {
                    for j in 0..n.saturating_sub(1) {
                        let row = vec![(self.pi[i][t][j], Q::one()), (self.pi[i][t][j + 1], -Q::one())];
                        self.lp.add_row(format!("mono_{i}_{t}_{j}"), row, Sense::Ge, Q::zero());
                    }
                }
            }
        }
    }

    /// Variables holding `φ_ij(u)` (per cell) and `p_i(u)` at any profile
    /// in the support, via the representative of its class.
    fn profile_vars(&self, u: &TypeProfile) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
        let c = self.group.canonical(u);
        let k = self.reps.position(&c).ok_or_else(|| Error::UnknownProfile(crate::symmetry::profile_to_string(u)))?;
        let s = self.group.transporter(&c, u).expect("canonical form lies in the orbit").inverse();
        let cl = &self.classes[k];
        let (m, n) = (self.group.m, self.group.n);
        let phi = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let (a, b) = s.map_cell(i, j);
                        self.phi[k][cl.cell_class[a][b]]
                    })
                    .collect()
            })
            .collect();
        let price = (0..m).map(|i| self.price[k][cl.bidder_class[s.bidders[i]]]).collect();
        Ok((phi, price))
    }

    fn add_ic_rows(&mut self, dist: &DiscreteDistribution) -> Result<()> {
        let (m, n) = (self.group.m, self.group.n);
        let factors = dist.require_factors()?.to_vec();
        let mut rows: Vec<(String, Lin)> = Vec::new();
        for (k, v) in self.reps.reps.iter().enumerate() {
            for i in 0..m {
                let (truth, devs): (TypeProfile, Vec<ValueVector>) = if self.formulation == Formulation::KBidders {
                    // columns tied on the other bidders form blocks; within a
                    // block, reorient the true values and only consider
                    // non-increasing deviations
                    let blocks = tied_blocks(v, i);
                    let mut t = v.clone();
                    for bl in &blocks {
                        let mut vals: Vec<Q> = bl.iter().map(|&j| v[i][j].clone()).collect();
                        vals.sort_by(|a, b| b.cmp(a));
                        for (&j, x) in bl.iter().zip(vals) {
                            t[i][j] = x;
                        }
                    }
                    let devs = factors[i]
                        .types()
                        .filter(|w| blocks.iter().all(|bl| bl.windows(2).all(|p| w[p[0]] >= w[p[1]])))
                        .cloned()
                        .collect();
                    // strong monotonicity within blocks at the representative
                    let (pv, _) = self.profile_vars(v)?;
                    for bl in &blocks {
                        for &a in bl {
                            for &b in bl {
                                if v[i][a] > v[i][b] && pv[i][a] != pv[i][b] {
                                    rows.push((format!("icmono_{k}_{i}_{a}_{b}"), vec![(pv[i][a], Q::one()), (pv[i][b], -Q::one())]));
                                }
                            }
                        }
                    }
                    (t, devs)
                } else {
                    (v.clone(), factors[i].types().cloned().collect())
                };
                let (tv, tp) = self.profile_vars(&truth)?;
                for (d, w) in devs.iter().enumerate() {
                    if w == &truth[i] {
                        continue;
                    }
                    let mut u = truth.clone();
                    u[i] = w.clone();
                    let (dv, dp) = self.profile_vars(&u)?;
                    let mut row: Lin = (0..n).map(|j| (tv[i][j], truth[i][j].clone())).collect();
                    row.push((tp[i], -Q::one()));
                    for j in 0..n {
                        row.push((dv[i][j], &self.epsilon - &truth[i][j]));
                    }
                    row.push((dp[i], Q::one()));
                    rows.push((format!("ic_{k}_{i}_{d}"), row));
                }
            }
        }
        for (name, row) in rows {
            self.lp.add_row(name, row, Sense::Ge, Q::zero());
        }
        Ok(())
    }

    /// Reads the mechanism off an optimal solution.
    pub fn extract(&self, sol: &LpSolution) -> Result<Mechanism> {
        if sol.status != LpStatus::Optimal {
            return Err(Error::LpStatus(format!("{:?}", sol.status)));
        }
        let (m, n) = (self.group.m, self.group.n);
        let mut table = BTreeMap::new();
        for (k, w) in self.reps.reps.iter().enumerate() {
            let cl = &self.classes[k];
            let mut o = Outcome::zero(m, n);
            for i in 0..m {
                for j in 0..n {
                    o.phi[i][j] = sol.values[self.phi[k][cl.cell_class[i][j]]].clone();
                }
                o.price[i] = sol.values[self.price[k][cl.bidder_class[i]]].clone();
            }
            table.insert(w.clone(), o);
        }
        let setting = match self.formulation {
            Formulation::Naive => None,
            f => Some(f.name().to_string()),
        };
        Mechanism::new(self.group.clone(), self.delta.clone(), setting, table)
    }

    /// `π` and `q` as stored in the solution, per bidder and type.
    pub fn interim_values(&self, sol: &LpSolution) -> Vec<BTreeMap<ValueVector, (Vec<Q>, Q)>> {
        self.types
            .iter()
            .enumerate()
            .map(|(i, ts)| {
                ts.iter()
                    .enumerate()
                    .map(|(t, v)| {
                        let pis = self.pi[i][t].iter().map(|&x| sol.values[x].clone()).collect();
                        (v.clone(), (pis, sol.values[self.q[i][t]].clone()))
                    })
                    .collect()
            })
            .collect()
    }

    /// Variable/row counts against the size bounds of the formulation.
    pub fn size_report(&self) -> SizeReport {
        let (m, n) = (self.group.m, self.group.n);
        let e = self.reps.len();
        let sum_types: usize = self.types.iter().map(|t| t.len()).sum();
        SizeReport {
            phi_vars: self.lp.count_vars("phi_"),
            phi_bound: m * n * e,
            price_vars: self.lp.count_vars("p_"),
            price_bound: m * e,
            pi_vars: self.lp.count_vars("pi_"),
            pi_bound: n * sum_types,
            supply_rows: self.lp.count_rows("supply_"),
            supply_bound: n * e,
            demand_rows: self.lp.count_rows("demand_"),
            demand_bound: m * e,
            bic_rows: self.lp.count_rows("bic_"),
            bic_bound: self.types.iter().map(|t| t.len() * t.len()).sum(),
            mono_rows: self.lp.count_rows("mono_"),
            mono_bound: n * sum_types,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct SizeReport {
    pub phi_vars: usize,
    pub phi_bound: usize,
    pub price_vars: usize,
    pub price_bound: usize,
    pub pi_vars: usize,
    pub pi_bound: usize,
    pub supply_rows: usize,
    pub supply_bound: usize,
    pub demand_rows: usize,
    pub demand_bound: usize,
    pub bic_rows: usize,
    pub bic_bound: usize,
    pub mono_rows: usize,
    pub mono_bound: usize,
}

impl SizeReport {
    pub fn within_bounds(&self) -> bool {
        self.phi_vars <= self.phi_bound
            && self.price_vars <= self.price_bound
            && self.pi_vars <= self.pi_bound
            && self.supply_rows <= self.supply_bound
            && self.demand_rows <= self.demand_bound
            && self.bic_rows <= self.bic_bound
            && self.mono_rows <= self.mono_bound
    }
}

/// Groups of item indices whose columns agree on every bidder except `i`.
pub fn tied_blocks(v: &TypeProfile, i: usize) -> Vec<Vec<usize>> {
    let n = v.first().map_or(0, |x| x.len());
    let mut blocks: BTreeMap<Vec<&Q>, Vec<usize>> = BTreeMap::new();
    for j in 0..n {
        let key: Vec<&Q> = v.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, row)| &row[j]).collect();
        blocks.entry(key).or_default().push(j);
    }
    let mut out: Vec<Vec<usize>> = blocks.into_values().collect();
    out.sort();
    out
}

/// Convenience: build, solve and extract in one go.
pub fn solve_to_mechanism(build: &LpBuild) -> Result<(LpSolution, Mechanism)> {
    let sol = super::solver::solve(&build.lp);
    let mech = build.extract(&sol)?;
    Ok((sol, mech))
}

/// `R^OPT` of the formulation, or the LP status as an error.
pub fn optimum(build: &LpBuild) -> Result<Q> {
    let sol = super::solver::solve(&build.lp);
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective.expect("optimal has a value")),
        s => Err(Error::LpStatus(format!("{s:?}"))),
    }
}
