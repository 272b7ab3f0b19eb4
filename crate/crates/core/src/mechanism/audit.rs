use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use super::interim::{evaluate_support, InterimForm, SupportTable};
use super::{Mechanism, Outcome, Rule};
use crate::error::{Error, Result};
use crate::model::{DiscreteDistribution, TypeProfile, ValueVector, DEFAULT_MAX_SUPPORT};
use crate::rational::{self, Q};
use crate::symmetry::{enumerate_representatives, GroupKind, Permutation, SymmetryGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditMode {
    Bic,
    Ic,
}

/// A pair of items where the higher-valued one is received less often.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub bidder: usize,
    #[serde(with = "profile_serde")]
    pub values: ValueVector,
    /// The other bidders' values (per-profile audits only).
    #[serde(with = "others_serde")]
    pub others: Vec<ValueVector>,
    /// Item received more often despite the lower value.
    pub item: usize,
    pub other_item: usize,
}

mod profile_serde {
    use super::*;
    use serde::{Deserializer, Serializer};
    pub fn serialize<S: Serializer>(v: &ValueVector, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(rational::format))
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ValueVector, D::Error> {
        let raw: Vec<String> = Vec::deserialize(d)?;
        raw.iter().map(|x| rational::parse(x).map_err(serde::de::Error::custom)).collect()
    }
}

mod others_serde {
    use super::*;
    use serde::{Deserializer, Serializer};
    pub fn serialize<S: Serializer>(v: &[ValueVector], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|row| row.iter().map(rational::format).collect::<Vec<_>>()))
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ValueVector>, D::Error> {
        let raw: Vec<Vec<String>> = Vec::deserialize(d)?;
        raw.iter()
            .map(|row| row.iter().map(|x| rational::parse(x).map_err(serde::de::Error::custom)).collect())
            .collect()
    }
}

/// Result of an incentive/IR audit. Violations are non-negative; zero means
/// the property holds exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mode: AuditMode,
    #[serde(with = "rational::serde_q")]
    pub epsilon: Q,
    /// Worst misreport gain divided by the misreport's expected item count
    /// (`v_max = 1`); the mechanism is ε-compatible iff this is `≤ ε` and
    /// `unbounded_violations == 0`.
    #[serde(with = "rational::serde_q")]
    pub max_violation: Q,
    /// Worst raw utility gain from misreporting.
    #[serde(with = "rational::serde_q")]
    pub max_raw_gain: Q,
    /// Raw gain divided by the largest number of items any bidder is
    /// allocated (the more common normalization).
    #[serde(with = "rational::serde_q")]
    pub standard_violation: Q,
    /// Profitable misreports that receive no items at all (infinite ratio).
    pub unbounded_violations: usize,
    /// Worst `q_i(v_i) − Σ_j v_ij π_ij(v_i)`.
    #[serde(with = "rational::serde_q")]
    pub max_ir_violation: Q,
    pub monotonicity_violations: Vec<MonotonicityViolation>,
    #[serde(with = "rational::serde_q")]
    pub revenue: Q,
}

impl AuditReport {
    pub fn incentive_ok(&self) -> bool {
        self.unbounded_violations == 0 && self.max_violation <= self.epsilon
    }

    pub fn ir_ok(&self) -> bool {
        self.max_ir_violation.is_zero()
    }
}

struct GainTracker {
    max_ratio: Q,
    max_raw: Q,
    unbounded: usize,
}

impl GainTracker {
    fn new() -> Self {
        Self { max_ratio: Q::zero(), max_raw: Q::zero(), unbounded: 0 }
    }

    fn record(&mut self, gain: Q, items: &Q) {
        if !gain.is_positive() {
            return;
        }
        if items.is_zero() {
            self.unbounded += 1;
        } else {
            let r = &gain / items;
            if r > self.max_ratio {
                self.max_ratio = r;
            }
        }
        if gain > self.max_raw {
            self.max_raw = gain;
        }
    }
}

fn dot(a: &[Q], b: &[Q]) -> Q {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_items(table: &SupportTable) -> Q {
    let mut best = Q::one();
    for o in &table.outcomes {
        for i in 0..o.phi.len() {
            let c = o.items_of(i).ceil();
            if c > best {
                best = c;
            }
        }
    }
    best
}

fn ir_violation(form: &InterimForm) -> Q {
    let mut worst = Q::zero();
    for i in 0..form.num_bidders() {
        for v in form.types(i) {
            let u = form.utility(i, v, v);
            if -&u > worst {
                worst = -u;
            }
        }
    }
    worst
}

fn is_item_symmetric_dist(dist: &DiscreteDistribution) -> bool {
    dist.factors().is_some_and(|fs| fs.iter().all(|f| f.is_item_symmetric()))
}

fn bic_monotonicity(form: &InterimForm) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for i in 0..form.num_bidders() {
        for v in form.types(i) {
            let pi = form.pi(i, v);
            for j in 0..v.len() {
                for j2 in 0..v.len() {
                    // v_ij' ≥ v_ij yet j is received strictly more often
                    if j != j2 && v[j2] >= v[j] && pi[j2] < pi[j] {
                        out.push(MonotonicityViolation { bidder: i, values: v.clone(), others: vec![], item: j, other_item: j2 });
                    }
                }
            }
        }
    }
    out
}

fn ic_monotonicity(table: &SupportTable) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for (v, o) in table.profiles.iter().zip(&table.outcomes) {
        let m = v.len();
        for i in 0..m {
            for j in 0..v[i].len() {
                for j2 in 0..v[i].len() {
                    if j == j2 || (0..m).any(|k| k != i && v[k][j] != v[k][j2]) {
                        continue;
                    }
                    if o.phi[i][j] > o.phi[i][j2] && v[i][j] < v[i][j2] {
                        let others = (0..m).filter(|&k| k != i).map(|k| v[k].clone()).collect();
                        out.push(MonotonicityViolation { bidder: i, values: v[i].clone(), others, item: j, other_item: j2 });
                    }
                }
            }
        }
    }
    out
}

/// ε-BIC audit: for every bidder, true type and on-support misreport,
/// compares interim utilities exactly.
pub fn check_bic<R: Rule + ?Sized>(rule: &R, dist: &DiscreteDistribution, epsilon: &Q) -> Result<AuditReport> {
    let table = evaluate_support(rule, dist, DEFAULT_MAX_SUPPORT)?;
    let form = InterimForm::from_table(&table, dist)?;
    let mut gains = GainTracker::new();
    for i in 0..dist.num_bidders() {
        for v in form.types(i) {
            let truthful = form.utility(i, v, v);
            for w in form.types(i) {
                if w != v {
                    gains.record(form.utility(i, v, w) - &truthful, &form.expected_items(i, w));
                }
            }
        }
    }
    let monotonicity_violations = if is_item_symmetric_dist(dist) { bic_monotonicity(&form) } else { vec![] };
    Ok(finish(AuditMode::Bic, epsilon, gains, &table, &form, monotonicity_violations))
}

/// ε-IC audit: as [`check_bic`] but for every realization of the others'
/// types, normalized by the realized item count of the misreport.
pub fn check_ic<R: Rule + ?Sized>(rule: &R, dist: &DiscreteDistribution, epsilon: &Q) -> Result<AuditReport> {
    let table = evaluate_support(rule, dist, DEFAULT_MAX_SUPPORT)?;
    let form = InterimForm::from_table(&table, dist)?;
    let mut gains = GainTracker::new();
    for (v, o) in table.profiles.iter().zip(&table.outcomes) {
        for i in 0..v.len() {
            let truthful = dot(&v[i], &o.phi[i]) - &o.price[i];
            for w in form.types(i) {
                if w == &v[i] {
                    continue;
                }
                let mut u = v.clone();
                u[i] = w.clone();
                let dev = table.get(&u).expect("product support contains unilateral deviations");
                gains.record(dot(&v[i], &dev.phi[i]) - &dev.price[i] - &truthful, &dev.items_of(i));
            }
        }
    }
    let monotonicity_violations = if is_item_symmetric_dist(dist) { ic_monotonicity(&table) } else { vec![] };
    Ok(finish(AuditMode::Ic, epsilon, gains, &table, &form, monotonicity_violations))
}

fn finish(
    mode: AuditMode,
    epsilon: &Q,
    gains: GainTracker,
    table: &SupportTable,
    form: &InterimForm,
    monotonicity_violations: Vec<MonotonicityViolation>,
) -> AuditReport {
    let revenue = table.probs.iter().zip(&table.outcomes).map(|(p, o)| o.price.iter().sum::<Q>() * p).sum();
    AuditReport {
        mode,
        epsilon: epsilon.clone(),
        standard_violation: &gains.max_raw / max_items(table),
        max_violation: gains.max_ratio,
        max_raw_gain: gains.max_raw,
        unbounded_violations: gains.unbounded,
        max_ir_violation: ir_violation(form),
        monotonicity_violations,
        revenue,
    }
}

/// Verifies `M(τ(v)) = τ(M(v))` for adjacent item transpositions on the support.
fn check_rule_item_symmetric<R: Rule + ?Sized>(rule: &R, table: &SupportTable) -> Result<()> {
    let (m, n) = rule.dims();
    for (v, o) in table.profiles.iter().zip(&table.outcomes) {
        for a in 0..n.saturating_sub(1) {
            let t = Permutation::swap_items(m, n, a, a + 1);
            let tv = t.apply_matrix(v);
            let image = match table.get(&tv) {
                Some(x) => x.clone(),
                None => rule.outcome(&tv)?,
            };
            if image != t.apply_outcome(o) {
                return Err(Error::NotItemSymmetric("mechanism does not commute with item permutations".into()));
            }
        }
    }
    Ok(())
}

/// Strong-monotonicity audit; empty iff the mechanism is strongly monotone.
/// Requires an item-symmetric distribution and mechanism.
pub fn check_strong_monotonicity<R: Rule + ?Sized>(rule: &R, dist: &DiscreteDistribution, mode: AuditMode) -> Result<Vec<MonotonicityViolation>> {
    if !is_item_symmetric_dist(dist) {
        return Err(Error::NotItemSymmetric("distribution is not item-symmetric".into()));
    }
    let table = evaluate_support(rule, dist, DEFAULT_MAX_SUPPORT)?;
    check_rule_item_symmetric(rule, &table)?;
    Ok(match mode {
        AuditMode::Bic => bic_monotonicity(&InterimForm::from_table(&table, dist)?),
        AuditMode::Ic => ic_monotonicity(&table),
    })
}

/// `M` with bidder `i`'s reported values for one pair of items swapped
/// whenever the report is a rearrangement of `target`.
struct SwapRepair<'a> {
    base: &'a Mechanism,
    bidder: usize,
    target: ValueVector,
    item: usize,
    other_item: usize,
}

impl Rule for SwapRepair<'_> {
    fn dims(&self) -> (usize, usize) {
        self.base.dims()
    }

    fn outcome(&self, u: &TypeProfile) -> Result<Outcome> {
        let ui = &u[self.bidder];
        let mut a = ui.clone();
        let mut b = self.target.clone();
        a.sort();
        b.sort();
        if a != b {
            return self.base.outcome(u);
        }
        // τ(j), τ(j') are uniform over the positions carrying the
        // corresponding values for a uniform τ with τ(target) = u_i
        let xs: Vec<usize> = (0..ui.len()).filter(|&k| ui[k] == self.target[self.item]).collect();
        let ys: Vec<usize> = (0..ui.len()).filter(|&k| ui[k] == self.target[self.other_item]).collect();
        let (m, n) = self.dims();
        let mut acc = Outcome::zero(m, n);
        for &x in &xs {
            for &y in &ys {
                let mut w = u.clone();
                w[self.bidder].swap(x, y);
                acc.add_assign(&self.base.outcome(&w)?);
            }
        }
        acc.scale(&(Q::one() / Q::from_integer(((xs.len() * ys.len()) as u64).into())));
        Ok(acc)
    }
}

/// Repeatedly swaps the allocation of an inverted item pair (higher value,
/// lower interim probability) until the mechanism is strongly monotone.
/// Each step preserves revenue and interim utilities of every other type,
/// and strictly reduces the number of inverted pairs.
pub fn repair_strong_monotonicity(mech: &Mechanism, dist: &DiscreteDistribution) -> Result<Mechanism> {
    if !is_item_symmetric_dist(dist) {
        return Err(Error::NotItemSymmetric("distribution is not item-symmetric".into()));
    }
    let (m, n) = (mech.group.m, mech.group.n);
    let items_ok = match mech.group.kind {
        GroupKind::AllItems | GroupKind::Product => true,
        GroupKind::Trivial | GroupKind::AllBidders => n <= 1,
        GroupKind::Custom => (0..n.saturating_sub(1)).all(|a| mech.group.contains(&Permutation::swap_items(m, n, a, a + 1))),
    };
    if !items_ok {
        return Err(Error::NotItemSymmetric("mechanism's group does not contain every item permutation".into()));
    }
    let group = SymmetryGroup::all_items(m, n);
    let reps = enumerate_representatives(dist, &group, DEFAULT_MAX_SUPPORT)?;
    let mut current = Mechanism::tabulate(mech, group.clone(), mech.delta.clone(), &reps.reps)?;
    current.setting = mech.setting.clone();
    let limit = 1 + reps.len() * m * n * n;
    for _ in 0..limit {
        let form = super::interim_form(&current, dist)?;
        let found = (0..m).find_map(|i| {
            form.types(i).find_map(|v| {
                let pi = form.pi(i, v);
                (0..n).flat_map(|j| (0..n).map(move |j2| (j, j2))).find(|&(j, j2)| v[j] < v[j2] && pi[j] > pi[j2]).map(|(j, j2)| (i, v.clone(), j, j2))
            })
        });
        let Some((bidder, target, item, other_item)) = found else {
            return Ok(current);
        };
        let rule = SwapRepair { base: &current, bidder, target, item, other_item };
        let mut next = Mechanism::tabulate(&rule, group.clone(), current.delta.clone(), &reps.reps)?;
        next.setting = current.setting.clone();
        current = next;
    }
    Err(Error::NonConvergence("monotonicity repair exceeded its step bound".into()))
}
