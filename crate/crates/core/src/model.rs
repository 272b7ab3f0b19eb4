//! Value distributions, feasibility constraints and the two symmetric
//! settings (k-items: few items, i.i.d. bidders; k-bidders: few bidders,
//! item-symmetric bidders).
//!
//! Values are normalized so that `v_max = 1`; every value of a distribution
//! lies on the grid `δ·ℤ`.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rational::{self, Q};
use crate::symmetry::SymmetryGroup;

/// One bidder's values, one entry per item.
pub type ValueVector = Vec<Q>;
/// One value vector per bidder.
pub type TypeProfile = Vec<ValueVector>;

/// A demand or budget that may be absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound<T> {
    Finite(T),
    Unbounded,
}

impl<T> Bound<T> {
    pub fn finite(&self) -> Option<&T> {
        match self {
            Bound::Finite(t) => Some(t),
            Bound::Unbounded => None,
        }
    }
}

/// Distribution of a single bidder's type vector (items may be correlated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidderFactor {
    /// Sorted by value vector, merged, strictly positive probabilities.
    support: Vec<(ValueVector, Q)>,
}

impl BidderFactor {
    /// Builds a factor from `(type, probability)` pairs. Duplicate types are
    /// merged and zero-probability entries dropped; normalization is checked
    /// by [`validate`], not here.
    pub fn new(entries: Vec<(ValueVector, Q)>) -> Result<Self> {
        let mut map: BTreeMap<ValueVector, Q> = BTreeMap::new();
        let mut len: Option<usize> = None;
        for (v, p) in entries {
            if p.is_negative() {
                return Err(Error::Invalid(format!("negative probability {}", rational::format(&p))));
            }
            match len {
                None => len = Some(v.len()),
                Some(l) if l != v.len() => {
                    return Err(Error::DimensionMismatch(format!("type vectors of length {l} and {}", v.len())))
                }
                _ => {}
            }
            *map.entry(v).or_insert_with(Q::zero) += p;
        }
        let support: Vec<_> = map.into_iter().filter(|(_, p)| !p.is_zero()).collect();
        if support.is_empty() {
            return Err(Error::Invalid("empty support".into()));
        }
        Ok(Self { support })
    }

    /// Items drawn independently, item `j` from `per_item[j]` (`(value, prob)` pairs).
    pub fn independent_items(per_item: &[Vec<(Q, Q)>]) -> Result<Self> {
        let mut acc: Vec<(ValueVector, Q)> = vec![(vec![], Q::one())];
        for item in per_item {
            let mut next = Vec::with_capacity(acc.len() * item.len());
            for (prefix, p) in &acc {
                for (v, pv) in item {
                    let mut w = prefix.clone();
                    w.push(v.clone());
                    next.push((w, p * pv));
                }
            }
            acc = next;
        }
        Self::new(acc)
    }

    /// `n` i.i.d. items with the given single-item marginal.
    pub fn iid_items(n: usize, values: &[(Q, Q)]) -> Result<Self> {
        Self::independent_items(&vec![values.to_vec(); n])
    }

    pub fn point_mass(v: ValueVector) -> Self {
        Self { support: vec![(v, Q::one())] }
    }

    pub fn support(&self) -> &[(ValueVector, Q)] {
        &self.support
    }

    pub fn types(&self) -> impl Iterator<Item = &ValueVector> {
        self.support.iter().map(|(v, _)| v)
    }

    pub fn num_items(&self) -> usize {
        self.support[0].0.len()
    }

    pub fn total(&self) -> Q {
        self.support.iter().map(|(_, p)| p.clone()).sum()
    }

    pub fn prob(&self, v: &[Q]) -> Q {
        match self.support.binary_search_by(|(w, _)| w.as_slice().cmp(v)) {
            Ok(k) => self.support[k].1.clone(),
            Err(_) => Q::zero(),
        }
    }

    pub fn contains(&self, v: &[Q]) -> bool {
        self.support.binary_search_by(|(w, _)| w.as_slice().cmp(v)).is_ok()
    }

    /// The factor of `x ↦ τ(x)` where `τ` moves item `j` to `perm[j]`.
    pub fn permute_items(&self, perm: &[usize]) -> Self {
        let entries = self
            .support
            .iter()
            .map(|(v, p)| {
                let mut w = v.clone();
                for (j, x) in v.iter().enumerate() {
                    w[perm[j]] = x.clone();
                }
                (w, p.clone())
            })
            .collect();
        Self::new(entries).expect("permutation of a valid factor")
    }

    /// `Pr[x] = Pr[τ(x)]` for every item permutation `τ`.
    pub fn is_item_symmetric(&self) -> bool {
        self.support.iter().all(|(v, p)| {
            // all rearrangements of a type must carry the same mass; it is
            // enough to compare against adjacent transpositions
            (0..v.len().saturating_sub(1)).all(|j| {
                let mut w = v.clone();
                w.swap(j, j + 1);
                &self.prob(&w) == p
            })
        })
    }

    /// Number of distinct values item `j` takes.
    pub fn values_per_item(&self, j: usize) -> usize {
        let mut vals: Vec<&Q> = self.support.iter().map(|(v, _)| &v[j]).collect();
        vals.sort();
        vals.dedup();
        vals.len()
    }

    fn map_values(&self, f: impl Fn(&Q) -> Q) -> Self {
        Self::new(self.support.iter().map(|(v, p)| (v.iter().map(&f).collect(), p.clone())).collect())
            .expect("mapping preserves validity")
    }
}

/// How the distribution is stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DistKind {
    /// Independent bidders; never expanded implicitly.
    Product(Vec<BidderFactor>),
    /// Explicit list of profiles (used for estimated histograms).
    Joint(Vec<(TypeProfile, Q)>),
}

/// A finite-support distribution over type profiles on a `δ` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteDistribution {
    pub delta: Q,
    pub kind: DistKind,
}

/// Rounding direction for [`DiscreteDistribution::discretize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Down to the nearest multiple (grid points stay put).
    Down,
    /// Up to the next multiple strictly above (grid points move up by `δ`).
    Up,
}

/// Default cap on explicit profile enumeration.
pub const DEFAULT_MAX_SUPPORT: u128 = 1 << 20;

impl DiscreteDistribution {
    pub fn product(delta: Q, factors: Vec<BidderFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Invalid("no bidders".into()));
        }
        let n = factors[0].num_items();
        if let Some(f) = factors.iter().find(|f| f.num_items() != n) {
            return Err(Error::DimensionMismatch(format!("bidders with {n} and {} items", f.num_items())));
        }
        Ok(Self { delta, kind: DistKind::Product(factors) })
    }

    pub fn iid(delta: Q, m: usize, factor: BidderFactor) -> Result<Self> {
        Self::product(delta, vec![factor; m])
    }

    pub fn joint(delta: Q, entries: Vec<(TypeProfile, Q)>) -> Result<Self> {
        let mut map: BTreeMap<TypeProfile, Q> = BTreeMap::new();
        let mut dims: Option<(usize, usize)> = None;
        for (v, p) in entries {
            if p.is_negative() {
                return Err(Error::Invalid("negative probability".into()));
            }
            let d = (v.len(), v.first().map_or(0, |x| x.len()));
            if v.iter().any(|x| x.len() != d.1) || dims.is_some_and(|e| e != d) {
                return Err(Error::DimensionMismatch("inconsistent profile shapes".into()));
            }
            dims = Some(d);
            *map.entry(v).or_insert_with(Q::zero) += p;
        }
        let entries: Vec<_> = map.into_iter().filter(|(_, p)| !p.is_zero()).collect();
        if entries.is_empty() || dims.is_some_and(|d| d.0 == 0) {
            return Err(Error::Invalid("empty support".into()));
        }
        Ok(Self { delta, kind: DistKind::Joint(entries) })
    }

    pub fn num_bidders(&self) -> usize {
        match &self.kind {
            DistKind::Product(f) => f.len(),
            DistKind::Joint(e) => e[0].0.len(),
        }
    }

    pub fn num_items(&self) -> usize {
        match &self.kind {
            DistKind::Product(f) => f[0].num_items(),
            DistKind::Joint(e) => e[0].0[0].len(),
        }
    }

    pub fn is_product(&self) -> bool {
        matches!(self.kind, DistKind::Product(_))
    }

    pub fn factors(&self) -> Option<&[BidderFactor]> {
        match &self.kind {
            DistKind::Product(f) => Some(f),
            DistKind::Joint(_) => None,
        }
    }

    /// Factors of a product distribution; an error for explicit joint ones.
    pub fn require_factors(&self) -> Result<&[BidderFactor]> {
        self.factors()
            .ok_or_else(|| Error::Invalid("operation requires independent bidders (product form)".into()))
    }

    /// Marginal distribution of bidder `i`.
    pub fn marginal(&self, i: usize) -> BidderFactor {
        match &self.kind {
            DistKind::Product(f) => f[i].clone(),
            DistKind::Joint(e) => {
                BidderFactor::new(e.iter().map(|(v, p)| (v[i].clone(), p.clone())).collect()).expect("marginal")
            }
        }
    }

    pub fn prob(&self, v: &TypeProfile) -> Q {
        match &self.kind {
            DistKind::Product(f) => {
                if v.len() != f.len() {
                    return Q::zero();
                }
                let mut p = Q::one();
                for (fi, vi) in f.iter().zip(v) {
                    p *= fi.prob(vi);
                    if p.is_zero() {
                        break;
                    }
                }
                p
            }
            DistKind::Joint(e) => match e.binary_search_by(|(w, _)| w.cmp(v)) {
                Ok(k) => e[k].1.clone(),
                Err(_) => Q::zero(),
            },
        }
    }

    pub fn total(&self) -> Q {
        match &self.kind {
            DistKind::Product(f) => f.iter().map(|x| x.total()).product(),
            DistKind::Joint(e) => e.iter().map(|(_, p)| p.clone()).sum(),
        }
    }

    /// `|supp(D)|` without expanding.
    pub fn support_size(&self) -> u128 {
        match &self.kind {
            DistKind::Product(f) => f.iter().fold(1u128, |acc, x| acc.saturating_mul(x.support.len() as u128)),
            DistKind::Joint(e) => e.len() as u128,
        }
    }

    /// Largest number of distinct values any single coordinate takes.
    pub fn values_per_dimension(&self) -> usize {
        let (m, n) = (self.num_bidders(), self.num_items());
        (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| self.marginal(i).values_per_item(j)).max().unwrap_or(0)
    }

    /// All `(profile, probability)` pairs in lexicographic order. Fails with
    /// `ExplosionGuard` when the support exceeds `cap`.
    pub fn expand(&self, cap: u128) -> Result<Vec<(TypeProfile, Q)>> {
        let count = self.support_size();
        if count > cap {
            return Err(Error::ExplosionGuard { count, cap });
        }
        match &self.kind {
            DistKind::Joint(e) => Ok(e.clone()),
            DistKind::Product(f) => {
                let mut acc: Vec<(TypeProfile, Q)> = vec![(vec![], Q::one())];
                for fi in f {
                    let mut next = Vec::with_capacity(acc.len() * fi.support.len());
                    for (prefix, p) in &acc {
                        for (v, pv) in &fi.support {
                            let mut w = prefix.clone();
                            w.push(v.clone());
                            next.push((w, p * pv));
                        }
                    }
                    acc = next;
                }
                Ok(acc)
            }
        }
    }

    /// Rounds every value to the `delta` grid in the given direction and
    /// merges coinciding outcomes. The result carries grid step `delta`.
    pub fn discretize(&self, delta: &Q, dir: Direction) -> Self {
        let f = |x: &Q| round_value(x, delta, dir);
        let kind = match &self.kind {
            DistKind::Product(fs) => DistKind::Product(fs.iter().map(|x| x.map_values(f)).collect()),
            DistKind::Joint(e) => {
                let mapped = e.iter().map(|(v, p)| (round_profile(v, delta, dir), p.clone())).collect();
                Self::joint(delta.clone(), mapped).expect("rounding keeps shape").kind
            }
        };
        Self { delta: delta.clone(), kind }
    }

    /// Draws one profile with exactly the stored probabilities.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TypeProfile {
        Sampler::new(self).sample(rng)
    }
}

/// Rounds one value to the grid. `Up` moves exact multiples up by one step.
pub fn round_value(x: &Q, delta: &Q, dir: Direction) -> Q {
    match dir {
        Direction::Down => rational::floor_to(x, delta),
        Direction::Up => rational::next_multiple_above(x, delta),
    }
}

pub fn round_vector(v: &[Q], delta: &Q, dir: Direction) -> ValueVector {
    v.iter().map(|x| round_value(x, delta, dir)).collect()
}

pub fn round_profile(v: &TypeProfile, delta: &Q, dir: Direction) -> TypeProfile {
    v.iter().map(|x| round_vector(x, delta, dir)).collect()
}

/// Exact categorical sampler: probabilities are scaled to integers over a
/// common denominator and drawn with a uniform big integer.
#[derive(Debug, Clone)]
pub struct Categorical {
    cumulative: Vec<BigUint>,
    total: BigUint,
}

impl Categorical {
    pub fn new(probs: &[Q]) -> Self {
        let lcm = probs.iter().fold(BigInt::one(), |acc, p| acc.lcm(p.denom()));
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut run = BigUint::zero();
        for p in probs {
            let w = (p.numer() * (&lcm / p.denom())).to_biguint().expect("non-negative weight");
            run += w;
            cumulative.push(run.clone());
        }
        Self { total: run, cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.gen_biguint_below(&self.total);
        self.cumulative.partition_point(|c| c <= &u)
    }
}

/// Reusable exact sampler for a distribution.
#[derive(Debug, Clone)]
pub struct Sampler {
    tables: Vec<(Vec<ValueVector>, Categorical)>,
    joint: Option<(Vec<TypeProfile>, Categorical)>,
}

impl Sampler {
    pub fn new(dist: &DiscreteDistribution) -> Self {
        match &dist.kind {
            DistKind::Product(fs) => Self {
                tables: fs
                    .iter()
                    .map(|f| {
                        let probs: Vec<Q> = f.support.iter().map(|(_, p)| p.clone()).collect();
                        (f.support.iter().map(|(v, _)| v.clone()).collect(), Categorical::new(&probs))
                    })
                    .collect(),
                joint: None,
            },
            DistKind::Joint(e) => {
                let probs: Vec<Q> = e.iter().map(|(_, p)| p.clone()).collect();
                Self { tables: vec![], joint: Some((e.iter().map(|(v, _)| v.clone()).collect(), Categorical::new(&probs))) }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TypeProfile {
        if let Some((profiles, cat)) = &self.joint {
            return profiles[cat.sample(rng)].clone();
        }
        self.tables.iter().map(|(types, cat)| types[cat.sample(rng)].clone()).collect()
    }

    /// Draws bidder `i`'s type only (product form).
    pub fn sample_bidder<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> ValueVector {
        let (types, cat) = &self.tables[i];
        types[cat.sample(rng)].clone()
    }
}

/// Per-bidder demand and budget limits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraints {
    pub demands: Vec<Bound<u32>>,
    pub budgets: Vec<Bound<Q>>,
}

impl Constraints {
    /// No demand or budget limits.
    pub fn unconstrained(m: usize) -> Self {
        Self { demands: vec![Bound::Unbounded; m], budgets: vec![Bound::Unbounded; m] }
    }

    /// Every bidder wants at most one item.
    pub fn unit_demand(m: usize) -> Self {
        Self { demands: vec![Bound::Finite(1); m], budgets: vec![Bound::Unbounded; m] }
    }

    /// Largest number of items bidder `i` can receive: `min(C_i, n)`.
    pub fn t_bidder(&self, i: usize, n: usize) -> usize {
        match self.demands[i] {
            Bound::Finite(c) => (c as usize).min(n),
            Bound::Unbounded => n,
        }
    }

    /// Largest number of items awarded overall: `min(n, Σ_i T_i)`.
    pub fn t_total(&self, n: usize) -> usize {
        let s: usize = (0..self.demands.len()).map(|i| self.t_bidder(i, n)).sum();
        s.min(n)
    }
}

/// Which of the two symmetric problems an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingKind {
    /// `k` items, `m` i.i.d. bidders.
    KItems { k: usize, m: usize },
    /// `k` bidders, `n` items, each bidder item-symmetric.
    KBidders { k: usize, n: usize },
}

impl SettingKind {
    pub fn for_dims(name: &str, m: usize, n: usize) -> Result<Self> {
        match name {
            "k-items" => Ok(SettingKind::KItems { k: n, m }),
            "k-bidders" => Ok(SettingKind::KBidders { k: m, n }),
            other => Err(Error::Parse(format!("unknown setting '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SettingKind::KItems { .. } => "k-items",
            SettingKind::KBidders { .. } => "k-bidders",
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            SettingKind::KItems { k, m } => (m, k),
            SettingKind::KBidders { k, n } => (k, n),
        }
    }

    /// The symmetry group the succinct formulation quotients by.
    pub fn group(&self) -> SymmetryGroup {
        let (m, n) = self.dims();
        match self {
            SettingKind::KItems { .. } => SymmetryGroup::all_bidders(m, n),
            SettingKind::KBidders { .. } => SymmetryGroup::all_items(m, n),
        }
    }
}

/// A validated instance.
#[derive(Debug, Clone)]
pub struct Model {
    pub dist: DiscreteDistribution,
    pub cons: Constraints,
    pub setting: SettingKind,
}

impl Model {
    pub fn m(&self) -> usize {
        self.dist.num_bidders()
    }

    pub fn n(&self) -> usize {
        self.dist.num_items()
    }
}

/// Checks normalization, grid alignment, shapes and the symmetry the
/// declared setting relies on. Returns every violation found.
pub fn validate(dist: DiscreteDistribution, cons: Constraints, setting: SettingKind) -> std::result::Result<Model, Vec<Error>> {
    let mut errs = Vec::new();
    let (m, n) = (dist.num_bidders(), dist.num_items());
    if !dist.delta.is_positive() || !(Q::one() / &dist.delta).is_integer() {
        errs.push(Error::Invalid(format!("grid step {} must be positive with integer inverse", rational::format(&dist.delta))));
    }
    if setting.dims() != (m, n) {
        errs.push(Error::DimensionMismatch(format!(
            "setting {} expects {:?} (bidders, items), distribution has ({m}, {n})",
            setting.name(),
            setting.dims()
        )));
    }
    if cons.demands.len() != m || cons.budgets.len() != m {
        errs.push(Error::DimensionMismatch(format!("constraints for {} bidders, distribution has {m}", cons.demands.len())));
    }
    if cons.demands.iter().any(|d| matches!(d, Bound::Finite(0))) {
        errs.push(Error::Invalid("demands must be positive".into()));
    }
    if cons.budgets.iter().any(|b| b.finite().is_some_and(|x| x.is_negative())) {
        errs.push(Error::Invalid("budgets must be non-negative".into()));
    }
    // normalization
    match &dist.kind {
        DistKind::Product(fs) => {
            for (i, f) in fs.iter().enumerate() {
                let t = f.total();
                if !t.is_one() {
                    errs.push(Error::NonNormalized(format!("bidder {i}: {}", rational::format(&t))));
                }
            }
        }
        DistKind::Joint(_) => {
            let t = dist.total();
            if !t.is_one() {
                errs.push(Error::NonNormalized(rational::format(&t)));
            }
        }
    }
    // grid and range
    let mut off: Vec<Q> = Vec::new();
    let mut visit = |x: &Q| {
        if dist.delta.is_positive() && !rational::is_multiple_of(x, &dist.delta) && !off.contains(x) {
            off.push(x.clone());
        }
    };
    let mut out_of_range = false;
    for i in 0..m {
        for v in dist.marginal(i).types() {
            for x in v {
                visit(x);
                out_of_range |= x.is_negative() || x > &Q::one();
            }
        }
    }
    for x in off {
        errs.push(Error::OffGrid { value: rational::format(&x), delta: rational::format(&dist.delta) });
    }
    if out_of_range {
        errs.push(Error::Invalid("values must lie in [0, 1] (normalized so v_max = 1)".into()));
    }
    // symmetry prerequisites
    match setting {
        SettingKind::KItems { .. } => {
            let ok = match &dist.kind {
                DistKind::Product(fs) => fs.windows(2).all(|w| w[0] == w[1]),
                DistKind::Joint(_) => SymmetryGroup::all_bidders(m, n).is_invariant(&dist),
            };
            if !ok {
                errs.push(Error::MissingRequiredSymmetry("k-items requires identically distributed bidders".into()));
            }
        }
        SettingKind::KBidders { .. } => {
            let ok = match &dist.kind {
                DistKind::Product(fs) => fs.iter().all(|f| f.is_item_symmetric()),
                DistKind::Joint(_) => SymmetryGroup::all_items(m, n).is_invariant(&dist),
            };
            if !ok {
                errs.push(Error::MissingRequiredSymmetry("k-bidders requires item-symmetric bidders".into()));
            }
        }
    }
    if errs.is_empty() {
        Ok(Model { dist, cons, setting })
    } else {
        Err(errs)
    }
}

/// Number of samples after which every class frequency is within `zeta`
/// of its probability with probability `1 - failure` (Hoeffding plus a
/// union bound over `classes`).
pub fn samples_for_accuracy(zeta: f64, classes: usize, failure: f64) -> usize {
    let n = ((2.0 * classes.max(1) as f64 / failure).ln() / (2.0 * zeta * zeta)).ceil();
    n.max(1.0) as usize
}

/// Histogram estimate from a sampling oracle: each draw is rounded down to
/// the grid and replaced by its canonical class representative; the result
/// is a joint distribution on representatives whose probabilities are the
/// empirical class frequencies (summing to exactly one).
pub fn estimate_from_samples<R, F>(mut oracle: F, delta: &Q, group: &SymmetryGroup, samples: usize, rng: &mut R) -> Result<DiscreteDistribution>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> TypeProfile,
{
    if samples == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    let mut counts: BTreeMap<TypeProfile, u64> = BTreeMap::new();
    for _ in 0..samples {
        let v = round_profile(&oracle(rng), delta, Direction::Down);
        *counts.entry(group.canonical(&v)).or_insert(0) += 1;
    }
    let n = samples as i64;
    DiscreteDistribution::joint(delta.clone(), counts.into_iter().map(|(v, c)| (v, rational::q(c as i64, n))).collect())
}

/// A random factor on the grid `1/den`: `c` distinct positive values per
/// item with random small-integer weights. With `item_symmetric` all items
/// share one marginal; otherwise each item draws its own.
pub fn random_factor<R: Rng + ?Sized>(rng: &mut R, n: usize, c: usize, den: i64, item_symmetric: bool) -> BidderFactor {
    let item = |rng: &mut R| -> Vec<(Q, Q)> {
        let mut vals: Vec<i64> = (1..=den).collect();
        // partial Fisher–Yates for c distinct values
        for k in 0..c.min(vals.len()) {
            let pick = rng.gen_range(k..vals.len());
            vals.swap(k, pick);
        }
        let weights: Vec<i64> = (0..c).map(|_| rng.gen_range(1..=5)).collect();
        let total: i64 = weights.iter().sum();
        vals.iter().take(c).zip(&weights).map(|(&v, &w)| (rational::q(v, den), rational::q(w, total))).collect()
    };
    let per_item: Vec<Vec<(Q, Q)>> = if item_symmetric {
        vec![item(rng); n]
    } else {
        (0..n).map(|_| item(rng)).collect()
    };
    BidderFactor::independent_items(&per_item).expect("valid random factor")
}

// ---------------------------------------------------------------------------
// JSON input format

/// On-disk distribution specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub setting: String,
    pub delta: String,
    pub factors: Vec<FactorSpec>,
    #[serde(default)]
    pub demands: Option<Vec<serde_json::Value>>,
    #[serde(default)]
    pub budgets: Option<Vec<serde_json::Value>>,
}

/// One bidder factor; `copies` repeats it for i.i.d. bidders.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorSpec {
    /// Explicit joint support: `[[["v1","v2"], "p"], ...]`.
    Support {
        support: Vec<(Vec<String>, String)>,
        #[serde(default)]
        copies: Option<usize>,
    },
    /// Independent items, each a list of `["value", "prob"]`.
    Items {
        items: Vec<Vec<(String, String)>>,
        #[serde(default)]
        copies: Option<usize>,
    },
    /// `n` i.i.d. items sharing one marginal.
    Iid {
        iid_items: usize,
        values: Vec<(String, String)>,
        #[serde(default)]
        copies: Option<usize>,
    },
}

fn parse_pairs(v: &[(String, String)]) -> Result<Vec<(Q, Q)>> {
    v.iter().map(|(a, b)| Ok((rational::parse(a)?, rational::parse(b)?))).collect()
}

fn parse_bound_u32(v: &serde_json::Value) -> Result<Bound<u32>> {
    match v {
        serde_json::Value::Null => Ok(Bound::Unbounded),
        serde_json::Value::Number(x) => x
            .as_u64()
            .and_then(|c| u32::try_from(c).ok())
            .map(Bound::Finite)
            .ok_or_else(|| Error::Parse(format!("bad demand {x}"))),
        serde_json::Value::String(s) if s == "inf" || s == "unbounded" => Ok(Bound::Unbounded),
        serde_json::Value::String(s) => s.parse().map(Bound::Finite).map_err(|_| Error::Parse(format!("bad demand '{s}'"))),
        other => Err(Error::Parse(format!("bad demand {other}"))),
    }
}

fn parse_bound_q(v: &serde_json::Value) -> Result<Bound<Q>> {
    match v {
        serde_json::Value::Null => Ok(Bound::Unbounded),
        serde_json::Value::String(s) if s == "inf" || s == "unbounded" => Ok(Bound::Unbounded),
        serde_json::Value::String(s) => Ok(Bound::Finite(rational::parse(s)?)),
        serde_json::Value::Number(x) => Ok(Bound::Finite(rational::parse(&x.to_string())?)),
        other => Err(Error::Parse(format!("bad budget {other}"))),
    }
}

impl DistributionSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds the distribution, constraints and setting (not yet validated).
    pub fn build(&self) -> Result<(DiscreteDistribution, Constraints, SettingKind)> {
        let delta = rational::parse(&self.delta)?;
        let mut factors = Vec::new();
        for f in &self.factors {
            let (factor, copies) = match f {
                FactorSpec::Support { support, copies } => {
                    let entries = support
                        .iter()
                        .map(|(v, p)| Ok((v.iter().map(|x| rational::parse(x)).collect::<Result<Vec<_>>>()?, rational::parse(p)?)))
                        .collect::<Result<Vec<_>>>()?;
                    (BidderFactor::new(entries)?, copies)
                }
                FactorSpec::Items { items, copies } => {
                    let per: Vec<Vec<(Q, Q)>> = items.iter().map(|it| parse_pairs(it)).collect::<Result<_>>()?;
                    (BidderFactor::independent_items(&per)?, copies)
                }
                FactorSpec::Iid { iid_items, values, copies } => (BidderFactor::iid_items(*iid_items, &parse_pairs(values)?)?, copies),
            };
            for _ in 0..copies.unwrap_or(1) {
                factors.push(factor.clone());
            }
        }
        let dist = DiscreteDistribution::product(delta, factors)?;
        let m = dist.num_bidders();
        let demands = match &self.demands {
            None => vec![Bound::Unbounded; m],
            Some(d) => d.iter().map(parse_bound_u32).collect::<Result<_>>()?,
        };
        let budgets = match &self.budgets {
            None => vec![Bound::Unbounded; m],
            Some(b) => b.iter().map(parse_bound_q).collect::<Result<_>>()?,
        };
        let setting = SettingKind::for_dims(&self.setting, m, dist.num_items())?;
        Ok((dist, Constraints { demands, budgets }, setting))
    }

    /// Parses and validates in one step, joining all violations.
    pub fn load(text: &str) -> Result<Model> {
        let (d, c, s) = Self::from_json(text)?.build()?;
        validate(d, c, s).map_err(|errs| {
            if errs.len() == 1 {
                errs.into_iter().next().expect("one error")
            } else {
                Error::Invalid(errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))
            }
        })
    }
}
