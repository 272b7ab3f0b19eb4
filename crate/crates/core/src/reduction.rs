//! ε-BIC → BIC transformation by surrogate sale and surrogate competition.
//!
//! Phase 1 runs, for every bidder, a VCG auction in which the bidder and
//! `r−1` replicas drawn from `D_i` bid for `r` surrogates drawn from `D′_i`.
//! A replica's value for a surrogate is its expected utility for the
//! surrogate's interim outcome under the discounted mechanism. Phase 2 has
//! the chosen surrogates play that mechanism; a bidder matched by VCG gets
//! her surrogate's outcome and pays its price plus the VCG price.
//!
//! Identical replicas and identical surrogates are interchangeable, so the
//! matching is solved on type counts (a small transportation problem) and
//! the bidder is placed uniformly among the left nodes of her type.

use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mechanism::{interim_form, InterimForm, Mechanism, Outcome, Rule};
use crate::model::{round_profile, Constraints, DiscreteDistribution, Direction, Sampler, SettingKind, TypeProfile, ValueVector};
use crate::rational::{self, Q};

/// Largest replica count we agree to simulate.
pub const R_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionConfig {
    /// Rebate fraction: prices are multiplied by `1−η`.
    pub eta: Q,
    pub delta: Q,
    pub beta_hat: f64,
    /// `(η/δ)²·m²·β̂`, rounded up (may be astronomically large).
    pub r_formula: f64,
    /// Replicas + 1 = surrogates per bidder.
    pub r: u128,
}

impl ReductionConfig {
    /// Default `r` from the formula unless `scale_override` gives one.
    pub fn new(eta: Q, delta: Q, setting: SettingKind, scale_override: Option<usize>) -> Result<Self> {
        if !eta.is_positive() || eta >= Q::one() {
            return Err(Error::Invalid(format!("η = {} must lie in (0,1)", rational::format(&eta))));
        }
        if !delta.is_positive() || delta > Q::one() {
            return Err(Error::Invalid(format!("δ = {} must lie in (0,1]", rational::format(&delta))));
        }
        let (m, _) = setting.dims();
        let inv = 1.0 / rational::to_f64(&delta);
        let beta_hat = match setting {
            SettingKind::KItems { k, .. } => (inv + 1.0).powi(k as i32),
            SettingKind::KBidders { n, .. } => (n as f64 + 1.0).powf(inv + 1.0),
        };
        let ratio = rational::to_f64(&eta) * inv;
        let r_formula = (ratio * ratio * (m * m) as f64 * beta_hat).ceil().max(1.0);
        let r = match scale_override {
            Some(0) => return Err(Error::Invalid("r must be at least 1".into())),
            Some(r) => r as u128,
            None if r_formula >= u128::MAX as f64 => u128::MAX,
            None => r_formula as u128,
        };
        Ok(Self { eta, delta, beta_hat, r_formula, r })
    }

    /// Expected size of a matching that pairs only equivalent nodes,
    /// `r − √(β̂ r)`, as a fraction of `r`.
    pub fn matching_reference(&self) -> f64 {
        let r = self.r as f64;
        ((r - (self.beta_hat * r).sqrt()) / r).max(0.0)
    }
}

/// Same allocations, every price multiplied by `1−η`.
pub fn discount(m1: &Mechanism, eta: &Q) -> Result<Mechanism> {
    let factor = Q::one() - eta;
    let table: BTreeMap<TypeProfile, Outcome> = m1
        .entries()
        .map(|(w, o)| {
            let mut o = o.clone();
            for p in &mut o.price {
                *p *= &factor;
            }
            (w.clone(), o)
        })
        .collect();
    Mechanism::new(m1.group.clone(), m1.delta.clone(), m1.setting.clone(), table)
}

/// Runs a grid mechanism on reports rounded down to its grid.
#[derive(Debug, Clone)]
pub struct Lifted {
    pub inner: Mechanism,
    pub delta: Q,
}

pub fn lift(inner: Mechanism, delta: Q) -> Lifted {
    Lifted { inner, delta }
}

impl Rule for Lifted {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn outcome(&self, v: &TypeProfile) -> Result<Outcome> {
        self.inner.outcome(&round_profile(v, &self.delta, Direction::Down))
    }
}

/// Items ordered by nonincreasing value, ties by index: `v[σ(0)] ≥ v[σ(1)] ≥ …`.
pub fn sort_permutation(v: &[Q]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].cmp(&v[a]));
    order
}

/// Rearranges `w` to follow `order`: the `j`-th largest value of `w` goes to item `order[j]`.
pub fn arrange(w: &[Q], order: &[usize]) -> ValueVector {
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.cmp(a));
    let mut out = vec![Q::zero(); w.len()];
    for (x, &j) in sorted.into_iter().zip(order) {
        out[j] = x;
    }
    out
}

/// Utility of a bidder with values `x` for the interim outcome of type `s`.
fn edge_weight(form: &InterimForm, i: usize, x: &[Q], s: &[Q]) -> Q {
    form.utility(i, x, s)
}

/// `weights[a][b]`: utility of left node `a` for the outcome of surrogate `b`.
pub fn build_weights(form: &InterimForm, i: usize, left: &[ValueVector], surrogates: &[ValueVector]) -> Vec<Vec<Q>> {
    left.iter().map(|x| surrogates.iter().map(|s| edge_weight(form, i, x, s)).collect()).collect()
}

/// Max-weight transportation between left types (supply `left`) and right
/// types (capacity `right`), leaving nodes unmatched when that pays.
/// Successive longest augmenting paths; stops at the first negative gain.
fn transport(left: &[usize], right: &[usize], w: &[Vec<Q>]) -> (Vec<Vec<usize>>, Q) {
    let (l, u) = (left.len(), right.len());
    // nodes: 0 = source, 1..=l, l+1..=l+u, l+u+1 = sink
    let sink = l + u + 1;
    struct Edge {
        to: usize,
        cap: usize,
        gain: Q,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); sink + 1];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, a: usize, b: usize, cap: usize, gain: Q| {
        adj[a].push(edges.len());
        edges.push(Edge { to: b, cap, gain: gain.clone() });
        adj[b].push(edges.len());
        edges.push(Edge { to: a, cap: 0, gain: -gain });
    };
    for (t, &c) in left.iter().enumerate() {
        add(&mut edges, &mut adj, 0, 1 + t, c, Q::zero());
    }
    let mut pair_edge = vec![vec![None; u]; l];
    for t in 0..l {
        for s in 0..u {
            if !w[t][s].is_negative() {
                pair_edge[t][s] = Some(edges.len());
                add(&mut edges, &mut adj, 1 + t, 1 + l + s, usize::MAX, w[t][s].clone());
            }
        }
    }
    for (s, &c) in right.iter().enumerate() {
        add(&mut edges, &mut adj, 1 + l + s, sink, c, Q::zero());
    }
    let mut total = Q::zero();
    loop {
        // Bellman–Ford for the longest path; the residual graph has no
        // positive cycles because every intermediate flow is optimal.
        let mut dist: Vec<Option<Q>> = vec![None; sink + 1];
        let mut via: Vec<Option<usize>> = vec![None; sink + 1];
        dist[0] = Some(Q::zero());
        for _ in 0..=sink {
            let mut changed = false;
            for a in 0..=sink {
                let Some(da) = dist[a].clone() else { continue };
                for &e in &adj[a] {
                    let edge = &edges[e];
                    if edge.cap == 0 {
                        continue;
                    }
                    let cand = &da + &edge.gain;
                    if dist[edge.to].as_ref().map_or(true, |d| cand > *d) {
                        dist[edge.to] = Some(cand);
                        via[edge.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(gain) = dist[sink].clone() else { break };
        if gain.is_negative() {
            break;
        }
        let mut path = Vec::new();
        let mut x = sink;
        while x != 0 {
            let e = via[x].expect("reached node has a predecessor");
            path.push(e);
            x = edges[e ^ 1].to;
        }
        let push = path.iter().map(|&e| edges[e].cap).min().expect("non-empty path");
        for &e in &path {
            edges[e].cap -= push;
            if edges[e ^ 1].cap != usize::MAX {
                edges[e ^ 1].cap += push;
            }
        }
        total += gain * Q::from_integer(push.into());
    }
    let mut flow = vec![vec![0usize; u]; l];
    for t in 0..l {
        for s in 0..u {
            if let Some(e) = pair_edge[t][s] {
                flow[t][s] = edges[e ^ 1].cap;
            }
        }
    }
    (flow, total)
}

/// Welfare-maximizing matching with VCG prices on an explicit weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VcgMatching {
    /// Right node matched to each left node.
    pub assignment: Vec<Option<usize>>,
    /// Externality each left node imposes on the others (0 when unmatched).
    pub prices: Vec<Q>,
    pub welfare: Q,
}

fn group_rows(rows: &[Vec<Q>]) -> (Vec<usize>, Vec<usize>) {
    let mut index: BTreeMap<&Vec<Q>, usize> = BTreeMap::new();
    let mut class = Vec::with_capacity(rows.len());
    let mut reps = Vec::new();
    for (a, row) in rows.iter().enumerate() {
        let k = *index.entry(row).or_insert_with(|| {
            reps.push(a);
            reps.len() - 1
        });
        class.push(k);
    }
    (class, reps)
}

/// Maximum-weight (not necessarily perfect) matching of a bipartite weight
/// matrix and the VCG price of every left node.
pub fn vcg_match(weights: &[Vec<Q>]) -> VcgMatching {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    let (row_class, row_reps) = group_rows(weights);
    let columns: Vec<Vec<Q>> = (0..cols).map(|b| weights.iter().map(|r| r[b].clone()).collect()).collect();
    let (col_class, col_reps) = group_rows(&columns);
    let mut left = vec![0usize; row_reps.len()];
    for &c in &row_class {
        left[c] += 1;
    }
    let mut right = vec![0usize; col_reps.len()];
    for &c in &col_class {
        right[c] += 1;
    }
    let w: Vec<Vec<Q>> = row_reps.iter().map(|&a| col_reps.iter().map(|&b| weights[a][b].clone()).collect()).collect();
    let (mut flow, welfare) = transport(&left, &right, &w);
    let without: Vec<Q> = (0..left.len())
        .map(|t| {
            let mut l2 = left.clone();
            l2[t] -= 1;
            transport(&l2, &right, &w).1
        })
        .collect();
    // hand out the flow to concrete nodes in index order
    let mut free_cols: Vec<Vec<usize>> = vec![Vec::new(); right.len()];
    for b in (0..cols).rev() {
        free_cols[col_class[b]].push(b);
    }
    let mut assignment = vec![None; rows];
    let mut prices = vec![Q::zero(); rows];
    for a in 0..rows {
        let t = row_class[a];
        if let Some(s) = (0..right.len()).find(|&s| flow[t][s] > 0) {
            flow[t][s] -= 1;
            assignment[a] = free_cols[s].pop();
            prices[a] = &without[t] - (&welfare - &w[t][s]);
        }
    }
    VcgMatching { assignment, prices, welfare }
}

/// One bidder's Phase-1 auction.
#[derive(Debug, Clone)]
pub struct SurrogateAuction {
    pub bidder: usize,
    /// Item order the samples were arranged to (identity without sorting).
    pub order: Vec<usize>,
    /// Raw draws from `D_i` (`r−1`) and `D′_i` (`r`).
    pub replicas: Vec<ValueVector>,
    pub surrogates: Vec<ValueVector>,
    /// Distinct left types (in the sorted frame) with multiplicities; the
    /// bidder's own report is counted in.
    pub left_types: Vec<ValueVector>,
    pub left_counts: Vec<usize>,
    pub right_types: Vec<ValueVector>,
    pub right_counts: Vec<usize>,
    /// `weights[t][s]` between left and right types.
    pub weights: Vec<Vec<Q>>,
    pub flow: Vec<Vec<usize>>,
    pub welfare: Q,
    /// Number of surrogates the VCG matching assigns.
    pub matched_count: usize,
    /// Whether the bidder herself was matched by VCG.
    pub matched: bool,
    /// Index into `surrogates` of the one representing the bidder.
    pub chosen: usize,
    /// The representing surrogate, arranged to `order`.
    pub surrogate: ValueVector,
    pub vcg_price: Q,
    /// `Σ_{surrogates} Σ_j π_ij(s)`.
    pub w_i: Q,
}

/// Outcome of the composed mechanism on one reported profile.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub auctions: Vec<SurrogateAuction>,
    /// Profile of representing surrogates that plays the discounted mechanism.
    pub surrogates: TypeProfile,
    /// Discounted mechanism's outcome at `surrogates`.
    pub surrogate_outcome: Outcome,
    /// Marginal allocation actually awarded (zero rows for unmatched bidders).
    pub allocation: Vec<Vec<Q>>,
    pub payments: Vec<Q>,
}

impl RunOutcome {
    /// Realized utility of bidder `i` with true values `v`.
    pub fn utility(&self, i: usize, v: &[Q]) -> Q {
        v.iter().zip(&self.allocation[i]).map(|(a, b)| a * b).sum::<Q>() - &self.payments[i]
    }

    pub fn revenue(&self) -> Q {
        self.payments.iter().sum()
    }

    /// Draws concrete bundles for the surrogate profile and keeps those of
    /// matched bidders.
    pub fn sample_bundles<R: Rng + ?Sized>(&self, cons: &Constraints, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        let lottery = crate::allocation::Lottery::new(&self.surrogate_outcome.phi, &cons.demands)?;
        let mut bundles = lottery.sample(rng);
        for (i, a) in self.auctions.iter().enumerate() {
            if !a.matched {
                bundles[i].clear();
            }
        }
        Ok(bundles)
    }
}

/// The transformed mechanism `M2`, ready to run.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub config: ReductionConfig,
    pub setting: SettingKind,
    /// `M1` with prices discounted by `1−η`.
    pub mechanism: Mechanism,
    /// Interim form of the discounted mechanism under `D′`.
    pub form: InterimForm,
    /// `R^{M1}(D′)`.
    pub base_revenue: Q,
    r: usize,
    replicas: Sampler,
    surrogates: Sampler,
    m: usize,
    n: usize,
}

impl Reduction {
    /// `d` supplies the replicas, `d_prime` the surrogates; `m1` must be
    /// defined on the support of `d_prime`.
    pub fn new(m1: &Mechanism, d: &DiscreteDistribution, d_prime: &DiscreteDistribution, config: ReductionConfig, setting: SettingKind) -> Result<Self> {
        d.require_factors()?;
        d_prime.require_factors()?;
        let (m, n) = (d_prime.num_bidders(), d_prime.num_items());
        if (d.num_bidders(), d.num_items()) != (m, n) || m1.dims() != (m, n) {
            return Err(Error::DimensionMismatch("mechanism and distributions disagree on shape".into()));
        }
        if matches!(setting, SettingKind::KBidders { .. }) {
            for (i, f) in d_prime.require_factors()?.iter().enumerate() {
                if !f.is_item_symmetric() {
                    return Err(Error::NotItemSymmetric(format!("surrogate distribution of bidder {i}")));
                }
            }
        }
        if config.r > R_CAP {
            return Err(Error::ExplosionGuard { count: config.r, cap: R_CAP });
        }
        let mechanism = discount(m1, &config.eta)?;
        let form = interim_form(&mechanism, d_prime)?;
        let base_revenue = m1.revenue(d_prime)?;
        Ok(Self {
            r: config.r as usize,
            config,
            setting,
            mechanism,
            form,
            base_revenue,
            replicas: Sampler::new(d),
            surrogates: Sampler::new(d_prime),
            m,
            n,
        })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    fn sorts(&self) -> bool {
        matches!(self.setting, SettingKind::KBidders { .. })
    }

    /// Phase 1 for bidder `i` with the given report.
    pub fn auction<R: Rng + ?Sized>(&self, i: usize, report: &[Q], rng: &mut R) -> Result<SurrogateAuction> {
        let r = self.r;
        let replicas: Vec<ValueVector> = (0..r - 1).map(|_| self.replicas.sample_bidder(i, rng)).collect();
        let surrogates: Vec<ValueVector> = (0..r).map(|_| self.surrogates.sample_bidder(i, rng)).collect();
        // ties in the report are broken by a uniform relabeling of the items,
        // drawn unconditionally so the stream does not depend on the report
        let mut relabel: Vec<usize> = (0..self.n).collect();
        relabel.shuffle(rng);
        let order: Vec<usize> = if self.sorts() {
            let shuffled: Vec<Q> = relabel.iter().map(|&j| report[j].clone()).collect();
            sort_permutation(&shuffled).into_iter().map(|k| relabel[k]).collect()
        } else {
            (0..self.n).collect()
        };
        // Everything below is computed in the sorted frame; weights are
        // invariant under relabeling items because the interim form is.
        let frame = |x: &[Q]| -> ValueVector {
            if self.sorts() {
                let mut s = x.to_vec();
                s.sort_by(|a, b| b.cmp(a));
                s
            } else {
                x.to_vec()
            }
        };
        let mut left: BTreeMap<ValueVector, usize> = BTreeMap::new();
        *left.entry(frame(report)).or_insert(0) += 1;
        for x in &replicas {
            *left.entry(frame(x)).or_insert(0) += 1;
        }
        let mut right: BTreeMap<ValueVector, usize> = BTreeMap::new();
        let framed_surrogates: Vec<ValueVector> = surrogates.iter().map(|s| frame(s)).collect();
        for s in &framed_surrogates {
            *right.entry(s.clone()).or_insert(0) += 1;
        }
        let (left_types, left_counts): (Vec<_>, Vec<_>) = left.into_iter().unzip();
        let (right_types, right_counts): (Vec<_>, Vec<_>) = right.into_iter().unzip();
        for s in &right_types {
            if !self.form.pi[i].contains_key(s) {
                return Err(Error::UnknownProfile(format!("surrogate type {s:?} of bidder {i} is off the mechanism's support")));
            }
        }
        let weights = build_weights(&self.form, i, &left_types, &right_types);
        let (flow, welfare) = transport(&left_counts, &right_counts, &weights);
        let matched_count: usize = flow.iter().flatten().sum();

        let t = left_types.iter().position(|x| *x == frame(report)).expect("report counted");
        // the bidder is a uniform member of her left type
        let slot = rng.gen_range(0..left_counts[t]);
        let mut acc = 0;
        let mut hit = None;
        for (s, &f) in flow[t].iter().enumerate() {
            acc += f;
            if slot < acc {
                hit = Some(s);
                break;
            }
        }
        let (matched, s, vcg_price) = match hit {
            Some(s) => {
                let mut l2 = left_counts.clone();
                l2[t] -= 1;
                let without = transport(&l2, &right_counts, &weights).1;
                let price = without - (&welfare - &weights[t][s]);
                debug_assert!(!price.is_negative());
                (true, s, price)
            }
            None => {
                // uniform over the surrogates VCG left unmatched
                let spare: Vec<usize> = (0..right_types.len())
                    .map(|s| right_counts[s] - flow.iter().map(|row| row[s]).sum::<usize>())
                    .collect();
                let total: usize = spare.iter().sum();
                let mut k = rng.gen_range(0..total);
                let s = spare.iter().position(|&c| {
                    if k < c {
                        true
                    } else {
                        k -= c;
                        false
                    }
                });
                (false, s.expect("as many free surrogates as free left nodes"), Q::zero())
            }
        };
        let candidates: Vec<usize> = (0..r).filter(|&b| framed_surrogates[b] == right_types[s]).collect();
        let chosen = candidates[rng.gen_range(0..candidates.len())];
        let surrogate = if self.sorts() { arrange(&right_types[s], &order) } else { right_types[s].clone() };
        let w_i = framed_surrogates.iter().map(|s| self.form.expected_items(i, s)).sum();
        Ok(SurrogateAuction {
            bidder: i,
            order,
            replicas,
            surrogates,
            left_types,
            left_counts,
            right_types,
            right_counts,
            weights,
            flow,
            welfare,
            matched_count,
            matched,
            chosen,
            surrogate,
            vcg_price,
            w_i,
        })
    }

    /// Phase 2 given the per-bidder auctions.
    pub fn compete(&self, auctions: Vec<SurrogateAuction>) -> Result<RunOutcome> {
        let surrogates: TypeProfile = auctions.iter().map(|a| a.surrogate.clone()).collect();
        let o = self.mechanism.outcome(&surrogates)?;
        let mut allocation = vec![vec![Q::zero(); self.n]; self.m];
        let mut payments = vec![Q::zero(); self.m];
        for (i, a) in auctions.iter().enumerate() {
            if a.matched {
                allocation[i] = o.phi[i].clone();
                payments[i] = &o.price[i] + &a.vcg_price;
            }
        }
        Ok(RunOutcome { auctions, surrogates, surrogate_outcome: o, allocation, payments })
    }

    /// Runs both phases; each bidder's auction uses its own stream seeded
    /// from `rng`.
    pub fn run<R: Rng + ?Sized>(&self, reported: &TypeProfile, rng: &mut R) -> Result<RunOutcome> {
        if reported.len() != self.m || reported.iter().any(|v| v.len() != self.n) {
            return Err(Error::DimensionMismatch("reported profile".into()));
        }
        let seeds = bidder_seeds(self.m, rng);
        let auctions = (0..self.m)
            .map(|i| self.auction(i, &reported[i], &mut ChaCha8Rng::seed_from_u64(seeds[i])))
            .collect::<Result<Vec<_>>>()?;
        self.compete(auctions)
    }
}

fn bidder_seeds<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<u64> {
    (0..m).map(|_| rng.next_u64()).collect()
}

/// One-shot form of [`Reduction::run`].
pub fn run<R: Rng + ?Sized>(
    m1: &Mechanism,
    d: &DiscreteDistribution,
    d_prime: &DiscreteDistribution,
    config: ReductionConfig,
    setting: SettingKind,
    reported: &TypeProfile,
    rng: &mut R,
) -> Result<RunOutcome> {
    Reduction::new(m1, d, d_prime, config, setting)?.run(reported, rng)
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, std_err: 0.0, samples: 0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { mean, std_err: (var / n as f64).sqrt(), samples: n }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub revenue: Estimate,
    /// `R^{M1}(D′)`.
    pub base_revenue: f64,
    pub epsilon: f64,
    pub t: usize,
    /// `(1−η)·R^{M1}(D′) − ((ε+2δ)/η)·T`.
    pub bound: f64,
    /// Same with the `3δ/η` constant.
    pub bound_three_delta: f64,
    /// `mean + 3·std_err` clears the looser of the two bounds.
    pub holds: bool,
    /// Average fraction of surrogates matched by VCG.
    pub matched_fraction: f64,
    /// `(r − √(β̂r))/r`.
    pub matched_reference: f64,
    /// Fraction of Phase-1 auctions in which the real bidder was matched.
    pub bidder_matched_rate: f64,
    /// `Σ_i E[W_i]/r`, which should not exceed `T`.
    pub mean_w_over_r: f64,
}

/// Monte-Carlo revenue of `M2` under truthful play from `d`, compared with
/// the guarantee for an `epsilon`-BIC `M1` with at most `t` items awarded.
pub fn revenue_bound_check<R: Rng + ?Sized>(
    red: &Reduction,
    d: &DiscreteDistribution,
    epsilon: &Q,
    t: usize,
    trials: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    let sampler = Sampler::new(d);
    let mut revenue = Vec::with_capacity(trials);
    let (mut matched, mut bidder_matched, mut w_sum) = (0.0, 0usize, 0.0);
    for _ in 0..trials {
        let v = sampler.sample(rng);
        let out = red.run(&v, rng)?;
        revenue.push(rational::to_f64(&out.revenue()));
        for a in &out.auctions {
            matched += a.matched_count as f64 / red.r as f64;
            bidder_matched += a.matched as usize;
            w_sum += rational::to_f64(&a.w_i) / red.r as f64;
        }
    }
    let est = Estimate::from_samples(&revenue);
    let eta = rational::to_f64(&red.config.eta);
    let delta = rational::to_f64(&red.config.delta);
    let eps = rational::to_f64(epsilon);
    let base = rational::to_f64(&red.base_revenue);
    let bound = (1.0 - eta) * base - (eps + 2.0 * delta) / eta * t as f64;
    let bound_three_delta = (1.0 - eta) * base - 3.0 * delta / eta * t as f64;
    let auctions = (trials * red.m).max(1) as f64;
    Ok(BoundReport {
        revenue: est,
        base_revenue: base,
        epsilon: eps,
        t,
        bound,
        bound_three_delta,
        holds: est.mean + 3.0 * est.std_err >= bound.min(bound_three_delta),
        matched_fraction: matched / auctions,
        matched_reference: red.config.matching_reference(),
        bidder_matched_rate: bidder_matched as f64 / auctions,
        mean_w_over_r: w_sum / trials.max(1) as f64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationEstimate {
    pub bidder: usize,
    pub truth: Vec<String>,
    pub report: Vec<String>,
    /// Utility of misreporting minus utility of truth-telling.
    pub gain: Estimate,
}

impl DeviationEstimate {
    /// Gain within three standard errors of zero (or negative).
    pub fn within_noise(&self) -> bool {
        self.gain.mean <= 3.0 * self.gain.std_err + 1e-12
    }
}

/// Estimated gain of every on-support misreport, other bidders truthful.
/// For each trial the other bidders' auctions and the deviator's stream are
/// shared across reports (common random numbers).
pub fn bic_check<R: Rng + ?Sized>(red: &Reduction, d: &DiscreteDistribution, trials: usize, rng: &mut R) -> Result<Vec<DeviationEstimate>> {
    let factors = d.require_factors()?;
    let sampler = Sampler::new(d);
    let mut out = Vec::new();
    for (i, f) in factors.iter().enumerate() {
        let types: Vec<&ValueVector> = f.types().collect();
        let mut diffs = vec![vec![Vec::with_capacity(trials); types.len()]; types.len()];
        for _ in 0..trials {
            let v = sampler.sample(rng);
            let seeds = bidder_seeds(red.m, rng);
            let others: Vec<Option<SurrogateAuction>> = (0..red.m)
                .map(|k| if k == i { Ok(None) } else { red.auction(k, &v[k], &mut ChaCha8Rng::seed_from_u64(seeds[k])).map(Some) })
                .collect::<Result<_>>()?;
            let mut utilities = Vec::with_capacity(types.len());
            for w in &types {
                let mine = red.auction(i, w, &mut ChaCha8Rng::seed_from_u64(seeds[i]))?;
                let auctions: Vec<SurrogateAuction> =
                    others.iter().enumerate().map(|(k, a)| if k == i { mine.clone() } else { a.clone().expect("other bidder") }).collect();
                let res = red.compete(auctions)?;
                utilities.push(types.iter().map(|truth| res.utility(i, truth)).collect::<Vec<Q>>());
            }
            for (a, _) in types.iter().enumerate() {
                for (b, _) in types.iter().enumerate() {
                    diffs[a][b].push(rational::to_f64(&(&utilities[b][a] - &utilities[a][a])));
                }
            }
        }
        for (a, truth) in types.iter().enumerate() {
            for (b, report) in types.iter().enumerate() {
                if a != b {
                    out.push(DeviationEstimate {
                        bidder: i,
                        truth: truth.iter().map(rational::format).collect(),
                        report: report.iter().map(rational::format).collect(),
                        gain: Estimate::from_samples(&diffs[a][b]),
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiSquareReport {
    pub bidder: usize,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson test that the surrogate representing a truthful bidder `i` is
/// distributed as `D′_i`.
pub fn surrogate_law_test<R: Rng + ?Sized>(
    red: &Reduction,
    d: &DiscreteDistribution,
    d_prime: &DiscreteDistribution,
    i: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ChiSquareReport> {
    let support = d_prime.require_factors()?[i].support().to_vec();
    let sampler = Sampler::new(d);
    let mut observed = vec![0u64; support.len()];
    for _ in 0..trials {
        let v = sampler.sample_bidder(i, rng);
        let a = red.auction(i, &v, &mut ChaCha8Rng::seed_from_u64(rng.next_u64()))?;
        let k = support
            .iter()
            .position(|(t, _)| *t == a.surrogate)
            .ok_or_else(|| Error::UnknownProfile(format!("surrogate {:?} outside D′_{i}", a.surrogate)))?;
        observed[k] += 1;
    }
    let expected: Vec<f64> = support.iter().map(|(_, p)| rational::to_f64(p) * trials as f64).collect();
    let statistic = observed.iter().zip(&expected).filter(|(_, e)| **e > 0.0).map(|(o, e)| (*o as f64 - e).powi(2) / e).sum();
    let dof = support.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).map_err(|e| Error::Invalid(e.to_string()))?.cdf(statistic)
    };
    Ok(ChiSquareReport { bidder: i, observed, expected, statistic, dof, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::FnRule;
    use crate::model::BidderFactor;
    use crate::rational::q;
    use crate::symmetry::SymmetryGroup;

    /// Every partial injection of rows into columns.
    fn all_matchings(rows: usize, cols: usize) -> Vec<Vec<Option<usize>>> {
        let mut out = vec![vec![]];
        for _ in 0..rows {
            let mut next = Vec::new();
            for m in &out {
                next.push({
                    let mut x = m.clone();
                    x.push(None);
                    x
                });
                for c in 0..cols {
                    if !m.contains(&Some(c)) {
                        let mut x = m.clone();
                        x.push(Some(c));
                        next.push(x);
                    }
                }
            }
            out = next;
        }
        out
    }

    fn brute_welfare(w: &[Vec<Q>], skip: Option<usize>) -> Q {
        all_matchings(w.len(), w[0].len())
            .into_iter()
            .map(|m| m.iter().enumerate().filter(|(a, _)| Some(*a) != skip).filter_map(|(a, c)| c.map(|c| w[a][c].clone())).sum::<Q>())
            .max()
            .unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize) -> Vec<Vec<Q>> {
        (0..r).map(|_| (0..r).map(|_| q(rng.gen_range(-3..6), 4)).collect()).collect()
    }

    #[test]
    fn vcg_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for r in 1..=5 {
            for _ in 0..12 {
                let w = random_matrix(&mut rng, r);
                let res = vcg_match(&w);
                let best = brute_welfare(&w, None);
                assert_eq!(res.welfare, best);
                let realized: Q = res.assignment.iter().enumerate().filter_map(|(a, c)| c.map(|c| w[a][c].clone())).sum();
                assert_eq!(realized, best);
                for a in 0..r {
                    let expected = match res.assignment[a] {
                        Some(c) => brute_welfare(&w, Some(a)) - (&best - &w[a][c]),
                        None => Q::zero(),
                    };
                    assert_eq!(res.prices[a], expected);
                    assert!(!res.prices[a].is_negative());
                }
            }
        }
    }

    #[test]
    fn vcg_edge_cases() {
        let d = vcg_match(&[vec![q(2, 1), q(1, 1)], vec![q(1, 2), q(1, 1)]]);
        assert_eq!(d.assignment, vec![Some(0), Some(1)]);
        // without bidder 0, bidder 1 takes column 0 or 1 for 1: price 1 − 1 = 0
        assert_eq!(d.prices, vec![Q::zero(), Q::zero()]);
        let neg = vcg_match(&[vec![q(-1, 1), q(-2, 1)], vec![q(-1, 3), q(-1, 2)]]);
        assert_eq!(neg.assignment, vec![None, None]);
        assert_eq!(neg.welfare, Q::zero());
        let one = vcg_match(&[vec![q(3, 5)]]);
        assert_eq!((one.assignment, one.prices), (vec![Some(0)], vec![Q::zero()]));
        // competition for a single good column: second-highest bid sets the price
        let comp = vcg_match(&[vec![q(3, 4), Q::zero()], vec![q(1, 2), Q::zero()]]);
        assert_eq!(comp.assignment[0], Some(0));
        assert_eq!(comp.prices[0], q(1, 2));
    }

    #[test]
    fn sort_permutation_cases() {
        assert_eq!(sort_permutation(&[q(9, 10), q(1, 5)]), vec![0, 1]);
        assert_eq!(sort_permutation(&[q(1, 5), q(9, 10)]), vec![1, 0]);
        assert_eq!(sort_permutation(&vec![q(1, 2); 3]), vec![0, 1, 2]);
        assert_eq!(arrange(&[q(1, 5), q(1, 2), q(1, 1)], &[2, 0, 1]), vec![q(1, 2), q(1, 5), q(1, 1)]);
    }

    fn second_price() -> (Mechanism, DiscreteDistribution) {
        let f = BidderFactor::iid_items(1, &[(q(1, 2), q(1, 2)), (q(1, 1), q(1, 2))]).unwrap();
        let d = DiscreteDistribution::iid(q(1, 2), 2, f).unwrap();
        let rule = FnRule {
            m: 2,
            n: 1,
            f: |v: &TypeProfile| {
                let (a, b) = (&v[0][0], &v[1][0]);
                let mut o = Outcome::zero(2, 1);
                if a == b {
                    o.phi = vec![vec![q(1, 2)], vec![q(1, 2)]];
                    o.price = vec![a / q(2, 1), a / q(2, 1)];
                } else {
                    let w = usize::from(b > a);
                    o.phi[w][0] = q(1, 1);
                    o.price[w] = a.min(b).clone();
                }
                o
            },
        };
        let g = SymmetryGroup::all_bidders(2, 1);
        let reps = crate::symmetry::enumerate_representatives(&d, &g, 100).unwrap();
        (Mechanism::tabulate(&rule, g, q(1, 2), &reps.reps).unwrap(), d)
    }

    #[test]
    fn discount_scales_revenue_exactly() {
        let (m1, d) = second_price();
        let base = m1.revenue(&d).unwrap();
        assert_eq!(discount(&m1, &Q::zero()).unwrap(), m1);
        assert_eq!(discount(&m1, &q(1, 1)).unwrap().revenue(&d).unwrap(), Q::zero());
        let eta = q(1, 5);
        assert_eq!(discount(&m1, &eta).unwrap().revenue(&d).unwrap(), (Q::one() - &eta) * base);
    }

    #[test]
    fn weights_match_hand_arithmetic() {
        let (m1, d) = second_price();
        let disc = discount(&m1, &q(1, 2)).unwrap();
        let form = interim_form(&disc, &d).unwrap();
        // π(1/2) = 1/4, q(1/2) = (1/2)(1/2·1/2·1/2) = 1/16; π(1) = 3/4, q(1) = (1/2)(1/2·1/2 + 1/2·1/2) = 1/4
        let w = build_weights(&form, 0, &[vec![q(1, 2)], vec![q(1, 1)]], &[vec![q(1, 2)], vec![q(1, 1)]]);
        assert_eq!(w[0], vec![q(1, 8) - q(1, 16), q(3, 8) - q(1, 4)]);
        assert_eq!(w[1], vec![q(1, 4) - q(1, 16), q(3, 4) - q(1, 4)]);
        assert!(w.iter().flatten().all(|x| !x.is_negative()));
    }

    #[test]
    fn single_surrogate_is_taken_iff_weight_nonnegative() {
        let (m1, d) = second_price();
        let cfg = ReductionConfig::new(q(1, 2), q(1, 2), SettingKind::KItems { k: 1, m: 2 }, Some(1)).unwrap();
        let red = Reduction::new(&m1, &d, &d, cfg, SettingKind::KItems { k: 1, m: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = red.auction(0, &[q(1, 2)], &mut rng).unwrap();
            assert!(a.replicas.is_empty() && a.surrogates.len() == 1);
            assert_eq!(a.matched, !a.weights[0][0].is_negative());
            assert_eq!(a.vcg_price, Q::zero());
        }
        // a bidder valuing nothing cannot afford a surrogate that pays
        let a = red.auction(0, &[Q::zero()], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.matched, !a.weights[0][0].is_negative());
    }

    #[test]
    fn point_mass_surrogates_and_free_mechanism() {
        let d = DiscreteDistribution::iid(q(1, 2), 2, BidderFactor::point_mass(vec![q(1, 2)])).unwrap();
        let g = SymmetryGroup::all_bidders(2, 1);
        let reps = crate::symmetry::enumerate_representatives(&d, &g, 10).unwrap();
        let free = FnRule { m: 2, n: 1, f: |_: &TypeProfile| Outcome { phi: vec![vec![q(1, 2)], vec![q(1, 2)]], price: vec![Q::zero(); 2] } };
        let m1 = Mechanism::tabulate(&free, g, q(1, 2), &reps.reps).unwrap();
        let setting = SettingKind::KItems { k: 1, m: 2 };
        let cfg = ReductionConfig::new(q(1, 2), q(1, 2), setting, Some(4)).unwrap();
        let red = Reduction::new(&m1, &d, &d, cfg, setting).unwrap();
        let out = red.run(&vec![vec![q(1, 2)]; 2], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(out.surrogates, vec![vec![q(1, 2)]; 2]);
        assert_eq!(out.revenue(), Q::zero());
        let report = revenue_bound_check(&red, &d, &Q::zero(), 1, 50, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(report.bound < 0.0 && report.holds);
    }

    #[test]
    fn surrogate_law_passes_chi_square() {
        let (m1, d) = second_price();
        let setting = SettingKind::KItems { k: 1, m: 2 };
        let cfg = ReductionConfig::new(q(1, 4), q(1, 2), setting, Some(6)).unwrap();
        let red = Reduction::new(&m1, &d, &d, cfg, setting).unwrap();
        let rep = surrogate_law_test(&red, &d, &d, 0, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(rep.p_value > 0.01, "{rep:?}");
    }

    #[test]
    fn config_defaults_follow_formula() {
        let c = ReductionConfig::new(q(1, 2), q(1, 2), SettingKind::KItems { k: 1, m: 2 }, None).unwrap();
        // (1/2 / 1/2)² · 2² · (2+1)^1
        assert_eq!(c.r, 12);
        assert!(ReductionConfig::new(q(0, 1), q(1, 2), SettingKind::KItems { k: 1, m: 2 }, None).is_err());
        assert!(ReductionConfig::new(q(1, 2), q(1, 2), SettingKind::KItems { k: 1, m: 2 }, Some(0)).is_err());
    }
}
