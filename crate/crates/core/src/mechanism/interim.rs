use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use super::{Mechanism, Outcome, Rule};
use crate::error::Result;
use crate::model::{DiscreteDistribution, TypeProfile, ValueVector, DEFAULT_MAX_SUPPORT};
use crate::rational::Q;
use crate::symmetry::enumerate_representatives;

/// A rule evaluated once on every support profile.
#[derive(Debug, Clone)]
pub struct SupportTable {
    pub profiles: Vec<TypeProfile>,
    pub probs: Vec<Q>,
    pub outcomes: Vec<Outcome>,
    index: HashMap<TypeProfile, usize>,
}

impl SupportTable {
    pub fn get(&self, v: &TypeProfile) -> Option<&Outcome> {
        self.index.get(v).map(|&k| &self.outcomes[k])
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Evaluates `rule` on the expanded support of `dist` (at most `cap` profiles).
pub fn evaluate_support<R: Rule + ?Sized>(rule: &R, dist: &DiscreteDistribution, cap: u128) -> Result<SupportTable> {
    let support = dist.expand(cap)?;
    let mut profiles = Vec::with_capacity(support.len());
    let mut probs = Vec::with_capacity(support.len());
    let mut outcomes = Vec::with_capacity(support.len());
    let mut index = HashMap::with_capacity(support.len());
    for (k, (v, p)) in support.into_iter().enumerate() {
        outcomes.push(rule.outcome(&v)?);
        index.insert(v.clone(), k);
        profiles.push(v);
        probs.push(p);
    }
    Ok(SupportTable { profiles, probs, outcomes, index })
}

/// `π_{ij}(v_i)` and `q_i(v_i)` for every bidder and support type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterimForm {
    pub pi: Vec<BTreeMap<ValueVector, Vec<Q>>>,
    pub q: Vec<BTreeMap<ValueVector, Q>>,
}

impl InterimForm {
    pub fn num_bidders(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self, i: usize, v: &[Q]) -> &[Q] {
        &self.pi[i][v]
    }

    pub fn q(&self, i: usize, v: &[Q]) -> &Q {
        &self.q[i][v]
    }

    /// Expected utility of a bidder with values `truth` who reports `report`.
    pub fn utility(&self, i: usize, truth: &[Q], report: &[Q]) -> Q {
        let pi = self.pi(i, report);
        truth.iter().zip(pi).map(|(a, b)| a * b).sum::<Q>() - self.q(i, report)
    }

    /// `Σ_j π_{ij}(v)`.
    pub fn expected_items(&self, i: usize, v: &[Q]) -> Q {
        self.pi(i, v).iter().sum()
    }

    /// Bidder `i`'s types, in ascending order.
    pub fn types(&self, i: usize) -> impl Iterator<Item = &ValueVector> {
        self.pi[i].keys()
    }

    /// Builds the interim form from a support table (product `dist`).
    pub fn from_table(table: &SupportTable, dist: &DiscreteDistribution) -> Result<Self> {
        let factors = dist.require_factors()?;
        let (m, n) = (dist.num_bidders(), dist.num_items());
        let mut pi: Vec<BTreeMap<ValueVector, Vec<Q>>> = vec![BTreeMap::new(); m];
        let mut q: Vec<BTreeMap<ValueVector, Q>> = vec![BTreeMap::new(); m];
        for ((v, p), o) in table.profiles.iter().zip(&table.probs).zip(&table.outcomes) {
            for i in 0..m {
                let row = pi[i].entry(v[i].clone()).or_insert_with(|| vec![Q::zero(); n]);
                for (x, y) in row.iter_mut().zip(&o.phi[i]) {
                    *x += y * p;
                }
                *q[i].entry(v[i].clone()).or_insert_with(Q::zero) += &o.price[i] * p;
            }
        }
        // divide by Pr[v_i] to condition on the bidder's own type
        for i in 0..m {
            for (v, row) in pi[i].iter_mut() {
                let pv = factors[i].prob(v);
                for x in row.iter_mut() {
                    *x /= &pv;
                }
                *q[i].get_mut(v).expect("same keys") /= &pv;
            }
        }
        Ok(Self { pi, q })
    }
}

/// Exact interim form of `rule` under a product distribution, by full
/// expansion of the support.
pub fn interim_form<R: Rule + ?Sized>(rule: &R, dist: &DiscreteDistribution) -> Result<InterimForm> {
    dist.require_factors()?;
    let table = evaluate_support(rule, dist, DEFAULT_MAX_SUPPORT)?;
    InterimForm::from_table(&table, dist)
}

/// `R^M(D)`: expected total payment under truthful play.
pub fn revenue<R: Rule + ?Sized>(rule: &R, dist: &DiscreteDistribution) -> Result<Q> {
    let table = evaluate_support(rule, dist, DEFAULT_MAX_SUPPORT)?;
    Ok(table.probs.iter().zip(&table.outcomes).map(|(p, o)| o.price.iter().sum::<Q>() * p).sum())
}

impl Mechanism {
    /// Revenue summed over class representatives (`Σ_w Pr[orbit(w)] Σ_i p_i(w)`);
    /// requires `dist` to be invariant under the attached group.
    pub fn revenue(&self, dist: &DiscreteDistribution) -> Result<Q> {
        if !self.group.is_invariant(dist) {
            return revenue(self, dist);
        }
        let reps = enumerate_representatives(dist, &self.group, DEFAULT_MAX_SUPPORT)?;
        let mut total = Q::zero();
        for (w, weight) in reps.reps.iter().zip(&reps.weights) {
            let o = self.outcome(w)?;
            total += o.price.iter().sum::<Q>() * weight;
        }
        Ok(total)
    }
}
