//! Precomputed conditional weights tying interim variables to the
//! representative-profile variables.
//!
//! `aux(i′,j′,i,j,w,v_i)` is the mass, conditional on bidder `i` having type
//! `v_i`, of the profiles `σ(w)` whose cell `(i,j)` is the image of cell
//! `(i′,j′)` of `w`. Summing over the group counts every profile of the orbit
//! `|Stab(w)|` times, so we divide by the stabilizer order; with that
//! normalization `π_ij(v_i) = Σ_w Σ_{i′,j′} φ_{i′j′}(w)·aux(…)` is exactly the
//! interim allocation.

use num_traits::Zero;
use std::collections::BTreeMap;

use crate::error::Result;
use crate::model::{BidderFactor, DiscreteDistribution, TypeProfile, ValueVector};
use crate::rational::{self, Q};
use crate::symmetry::{GroupKind, SymmetryGroup, GROUP_CAP};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AuxKey {
    /// Index into the representative list.
    pub rep: usize,
    pub src_bidder: usize,
    pub src_item: usize,
    pub bidder: usize,
    pub item: usize,
    pub value: ValueVector,
}

#[derive(Debug, Clone, Default)]
pub struct AuxWeights {
    /// Non-zero weights only.
    pub entries: BTreeMap<AuxKey, Q>,
    /// Whether the closed forms were compared against the group sum.
    pub cross_checked: bool,
    /// Mismatches found by the cross-check (the enumerated value is kept).
    pub diagnostics: Vec<String>,
}

impl AuxWeights {
    pub fn get(&self, key: &AuxKey) -> Q {
        self.entries.get(key).cloned().unwrap_or_else(Q::zero)
    }
}

/// Largest `|S|·|E|` for which the closed forms are cross-checked.
const CROSS_CHECK_BUDGET: u128 = 2_000_000;

fn sorted(v: &[Q]) -> ValueVector {
    let mut s = v.to_vec();
    s.sort();
    s
}

/// Closed forms for the all-bidders (k-items) and all-items (k-bidders)
/// groups and for the trivial group; direct group enumeration otherwise.
/// `types[i]` lists the bidder-`i` types whose interim rows are needed.
pub fn compute_aux_weights(
    dist: &DiscreteDistribution,
    group: &SymmetryGroup,
    reps: &[TypeProfile],
    types: &[Vec<ValueVector>],
) -> Result<AuxWeights> {
    let factors = dist.require_factors()?;
    let (m, n) = (group.m, group.n);
    let wanted: Vec<std::collections::BTreeSet<&ValueVector>> = types.iter().map(|t| t.iter().collect()).collect();
    let mut out = AuxWeights::default();
    let closed = match group.kind {
        GroupKind::Trivial => {
            for (k, w) in reps.iter().enumerate() {
                let pw = dist.prob(w);
                for i in 0..m {
                    if !wanted[i].contains(&w[i]) {
                        continue;
                    }
                    let weight = &pw / factors[i].prob(&w[i]);
                    for j in 0..n {
                        let key = AuxKey { rep: k, src_bidder: i, src_item: j, bidder: i, item: j, value: w[i].clone() };
                        out.entries.insert(key, weight.clone());
                    }
                }
            }
            true
        }
        GroupKind::AllBidders => {
            // σ(i′) = i and σ(w)_i = w_{i′}: (m−1)! choices, items fixed
            let fact = rational::factorial(m - 1);
            for (k, w) in reps.iter().enumerate() {
                let base = &fact * dist.prob(w) / Q::from_integer(group.stabilizer_order(w).into());
                for i in 0..m {
                    for (i2, wi2) in w.iter().enumerate() {
                        if !wanted[i].contains(wi2) {
                            continue;
                        }
                        let weight = &base / factors[i].prob(wi2);
                        for j in 0..n {
                            let key = AuxKey { rep: k, src_bidder: i2, src_item: j, bidder: i, item: j, value: wi2.clone() };
                            out.entries.insert(key, weight.clone());
                        }
                    }
                }
            }
            true
        }
        GroupKind::AllItems => {
            for (k, w) in reps.iter().enumerate() {
                let pw = dist.prob(w);
                let stab = Q::from_integer(group.stabilizer_order(w).into());
                for i in 0..m {
                    let key_sorted = sorted(&w[i]);
                    // multiplicities n_k of each value in the type
                    let mut mult: BTreeMap<&Q, usize> = BTreeMap::new();
                    for x in &w[i] {
                        *mult.entry(x).or_insert(0) += 1;
                    }
                    let prod: Q = mult.values().map(|&c| rational::factorial(c)).product();
                    for v in &types[i] {
                        if sorted(v) != key_sorted {
                            continue;
                        }
                        let pv = factors[i].prob(v);
                        for j in 0..n {
                            let na = Q::from_integer(mult[&v[j]].into());
                            let weight = &prod * &pw / (&na * &pv * &stab);
                            for j2 in 0..n {
                                if w[i][j2] == v[j] {
                                    let key = AuxKey { rep: k, src_bidder: i, src_item: j2, bidder: i, item: j, value: v.clone() };
                                    out.entries.insert(key, weight.clone());
                                }
                            }
                        }
                    }
                }
            }
            true
        }
        GroupKind::Product | GroupKind::Custom => {
            out.entries = enumerate(dist, factors, group, reps, &wanted)?;
            false
        }
    };
    if closed && group.kind != GroupKind::Trivial && group.order().saturating_mul(reps.len() as u128) <= CROSS_CHECK_BUDGET {
        let direct = enumerate(dist, factors, group, reps, &wanted)?;
        out.cross_checked = true;
        let keys: std::collections::BTreeSet<AuxKey> = direct.keys().chain(out.entries.keys()).cloned().collect();
        for key in keys {
            let a = out.entries.get(&key).cloned().unwrap_or_else(Q::zero);
            let b = direct.get(&key).cloned().unwrap_or_else(Q::zero);
            if a != b {
                out.diagnostics.push(format!(
                    "aux{:?}: closed form {} vs group sum {}",
                    (key.rep, key.src_bidder, key.src_item, key.bidder, key.item),
                    rational::format(&a),
                    rational::format(&b)
                ));
                if b.is_zero() {
                    out.entries.remove(&key);
                } else {
                    out.entries.insert(key, b);
                }
            }
        }
    }
    Ok(out)
}

/// The defining sum over group elements, divided by the stabilizer order.
fn enumerate(
    dist: &DiscreteDistribution,
    factors: &[BidderFactor],
    group: &SymmetryGroup,
    reps: &[TypeProfile],
    wanted: &[std::collections::BTreeSet<&ValueVector>],
) -> Result<BTreeMap<AuxKey, Q>> {
    let elements = group.elements(GROUP_CAP)?;
    let mut entries: BTreeMap<AuxKey, Q> = BTreeMap::new();
    for (k, w) in reps.iter().enumerate() {
        let stab = Q::from_integer(group.stabilizer_order(w).into());
        for s in &elements {
            let u = s.apply_matrix(w);
            let pu = dist.prob(&u);
            if pu.is_zero() {
                continue;
            }
            let inv = s.inverse();
            for i in 0..group.m {
                if !wanted[i].contains(&u[i]) {
                    continue;
                }
                let weight = &pu / (factors[i].prob(&u[i]) * &stab);
                for j in 0..group.n {
                    let (i2, j2) = inv.map_cell(i, j);
                    let key = AuxKey { rep: k, src_bidder: i2, src_item: j2, bidder: i, item: j, value: u[i].clone() };
                    *entries.entry(key).or_insert_with(Q::zero) += &weight;
                }
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;
    use crate::symmetry::{bidder_representatives, enumerate_representatives};

    #[test]
    fn k_items_closed_form_matches_group_sum() {
        let f = BidderFactor::iid_items(1, &[(q(1, 2), q(1, 3)), (q(1, 1), q(2, 3))]).unwrap();
        let d = DiscreteDistribution::iid(q(1, 2), 3, f.clone()).unwrap();
        let g = SymmetryGroup::all_bidders(3, 1);
        let e = enumerate_representatives(&d, &g, 100).unwrap();
        let types: Vec<Vec<ValueVector>> = vec![f.types().cloned().collect(); 3];
        let aux = compute_aux_weights(&d, &g, &e.reps, &types).unwrap();
        assert!(aux.cross_checked);
        assert!(aux.diagnostics.is_empty(), "{:?}", aux.diagnostics);
        // for fixed (i, j, v_i) the weights are a conditional distribution
        for (i, ts) in types.iter().enumerate() {
            for v in ts {
                let total: Q = aux.entries.iter().filter(|(k, _)| k.bidder == i && k.item == 0 && &k.value == v).map(|(_, x)| x.clone()).sum();
                assert_eq!(total, q(1, 1));
            }
        }
    }

    #[test]
    fn k_bidders_closed_form_matches_group_sum() {
        let f = BidderFactor::iid_items(3, &[(q(1, 2), q(1, 2)), (q(1, 1), q(1, 2))]).unwrap();
        let d = DiscreteDistribution::iid(q(1, 2), 2, f).unwrap();
        let g = SymmetryGroup::all_items(2, 3);
        let e = enumerate_representatives(&d, &g, 1000).unwrap();
        let types: Vec<Vec<ValueVector>> = (0..2).map(|i| bidder_representatives(&d, i).into_iter().map(|(v, _)| v).collect()).collect();
        let aux = compute_aux_weights(&d, &g, &e.reps, &types).unwrap();
        assert!(aux.cross_checked);
        assert!(aux.diagnostics.is_empty(), "{:?}", aux.diagnostics);
        // zero pattern: no cross-bidder weights
        assert!(aux.entries.keys().all(|k| k.src_bidder == k.bidder));
    }
}
