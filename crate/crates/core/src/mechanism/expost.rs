use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{interim_form, InterimForm, Rule};
use crate::error::{Error, Result};
use crate::model::{DiscreteDistribution, ValueVector};
use crate::rational::{self, Q};

/// Ex-post IR payment rule: a bidder of type `v_i` who receives bundle `J`
/// pays `c_i(v_i)·Σ_{j∈J} v_ij`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExPostRule {
    pub coeffs: Vec<BTreeMap<ValueVector, Q>>,
}

impl ExPostRule {
    pub fn coefficient(&self, i: usize, v: &[Q]) -> &Q {
        &self.coeffs[i][v]
    }

    /// Realized payment for bundle `items`.
    pub fn charge(&self, i: usize, v: &[Q], items: &[usize]) -> Q {
        let c = self.coefficient(i, v);
        items.iter().map(|&j| &v[j] * c).sum()
    }

    /// Expected payment under the interim allocation: `c_i Σ_j v_ij π_ij(v_i)`.
    pub fn expected_payment(&self, form: &InterimForm, i: usize, v: &[Q]) -> Q {
        let value: Q = v.iter().zip(form.pi(i, v)).map(|(a, b)| a * b).sum();
        value * self.coefficient(i, v)
    }
}

/// Scales each type's payment to a fixed fraction of its realized value.
/// Fails if the mechanism is not ex-interim IR; a type with zero expected
/// value must have zero expected payment and gets coefficient 0.
pub fn ex_post_ir_transform<R: Rule + ?Sized>(rule: &R, dist: &DiscreteDistribution) -> Result<ExPostRule> {
    let form = interim_form(rule, dist)?;
    let mut coeffs = vec![BTreeMap::new(); form.num_bidders()];
    for (i, out) in coeffs.iter_mut().enumerate() {
        for v in form.types(i) {
            let value: Q = v.iter().zip(form.pi(i, v)).map(|(a, b)| a * b).sum();
            let pay = form.q(i, v);
            let c = if value.is_zero() {
                if !pay.is_zero() {
                    return Err(Error::DivisionByZeroValue(rational::format(pay), i));
                }
                Q::zero()
            } else {
                if pay > &value {
                    return Err(Error::NotInterimIr(format!(
                        "bidder {i} pays {} for expected value {}",
                        rational::format(pay),
                        rational::format(&value)
                    )));
                }
                pay / &value
            };
            out.insert(v.clone(), c);
        }
    }
    Ok(ExPostRule { coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{FnRule, Outcome};
    use crate::model::{BidderFactor, TypeProfile};
    use crate::rational::q;

    #[test]
    fn budget_example() {
        // two bidders valuing the item at 1, budgets 1/2: split the item, each pays 1/2
        let d = DiscreteDistribution::iid(q(1, 2), 2, BidderFactor::point_mass(vec![q(1, 1)])).unwrap();
        let r = FnRule { m: 2, n: 1, f: |_: &TypeProfile| Outcome { phi: vec![vec![q(1, 2)], vec![q(1, 2)]], price: vec![q(1, 2), q(1, 2)] } };
        let rule = ex_post_ir_transform(&r, &d).unwrap();
        // the winner pays the full value, twice the budget
        assert_eq!(rule.charge(0, &[q(1, 1)], &[0]), q(1, 1));
        assert_eq!(rule.charge(0, &[q(1, 1)], &[]), Q::zero());
    }

    #[test]
    fn zero_value_corner() {
        let d = DiscreteDistribution::iid(q(1, 2), 1, BidderFactor::point_mass(vec![q(0, 1)])).unwrap();
        let free = FnRule { m: 1, n: 1, f: |_: &TypeProfile| Outcome { phi: vec![vec![q(1, 1)]], price: vec![q(0, 1)] } };
        assert_eq!(ex_post_ir_transform(&free, &d).unwrap().coefficient(0, &[q(0, 1)]), &Q::zero());
        let paid = FnRule { m: 1, n: 1, f: |_: &TypeProfile| Outcome { phi: vec![vec![q(1, 1)]], price: vec![q(-1, 4)] } };
        assert!(matches!(ex_post_ir_transform(&paid, &d), Err(Error::DivisionByZeroValue(_, 0))));
    }
}
