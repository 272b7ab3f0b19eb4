use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use symauction::lp::{build_naive, build_succinct_k_bidders, build_succinct_k_items, optimum, solve_to_mechanism, Mode};
use symauction::mechanism::{check_bic, check_ic, check_strong_monotonicity, AuditMode};
use symauction::model::{random_factor, Bound, BidderFactor, Constraints, DiscreteDistribution};
use symauction::rational::{q, Q};

fn uniform_values(vals: &[Q]) -> Vec<(Q, Q)> {
    vals.iter().map(|v| (v.clone(), q(1, vals.len() as i64))).collect()
}

fn single(m: usize, n: usize, vals: &[Q]) -> DiscreteDistribution {
    DiscreteDistribution::iid(q(1, 10), m, BidderFactor::iid_items(n, &uniform_values(vals)).unwrap()).unwrap()
}

#[test]
fn one_bidder_one_item_posted_price() {
    let d = single(1, 1, &[q(1, 2), q(1, 1)]);
    let c = Constraints::unconstrained(1);
    // posted prices 1/2 and 1 both earn 1/2
    let best_posted = [q(1, 2), q(1, 1)].iter().map(|p| d.factors().unwrap()[0].support().iter().filter(|(v, _)| &v[0] >= p).map(|(_, pr)| pr * p).sum::<Q>()).max().unwrap();
    assert_eq!(optimum(&build_naive(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap(), best_posted);
    assert_eq!(best_posted, q(1, 2));
}

#[test]
fn point_mass_extracts_everything() {
    let d = DiscreteDistribution::iid(q(1, 2), 1, BidderFactor::point_mass(vec![q(1, 1)])).unwrap();
    let b = build_naive(&d, &Constraints::unconstrained(1), &Q::zero(), Mode::Bic).unwrap();
    assert_eq!(optimum(&b).unwrap(), q(1, 1));
}

#[test]
fn epsilon_one_reaches_expected_welfare() {
    let d = single(2, 1, &[q(1, 2), q(1, 1)]);
    let c = Constraints::unconstrained(2);
    // E[max of two fair coins on {1/2, 1}] = 1/4·1/2 + 3/4·1
    let welfare = q(1, 8) + q(3, 4);
    assert_eq!(optimum(&build_naive(&d, &c, &q(1, 1), Mode::Bic).unwrap()).unwrap(), welfare);
}

#[test]
fn k_items_two_bidders_one_item() {
    let d = single(2, 1, &[q(1, 2), q(1, 1)]);
    let c = Constraints::unconstrained(2);
    let b = build_succinct_k_items(&d, &c, &Q::zero(), Mode::Bic).unwrap();
    assert_eq!(b.reps.len(), 3);
    assert!(b.size_report().within_bounds());
    let opt = optimum(&b).unwrap();
    assert_eq!(opt, optimum(&build_naive(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap());
    // posted price 1 to both, sell if anyone accepts: 1 − (1/2)²
    assert!(opt >= q(3, 4));
}

#[test]
fn single_bidder_succinct_equals_naive() {
    let d = single(1, 2, &[q(4, 5), q(1, 1)]);
    let c = Constraints::unit_demand(1);
    let naive = optimum(&build_naive(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap();
    assert_eq!(optimum(&build_succinct_k_items(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap(), naive);
    assert_eq!(optimum(&build_succinct_k_bidders(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap(), naive);
    let d1 = single(2, 1, &[q(1, 2), q(1, 1)]);
    let c2 = Constraints::unconstrained(2);
    assert_eq!(
        optimum(&build_succinct_k_bidders(&d1, &c2, &Q::zero(), Mode::Bic).unwrap()).unwrap(),
        optimum(&build_naive(&d1, &c2, &Q::zero(), Mode::Bic).unwrap()).unwrap()
    );
}

#[test]
fn extracted_mechanisms_pass_audits() {
    let d = single(2, 2, &[q(1, 2), q(1, 1)]);
    let c = Constraints { demands: vec![Bound::Finite(1); 2], budgets: vec![Bound::Finite(q(9, 10)); 2] };
    for b in [
        build_naive(&d, &c, &Q::zero(), Mode::Bic).unwrap(),
        build_succinct_k_items(&d, &c, &Q::zero(), Mode::Bic).unwrap(),
        build_succinct_k_bidders(&d, &c, &Q::zero(), Mode::Bic).unwrap(),
    ] {
        let (sol, mech) = solve_to_mechanism(&b).unwrap();
        assert!(b.lp.violations(&sol.values).is_empty());
        mech.check_feasible(&c).unwrap();
        let rep = check_bic(&mech, &d, &Q::zero()).unwrap();
        assert_eq!(rep.max_violation, Q::zero());
        assert_eq!(rep.unbounded_violations, 0);
        assert!(rep.ir_ok());
        assert_eq!(rep.revenue, sol.objective.clone().unwrap());
        assert_eq!(mech.revenue(&d).unwrap(), rep.revenue);
    }
}

#[test]
fn epsilon_relaxation_is_monotone_and_audited() {
    let d = single(2, 1, &[q(1, 2), q(7, 10), q(1, 1)]);
    let c = Constraints::unconstrained(2);
    let mut prev = Q::zero();
    for eps in [q(0, 1), q(1, 20), q(1, 10), q(1, 5)] {
        let b = build_succinct_k_items(&d, &c, &eps, Mode::Bic).unwrap();
        let (sol, mech) = solve_to_mechanism(&b).unwrap();
        let opt = sol.objective.unwrap();
        assert!(opt >= prev);
        prev = opt;
        let rep = check_bic(&mech, &d, &eps).unwrap();
        assert!(rep.incentive_ok(), "violation {} at ε={}", rep.max_violation, eps);
    }
}

#[test]
fn ic_mode_matches_naive_and_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for m in 1..=2 {
        for _ in 0..3 {
            let factors = (0..m).map(|_| random_factor(&mut rng, 2, 2, 5, true)).collect();
            let d = DiscreteDistribution::product(q(1, 5), factors).unwrap();
            let c = Constraints { demands: vec![Bound::Finite(2); m], budgets: vec![Bound::Unbounded; m] };
            let naive = optimum(&build_naive(&d, &c, &Q::zero(), Mode::Ic).unwrap()).unwrap();
            let b = build_succinct_k_bidders(&d, &c, &Q::zero(), Mode::Ic).unwrap();
            let (sol, mech) = solve_to_mechanism(&b).unwrap();
            assert_eq!(sol.objective.unwrap(), naive);
            let rep = check_ic(&mech, &d, &Q::zero()).unwrap();
            assert!(rep.incentive_ok() && rep.ir_ok());
            assert!(check_strong_monotonicity(&mech, &d, AuditMode::Ic).unwrap().is_empty());
        }
    }
}

#[test]
fn k_items_ic_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_factor(&mut rng, 1, 2, 4, false);
    let d = DiscreteDistribution::iid(q(1, 4), 3, f).unwrap();
    let c = Constraints::unconstrained(3);
    let naive = optimum(&build_naive(&d, &c, &Q::zero(), Mode::Ic).unwrap()).unwrap();
    let b = build_succinct_k_items(&d, &c, &Q::zero(), Mode::Ic).unwrap();
    let (sol, mech) = solve_to_mechanism(&b).unwrap();
    assert_eq!(sol.objective.unwrap(), naive);
    assert!(check_ic(&mech, &d, &Q::zero()).unwrap().incentive_ok());
}

#[test]
fn missing_symmetry_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = DiscreteDistribution::product(q(1, 5), vec![random_factor(&mut rng, 2, 2, 5, false), random_factor(&mut rng, 2, 2, 5, false)]).unwrap();
    let c = Constraints::unconstrained(2);
    assert!(build_succinct_k_items(&d, &c, &Q::zero(), Mode::Bic).is_err());
    assert!(build_succinct_k_bidders(&d, &c, &Q::zero(), Mode::Bic).is_err());
}
