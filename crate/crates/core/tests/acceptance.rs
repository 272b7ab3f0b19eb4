//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (written straight to stderr so it survives output capture) and then
//! asserts the same condition.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use symauction::allocation::Lottery;
use symauction::lp::{build_naive, build_succinct_k_bidders, build_succinct_k_items, optimum, solve_to_mechanism, Mode};
use symauction::mechanism::{check_bic, check_ic, check_strong_monotonicity, ex_post_ir_transform, interim_form, revenue, AuditMode, Mechanism, Outcome, Rule};
use symauction::mhr::{self, ContinuousMarginal};
use symauction::model::{random_factor, BidderFactor, Bound, Constraints, Direction, DiscreteDistribution, SettingKind, TypeProfile};
use symauction::rational::{q, qi, Q};
use symauction::reduction::{self, Reduction, ReductionConfig};
use symauction::symmetry::{symmetrize, SymmetryGroup, GROUP_CAP};

/// Criterion 1 wall-clock budget.
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
/// Criterion 7 wall-clock budget.
const REDUCTION_BUDGET: Duration = Duration::from_secs(600);
/// Binomial confidence multiplier for sampled frequencies.
const SIGMAS: f64 = 3.0;
/// Chi-square acceptance level for the surrogate law.
const CHI_SQUARE_LEVEL: f64 = 0.01;
/// Tolerance on MHR quantiles.
const QUANTILE_TOL: f64 = 1e-9;
const BVN_SAMPLES: usize = 100_000;
const EXPOST_SAMPLES: usize = 100_000;
const REDUCTION_TRIALS: usize = 10_000;
const REDUCTION_R: usize = 50;

fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!("{} criterion {criterion:>2}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn uniform(vals: &[Q]) -> Vec<(Q, Q)> {
    vals.iter().map(|v| (v.clone(), q(1, vals.len() as i64))).collect()
}

fn support_of(d: &DiscreteDistribution) -> Vec<(TypeProfile, Q)> {
    d.expand(1 << 16).unwrap()
}

/// A uniformly random feasible outcome with unconstrained demand.
fn random_outcome(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Outcome {
    let mut phi = vec![vec![Q::zero(); n]; m];
    for j in 0..n {
        let w: Vec<i64> = (0..=m).map(|_| rng.gen_range(0..=3)).collect();
        let total: i64 = w.iter().sum::<i64>().max(1);
        for i in 0..m {
            phi[i][j] = q(w[i], total);
        }
    }
    let price = (0..m).map(|_| q(rng.gen_range(0..=10), 10)).collect();
    Outcome { phi, price }
}

#[test]
fn criterion_01_succinct_equals_naive() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for trial in 0..24 {
        let k_items = trial % 2 == 0;
        let m = 1 + trial / 2 % 3;
        let n = 1 + trial / 6 % 2;
        let c = 1 + trial / 4 % 2;
        let d = if k_items {
            DiscreteDistribution::iid(q(1, 10), m, random_factor(&mut rng, n, c, 10, false)).unwrap()
        } else {
            DiscreteDistribution::product(q(1, 10), (0..m).map(|_| random_factor(&mut rng, n, c, 10, true)).collect()).unwrap()
        };
        assert!(d.support_size() <= 64);
        let demand = if n > 1 && rng.gen_bool(0.5) { Bound::Finite(1) } else { Bound::Unbounded };
        let budget = if rng.gen_bool(0.3) { Bound::Finite(q(rng.gen_range(3..=9), 10)) } else { Bound::Unbounded };
        let c = Constraints { demands: vec![demand; m], budgets: vec![budget; m] };
        let naive = optimum(&build_naive(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap();
        let succinct = if k_items {
            build_succinct_k_items(&d, &c, &Q::zero(), Mode::Bic)
        } else {
            build_succinct_k_bidders(&d, &c, &Q::zero(), Mode::Bic)
        };
        let got = optimum(&succinct.unwrap()).unwrap();
        if got != naive {
            mismatches.push(format!("trial {trial}: {got} vs {naive}"));
        }
        checked += 1;
    }
    let elapsed = started.elapsed();
    report(
        1,
        mismatches.is_empty() && checked >= 20 && elapsed < ORACLE_BUDGET,
        &format!("{checked} instances, {} mismatches {:?}, {:.1}s (budget {}s)", mismatches.len(), mismatches, elapsed.as_secs_f64(), ORACLE_BUDGET.as_secs()),
    );
}

/// Revenue of a menu for one unit-demand bidder; ties go to the seller.
fn menu_revenue(d: &DiscreteDistribution, menu: &[(Vec<Q>, Q)]) -> Q {
    support_of(d)
        .iter()
        .map(|(v, p)| {
            let best = menu
                .iter()
                .map(|(alloc, price)| (alloc.iter().zip(&v[0]).map(|(a, x)| a * x).sum::<Q>() - price, price.clone()))
                .filter(|(u, _)| !u.is_negative())
                .max()
                .map(|(_, price)| price)
                .unwrap_or_else(Q::zero);
            best * p
        })
        .sum()
}

#[test]
fn criterion_02_two_item_example() {
    let d = DiscreteDistribution::iid(q(1, 10), 1, BidderFactor::iid_items(2, &uniform(&[q(4, 5), q(1, 1)])).unwrap()).unwrap();
    let c = Constraints::unit_demand(1);
    let b = build_succinct_k_bidders(&d, &c, &Q::zero(), Mode::Bic).unwrap();
    let (sol, mech) = solve_to_mechanism(&b).unwrap();
    let opt = sol.objective.unwrap();
    let lottery_menu = vec![
        (vec![q(1, 1), q(0, 1)], q(9, 10)),
        (vec![q(0, 1), q(1, 1)], q(9, 10)),
        (vec![q(1, 2), q(1, 2)], q(4, 5)),
    ];
    let paper_menu = menu_revenue(&d, &lottery_menu);
    let grid: Vec<Q> = (0..=21).map(|k| q(k, 20)).collect();
    let mut best_det = Q::zero();
    for p1 in &grid {
        for p2 in &grid {
            let r = menu_revenue(&d, &[(vec![q(1, 1), q(0, 1)], p1.clone()), (vec![q(0, 1), q(1, 1)], p2.clone())]);
            best_det = best_det.max(r);
        }
    }
    let swap = SymmetryGroup::all_items(1, 2).elements(GROUP_CAP).unwrap();
    let mut asym = 0;
    for (v, _) in support_of(&d) {
        let o = mech.outcome(&v).unwrap();
        for s in &swap {
            if mech.outcome(&s.apply(&v).unwrap()).unwrap() != s.apply_outcome(&o) {
                asym += 1;
            }
        }
    }
    let mono = check_strong_monotonicity(&mech, &d, AuditMode::Bic).unwrap();
    let audit = check_bic(&mech, &d, &Q::zero()).unwrap();
    report(
        2,
        opt >= paper_menu && opt >= best_det && asym == 0 && mono.is_empty() && audit.incentive_ok() && audit.ir_ok(),
        &format!(
            "LP optimum {opt} ≥ lottery menu {paper_menu} and ≥ best item pricing {best_det}; {asym} symmetry and {} monotonicity violations",
            mono.len()
        ),
    );
}

#[test]
fn criterion_03_symmetrization() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut failures = Vec::new();
    for trial in 0..10 {
        let (d, group) = match trial % 3 {
            0 => (DiscreteDistribution::iid(q(1, 10), 2, random_factor(&mut rng, 2, 2, 10, false)).unwrap(), SymmetryGroup::all_bidders(2, 2)),
            1 => (
                DiscreteDistribution::product(q(1, 10), vec![random_factor(&mut rng, 2, 2, 10, true), random_factor(&mut rng, 2, 2, 10, true)]).unwrap(),
                SymmetryGroup::all_items(2, 2),
            ),
            _ => (DiscreteDistribution::iid(q(1, 10), 2, random_factor(&mut rng, 2, 2, 10, true)).unwrap(), SymmetryGroup::product(2, 2)),
        };
        let (m, n) = (d.num_bidders(), d.num_items());
        let table: BTreeMap<TypeProfile, Outcome> = support_of(&d).into_iter().map(|(v, _)| (v, random_outcome(&mut rng, m, n))).collect();
        let raw = Mechanism::new(SymmetryGroup::trivial(m, n), q(1, 10), None, table).unwrap();
        let sym = symmetrize(&raw, &group).unwrap();
        let (r0, r1) = (revenue(&raw, &d).unwrap(), revenue(&sym, &d).unwrap());
        let (a0, a1) = (check_bic(&raw, &d, &Q::zero()).unwrap(), check_bic(&sym, &d, &Q::zero()).unwrap());
        if r0 != r1 {
            failures.push(format!("trial {trial}: revenue {r0} → {r1}"));
        }
        if a1.max_raw_gain > a0.max_raw_gain || a1.max_violation > a0.max_violation {
            failures.push(format!("trial {trial}: violation grew {} → {}", a0.max_raw_gain, a1.max_raw_gain));
        }
        for (v, _) in support_of(&d) {
            let o = sym.outcome(&v).unwrap();
            for s in group.elements(GROUP_CAP).unwrap() {
                if sym.outcome(&s.apply(&v).unwrap()).unwrap() != s.apply_outcome(&o) {
                    failures.push(format!("trial {trial}: not equivariant at {v:?}"));
                }
            }
        }
    }
    report(3, failures.is_empty(), &format!("10 random mechanisms: revenue preserved, violations not increased, equivariant; failures {failures:?}"));
}

/// A random feasible marginal matrix for the given demands.
fn random_phi(rng: &mut ChaCha8Rng, m: usize, n: usize, demands: &[Bound<u32>]) -> Vec<Vec<Q>> {
    let a: Vec<Vec<i64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(0..=4)).collect()).collect();
    let mut scale = q(1, 1);
    for j in 0..n {
        scale = scale.max(qi(a.iter().map(|r| r[j]).sum()));
    }
    for (i, r) in a.iter().enumerate() {
        if let Bound::Finite(c) = demands[i] {
            scale = scale.max(q(r.iter().sum(), c as i64));
        }
    }
    a.iter().map(|r| r.iter().map(|&x| qi(x) / &scale).collect()).collect()
}

#[test]
fn criterion_04_birkhoff_von_neumann() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let cases: Vec<(usize, usize, Vec<Bound<u32>>)> = vec![
        (2, 2, vec![Bound::Finite(1); 2]),
        (3, 2, vec![Bound::Finite(1); 3]),
        (2, 3, vec![Bound::Finite(1); 2]),
        (3, 3, vec![Bound::Finite(1); 3]),
        (2, 4, vec![Bound::Finite(2), Bound::Unbounded]),
    ];
    let mut failures = Vec::new();
    let mut outside = 0;
    let mut cells = 0;
    for (case, (m, n, demands)) in cases.iter().enumerate() {
        let phi = random_phi(&mut rng, *m, *n, demands);
        let lottery = Lottery::new(&phi, demands).unwrap();
        if lottery.decomposition.reconstruct() != lottery.padded.matrix {
            failures.push(format!("case {case}: reconstruction differs"));
        }
        if lottery.exact_marginals() != phi {
            failures.push(format!("case {case}: marginals differ"));
        }
        let unit = demands.iter().all(|d| *d == Bound::Finite(1));
        // unit demand: the padded side is max(m, n); otherwise it counts copies
        let side = if unit { (*m).max(*n) } else { lottery.size() };
        if lottery.size() != side || lottery.decomposition.terms.len() > side * side {
            failures.push(format!("case {case}: {} terms for side {}", lottery.decomposition.terms.len(), lottery.size()));
        }
        let mut counts = vec![vec![0usize; *n]; *m];
        for _ in 0..BVN_SAMPLES {
            let bundles = lottery.sample(&mut rng);
            let mut taken = vec![false; *n];
            for (i, b) in bundles.iter().enumerate() {
                if let Bound::Finite(c) = demands[i] {
                    if b.len() > c as usize {
                        failures.push(format!("case {case}: demand exceeded"));
                    }
                }
                for &j in b {
                    if std::mem::replace(&mut taken[j], true) {
                        failures.push(format!("case {case}: item {j} sold twice"));
                    }
                    counts[i][j] += 1;
                }
            }
        }
        for i in 0..*m {
            for j in 0..*n {
                let p = symauction::rational::to_f64(&phi[i][j]);
                let mean = p * BVN_SAMPLES as f64;
                let sd = (BVN_SAMPLES as f64 * p * (1.0 - p)).sqrt();
                cells += 1;
                if (counts[i][j] as f64 - mean).abs() > SIGMAS * sd + 1e-9 {
                    outside += 1;
                    failures.push(format!("case {case}: cell ({i},{j}) count {} vs {mean:.0} ± {sd:.1}", counts[i][j]));
                }
            }
        }
    }
    report(
        4,
        failures.is_empty(),
        &format!("5 matrices (one non-unit-demand): exact reconstruction, term bound, {outside}/{cells} cells outside {SIGMAS}σ over {BVN_SAMPLES} draws; {failures:?}"),
    );
}

#[test]
fn criterion_05_ex_post_ir() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let d = DiscreteDistribution::iid(q(1, 10), 2, random_factor(&mut rng, 2, 2, 10, false)).unwrap();
    let c = Constraints::unit_demand(2);
    let (_, mech) = solve_to_mechanism(&build_succinct_k_items(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap();
    let rule = ex_post_ir_transform(&mech, &d).unwrap();
    let form = interim_form(&mech, &d).unwrap();
    let mut preserved = true;
    for i in 0..2 {
        for v in form.types(i) {
            preserved &= rule.expected_payment(&form, i, v) == *form.q(i, v);
        }
    }
    let lotteries: BTreeMap<TypeProfile, Lottery> =
        support_of(&d).into_iter().map(|(v, _)| { let o = mech.outcome(&v).unwrap(); (v, Lottery::new(&o.phi, &c.demands).unwrap()) }).collect();
    let mut negative = 0;
    for _ in 0..EXPOST_SAMPLES {
        let v = d.sample(&mut rng);
        let bundles = lotteries[&v].sample(&mut rng);
        for (i, b) in bundles.iter().enumerate() {
            let value: Q = b.iter().map(|&j| v[i][j].clone()).sum();
            if (value - rule.charge(i, &v[i], b)).is_negative() {
                negative += 1;
            }
        }
    }
    // two bidders who value the item at 10 but hold budgets of 5 (scaled by 1/10)
    let pm = DiscreteDistribution::iid(q(1, 10), 2, BidderFactor::point_mass(vec![q(1, 1)])).unwrap();
    let budgets = Constraints { demands: vec![Bound::Unbounded; 2], budgets: vec![Bound::Finite(q(1, 2)); 2] };
    let (sol, bm) = solve_to_mechanism(&build_naive(&pm, &budgets, &Q::zero(), Mode::Bic).unwrap()).unwrap();
    let interim = sol.objective.unwrap() * qi(10);
    let winner_pays = ex_post_ir_transform(&bm, &pm).unwrap().charge(0, &[q(1, 1)], &[0]) * qi(10);
    let out = bm.outcome(&vec![vec![q(1, 1)], vec![q(1, 1)]]).unwrap();
    let split = out.phi[0][0] == q(1, 2) && out.phi[1][0] == q(1, 2);
    // a budget-feasible ex-post IR rule charges only the winner, at most 5
    let ex_post_budget = qi(5) * (&out.phi[0][0] + &out.phi[1][0]);
    report(
        5,
        preserved && negative == 0 && interim == qi(10) && split && winner_pays == qi(10) && ex_post_budget == qi(5),
        &format!(
            "interim payments preserved: {preserved}; {negative} negative utilities in {EXPOST_SAMPLES} draws; budget example interim revenue {interim}, transformed winner pays {winner_pays} (> budget 5), budget-respecting ex-post revenue {ex_post_budget}"
        ),
    );
}

#[test]
fn criterion_06_discretization() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut lines = Vec::new();
    let mut ok = true;
    for delta in [q(1, 2), q(1, 4)] {
        for trial in 0..3 {
            let m = 1 + trial % 2;
            let n = 1 + (trial + 1) % 2;
            let d = DiscreteDistribution::iid(q(1, 20), m, random_factor(&mut rng, n, 2, 20, false)).unwrap();
            let c = Constraints::unconstrained(m);
            let opt = optimum(&build_naive(&d, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap();
            let dp = d.discretize(&delta, Direction::Down);
            let (sol, mp) = solve_to_mechanism(&build_succinct_k_items(&dp, &c, &Q::zero(), Mode::Bic).unwrap()).unwrap();
            let rp = sol.objective.unwrap();
            let t = qi(c.t_total(n) as i64);
            let bound_ok = rp >= &opt - &delta * &t;
            let lifted = reduction::lift(mp, delta.clone());
            let audit = check_bic(&lifted, &d, &(qi(2) * &delta)).unwrap();
            ok &= bound_ok && audit.incentive_ok() && audit.ir_ok();
            lines.push(format!("δ={delta} m={m} n={n}: {rp} ≥ {opt} − δ·{t}: {bound_ok}, lifted 2δ-BIC: {}", audit.incentive_ok()));
        }
    }
    report(6, ok, &lines.join("; "));
}

#[test]
fn criterion_07_reduction() {
    let started = Instant::now();
    let delta = q(1, 50);
    let eta = q(1, 4);
    let epsilon = delta.clone();
    let d = DiscreteDistribution::iid(q(1, 100), 2, BidderFactor::iid_items(1, &uniform(&[q(53, 100), q(1, 1)])).unwrap()).unwrap();
    let dp = d.discretize(&delta, Direction::Down);
    let c = Constraints::unconstrained(2);
    let (_, m1) = solve_to_mechanism(&build_succinct_k_items(&dp, &c, &epsilon, Mode::Bic).unwrap()).unwrap();
    let setting = SettingKind::KItems { k: 1, m: 2 };
    let config = ReductionConfig::new(eta, delta, setting, Some(REDUCTION_R)).unwrap();
    let red = Reduction::new(&m1, &d, &dp, config, setting).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let chi: Vec<_> = (0..2).map(|i| reduction::surrogate_law_test(&red, &d, &dp, i, REDUCTION_TRIALS, &mut rng).unwrap()).collect();
    let dev = reduction::bic_check(&red, &d, REDUCTION_TRIALS, &mut rng).unwrap();
    let bound = reduction::revenue_bound_check(&red, &d, &epsilon, c.t_total(1), REDUCTION_TRIALS, &mut rng).unwrap();
    let elapsed = started.elapsed();
    let chi_ok = chi.iter().all(|r| r.p_value > CHI_SQUARE_LEVEL);
    let dev_ok = dev.iter().all(|e| e.within_noise());
    let worst = dev.iter().map(|e| e.gain.mean - SIGMAS * e.gain.std_err).fold(f64::NEG_INFINITY, f64::max);
    report(
        7,
        chi_ok && dev_ok && bound.holds && elapsed < REDUCTION_BUDGET,
        &format!(
            "r={REDUCTION_R}, {REDUCTION_TRIALS} trials: surrogate-law p-values {:?}; max (gain − 3σ) {worst:.4}; revenue {:.4} ± {:.4} vs bound {:.4}; {:.1}s",
            chi.iter().map(|r| (r.p_value * 1e4).round() / 1e4).collect::<Vec<_>>(),
            bound.revenue.mean,
            bound.revenue.std_err,
            bound.bound,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_mhr() {
    let f = ContinuousMarginal::Exponential { rate: 1.0 };
    let mut ok = true;
    let mut worst_alpha: f64 = 0.0;
    for p in [2.0f64, 4.0, 8.0] {
        let a = mhr::alpha(&f, p).unwrap();
        worst_alpha = worst_alpha.max((a - p.ln()).abs());
        for k in [2i32, 3] {
            ok &= k as f64 * a >= mhr::alpha(&f, p.powi(k)).unwrap() - QUANTILE_TOL;
        }
    }
    ok &= worst_alpha <= QUANTILE_TOL;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut lines = Vec::new();
    for n in [1usize, 2, 4] {
        let plan = mhr::plan(&[f.clone()], 0.25, SettingKind::KItems { k: 1, m: n }).unwrap();
        let closed = plan.xi_prime * (1.0 - (1.0 - 1.0 / n as f64).powi(n as i32));
        let grid = vec![vec![f.clone()]; n];
        let est = mhr::posted_price_lower_bound(&grid, plan.xi_prime, &Constraints::unconstrained(n), 20_000, &mut rng).unwrap();
        let within = (est.mean - closed).abs() <= SIGMAS * est.std_err + 1e-12;
        ok &= within && (plan.xi_prime - (n as f64).ln()).abs() <= QUANTILE_TOL;
        lines.push(format!("n={n}: {:.4} ± {:.4} vs {closed:.4}", est.mean, est.std_err));
    }
    report(8, ok, &format!("max |α_p − ln p| {worst_alpha:.1e}; k·α_p ≥ α_(p^k); posted price {}", lines.join(", ")));
}

#[test]
fn criterion_09_ic_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ok = true;
    let mut count = 0;
    for m in 1..=2 {
        for _ in 0..3 {
            let d = DiscreteDistribution::product(q(1, 10), (0..m).map(|_| random_factor(&mut rng, 2, 2, 10, true)).collect()).unwrap();
            let c = Constraints::unconstrained(m);
            let naive = optimum(&build_naive(&d, &c, &Q::zero(), Mode::Ic).unwrap()).unwrap();
            let (sol, mech) = solve_to_mechanism(&build_succinct_k_bidders(&d, &c, &Q::zero(), Mode::Ic).unwrap()).unwrap();
            let audit = check_ic(&mech, &d, &Q::zero()).unwrap();
            ok &= sol.objective.unwrap() == naive
                && audit.incentive_ok()
                && audit.ir_ok()
                && check_strong_monotonicity(&mech, &d, AuditMode::Ic).unwrap().is_empty();
            count += 1;
        }
    }
    report(9, ok, &format!("{count} item-symmetric instances: succinct IC optimum = naive, IC and strongly monotone"));
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_symauction")).args(args).output().unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

fn pipeline(dir: &Path) {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    std::fs::write(
        dir.join("dist.json"),
        r#"{"setting":"k-items","delta":"1/10","factors":[{"iid_items":1,"values":[["3/5","1/2"],["1","1/2"]],"copies":2}]}"#,
    )
    .unwrap();
    std::fs::write(dir.join("mhr.json"), r#"{"setting":"k-bidders","m":1,"n":2,"marginals":[{"family":"exponential","rate":1.0}]}"#).unwrap();
    run_cli(&["solve", "--input", &p("dist.json"), "--epsilon", "1/4", "--delta", "1/4", "--ir", "expost", "--emit-lp", "--out", &p("solve")]);
    run_cli(&[
        "reduce", "--input", &p("dist.json"), "--mechanism", &p("solve/mechanism.csv"), "--epsilon", "1/4", "--delta", "1/4", "--scale-r", "10",
        "--trials", "200", "--seed", "5", "--out", &p("reduce"),
    ]);
    run_cli(&["sample", "--input", &p("dist.json"), "--mechanism", &p("solve/mechanism.csv"), "--seed", "5", "--ir", "expost", "--out", &p("sample")]);
    run_cli(&["mhr-plan", "--input", &p("mhr.json"), "--epsilon", "0.5", "--trials", "500", "--seed", "5", "--out", &p("mhr")]);
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in std::fs::read_dir(dir).unwrap() {
        let sub = sub.unwrap().path();
        if sub.is_dir() {
            for f in std::fs::read_dir(&sub).unwrap() {
                let f = f.unwrap().path();
                out.insert(f.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&f).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    report(10, fa.len() >= 10 && fa.keys().eq(fb.keys()) && differing.is_empty(), &format!("{} artifacts byte-identical across two seeded runs; differing {differing:?}", fa.len()));
}
