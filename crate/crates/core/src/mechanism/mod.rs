//! Mechanisms stored on class representatives, their interim forms, and
//! the audits and transforms that operate on them.

mod audit;
mod expost;
mod interim;

pub use audit::{
    check_bic, check_ic, check_strong_monotonicity, repair_strong_monotonicity, AuditMode, AuditReport, MonotonicityViolation,
};
pub use expost::{ex_post_ir_transform, ExPostRule};
pub use interim::{evaluate_support, interim_form, revenue, InterimForm, SupportTable};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::TypeProfile;
use crate::rational::{self, Q};
use crate::symmetry::{profile_from_string, profile_to_string, GroupKind, Permutation, SymmetryGroup};

/// Marginal allocation matrix and expected prices at one profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    /// `phi[i][j]`: probability bidder `i` receives item `j`.
    pub phi: Vec<Vec<Q>>,
    /// Expected price charged to each bidder.
    pub price: Vec<Q>,
}

impl Outcome {
    pub fn zero(m: usize, n: usize) -> Self {
        Self { phi: vec![vec![Q::zero(); n]; m], price: vec![Q::zero(); m] }
    }

    pub fn add_assign(&mut self, o: &Outcome) {
        for (a, b) in self.phi.iter_mut().zip(&o.phi) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.price.iter_mut().zip(&o.price) {
            *x += y;
        }
    }

    pub fn add_scaled(&mut self, o: &Outcome, s: &Q) {
        for (a, b) in self.phi.iter_mut().zip(&o.phi) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * s;
            }
        }
        for (x, y) in self.price.iter_mut().zip(&o.price) {
            *x += y * s;
        }
    }

    pub fn scale(&mut self, s: &Q) {
        for x in self.phi.iter_mut().flatten() {
            *x *= s;
        }
        for x in &mut self.price {
            *x *= s;
        }
    }

    /// Expected number of items bidder `i` receives.
    pub fn items_of(&self, i: usize) -> Q {
        self.phi[i].iter().sum()
    }
}

/// Anything that maps a reported profile to an outcome.
pub trait Rule {
    /// `(bidders, items)`.
    fn dims(&self) -> (usize, usize);
    fn outcome(&self, v: &TypeProfile) -> Result<Outcome>;
}

impl<R: Rule + ?Sized> Rule for &R {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn outcome(&self, v: &TypeProfile) -> Result<Outcome> {
        (**self).outcome(v)
    }
}

/// An explicit mechanism: outcomes stored on canonical representatives and
/// extended to every other profile through the attached group,
/// `M(σ(w)) = σ(M(w))`.
///
/// Each stored outcome must be fixed by the stabilizer of its
/// representative; [`Mechanism::new`] checks this.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    pub group: SymmetryGroup,
    pub delta: Q,
    pub setting: Option<String>,
    table: BTreeMap<TypeProfile, Outcome>,
}

impl Mechanism {
    /// Keys must be canonical under `group`.
    pub fn new(group: SymmetryGroup, delta: Q, setting: Option<String>, table: BTreeMap<TypeProfile, Outcome>) -> Result<Self> {
        for (w, o) in &table {
            if w.len() != group.m || w.iter().any(|x| x.len() != group.n) {
                return Err(Error::DimensionMismatch(format!("profile {} has the wrong shape", profile_to_string(w))));
            }
            if o.phi.len() != group.m || o.price.len() != group.m || o.phi.iter().any(|r| r.len() != group.n) {
                return Err(Error::DimensionMismatch("outcome shape".into()));
            }
            if &group.canonical(w) != w {
                return Err(Error::Invalid(format!("{} is not a canonical representative", profile_to_string(w))));
            }
            let classes = group.cell_classes(w)?;
            for cells in &classes.class_cells {
                let (a, b) = cells[0];
                if cells.iter().any(|&(i, j)| o.phi[i][j] != o.phi[a][b]) {
                    return Err(Error::Invalid(format!("allocation at {} is not fixed by its stabilizer", profile_to_string(w))));
                }
            }
            for bs in &classes.class_bidders {
                if bs.iter().any(|&i| o.price[i] != o.price[bs[0]]) {
                    return Err(Error::Invalid(format!("prices at {} are not fixed by its stabilizer", profile_to_string(w))));
                }
            }
        }
        Ok(Self { group, delta, setting, table })
    }

    /// Tabulates `rule` on the given representatives (canonical under `group`).
    pub fn tabulate<R: Rule + ?Sized>(rule: &R, group: SymmetryGroup, delta: Q, reps: &[TypeProfile]) -> Result<Self> {
        let mut table = BTreeMap::new();
        for w in reps {
            table.insert(w.clone(), rule.outcome(w)?);
        }
        Self::new(group, delta, None, table)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn representatives(&self) -> impl Iterator<Item = &TypeProfile> {
        self.table.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&TypeProfile, &Outcome)> {
        self.table.iter()
    }

    /// Outcome stored for a representative.
    pub fn stored(&self, w: &TypeProfile) -> Option<&Outcome> {
        self.table.get(w)
    }

    /// Checks the per-profile feasibility rows: `φ ∈ [0,1]`, item supply,
    /// demand limits and budgets. Returns a description of the first failure.
    pub fn check_feasible(&self, cons: &crate::model::Constraints) -> Result<()> {
        for (w, o) in &self.table {
            let bad = |what: &str| Err(Error::Invalid(format!("{what} violated at {}", profile_to_string(w))));
            if o.phi.iter().flatten().any(|x| x.is_negative() || x > &rational::one()) {
                return bad("0 <= phi <= 1");
            }
            for j in 0..self.group.n {
                if o.phi.iter().map(|r| &r[j]).sum::<Q>() > rational::one() {
                    return bad("item supply");
                }
            }
            for i in 0..self.group.m {
                if let Some(c) = cons.demands[i].finite() {
                    if o.items_of(i) > rational::qi(*c as i64) {
                        return bad("demand");
                    }
                }
                if let Some(b) = cons.budgets[i].finite() {
                    if &o.price[i] > b {
                        return bad("budget");
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes as a one-line JSON header followed by
    /// `class_id,bidder,item,phi,price` CSV rows.
    pub fn dump(&self) -> String {
        let header = DumpHeader {
            group: self.group.kind,
            m: self.group.m,
            n: self.group.n,
            delta: rational::format(&self.delta),
            setting: self.setting.clone(),
            elements: (self.group.kind == GroupKind::Custom).then(|| self.group.elements(u128::MAX).unwrap_or_default()),
            representatives: self.table.keys().map(profile_to_string).collect(),
        };
        let mut s = serde_json::to_string(&header).expect("header serializes");
        s.push('\n');
        s.push_str("class_id,bidder,item,phi,price\n");
        for (k, o) in self.table.values().enumerate() {
            for i in 0..self.group.m {
                for j in 0..self.group.n {
                    let _ = writeln!(s, "{k},{i},{j},{},{}", rational::format(&o.phi[i][j]), rational::format(&o.price[i]));
                }
            }
        }
        s
    }

    /// Inverse of [`Mechanism::dump`].
    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: DumpHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::Parse("empty dump".into()))?)?;
        let (m, n) = (header.m, header.n);
        let group = match header.group {
            GroupKind::Trivial => SymmetryGroup::trivial(m, n),
            GroupKind::AllBidders => SymmetryGroup::all_bidders(m, n),
            GroupKind::AllItems => SymmetryGroup::all_items(m, n),
            GroupKind::Product => SymmetryGroup::product(m, n),
            GroupKind::Custom => SymmetryGroup::custom(m, n, header.elements.unwrap_or_default())?,
        };
        let reps = header.representatives.iter().map(|s| profile_from_string(s)).collect::<Result<Vec<_>>>()?;
        let mut outcomes = vec![Outcome::zero(m, n); reps.len()];
        if lines.next() != Some("class_id,bidder,item,phi,price") {
            return Err(Error::Parse("missing CSV header".into()));
        }
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("bad row '{line}'")));
            }
            let idx = |s: &str, bound: usize| -> Result<usize> {
                s.parse::<usize>().ok().filter(|&x| x < bound).ok_or_else(|| Error::Parse(format!("bad index in '{line}'")))
            };
            let (k, i, j) = (idx(f[0], reps.len())?, idx(f[1], m)?, idx(f[2], n)?);
            outcomes[k].phi[i][j] = rational::parse(f[3])?;
            outcomes[k].price[i] = rational::parse(f[4])?;
        }
        Self::new(group, rational::parse(&header.delta)?, header.setting, reps.into_iter().zip(outcomes).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    group: GroupKind,
    m: usize,
    n: usize,
    delta: String,
    setting: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elements: Option<Vec<Permutation>>,
    representatives: Vec<String>,
}

impl Rule for Mechanism {
    fn dims(&self) -> (usize, usize) {
        (self.group.m, self.group.n)
    }

    fn outcome(&self, v: &TypeProfile) -> Result<Outcome> {
        let c = self.group.canonical(v);
        let o = self.table.get(&c).ok_or_else(|| Error::UnknownProfile(profile_to_string(v)))?;
        let s = self.group.transporter(&c, v).expect("canonical form lies in the orbit");
        Ok(if s.is_identity() { o.clone() } else { s.apply_outcome(o) })
    }
}

/// A rule given by a closure (handy for hand-built mechanisms in tests).
pub struct FnRule<F> {
    pub m: usize,
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&TypeProfile) -> Outcome> Rule for FnRule<F> {
    fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }
    fn outcome(&self, v: &TypeProfile) -> Result<Outcome> {
        Ok((self.f)(v))
    }
}
