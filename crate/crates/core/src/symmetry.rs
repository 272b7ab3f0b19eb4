//! Bidder/item permutations, symmetry groups and class representatives.
//!
//! A permutation `σ = (σ1, σ2)` acts on a profile by `w[σ1(i)][σ2(j)] = v[i][j]`.
//! The two groups the succinct formulations rely on (all bidder permutations,
//! all item permutations) are handled combinatorially; the remaining kinds
//! fall back to explicit element lists behind an enumeration cap.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mechanism::{Outcome, Rule};
use crate::model::{DiscreteDistribution, DistKind, TypeProfile, ValueVector};
use crate::rational::{self, Q};

/// Largest group (or stabilizer) we are willing to list element by element.
pub const GROUP_CAP: u128 = 3_628_800;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permutation {
    pub bidders: Vec<usize>,
    pub items: Vec<usize>,
}

fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &x in p {
        if x >= p.len() || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &x) in p.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

/// Advances `v` to the next lexicographic arrangement; `false` after the last.
pub fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn factorial_u128(k: usize) -> u128 {
    (2..=k as u128).fold(1u128, |a, b| a.saturating_mul(b))
}

/// `k! / Π mult!` for the multiset `xs`.
fn multiset_arrangements<T: Ord>(xs: &[T]) -> u128 {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for x in xs {
        *counts.entry(x).or_insert(0) += 1;
    }
    counts.values().fold(factorial_u128(xs.len()), |acc, &c| acc / factorial_u128(c))
}

fn columns(v: &TypeProfile) -> Vec<Vec<Q>> {
    let n = v.first().map_or(0, |x| x.len());
    (0..n).map(|j| v.iter().map(|row| row[j].clone()).collect()).collect()
}

fn from_columns(cols: &[Vec<Q>], m: usize) -> TypeProfile {
    (0..m).map(|i| cols.iter().map(|c| c[i].clone()).collect()).collect()
}

/// Maps each position of `from` to a distinct position of `to` holding an
/// equal element; `None` if the multisets differ.
fn matching_positions<T: PartialEq>(from: &[T], to: &[T]) -> Option<Vec<usize>> {
    let mut used = vec![false; to.len()];
    let mut out = Vec::with_capacity(from.len());
    for x in from {
        let k = (0..to.len()).find(|&k| !used[k] && &to[k] == x)?;
        used[k] = true;
        out.push(k);
    }
    Some(out)
}

impl Permutation {
    pub fn identity(m: usize, n: usize) -> Self {
        Self { bidders: (0..m).collect(), items: (0..n).collect() }
    }

    pub fn new(bidders: Vec<usize>, items: Vec<usize>) -> Result<Self> {
        if !is_bijection(&bidders) || !is_bijection(&items) {
            return Err(Error::Invalid("permutation components must be bijections".into()));
        }
        Ok(Self { bidders, items })
    }

    pub fn swap_items(m: usize, n: usize, a: usize, b: usize) -> Self {
        let mut p = Self::identity(m, n);
        p.items.swap(a, b);
        p
    }

    pub fn swap_bidders(m: usize, n: usize, a: usize, b: usize) -> Self {
        let mut p = Self::identity(m, n);
        p.bidders.swap(a, b);
        p
    }

    pub fn is_identity(&self) -> bool {
        self.bidders.iter().enumerate().all(|(i, &x)| i == x) && self.items.iter().enumerate().all(|(j, &x)| j == x)
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            bidders: other.bidders.iter().map(|&i| self.bidders[i]).collect(),
            items: other.items.iter().map(|&j| self.items[j]).collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        Self { bidders: invert(&self.bidders), items: invert(&self.items) }
    }

    pub fn map_cell(&self, i: usize, j: usize) -> (usize, usize) {
        (self.bidders[i], self.items[j])
    }

    /// `σ(v)`: `w[σ1(i)][σ2(j)] = v[i][j]`.
    pub fn apply(&self, v: &TypeProfile) -> Result<TypeProfile> {
        if v.len() != self.bidders.len() || v.iter().any(|x| x.len() != self.items.len()) {
            return Err(Error::DimensionMismatch(format!(
                "permutation on {}x{} applied to a {}x{} profile",
                self.bidders.len(),
                self.items.len(),
                v.len(),
                v.first().map_or(0, |x| x.len())
            )));
        }
        Ok(self.apply_matrix(v))
    }

    /// Moves entry `(i, j)` to `(σ1(i), σ2(j))`.
    pub fn apply_matrix<T: Clone>(&self, a: &[Vec<T>]) -> Vec<Vec<T>> {
        let mut out = a.to_vec();
        for (i, row) in a.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                out[self.bidders[i]][self.items[j]] = x.clone();
            }
        }
        out
    }

    /// Moves entry `i` to `σ1(i)`.
    pub fn apply_bidder_vec<T: Clone>(&self, a: &[T]) -> Vec<T> {
        let mut out = a.to_vec();
        for (i, x) in a.iter().enumerate() {
            out[self.bidders[i]] = x.clone();
        }
        out
    }

    /// Moves entry `j` of a single value vector to `σ2(j)`.
    pub fn apply_item_vec<T: Clone>(&self, a: &[T]) -> Vec<T> {
        let mut out = a.to_vec();
        for (j, x) in a.iter().enumerate() {
            out[self.items[j]] = x.clone();
        }
        out
    }

    /// `σ` applied to a mechanism outcome (allocations and prices travel
    /// with their bidders and items).
    pub fn apply_outcome(&self, o: &Outcome) -> Outcome {
        Outcome { phi: self.apply_matrix(&o.phi), price: self.apply_bidder_vec(&o.price) }
    }
}

/// All permutations of `0..k` in lexicographic order.
fn all_perms(k: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..k).collect();
    let mut out = vec![p.clone()];
    while next_permutation(&mut p) {
        out.push(p.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    Trivial,
    AllBidders,
    AllItems,
    Product,
    Custom,
}

/// A subgroup of `S_m × S_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryGroup {
    pub kind: GroupKind,
    pub m: usize,
    pub n: usize,
    /// Explicit elements (custom groups only).
    elements: Vec<Permutation>,
}

/// Orbits of cells `(i, j)` and of bidders under the stabilizer of a profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellClasses {
    pub cell_class: Vec<Vec<usize>>,
    pub class_cells: Vec<Vec<(usize, usize)>>,
    pub bidder_class: Vec<usize>,
    pub class_bidders: Vec<Vec<usize>>,
}

impl CellClasses {
    fn from_keys(m: usize, n: usize, cell_key: impl Fn(usize, usize) -> (usize, usize), bidder_key: impl Fn(usize) -> usize) -> Self {
        let mut cell_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut cell_class = vec![vec![0; n]; m];
        let mut class_cells: Vec<Vec<(usize, usize)>> = Vec::new();
        for (i, row) in cell_class.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                let key = cell_key(i, j);
                let id = *cell_ids.entry(key).or_insert_with(|| {
                    class_cells.push(Vec::new());
                    class_cells.len() - 1
                });
                class_cells[id].push((i, j));
                *slot = id;
            }
        }
        let mut b_ids: BTreeMap<usize, usize> = BTreeMap::new();
        let mut bidder_class = vec![0; m];
        let mut class_bidders: Vec<Vec<usize>> = Vec::new();
        for (i, slot) in bidder_class.iter_mut().enumerate() {
            let id = *b_ids.entry(bidder_key(i)).or_insert_with(|| {
                class_bidders.push(Vec::new());
                class_bidders.len() - 1
            });
            class_bidders[id].push(i);
            *slot = id;
        }
        Self { cell_class, class_cells, bidder_class, class_bidders }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let nx = self.0[y];
            self.0[y] = r;
            y = nx;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

impl SymmetryGroup {
    pub fn trivial(m: usize, n: usize) -> Self {
        Self { kind: GroupKind::Trivial, m, n, elements: vec![] }
    }

    pub fn all_bidders(m: usize, n: usize) -> Self {
        Self { kind: GroupKind::AllBidders, m, n, elements: vec![] }
    }

    pub fn all_items(m: usize, n: usize) -> Self {
        Self { kind: GroupKind::AllItems, m, n, elements: vec![] }
    }

    pub fn product(m: usize, n: usize) -> Self {
        Self { kind: GroupKind::Product, m, n, elements: vec![] }
    }

    /// A group given by its full element list. Rejects sets that are not
    /// closed under composition and inverse (they are never closed up).
    pub fn custom(m: usize, n: usize, elements: Vec<Permutation>) -> Result<Self> {
        for p in &elements {
            if p.bidders.len() != m || p.items.len() != n || !is_bijection(&p.bidders) || !is_bijection(&p.items) {
                return Err(Error::Invalid("custom group element is not a permutation of the right size".into()));
            }
        }
        let set: BTreeSet<Permutation> = elements.into_iter().collect();
        if !set.contains(&Permutation::identity(m, n)) {
            return Err(Error::NotASubgroup("identity missing".into()));
        }
        for a in &set {
            if !set.contains(&a.inverse()) {
                return Err(Error::NotASubgroup(format!("inverse of {a:?} missing")));
            }
            for b in &set {
                if !set.contains(&a.compose(b)) {
                    return Err(Error::NotASubgroup(format!("{a:?} ∘ {b:?} missing")));
                }
            }
        }
        Ok(Self { kind: GroupKind::Custom, m, n, elements: set.into_iter().collect() })
    }

    pub fn order(&self) -> u128 {
        match self.kind {
            GroupKind::Trivial => 1,
            GroupKind::AllBidders => factorial_u128(self.m),
            GroupKind::AllItems => factorial_u128(self.n),
            GroupKind::Product => factorial_u128(self.m).saturating_mul(factorial_u128(self.n)),
            GroupKind::Custom => self.elements.len() as u128,
        }
    }

    pub fn contains(&self, p: &Permutation) -> bool {
        if p.bidders.len() != self.m || p.items.len() != self.n {
            return false;
        }
        let id_b = p.bidders.iter().enumerate().all(|(i, &x)| i == x);
        let id_i = p.items.iter().enumerate().all(|(j, &x)| j == x);
        match self.kind {
            GroupKind::Trivial => id_b && id_i,
            GroupKind::AllBidders => id_i,
            GroupKind::AllItems => id_b,
            GroupKind::Product => true,
            GroupKind::Custom => self.elements.binary_search(p).is_ok(),
        }
    }

    /// Every element, in a fixed order. Fails above `cap` elements.
    pub fn elements(&self, cap: u128) -> Result<Vec<Permutation>> {
        let count = self.order();
        if count > cap {
            return Err(Error::ExplosionGuard { count, cap });
        }
        let (m, n) = (self.m, self.n);
        Ok(match self.kind {
            GroupKind::Trivial => vec![Permutation::identity(m, n)],
            GroupKind::AllBidders => all_perms(m).into_iter().map(|b| Permutation { bidders: b, items: (0..n).collect() }).collect(),
            GroupKind::AllItems => all_perms(n).into_iter().map(|it| Permutation { bidders: (0..m).collect(), items: it }).collect(),
            GroupKind::Product => {
                let items = all_perms(n);
                all_perms(m)
                    .into_iter()
                    .flat_map(|b| items.iter().map(move |it| Permutation { bidders: b.clone(), items: it.clone() }))
                    .collect()
            }
            GroupKind::Custom => self.elements.clone(),
        })
    }

    /// A generating set (adjacent transpositions for the full groups).
    pub fn generators(&self) -> Vec<Permutation> {
        let (m, n) = (self.m, self.n);
        let bid = (0..m.saturating_sub(1)).map(|a| Permutation::swap_bidders(m, n, a, a + 1));
        let itm = (0..n.saturating_sub(1)).map(|a| Permutation::swap_items(m, n, a, a + 1));
        match self.kind {
            GroupKind::Trivial => vec![],
            GroupKind::AllBidders => bid.collect(),
            GroupKind::AllItems => itm.collect(),
            GroupKind::Product => bid.chain(itm).collect(),
            GroupKind::Custom => self.elements.clone(),
        }
    }

    /// `Pr_D[v] = Pr_D[σ(v)]` for every `σ` in the group.
    pub fn is_invariant(&self, dist: &DiscreteDistribution) -> bool {
        self.generators().iter().all(|g| has_symmetry(dist, g))
    }

    /// Lexicographically least element of the orbit of `v`.
    pub fn canonical(&self, v: &TypeProfile) -> TypeProfile {
        match self.kind {
            GroupKind::Trivial => v.clone(),
            GroupKind::AllBidders => {
                let mut w = v.clone();
                w.sort();
                w
            }
            GroupKind::AllItems => {
                let mut cols = columns(v);
                cols.sort();
                from_columns(&cols, v.len())
            }
            GroupKind::Product => {
                let mut best: Option<TypeProfile> = None;
                for b in all_perms(self.m) {
                    let rows: TypeProfile = b.iter().map(|&i| v[i].clone()).collect();
                    let mut cols = columns(&rows);
                    cols.sort();
                    let cand = from_columns(&cols, v.len());
                    if best.as_ref().is_none_or(|x| &cand < x) {
                        best = Some(cand);
                    }
                }
                best.expect("non-empty group")
            }
            GroupKind::Custom => self.elements.iter().map(|p| p.apply_matrix(v)).min().expect("identity present"),
        }
    }

    /// Some `σ` in the group with `σ(from) = to`.
    pub fn transporter(&self, from: &TypeProfile, to: &TypeProfile) -> Option<Permutation> {
        let (m, n) = (self.m, self.n);
        match self.kind {
            GroupKind::Trivial => (from == to).then(|| Permutation::identity(m, n)),
            GroupKind::AllBidders => {
                let b = matching_positions(from, to)?;
                Some(Permutation { bidders: b, items: (0..n).collect() })
            }
            GroupKind::AllItems => {
                let (cf, ct) = (columns(from), columns(to));
                let it = matching_positions(&cf, &ct)?;
                Some(Permutation { bidders: (0..m).collect(), items: it })
            }
            GroupKind::Product => {
                for b in all_perms(m) {
                    let p = Permutation { bidders: b, items: (0..n).collect() };
                    let rows = p.apply_matrix(from);
                    if let Some(it) = matching_positions(&columns(&rows), &columns(to)) {
                        return Some(Permutation { bidders: p.bidders, items: it });
                    }
                }
                None
            }
            GroupKind::Custom => self.elements.iter().find(|p| &p.apply_matrix(from) == to).cloned(),
        }
    }

    /// Distinct members of the orbit of `w`, sorted. Fails above `cap`.
    pub fn orbit(&self, w: &TypeProfile, cap: u128) -> Result<Vec<TypeProfile>> {
        let count = self.orbit_size(w);
        if count > cap {
            return Err(Error::ExplosionGuard { count, cap });
        }
        let m = w.len();
        Ok(match self.kind {
            GroupKind::Trivial => vec![w.clone()],
            GroupKind::AllBidders => {
                let mut rows = w.clone();
                rows.sort();
                let mut out = vec![rows.clone()];
                while next_permutation(&mut rows) {
                    out.push(rows.clone());
                }
                out
            }
            GroupKind::AllItems => {
                let mut cols = columns(w);
                cols.sort();
                let mut out = vec![from_columns(&cols, m)];
                while next_permutation(&mut cols) {
                    out.push(from_columns(&cols, m));
                }
                out.sort();
                out
            }
            GroupKind::Product | GroupKind::Custom => {
                let set: BTreeSet<TypeProfile> = self.elements(GROUP_CAP)?.iter().map(|p| p.apply_matrix(w)).collect();
                set.into_iter().collect()
            }
        })
    }

    pub fn orbit_size(&self, w: &TypeProfile) -> u128 {
        match self.kind {
            GroupKind::Trivial => 1,
            GroupKind::AllBidders => multiset_arrangements(w),
            GroupKind::AllItems => multiset_arrangements(&columns(w)),
            GroupKind::Product | GroupKind::Custom => match self.elements(GROUP_CAP) {
                Ok(els) => els.iter().map(|p| p.apply_matrix(w)).collect::<BTreeSet<_>>().len() as u128,
                Err(_) => u128::MAX,
            },
        }
    }

    /// `|Stab(w)| = |G| / |orbit(w)|`.
    pub fn stabilizer_order(&self, w: &TypeProfile) -> u128 {
        self.order() / self.orbit_size(w)
    }

    /// Elements fixing `w`.
    pub fn stabilizer(&self, w: &TypeProfile, cap: u128) -> Result<Vec<Permutation>> {
        Ok(self.elements(cap)?.into_iter().filter(|p| &p.apply_matrix(w) == w).collect())
    }

    /// Cell and bidder orbits under the stabilizer of `w`: cells in one class
    /// must carry equal allocations in any group-symmetric mechanism.
    pub fn cell_classes(&self, w: &TypeProfile) -> Result<CellClasses> {
        let (m, n) = (self.m, self.n);
        match self.kind {
            GroupKind::Trivial => Ok(CellClasses::from_keys(m, n, |i, j| (i, j), |i| i)),
            GroupKind::AllBidders => {
                let first = |i: usize| (0..m).find(|&k| w[k] == w[i]).expect("self match");
                Ok(CellClasses::from_keys(m, n, |i, j| (first(i), j), first))
            }
            GroupKind::AllItems => {
                let cols = columns(w);
                let first = |j: usize| (0..n).find(|&k| cols[k] == cols[j]).expect("self match");
                Ok(CellClasses::from_keys(m, n, |i, j| (i, first(j)), |i| i))
            }
            GroupKind::Product | GroupKind::Custom => {
                let stab = self.stabilizer(w, GROUP_CAP)?;
                let mut cells = UnionFind((0..m * n).collect());
                let mut bids = UnionFind((0..m).collect());
                for p in &stab {
                    for i in 0..m {
                        bids.union(i, p.bidders[i]);
                        for j in 0..n {
                            let (a, b) = p.map_cell(i, j);
                            cells.union(i * n + j, a * n + b);
                        }
                    }
                }
                let cell_root: Vec<usize> = (0..m * n).map(|c| cells.find(c)).collect();
                let bid_root: Vec<usize> = (0..m).map(|i| bids.find(i)).collect();
                Ok(CellClasses::from_keys(m, n, |i, j| (cell_root[i * n + j], 0), |i| bid_root[i]))
            }
        }
    }
}

/// `Pr_D[v] = Pr_D[σ(v)]` for all `v`.
pub fn has_symmetry(dist: &DiscreteDistribution, sigma: &Permutation) -> bool {
    let (m, n) = (dist.num_bidders(), dist.num_items());
    if sigma.bidders.len() != m || sigma.items.len() != n {
        return false;
    }
    match &dist.kind {
        DistKind::Product(fs) => {
            // σ(D) is again a product whose factor at σ1(i) is factor i with
            // items permuted; product measures agree iff their factors do
            (0..m).all(|i| fs[i].permute_items(&sigma.items) == fs[sigma.bidders[i]])
        }
        DistKind::Joint(e) => e.iter().all(|(v, p)| &dist.prob(&sigma.apply_matrix(v)) == p),
    }
}

/// One representative per equivalence class with its exact class mass.
#[derive(Debug, Clone)]
pub struct RepresentativeSet {
    pub reps: Vec<TypeProfile>,
    /// `Pr[∪_σ σ(w)]` for each representative.
    pub weights: Vec<Q>,
    pub orbit_sizes: Vec<u128>,
    index: HashMap<TypeProfile, usize>,
}

impl RepresentativeSet {
    fn from_parts(reps: Vec<TypeProfile>, weights: Vec<Q>, orbit_sizes: Vec<u128>) -> Self {
        let index = reps.iter().enumerate().map(|(k, r)| (r.clone(), k)).collect();
        Self { reps, weights, orbit_sizes, index }
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    /// Index of an exact representative.
    pub fn position(&self, rep: &TypeProfile) -> Option<usize> {
        self.index.get(rep).copied()
    }

    /// CSV dump: `class_id,weight,orbit_size,profile` with the profile as
    /// `;`-separated bidders of `|`-separated values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class_id,weight,orbit_size,profile\n");
        for (k, r) in self.reps.iter().enumerate() {
            let _ = writeln!(s, "{k},{},{},{}", rational::format(&self.weights[k]), self.orbit_sizes[k], profile_to_string(r));
        }
        s
    }
}

pub fn profile_to_string(v: &TypeProfile) -> String {
    v.iter().map(|row| row.iter().map(rational::format).collect::<Vec<_>>().join("|")).collect::<Vec<_>>().join(";")
}

pub fn profile_from_string(s: &str) -> Result<TypeProfile> {
    s.split(';').map(|row| row.split('|').map(rational::parse).collect::<Result<Vec<_>>>()).collect()
}

/// Canonical representatives `E` of the profile classes of `dist` under
/// `group`, with exact class weights. For all-bidder and all-item groups the
/// classes are generated combinatorially; other groups canonicalize the
/// expanded support. Fails with `ExplosionGuard` above `cap` classes.
pub fn enumerate_representatives(dist: &DiscreteDistribution, group: &SymmetryGroup, cap: u128) -> Result<RepresentativeSet> {
    let (m, n) = (dist.num_bidders(), dist.num_items());
    if group.m != m || group.n != n {
        return Err(Error::DimensionMismatch("group and distribution sizes differ".into()));
    }
    if !group.is_invariant(dist) {
        return Err(Error::MissingRequiredSymmetry(format!("distribution is not invariant under the {:?} group", group.kind)));
    }
    let guard = |count: usize| -> Result<()> {
        if count as u128 > cap {
            Err(Error::ExplosionGuard { count: count as u128, cap })
        } else {
            Ok(())
        }
    };
    let mut reps: Vec<TypeProfile> = Vec::new();
    match (&dist.kind, group.kind) {
        (DistKind::Product(fs), GroupKind::AllBidders) => {
            // multisets of size m over the common type list
            let types: Vec<&ValueVector> = fs[0].types().collect();
            let mut idx = vec![0usize; m];
            loop {
                reps.push(idx.iter().map(|&k| types[k].clone()).collect());
                guard(reps.len())?;
                // next non-decreasing index tuple
                let mut p = m;
                while p > 0 && idx[p - 1] == types.len() - 1 {
                    p -= 1;
                }
                if p == 0 {
                    break;
                }
                idx[p - 1] += 1;
                let v = idx[p - 1];
                for x in idx.iter_mut().skip(p) {
                    *x = v;
                }
            }
        }
        (DistKind::Product(fs), GroupKind::AllItems) => {
            // rows chosen bidder by bidder; within each block of columns that
            // agree on all earlier rows the new row must be non-decreasing
            let mut partial: Vec<TypeProfile> = vec![vec![]];
            for f in fs {
                let mut next = Vec::new();
                for prefix in &partial {
                    for v in f.types() {
                        let ok = (1..n).all(|j| {
                            let same_block = prefix.iter().all(|row| row[j - 1] == row[j]);
                            !same_block || v[j - 1] <= v[j]
                        });
                        if ok {
                            let mut w = prefix.clone();
                            w.push(v.clone());
                            next.push(w);
                        }
                    }
                }
                guard(next.len())?;
                partial = next;
            }
            reps = partial;
        }
        _ => {
            let support = dist.expand(cap.saturating_mul(factorial_u128(m).saturating_mul(factorial_u128(n))))?;
            let set: BTreeSet<TypeProfile> = support.iter().map(|(v, _)| group.canonical(v)).collect();
            guard(set.len())?;
            reps = set.into_iter().collect();
        }
    }
    reps.sort();
    let mut weights = Vec::with_capacity(reps.len());
    let mut sizes = Vec::with_capacity(reps.len());
    for r in &reps {
        let size = group.orbit_size(r);
        // invariance makes every orbit member equally likely
        weights.push(dist.prob(r) * Q::from_integer(size.into()));
        sizes.push(size);
    }
    Ok(RepresentativeSet::from_parts(reps, weights, sizes))
}

/// `E_i`: bidder `i`'s support types sorted non-increasingly (one per item
/// permutation class), with the class mass.
pub fn bidder_representatives(dist: &DiscreteDistribution, i: usize) -> Vec<(ValueVector, Q)> {
    let mut map: BTreeMap<ValueVector, Q> = BTreeMap::new();
    for (v, p) in dist.marginal(i).support() {
        let mut s = v.clone();
        s.sort_by(|a, b| b.cmp(a));
        *map.entry(s).or_insert_with(Q::zero) += p;
    }
    // deterministic order: descending vectors listed in reverse-lex order
    let mut out: Vec<_> = map.into_iter().collect();
    out.sort_by(|a, b| b.0.cmp(&a.0));
    out
}

/// Sorts a value vector non-increasingly.
pub fn sort_desc(v: &[Q]) -> ValueVector {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.cmp(a));
    s
}

/// The uniform mixture `G(M)` over `σ(M)`, `σ ∈ G`, evaluated on demand:
/// `G(M)(v) = avg_σ σ(M(σ⁻¹(v)))`. Nothing is materialized up front beyond
/// the group's element list.
#[derive(Debug, Clone)]
pub struct Symmetrized<R> {
    pub inner: R,
    pub group: SymmetryGroup,
    elements: Vec<Permutation>,
}

/// Wraps `rule` as its group-symmetrization.
pub fn symmetrize<R: Rule>(rule: R, group: &SymmetryGroup) -> Result<Symmetrized<R>> {
    let (m, n) = rule.dims();
    if group.m != m || group.n != n {
        return Err(Error::DimensionMismatch("group and mechanism sizes differ".into()));
    }
    if group.kind == GroupKind::Custom {
        // re-verify closure: a non-subgroup mixture does not respect its members
        SymmetryGroup::custom(m, n, group.elements.clone())?;
    }
    let elements = group.elements(GROUP_CAP)?;
    Ok(Symmetrized { inner: rule, group: group.clone(), elements })
}

impl<R: Rule> Rule for Symmetrized<R> {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn outcome(&self, v: &TypeProfile) -> Result<Outcome> {
        let (m, n) = self.dims();
        let mut acc = Outcome::zero(m, n);
        for s in &self.elements {
            let o = s.apply_outcome(&self.inner.outcome(&s.inverse().apply(v)?)?);
            acc.add_assign(&o);
        }
        let k = Q::from_integer((self.elements.len() as u64).into());
        acc.scale(&(Q::one() / k));
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BidderFactor;
    use crate::rational::q;

    fn prof(rows: &[&[i64]]) -> TypeProfile {
        rows.iter().map(|r| r.iter().map(|&x| q(x, 10)).collect()).collect()
    }

    #[test]
    fn apply_matches_definition() {
        let v = prof(&[&[4, 5]]);
        let s = Permutation::swap_items(1, 2, 0, 1);
        assert_eq!(s.apply(&v).unwrap(), prof(&[&[5, 4]]));
        assert_eq!(Permutation::identity(1, 2).apply(&v).unwrap(), v);
        let p = Permutation::new(vec![1, 2, 0], vec![1, 0]).unwrap();
        let w = prof(&[&[1, 2], &[3, 4], &[5, 6]]);
        let pw = p.apply(&w).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(pw[p.bidders[i]][p.items[j]], w[i][j]);
            }
        }
        assert_eq!(p.apply(&p.inverse().apply(&w).unwrap()).unwrap(), w);
        assert!(p.apply(&v).is_err());
    }

    #[test]
    fn custom_rejects_non_subgroup() {
        let s = Permutation::swap_items(1, 3, 0, 1);
        let t = Permutation::swap_items(1, 3, 1, 2);
        let err = SymmetryGroup::custom(1, 3, vec![Permutation::identity(1, 3), s, t]).unwrap_err();
        assert!(matches!(err, Error::NotASubgroup(_)));
    }

    #[test]
    fn k_items_class_count() {
        let f = BidderFactor::iid_items(1, &[(q(1, 2), q(1, 2)), (Q::one(), q(1, 2))]).unwrap();
        let d = DiscreteDistribution::iid(q(1, 2), 2, f).unwrap();
        let e = enumerate_representatives(&d, &SymmetryGroup::all_bidders(2, 1), 1000).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e.weights.iter().cloned().sum::<Q>(), Q::one());
    }

    #[test]
    fn k_bidders_sorted_types() {
        let f = BidderFactor::iid_items(2, &[(q(1, 2), q(1, 2)), (Q::one(), q(1, 2))]).unwrap();
        let d = DiscreteDistribution::iid(q(1, 2), 1, f).unwrap();
        assert_eq!(bidder_representatives(&d, 0).len(), 3);
        let e = enumerate_representatives(&d, &SymmetryGroup::all_items(1, 2), 1000).unwrap();
        assert_eq!(e.len(), 3);
    }

    #[test]
    fn trivial_group_keeps_support() {
        let f = BidderFactor::iid_items(2, &[(q(1, 2), q(1, 3)), (Q::one(), q(2, 3))]).unwrap();
        let d = DiscreteDistribution::iid(q(1, 2), 2, f).unwrap();
        let e = enumerate_representatives(&d, &SymmetryGroup::trivial(2, 2), 1000).unwrap();
        assert_eq!(e.len() as u128, d.support_size());
    }

    #[test]
    fn canonical_is_orbit_minimum() {
        let w = prof(&[&[3, 1, 2], &[1, 1, 0]]);
        for g in [SymmetryGroup::all_bidders(2, 3), SymmetryGroup::all_items(2, 3), SymmetryGroup::product(2, 3)] {
            let orbit = g.orbit(&w, 1000).unwrap();
            assert_eq!(&g.canonical(&w), orbit.iter().min().unwrap());
            assert_eq!(orbit.len() as u128, g.orbit_size(&w));
            for u in &orbit {
                let t = g.transporter(&w, u).unwrap();
                assert!(g.contains(&t));
                assert_eq!(&t.apply(&w).unwrap(), u);
            }
        }
    }

    #[test]
    fn explosion_guard_trips() {
        let f = BidderFactor::iid_items(1, &[(q(1, 2), q(1, 2)), (Q::one(), q(1, 2))]).unwrap();
        let d = DiscreteDistribution::iid(q(1, 2), 6, f).unwrap();
        let err = enumerate_representatives(&d, &SymmetryGroup::all_bidders(6, 1), 3).unwrap_err();
        assert!(matches!(err, Error::ExplosionGuard { .. }));
    }
}
