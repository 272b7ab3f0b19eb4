//! Executable lotteries for marginal allocation matrices: split bidders
//! into unit-demand copies, pad to a doubly stochastic square matrix,
//! decompose it into permutation matrices, and sample.

use num_traits::{One, Signed, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Bound, Categorical};
use crate::rational::{self, Q};

/// Square doubly stochastic matrix built from a marginal matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padded {
    /// `Φ′`, `N × N`.
    pub matrix: Vec<Vec<Q>>,
    /// The marginals split across copies, `N × N` with zeros outside real cells.
    pub split: Vec<Vec<Q>>,
    /// Bidder owning each row (`None` for dummy rows).
    pub row_owner: Vec<Option<usize>>,
    /// Item of each column (`None` for dummy columns).
    pub col_item: Vec<Option<usize>>,
}

fn row_sums_ok(phi: &[Vec<Q>], demands: &[Bound<u32>]) -> Result<()> {
    let n = phi.first().map_or(0, |r| r.len());
    if phi.len() != demands.len() || phi.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("marginal matrix shape".into()));
    }
    for (i, row) in phi.iter().enumerate() {
        if row.iter().any(|x| x.is_negative() || x > &Q::one()) {
            return Err(Error::InfeasibleMarginals(format!("entry outside [0,1] in row {i}")));
        }
        if let Bound::Finite(c) = demands[i] {
            let s: Q = row.iter().sum();
            if s > rational::qi(c as i64) {
                return Err(Error::InfeasibleMarginals(format!("bidder {i} receives {} > {c} items", rational::format(&s))));
            }
        }
    }
    for j in 0..n {
        let s: Q = phi.iter().map(|r| &r[j]).sum();
        if s > Q::one() {
            return Err(Error::InfeasibleMarginals(format!("item {j} allocated {} times", rational::format(&s))));
        }
    }
    Ok(())
}

/// Replaces bidder `i` by `min(n, C_i)` unit-demand copies (water-filling
/// the row across them in item order) and completes the result greedily,
/// row by row, into a doubly stochastic square matrix.
pub fn pad(phi: &[Vec<Q>], demands: &[Bound<u32>]) -> Result<Padded> {
    row_sums_ok(phi, demands)?;
    let n = phi.first().map_or(0, |r| r.len());
    let mut rows: Vec<Vec<Q>> = Vec::new();
    let mut row_owner = Vec::new();
    for (i, row) in phi.iter().enumerate() {
        let copies = match demands[i] {
            Bound::Finite(c) => (c as usize).min(n),
            Bound::Unbounded => n,
        };
        let start = rows.len();
        for _ in 0..copies {
            rows.push(vec![Q::zero(); n]);
            row_owner.push(Some(i));
        }
        let mut cur = start;
        let mut room = Q::one();
        for (j, x) in row.iter().enumerate() {
            let mut left = x.clone();
            while left.is_positive() {
                if cur >= rows.len() {
                    return Err(Error::InfeasibleMarginals(format!("bidder {i} has no copy left")));
                }
                let take = if left <= room { left.clone() } else { room.clone() };
                rows[cur][j] += &take;
                room -= &take;
                left -= &take;
                if room.is_zero() {
                    cur += 1;
                    room = Q::one();
                }
            }
        }
    }
    let size = rows.len().max(n);
    let mut split = vec![vec![Q::zero(); size]; size];
    for (r, row) in rows.iter().enumerate() {
        split[r][..n].clone_from_slice(row);
    }
    row_owner.resize(size, None);
    let col_item = (0..size).map(|c| (c < n).then_some(c)).collect();
    let mut matrix = split.clone();
    let mut col_sum: Vec<Q> = (0..size).map(|c| matrix.iter().map(|r| &r[c]).sum()).collect();
    for row in matrix.iter_mut() {
        let mut row_sum: Q = row.iter().sum();
        for (c, cell) in row.iter_mut().enumerate() {
            let room_r = Q::one() - &row_sum;
            let room_c = Q::one() - &col_sum[c];
            let add = if room_r < room_c { room_r } else { room_c };
            if add.is_positive() {
                *cell += &add;
                row_sum += &add;
                col_sum[c] += &add;
            }
        }
    }
    check_doubly_stochastic(&matrix)?;
    Ok(Padded { matrix, split, row_owner, col_item })
}

pub fn check_doubly_stochastic(a: &[Vec<Q>]) -> Result<()> {
    let size = a.len();
    if a.iter().any(|r| r.len() != size) {
        return Err(Error::NotDoublyStochastic("matrix is not square".into()));
    }
    if a.iter().flatten().any(|x| x.is_negative()) {
        return Err(Error::NotDoublyStochastic("negative entry".into()));
    }
    for (r, row) in a.iter().enumerate() {
        if row.iter().sum::<Q>() != Q::one() {
            return Err(Error::NotDoublyStochastic(format!("row {r} does not sum to 1")));
        }
    }
    for c in 0..size {
        if a.iter().map(|r| &r[c]).sum::<Q>() != Q::one() {
            return Err(Error::NotDoublyStochastic(format!("column {c} does not sum to 1")));
        }
    }
    Ok(())
}

/// `Σ_k weight_k · P_k`; `perms[k][r]` is the column matched to row `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BvnDecomposition {
    pub terms: Vec<(Q, Vec<usize>)>,
}

impl BvnDecomposition {
    pub fn reconstruct(&self) -> Vec<Vec<Q>> {
        let size = self.terms.first().map_or(0, |t| t.1.len());
        let mut a = vec![vec![Q::zero(); size]; size];
        for (w, p) in &self.terms {
            for (r, &c) in p.iter().enumerate() {
                a[r][c] += w;
            }
        }
        a
    }
}

/// Augmenting-path search (Kuhn) restricted to positive cells.
fn try_kuhn(r: usize, a: &[Vec<Q>], seen: &mut [bool], match_col: &mut [Option<usize>], banned_row: usize, banned_col: usize) -> bool {
    for c in 0..a.len() {
        if c == banned_col || seen[c] || !a[r][c].is_positive() {
            continue;
        }
        seen[c] = true;
        let free = match match_col[c] {
            None => true,
            Some(r2) => r2 != banned_row && try_kuhn(r2, a, seen, match_col, banned_row, banned_col),
        };
        if free {
            match_col[c] = Some(r);
            return true;
        }
    }
    false
}

/// Perfect matching on the positive cells that uses cell `(r0, c0)`.
fn matching_through(a: &[Vec<Q>], r0: usize, c0: usize) -> Option<Vec<usize>> {
    let size = a.len();
    let mut match_col: Vec<Option<usize>> = vec![None; size];
    match_col[c0] = Some(r0);
    for r in 0..size {
        if r == r0 {
            continue;
        }
        let mut seen = vec![false; size];
        if !try_kuhn(r, a, &mut seen, &mut match_col, r0, c0) {
            return None;
        }
    }
    let mut perm = vec![0; size];
    for (c, r) in match_col.iter().enumerate() {
        perm[r.expect("perfect")] = c;
    }
    Some(perm)
}

/// Exact Birkhoff–von Neumann decomposition. Each step takes the smallest
/// positive cell (first in row-major order on ties), covers it by a perfect
/// matching of the positive support, and subtracts that cell's value along
/// the matching, which zeroes at least that cell.
pub fn decompose(a: &[Vec<Q>]) -> Result<BvnDecomposition> {
    check_doubly_stochastic(a)?;
    let mut rest = a.to_vec();
    let mut terms = Vec::new();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for (r, row) in rest.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                if x.is_positive() && best.is_none_or(|(br, bc)| x < &rest[br][bc]) {
                    best = Some((r, c));
                }
            }
        }
        let Some((r0, c0)) = best else { break };
        let perm = matching_through(&rest, r0, c0)
            .ok_or_else(|| Error::NotDoublyStochastic("positive support has no perfect matching".into()))?;
        let w = perm.iter().enumerate().map(|(r, &c)| &rest[r][c]).min().expect("non-empty").clone();
        for (r, &c) in perm.iter().enumerate() {
            rest[r][c] -= &w;
        }
        terms.push((w, perm));
    }
    Ok(BvnDecomposition { terms })
}

/// A sampler of deterministic feasible assignments whose marginals are
/// exactly the input matrix.
#[derive(Debug, Clone)]
pub struct Lottery {
    pub m: usize,
    pub n: usize,
    pub padded: Padded,
    pub decomposition: BvnDecomposition,
    terms: Categorical,
    /// Keep probability `Φ_ij/Φ′_ij` for each real cell (per copy row).
    keep: Vec<Vec<Option<Categorical>>>,
}

impl Lottery {
    pub fn new(phi: &[Vec<Q>], demands: &[Bound<u32>]) -> Result<Self> {
        let padded = pad(phi, demands)?;
        let decomposition = decompose(&padded.matrix)?;
        let weights: Vec<Q> = decomposition.terms.iter().map(|t| t.0.clone()).collect();
        let keep = padded
            .matrix
            .iter()
            .zip(&padded.split)
            .map(|(row, srow)| {
                row.iter()
                    .zip(srow)
                    .map(|(x, s)| {
                        (x.is_positive() && s.is_positive()).then(|| {
                            let k = s / x;
                            Categorical::new(&[k.clone(), Q::one() - k])
                        })
                    })
                    .collect()
            })
            .collect();
        Ok(Self { m: phi.len(), n: phi.first().map_or(0, |r| r.len()), padded, decomposition, terms: Categorical::new(&weights), keep })
    }

    /// Items won by each bidder in one draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let (_, perm) = &self.decomposition.terms[self.terms.sample(rng)];
        let mut out = vec![Vec::new(); self.m];
        for (r, &c) in perm.iter().enumerate() {
            if let (Some(i), Some(j)) = (self.padded.row_owner[r], self.padded.col_item[c]) {
                if let Some(k) = &self.keep[r][c] {
                    if k.sample(rng) == 0 {
                        out[i].push(j);
                    }
                }
            }
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }

    /// `Pr[i gets j]` computed symbolically from the decomposition.
    pub fn exact_marginals(&self) -> Vec<Vec<Q>> {
        let mut out = vec![vec![Q::zero(); self.n]; self.m];
        for (w, perm) in &self.decomposition.terms {
            for (r, &c) in perm.iter().enumerate() {
                if let (Some(i), Some(j)) = (self.padded.row_owner[r], self.padded.col_item[c]) {
                    let x = &self.padded.matrix[r][c];
                    if x.is_positive() {
                        out[i][j] += w * &self.padded.split[r][c] / x;
                    }
                }
            }
        }
        out
    }

    /// Side length of the padded matrix.
    pub fn size(&self) -> usize {
        self.padded.matrix.len()
    }
}

/// Draws one assignment from a lottery.
pub fn sample_assignment<R: Rng + ?Sized>(lottery: &Lottery, rng: &mut R) -> Vec<Vec<usize>> {
    lottery.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_one_by_one() {
        let p = pad(&[vec![q(1, 1)]], &[Bound::Finite(1)]).unwrap();
        assert_eq!(p.matrix, vec![vec![q(1, 1)]]);
        let d = decompose(&p.matrix).unwrap();
        assert_eq!(d.terms.len(), 1);
    }

    #[test]
    fn dummy_row_added() {
        let p = pad(&[vec![q(1, 2), q(1, 2)]], &[Bound::Finite(1)]).unwrap();
        assert_eq!(p.matrix.len(), 2);
        assert_eq!(p.row_owner, vec![Some(0), None]);
        check_doubly_stochastic(&p.matrix).unwrap();
    }

    #[test]
    fn half_matrix_two_terms() {
        let h = q(1, 2);
        let d = decompose(&[vec![h.clone(), h.clone()], vec![h.clone(), h.clone()]]).unwrap();
        assert_eq!(d.terms.len(), 2);
        assert!(d.terms.iter().all(|t| t.0 == h));
    }

    #[test]
    fn copies_respect_unit_rows() {
        let phi = vec![vec![q(2, 3), q(2, 3), q(1, 3)]];
        let p = pad(&phi, &[Bound::Finite(2)]).unwrap();
        for r in 0..2 {
            assert!(p.split[r].iter().sum::<Q>() <= q(1, 1));
        }
        assert_eq!(p.row_owner.iter().filter(|o| o.is_some()).count(), 2);
    }

    #[test]
    fn rejects_infeasible() {
        let phi = vec![vec![q(2, 3)], vec![q(2, 3)]];
        assert!(matches!(pad(&phi, &[Bound::Finite(1), Bound::Finite(1)]), Err(Error::InfeasibleMarginals(_))));
        assert!(matches!(decompose(&[vec![q(1, 2)]]), Err(Error::NotDoublyStochastic(_))));
    }

    #[test]
    fn zero_cell_never_sampled() {
        let phi = vec![vec![q(0, 1), q(1, 2)], vec![q(3, 4), q(1, 4)]];
        let l = Lottery::new(&phi, &[Bound::Finite(1), Bound::Finite(1)]).unwrap();
        assert_eq!(l.exact_marginals(), phi);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let a = l.sample(&mut rng);
            assert!(!a[0].contains(&0));
            assert!(a.iter().all(|x| x.len() <= 1));
        }
    }
}
