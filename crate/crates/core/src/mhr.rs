//! Monotone-hazard-rate marginals: quantiles, the truncation threshold,
//! truncate-and-discretize, and the posted-price benchmark.

use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{BidderFactor, Bound, Constraints, SettingKind};
use crate::rational::{self, Q};
use crate::reduction::Estimate;

/// Binary digits kept when cdf values are turned into rationals.
pub const SNAP_BITS: u32 = 40;
const HAZARD_GRID: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ContinuousMarginal {
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Normal(mean, sd) conditioned on being non-negative.
    NormalTruncated { mean: f64, sd: f64 },
    /// Degenerate distribution at `value`.
    Point { value: f64 },
    /// Piecewise-linear cdf through `(value, cdf)` points; 0 before the
    /// first point (which must have cdf 0 unless it sits at 0), 1 after the last.
    Tabulated { points: Vec<(f64, f64)> },
}

impl ContinuousMarginal {
    /// Parses `value,cdf` lines (a header line and `#` comments are skipped).
    pub fn from_table_text(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("line {}: expected 'value,cdf'", k + 1)));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(f)) => points.push((x, f)),
                _ if points.is_empty() => continue,
                _ => return Err(Error::Parse(format!("line {}: not numbers", k + 1))),
            }
        }
        let m = ContinuousMarginal::Tabulated { points };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Invalid(s.to_string()));
        match self {
            ContinuousMarginal::Exponential { rate } if !(*rate > 0.0) => bad("exponential rate must be positive"),
            ContinuousMarginal::Uniform { lo, hi } if !(*lo >= 0.0 && hi > lo) => bad("uniform needs 0 <= lo < hi"),
            ContinuousMarginal::NormalTruncated { sd, mean } if !(*sd > 0.0 && mean.is_finite()) => bad("normal needs sd > 0"),
            ContinuousMarginal::Point { value } if !(*value >= 0.0) => bad("point mass must be non-negative"),
            ContinuousMarginal::Tabulated { points } => {
                if points.len() < 2 {
                    return bad("tabulated cdf needs at least two points");
                }
                if points[0].0 < 0.0 || (points[0].0 > 0.0 && points[0].1 != 0.0) {
                    return bad("tabulated cdf must start at 0");
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                        return bad("tabulated cdf must be increasing in value and nondecreasing in probability");
                    }
                }
                if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) || (points.last().unwrap().1 - 1.0).abs() > 1e-12 {
                    return bad("tabulated cdf values must lie in [0,1] and end at 1");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn std_normal() -> Normal {
        Normal::new(0.0, 1.0).expect("standard normal")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    /// `Pr[X < x]` (differs from `F(x)` only at an atom).
    pub fn prob_below(&self, x: f64) -> f64 {
        match self {
            ContinuousMarginal::Point { value } => f64::from(x > *value),
            _ => self.cdf(x),
        }
    }

    /// `1 − F(x)`, computed directly for accuracy in the tail.
    pub fn survival(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match self {
            ContinuousMarginal::Exponential { rate } => (-rate * x).exp(),
            ContinuousMarginal::Uniform { lo, hi } => ((hi - x) / (hi - lo)).clamp(0.0, 1.0),
            ContinuousMarginal::NormalTruncated { mean, sd } => {
                let z = Self::std_normal();
                z.sf((x - mean) / sd) / z.sf(-mean / sd)
            }
            ContinuousMarginal::Point { value } => {
                if x >= *value {
                    0.0
                } else {
                    1.0
                }
            }
            ContinuousMarginal::Tabulated { points } => {
                let k = points.partition_point(|p| p.0 <= x);
                if k == 0 {
                    return 1.0;
                }
                if k == points.len() {
                    return 0.0;
                }
                let (a, b) = (points[k - 1], points[k]);
                1.0 - (a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0))
            }
        }
    }

    /// Density (right derivative for the tabulated family); `None` for a point mass.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        if x < 0.0 {
            return Some(0.0);
        }
        Some(match self {
            ContinuousMarginal::Exponential { rate } => rate * (-rate * x).exp(),
            ContinuousMarginal::Uniform { lo, hi } => {
                if x >= *lo && x < *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            ContinuousMarginal::NormalTruncated { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()) / Self::std_normal().sf(-mean / sd)
            }
            ContinuousMarginal::Point { .. } => return None,
            ContinuousMarginal::Tabulated { points } => {
                let k = points.partition_point(|p| p.0 <= x);
                if k == 0 || k == points.len() {
                    0.0
                } else {
                    (points[k].1 - points[k - 1].1) / (points[k].0 - points[k - 1].0)
                }
            }
        })
    }

    /// `inf{x ≥ 0 : F(x) ≥ u}`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            ContinuousMarginal::Exponential { rate } => Ok(-(-u).ln_1p() / rate),
            ContinuousMarginal::Uniform { lo, hi } => Ok(lo + u * (hi - lo)),
            _ => invert_survival(self, 1.0 - u),
        }
    }

    /// Hazard rate sampled on a grid up to the far tail must not decrease.
    pub fn check_mhr(&self) -> Result<()> {
        self.validate()?;
        if matches!(self, ContinuousMarginal::Point { .. }) {
            return Ok(());
        }
        let top = invert_survival(self, 1e-9)?;
        let mut prev = 0.0f64;
        for k in 0..HAZARD_GRID {
            let x = top * k as f64 / HAZARD_GRID as f64;
            let s = self.survival(x);
            if s <= 1e-12 {
                break;
            }
            let h = self.pdf(x).unwrap_or(0.0) / s;
            if h < prev * (1.0 - 1e-9) - 1e-12 {
                return Err(Error::Invalid(format!("hazard rate decreases near x = {x:.6} ({prev:.6} → {h:.6})")));
            }
            prev = h;
        }
        Ok(())
    }
}

/// Smallest `x` with `1 − F(x) ≤ s`, by doubling then bisection.
fn invert_survival(f: &ContinuousMarginal, s: f64) -> Result<f64> {
    if f.survival(0.0) <= s {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut steps = 0;
    while f.survival(hi) > s {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > 1100 || !hi.is_finite() {
            return Err(Error::NonConvergence(format!("survival never drops to {s}")));
        }
    }
    for _ in 0..2000 {
        if hi - lo <= 1e-12 * hi.max(1.0) {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(hi);
        }
        if f.survival(mid) <= s {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::NonConvergence(format!("bisection for survival {s} stalled in [{lo}, {hi}]")))
}

/// `α_p = inf{x | F(x) ≥ 1 − 1/p}`.
pub fn alpha(f: &ContinuousMarginal, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Invalid(format!("α_p needs p ≥ 1, got {p}")));
    }
    invert_survival(f, 1.0 / p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPlan {
    /// `⌈log₂(k/ε)⌉ + 1` (at least 1).
    pub zeta: u32,
    /// Bidders (k-items) or items (k-bidders): the `N` in `α_N`, `α_{N^ζ}`.
    pub base: usize,
    /// Truncation threshold `Ξ = max α_{N^ζ}`.
    pub xi: f64,
    /// Posted price `Ξ′ = max α_N`.
    pub xi_prime: f64,
    pub alpha_base: Vec<f64>,
    pub alpha_tail: Vec<f64>,
}

/// Thresholds for the given marginals: one per bidder in k-bidders, one per
/// item in k-items.
pub fn plan(marginals: &[ContinuousMarginal], epsilon: f64, setting: SettingKind) -> Result<TailPlan> {
    if marginals.is_empty() {
        return Err(Error::Invalid("no marginals".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Invalid("ε must be positive".into()));
    }
    for f in marginals {
        f.check_mhr()?;
    }
    let (k, base) = match setting {
        SettingKind::KBidders { k, n } => (k, n),
        SettingKind::KItems { k, m } => (k, m),
    };
    let zeta = ((k as f64 / epsilon).log2().ceil() + 1.0).max(1.0) as u32;
    let alpha_base = marginals.iter().map(|f| alpha(f, base as f64)).collect::<Result<Vec<_>>>()?;
    let alpha_tail = marginals.iter().map(|f| alpha(f, (base as f64).powi(zeta as i32))).collect::<Result<Vec<_>>>()?;
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(TailPlan { zeta, base, xi: max(&alpha_tail), xi_prime: max(&alpha_base), alpha_base, alpha_tail })
}

/// A marginal truncated at `Ξ` and rounded down to the `δΞ` grid, with
/// values expressed in units of `Ξ` (so they lie on the `δ` grid in `[0,1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMarginal {
    #[serde(with = "rational::serde_q")]
    pub scale: Q,
    #[serde(with = "pairs")]
    pub masses: Vec<(Q, Q)>,
    /// `|1 − Σ masses|` before snapping to rationals.
    pub residual: f64,
}

mod pairs {
    use super::Q;
    use crate::rational::{format, parse};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[(Q, Q)], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|(a, b)| (format(a), format(b))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(Q, Q)>, D::Error> {
        let raw: Vec<(String, String)> = Vec::deserialize(d)?;
        raw.into_iter().map(|(a, b)| Ok((parse(&a).map_err(serde::de::Error::custom)?, parse(&b).map_err(serde::de::Error::custom)?))).collect()
    }
}

impl TruncatedMarginal {
    /// A bidder whose `n` item values are i.i.d. from this marginal.
    pub fn iid_factor(&self, n: usize) -> Result<BidderFactor> {
        BidderFactor::iid_items(n, &self.masses)
    }

    /// Values in original units.
    pub fn values(&self) -> Vec<f64> {
        self.masses.iter().map(|(v, _)| rational::to_f64(&(v * &self.scale))).collect()
    }
}

/// Rounds values below `Ξ` down to the `δΞ` grid and values at or above `Ξ`
/// down to `Ξ`. Masses are differences of snapped cdf values, so they sum
/// to exactly 1.
pub fn truncate_and_discretize(f: &ContinuousMarginal, xi: f64, delta: &Q) -> Result<TruncatedMarginal> {
    if !(xi > 0.0) {
        return Err(Error::Invalid(format!("Ξ = {xi} must be positive")));
    }
    let steps = Q::one() / delta;
    if !steps.is_integer() || !delta.is_positive() {
        return Err(Error::Invalid(format!("δ = {} must have an integer inverse", rational::format(delta))));
    }
    let k_max = steps.to_integer().try_into().map_err(|_| Error::Invalid("δ too small".into()))?;
    let d = rational::to_f64(delta);
    // cdf just below each grid point: mass of [kδΞ, (k+1)δΞ) is F((k+1)δΞ⁻) − F(kδΞ⁻)
    let below = |x: f64| if x <= 0.0 { 0.0 } else { f.prob_below(x) };
    let mut snapped: Vec<Q> = (0..=k_max).map(|k: usize| rational::snap(below(xi * d * k as f64), SNAP_BITS)).collect();
    snapped.push(Q::one());
    let mut masses = Vec::new();
    let mut raw_total = 0.0;
    for k in 0..=k_max {
        let mass = &snapped[k + 1] - &snapped[k];
        let upper = if k == k_max { 1.0 } else { below(xi * d * (k + 1) as f64) };
        raw_total += upper - below(xi * d * k as f64);
        if mass.is_negative() {
            return Err(Error::Invalid("cdf decreases".into()));
        }
        if !mass.is_zero() {
            masses.push((delta * Q::from_integer(k.into()), mass));
        }
    }
    Ok(TruncatedMarginal { scale: rational::snap(xi, SNAP_BITS), masses, residual: (1.0 - raw_total).abs() })
}

/// Revenue of selling every item at `price` first-come first-served:
/// bidders arrive in uniformly random order and each takes the remaining
/// items she values at least `price`, highest values first, up to her
/// demand. `values[i][j]` is the marginal of bidder `i` for item `j`.
pub fn posted_price_lower_bound<R: Rng + ?Sized>(
    values: &[Vec<ContinuousMarginal>],
    price: f64,
    cons: &Constraints,
    trials: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let m = values.len();
    let n = values.first().map_or(0, |r| r.len());
    if cons.demands.len() != m {
        return Err(Error::DimensionMismatch("one demand per bidder".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let draws: Vec<Vec<f64>> = values.iter().map(|row| row.iter().map(|f| f.quantile(rng.gen::<f64>())).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        order.shuffle(rng);
        let mut left = vec![true; n];
        let mut sold = 0usize;
        for &i in &order {
            let cap = match cons.demands[i] {
                Bound::Finite(c) => c as usize,
                Bound::Unbounded => n,
            };
            let mut wanted: Vec<usize> = (0..n).filter(|&j| left[j] && draws[i][j] >= price).collect();
            wanted.sort_by(|&a, &b| draws[i][b].total_cmp(&draws[i][a]));
            for &j in wanted.iter().take(cap) {
                left[j] = false;
                sold += 1;
            }
        }
        out.push(price * sold as f64);
    }
    Ok(Estimate::from_samples(&out))
}

/// `E[X·1{X ≥ t}] = t·(1−F(t)) + ∫_t^∞ (1−F(x)) dx`, by Simpson's rule up to
/// the point where the survival drops below 1e-15.
pub fn tail_revenue(f: &ContinuousMarginal, t: f64) -> Result<f64> {
    let top = invert_survival(f, 1e-15)?.max(t);
    let steps = 20_000;
    let h = (top - t) / steps as f64;
    let mut acc = f.survival(t) + f.survival(top);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f.survival(t + h * k as f64);
    }
    Ok(t * f.survival(t) + acc * h / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EXP: ContinuousMarginal = ContinuousMarginal::Exponential { rate: 1.0 };

    #[test]
    fn alpha_closed_forms() {
        assert!((alpha(&EXP, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-12);
        assert!((alpha(&ContinuousMarginal::Uniform { lo: 0.0, hi: 1.0 }, 2.0).unwrap() - 0.5).abs() < 1e-12);
        for p in [2.0f64, 4.0, 1e6] {
            assert!((alpha(&EXP, p).unwrap() - p.ln()).abs() < 1e-9);
        }
        assert!(alpha(&EXP, 0.5).is_err());
    }

    #[test]
    fn plan_for_single_exponential() {
        let p = plan(&[EXP], 0.5, SettingKind::KBidders { k: 1, n: 2 }).unwrap();
        assert_eq!(p.zeta, 2);
        assert!((p.xi - 4f64.ln()).abs() < 1e-9);
        assert!((p.xi_prime - 2f64.ln()).abs() < 1e-9);
        assert!(p.xi_prime >= p.xi / p.zeta as f64);
        let twice = plan(&[EXP, EXP], 0.5, SettingKind::KBidders { k: 1, n: 2 }).unwrap();
        assert_eq!(twice.xi, p.xi);
    }

    #[test]
    fn truncation_masses() {
        let t = truncate_and_discretize(&ContinuousMarginal::Uniform { lo: 0.0, hi: 1.0 }, 1.0, &q(1, 2)).unwrap();
        assert_eq!(t.masses, vec![(q(0, 1), q(1, 2)), (q(1, 2), q(1, 2))]);
        let pt = truncate_and_discretize(&ContinuousMarginal::Point { value: 0.5 }, 1.0, &q(1, 4)).unwrap();
        assert_eq!(pt.masses, vec![(q(1, 2), q(1, 1))]);
        let e = truncate_and_discretize(&EXP, 2.0, &q(1, 4)).unwrap();
        assert_eq!(e.masses.iter().map(|(_, p)| p.clone()).sum::<Q>(), Q::one());
        // everything above Ξ lands on the top grid point
        let top = &e.masses.last().unwrap();
        assert_eq!(top.0, Q::one());
        assert!((rational::to_f64(&top.1) - (-2f64).exp()).abs() < 1e-11);
        assert!(e.residual < 1e-12);
    }

    #[test]
    fn hazard_checks() {
        assert!(EXP.check_mhr().is_ok());
        assert!(ContinuousMarginal::NormalTruncated { mean: 1.0, sd: 1.0 }.check_mhr().is_ok());
        // a two-slope cdf whose density drops sharply has a decreasing hazard
        let bad = ContinuousMarginal::Tabulated { points: vec![(0.0, 0.0), (1.0, 0.9), (10.0, 1.0)] };
        assert!(bad.check_mhr().is_err());
        assert!(ContinuousMarginal::from_table_text("value,cdf\n0,0\n1,0.5\n2,1\n").unwrap().check_mhr().is_ok());
    }

    #[test]
    fn posted_price_single_bidder() {
        let n = 2.0f64;
        let price = alpha(&EXP, n).unwrap();
        let est = posted_price_lower_bound(&[vec![EXP]], price, &Constraints::unconstrained(1), 20_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let exact = price / n;
        assert!((est.mean - exact).abs() <= 3.0 * est.std_err, "{est:?} vs {exact}");
        let zero = posted_price_lower_bound(&[vec![EXP]], 0.0, &Constraints::unconstrained(1), 100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(zero.mean, 0.0);
    }

    #[test]
    fn tail_bound_for_exponential() {
        for p in [3.0f64, 10.0, 100.0] {
            let a = alpha(&EXP, p).unwrap();
            let tail = tail_revenue(&EXP, a).unwrap();
            assert!((tail - (a + 1.0) / p).abs() < 1e-9);
            assert!(tail <= 2.0 * a / p);
        }
    }
}
