//! Exact rational scalars and the handful of conversions the rest of the
//! crate needs (string parsing, float snapping, display).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Exact rational scalar used for every probability, value and price.
pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn zero() -> Q {
    Q::zero()
}

pub fn one() -> Q {
    Q::one()
}

/// Parses `"p/q"`, `"p"` or a finite decimal such as `"0.25"`.
pub fn parse(s: &str) -> Result<Q> {
    let t = s.trim();
    if let Some((a, b)) = t.split_once('/') {
        let num = BigInt::from_str(a.trim()).map_err(|_| Error::Parse(format!("bad rational '{s}'")))?;
        let den = BigInt::from_str(b.trim()).map_err(|_| Error::Parse(format!("bad rational '{s}'")))?;
        if den.is_zero() {
            return Err(Error::Parse(format!("zero denominator in '{s}'")));
        }
        return Ok(Q::new(num, den));
    }
    if let Some((int, frac)) = t.split_once('.') {
        let neg = int.starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches('-'), frac);
        let num = BigInt::from_str(&digits).map_err(|_| Error::Parse(format!("bad decimal '{s}'")))?;
        let den = num_traits::pow(BigInt::from(10), frac.len());
        let v = Q::new(num, den);
        return Ok(if neg { -v } else { v });
    }
    BigInt::from_str(t)
        .map(Q::from_integer)
        .map_err(|_| Error::Parse(format!("bad rational '{s}'")))
}

/// Canonical `p/q` (or `p` for integers) text form; round-trips through [`parse`].
pub fn format(v: &Q) -> String {
    if v.denom().is_one() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

pub fn to_f64(v: &Q) -> f64 {
    v.to_f64().unwrap_or_else(|| {
        // ratio of huge integers: fall back to scaled division
        let n = v.numer().to_f64().unwrap_or(f64::NAN);
        let d = v.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Rounds `x` to the nearest multiple of `2^-bits`.
pub fn snap(x: f64, bits: u32) -> Q {
    let scale = (bits as f64).exp2();
    let n = (x * scale).round();
    Q::new(BigInt::from(n as i128), num_traits::pow(BigInt::from(2), bits as usize))
}

/// Largest multiple of `step` that is `<= x`.
pub fn floor_to(x: &Q, step: &Q) -> Q {
    (x / step).floor() * step
}

/// Smallest multiple of `step` that is strictly greater than `x`.
pub fn next_multiple_above(x: &Q, step: &Q) -> Q {
    ((x / step).floor() + one()) * step
}

pub fn is_multiple_of(x: &Q, step: &Q) -> bool {
    (x / step).is_integer()
}

pub fn max(a: &Q, b: &Q) -> Q {
    if a >= b { a.clone() } else { b.clone() }
}

pub fn abs(a: &Q) -> Q {
    a.abs()
}

/// `n!` as a rational.
pub fn factorial(n: usize) -> Q {
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= BigInt::from(k);
    }
    Q::from_integer(acc)
}

pub mod serde_q {
    //! Serializes [`Q`](super::Q) as a `"p/q"` string.
    use super::Q;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        let s = String::deserialize(d)?;
        super::parse(&s).map_err(serde::de::Error::custom)
    }
}
