//! Exact rational scalars, binary strings and the dyadic-interval
//! correspondence `x <-> [0.x, 0.x + 2^-l(x))`.
//!
//! Every measure, width and probability in the crate is a [`Rational`];
//! floating point only appears in rendered reports.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arbitrary-precision rational, always in lowest terms with positive denominator.
pub type Rational = BigRational;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// `2^e` for any integer exponent.
pub fn pow2(e: i64) -> Rational {
    let p = BigInt::one() << e.unsigned_abs();
    if e >= 0 {
        Rational::from_integer(p)
    } else {
        Rational::new(BigInt::one(), p)
    }
}

/// Renders as `p/q`, denominator always present.
pub fn format_rational(q: &Rational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

/// Parses `p/q` or a bare integer.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Arith(format!("malformed rational {s:?} (expected p/q)"));
    match s.split_once('/') {
        Some((p, q)) => {
            let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
            let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
            if q.is_zero() {
                return Err(Error::Arith(format!("zero denominator in {s:?}")));
            }
            Ok(Rational::new(p, q))
        }
        None => BigInt::from_str(s).map(Rational::from_integer).map_err(|_| bad()),
    }
}

/// Decimal rendering rounded half away from zero to `places` digits.
pub fn to_decimal(q: &Rational, places: usize) -> String {
    let scale = BigInt::from(10u32).pow(places as u32);
    let scaled = q.abs() * Rational::from_integer(scale.clone());
    let rounded = (scaled + rat(1, 2)).floor().to_integer();
    let (whole, frac) = rounded.div_rem(&scale);
    let sign = if q.is_negative() && !rounded.is_zero() { "-" } else { "" };
    if places == 0 {
        return format!("{sign}{whole}");
    }
    format!("{sign}{whole}.{:0>width$}", frac, width = places)
}

/// `log2(q)` as a float, usable far outside the `f64` range of `q` itself.
pub fn log2_approx(q: &Rational) -> f64 {
    if !q.is_positive() {
        return f64::NEG_INFINITY;
    }
    fn log2_big(n: &BigInt) -> f64 {
        let bits = n.bits();
        if bits <= 1000 {
            n.to_f64().unwrap().log2()
        } else {
            let shift = bits - 60;
            (n >> shift).to_f64().unwrap().log2() + shift as f64
        }
    }
    log2_big(q.numer()) - log2_big(q.denom())
}

pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or_else(|| log2_approx(q).exp2())
}

/// If `q` has a power-of-two denominator `2^t`, returns `t`.
pub fn dyadic_exponent(q: &Rational) -> Option<u32> {
    let d = q.denom();
    let d = d.magnitude();
    if d.count_ones() == 1 {
        Some(d.trailing_zeros().unwrap_or(0) as u32)
    } else {
        None
    }
}

/// Smallest integer `>= q`.
pub fn ceil_int(q: &Rational) -> BigInt {
    q.ceil().to_integer()
}

/// `n!` as a big integer.
pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// `C(n, k)`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Serde adapter writing rationals as `"p/q"` strings.
pub mod serde_rational {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(q))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}

/// Same as [`serde_rational`] for `Option<Rational>`.
pub mod serde_opt_rational {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match q {
            Some(q) => s.serialize_some(&format_rational(q)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Rational>, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        s.map(|s| parse_rational(&s).map_err(serde::de::Error::custom)).transpose()
    }
}

/// A finite binary string; the empty string is allowed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinString(Vec<u8>);

impl BinString {
    pub fn new() -> Self {
        BinString(Vec::new())
    }

    /// Builds from 0/1 values; panics on anything else.
    pub fn from_bits(bits: Vec<u8>) -> Self {
        assert!(bits.iter().all(|&b| b <= 1), "bits must be 0 or 1");
        BinString(bits)
    }

    /// The `n`-bit big-endian binary expansion of `value`.
    pub fn from_uint(value: &BigUint, n: usize) -> Self {
        let bits = (0..n)
            .map(|i| u8::from(value.bit((n - 1 - i) as u64)))
            .collect();
        BinString(bits)
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, bit: u8) {
        assert!(bit <= 1);
        self.0.push(bit);
    }

    pub fn extend_from(&mut self, other: &BinString) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn concat(&self, other: &BinString) -> BinString {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        BinString(v)
    }

    pub fn child(&self, bit: u8) -> BinString {
        let mut c = self.clone();
        c.push(bit);
        c
    }

    /// `x^n`, the first `n` bits.
    pub fn prefix(&self, n: usize) -> BinString {
        BinString(self.0[..n].to_vec())
    }

    pub fn suffix_from(&self, n: usize) -> BinString {
        BinString(self.0[n..].to_vec())
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    /// `self ⊑ other`.
    pub fn is_prefix_of(&self, other: &BinString) -> bool {
        other.0.starts_with(&self.0)
    }

    /// The integer whose `l(x)`-bit expansion is `x`.
    pub fn to_uint(&self) -> BigUint {
        self.0
            .iter()
            .fold(BigUint::zero(), |acc, &b| (acc << 1u32) + BigUint::from(b))
    }

    /// Every string of length `n`, in lexicographic order.
    pub fn all_of_length(n: usize) -> impl Iterator<Item = BinString> {
        assert!(n < 64);
        (0u64..(1u64 << n)).map(move |v| BinString((0..n).map(|i| ((v >> (n - 1 - i)) & 1) as u8).collect()))
    }
}

impl fmt::Display for BinString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BinString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Arith(format!("not a binary digit: {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(BinString)
    }
}

impl Serialize for BinString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BinString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open interval `[lo, hi)` with rational endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "serde_rational")]
    pub lo: Rational,
    #[serde(with = "serde_rational")]
    pub hi: Rational,
}

impl Interval {
    pub fn new(lo: Rational, hi: Rational) -> Self {
        Interval { lo, hi }
    }

    pub fn length(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn contains(&self, x: &Rational) -> bool {
        &self.lo <= x && x < &self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = (&self.lo).max(&other.lo).clone();
        let hi = (&self.hi).min(&other.hi).clone();
        (lo < hi).then(|| Interval::new(lo, hi))
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

/// `[left, left + 2^-len_exp)` with `left` a multiple of `2^-len_exp`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicInterval {
    #[serde(with = "serde_rational")]
    pub left: Rational,
    pub len_exp: u32,
}

impl DyadicInterval {
    pub fn new(left: Rational, len_exp: u32) -> Result<Self> {
        let scaled = &left * pow2(len_exp as i64);
        if !scaled.is_integer() || left.is_negative() || &left + pow2(-(len_exp as i64)) > int(1) {
            return Err(Error::Arith(format!(
                "[{}, +2^-{}) is not a dyadic subinterval of [0,1)",
                format_rational(&left),
                len_exp
            )));
        }
        Ok(DyadicInterval { left, len_exp })
    }

    pub fn length(&self) -> Rational {
        pow2(-(self.len_exp as i64))
    }

    pub fn right(&self) -> Rational {
        &self.left + self.length()
    }

    pub fn as_interval(&self) -> Interval {
        Interval::new(self.left.clone(), self.right())
    }

    /// The string `x` with `string_to_interval(x) == self`.
    pub fn to_bin_string(&self) -> BinString {
        let scaled = (&self.left * pow2(self.len_exp as i64)).to_integer();
        BinString::from_uint(scaled.magnitude(), self.len_exp as usize)
    }
}

/// `x -> [0.x, 0.x + 2^-l(x))`.
pub fn string_to_interval(x: &BinString) -> DyadicInterval {
    let n = x.len();
    let left = Rational::new(BigInt::from(x.to_uint()), BigInt::one() << n);
    DyadicInterval { left, len_exp: n as u32 }
}

/// Leftmost dyadic interval `[a, a + 2^-n) ⊆ [lo, hi)` with `2^-n >= (hi - lo)/4`;
/// among equally-left candidates the longest wins.
pub fn dyadic_subinterval(lo: &Rational, hi: &Rational) -> Result<DyadicInterval> {
    if lo.is_negative() || lo >= hi || hi > &int(1) {
        return Err(Error::Arith(format!(
            "dyadic_subinterval needs 0 <= lo < hi <= 1, got [{}, {})",
            format_rational(lo),
            format_rational(hi)
        )));
    }
    let len = hi - lo;
    let quarter = &len / int(4);
    // smallest n with 2^-n <= len, then every n while 2^-n >= len/4
    let mut n: u32 = 0;
    while pow2(-(n as i64)) > len {
        n += 1;
    }
    let mut best: Option<DyadicInterval> = None;
    while pow2(-(n as i64)) >= quarter {
        let scale = pow2(n as i64);
        let a = Rational::from_integer(ceil_int(&(lo * &scale))) / &scale;
        if &a + pow2(-(n as i64)) <= *hi {
            let better = match &best {
                None => true,
                Some(b) => a < b.left,
            };
            if better {
                best = Some(DyadicInterval { left: a, len_exp: n });
            }
        }
        n += 1;
    }
    best.ok_or_else(|| Error::Arith("no dyadic subinterval found (cannot happen for valid input)".into()))
}
