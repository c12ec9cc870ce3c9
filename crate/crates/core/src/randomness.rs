//! Total Solovay tests (law of large numbers, law of the iterated logarithm),
//! their combination, Martin-Löf conversion counts and the `ν`/`σ` extraction.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{binomial, ceil_int, format_rational, int, pow2, rat, to_decimal, to_f64, BinString, Rational};

/// `c` in the block bound `c·n^{-δ}` of the iterated-logarithm test: the
/// largest `P(U_{δ,n})·n^δ` over `n <= 6`, `δ ∈ {5/4, 3/2, 2}`, attained at
/// `δ = 5/4, n = 4` where `P = 1/2`, giving `2^{3/2}`.
pub const LIL_C: f64 = 2.0 * std::f64::consts::SQRT_2;

/// A total Solovay test enumerated block by block. Blocks are finite; every
/// string of block `b` has length within `block_lengths(b)`.
pub trait SolovayTest {
    fn id(&self) -> String;

    fn first_block(&self) -> u64 {
        1
    }

    fn block_lengths(&self, b: u64) -> (u64, u64);

    /// All strings of block `b`.
    fn block_strings(&self, b: u64) -> Result<Vec<BinString>>;

    /// `Σ 2^{-l(x)}` over block `b`, exact.
    fn block_mass(&self, b: u64) -> Result<Rational>;

    /// Analytic upper bound on the block mass.
    fn block_bound(&self, b: u64) -> f64;

    /// Upper bound on `Σ_{b >= b0}` block masses; `None` if the test has no rate.
    fn tail_bound(&self, b0: u64) -> Option<f64>;

    /// Length of the block-`b` string that is a prefix of `x`, if any.
    fn hit_in_block(&self, b: u64, x: &BinString) -> Option<usize>;

    fn is_total(&self) -> bool {
        self.tail_bound(self.first_block()).is_some()
    }

    /// `m(δ)`: first block whose tail is `<= δ`.
    fn rate(&self, delta: f64) -> Option<u64> {
        let first = self.first_block();
        if self.tail_bound(first)? <= delta {
            return Some(first);
        }
        let mut hi = first.max(1);
        loop {
            hi = hi.checked_mul(2)?;
            if self.tail_bound(hi)? <= delta {
                break;
            }
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.tail_bound(mid)? <= delta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

fn check_block(first: u64, b: u64) -> Result<()> {
    if b < first {
        return Err(Error::Test(format!("block {b} precedes the first block {first}")));
    }
    Ok(())
}

/// Strings of length `n` whose frequency of ones is at least `ε` away from 1/2.
#[derive(Clone, Debug)]
pub struct LlnTest {
    pub eps: Rational,
}

pub fn lln_test(eps: &Rational) -> Result<LlnTest> {
    if !eps.is_positive() || eps > &rat(1, 2) {
        return Err(Error::Test(format!("lln needs 0 < eps <= 1/2, got {}", format_rational(eps))));
    }
    Ok(LlnTest { eps: eps.clone() })
}

impl LlnTest {
    fn violates(&self, ones: u64, n: u64) -> bool {
        (int(ones as i64) / int(n as i64) - rat(1, 2)).abs() >= self.eps
    }

    fn q(&self) -> f64 {
        let e = to_f64(&self.eps);
        (-2.0 * e * e).exp()
    }
}

impl SolovayTest for LlnTest {
    fn id(&self) -> String {
        format!("lln(eps={})", format_rational(&self.eps))
    }

    fn block_lengths(&self, b: u64) -> (u64, u64) {
        (b, b)
    }

    fn block_strings(&self, b: u64) -> Result<Vec<BinString>> {
        check_block(1, b)?;
        if b > 24 {
            return Err(Error::Test(format!("block {b} too long to enumerate")));
        }
        Ok(BinString::all_of_length(b as usize)
            .filter(|x| self.violates(x.ones() as u64, b))
            .collect())
    }

    fn block_mass(&self, b: u64) -> Result<Rational> {
        check_block(1, b)?;
        let count = (0..=b)
            .filter(|&j| self.violates(j, b))
            .fold(BigUint::zero(), |acc, j| acc + binomial(b, j));
        Ok(Rational::new(BigInt::from(count), BigInt::one() << b))
    }

    fn block_bound(&self, b: u64) -> f64 {
        2.0 * self.q().powf(b as f64)
    }

    fn tail_bound(&self, b0: u64) -> Option<f64> {
        let q = self.q();
        Some(2.0 * q.powf(b0 as f64) / (1.0 - q))
    }

    fn hit_in_block(&self, b: u64, x: &BinString) -> Option<usize> {
        let n = b as usize;
        (b >= 1 && x.len() >= n && self.violates(x.prefix(n).ones() as u64, b)).then_some(n)
    }
}

/// Prefix-free first-hitting cover of `U_{δ,n}`: the walk crosses
/// `S_k − k/2 > δ√(½ m_n ln ln m_n)` for some `m_n <= k <= m_{n+1}`, `m_n = ⌈δ^n⌉`.
#[derive(Clone, Debug)]
pub struct LilTest {
    pub delta: Rational,
}

pub fn lil_test(delta: &Rational) -> Result<LilTest> {
    if delta <= &int(1) {
        return Err(Error::Test(format!(
            "lil needs delta > 1 (the block series diverges otherwise), got {}",
            format_rational(delta)
        )));
    }
    Ok(LilTest { delta: delta.clone() })
}

impl LilTest {
    /// `m_n = ⌈δ^n⌉`.
    pub fn block_start(&self, n: u64) -> u64 {
        let p = num_traits::pow::pow(self.delta.clone(), n as usize);
        ceil_int(&p).to_u64().unwrap_or(u64::MAX)
    }

    /// `(2t)^2 = 2δ²·m·ln ln m` for the threshold `t`, clamped at 0 where `ln ln m <= 0`.
    fn threshold_sq(&self, m: u64) -> f64 {
        if m < 3 {
            return 0.0;
        }
        let d = to_f64(&self.delta);
        2.0 * d * d * m as f64 * (m as f64).ln().ln()
    }

    /// `2·D > 2t` where `D = 2S_k − k`.
    fn crosses(d: i64, t2: f64) -> bool {
        d > 0 && (d as f64) * (d as f64) > t2
    }

    /// Rigorous maximal-inequality plus Hoeffding bound `2·exp(−2t²/m_{n+1})`.
    pub fn hoeffding_block_bound(&self, n: u64) -> f64 {
        let a = self.block_start(n);
        let b = self.block_start(n + 1);
        (2.0 * (-self.threshold_sq(a) / (2.0 * b as f64)).exp()).min(1.0)
    }
}

impl SolovayTest for LilTest {
    fn id(&self) -> String {
        format!("lil(delta={})", format_rational(&self.delta))
    }

    fn block_lengths(&self, b: u64) -> (u64, u64) {
        (self.block_start(b), self.block_start(b + 1))
    }

    fn block_strings(&self, b: u64) -> Result<Vec<BinString>> {
        check_block(1, b)?;
        let (a, end) = self.block_lengths(b);
        if end > 24 {
            return Err(Error::Test(format!("block {b} too long to enumerate")));
        }
        let t2 = self.threshold_sq(a);
        let mut out = Vec::new();
        let mut stack = vec![(BinString::new(), 0i64)];
        while let Some((x, d)) = stack.pop() {
            let k = x.len() as u64;
            if k >= a && k >= 1 && Self::crosses(d, t2) {
                out.push(x);
                continue;
            }
            if k == end {
                continue;
            }
            stack.push((x.child(1), d + 1));
            stack.push((x.child(0), d - 1));
        }
        out.sort();
        Ok(out)
    }

    fn block_mass(&self, b: u64) -> Result<Rational> {
        check_block(1, b)?;
        let (a, end) = self.block_lengths(b);
        if end > 1 << 12 {
            return Err(Error::Test(format!("block {b} too long for exact mass")));
        }
        let t2 = self.threshold_sq(a);
        let size = 2 * end as usize + 1;
        let off = end as i64;
        let mut cur = vec![BigUint::zero(); size];
        cur[off as usize] = BigUint::one();
        let mut hit = BigUint::zero();
        for k in 1..=end {
            let mut next = vec![BigUint::zero(); size];
            for (i, c) in cur.iter().enumerate() {
                if c.is_zero() {
                    continue;
                }
                let d = i as i64 - off;
                for nd in [d + 1, d - 1] {
                    if k >= a && Self::crosses(nd, t2) {
                        hit += c << (end - k);
                    } else {
                        next[(nd + off) as usize] += c;
                    }
                }
            }
            cur = next;
        }
        Ok(Rational::new(BigInt::from(hit), BigInt::one() << end))
    }

    fn block_bound(&self, b: u64) -> f64 {
        LIL_C * (b as f64).powf(-to_f64(&self.delta))
    }

    fn tail_bound(&self, b0: u64) -> Option<f64> {
        let d = to_f64(&self.delta);
        let n = b0.max(1) as f64;
        Some(LIL_C * (n.powf(-d) + n.powf(1.0 - d) / (d - 1.0)))
    }

    fn hit_in_block(&self, b: u64, x: &BinString) -> Option<usize> {
        let (a, end) = self.block_lengths(b);
        let t2 = self.threshold_sq(a);
        let mut d = 0i64;
        for (i, &bit) in x.bits().iter().enumerate() {
            let k = i as u64 + 1;
            if k > end {
                break;
            }
            d += if bit == 1 { 1 } else { -1 };
            if k >= a && Self::crosses(d, t2) {
                return Some(k as usize);
            }
        }
        None
    }
}

/// A test given by an explicit finite list of blocks.
#[derive(Clone, Debug)]
pub struct ExplicitTest {
    pub name: String,
    pub blocks: Vec<Vec<BinString>>,
    /// Whether a tail rate is known.
    pub total: bool,
}

impl SolovayTest for ExplicitTest {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn block_lengths(&self, b: u64) -> (u64, u64) {
        let blk = self.blocks.get(b as usize - 1).map(Vec::as_slice).unwrap_or(&[]);
        let lo = blk.iter().map(|x| x.len() as u64).min().unwrap_or(0);
        let hi = blk.iter().map(|x| x.len() as u64).max().unwrap_or(0);
        (lo, hi)
    }

    fn block_strings(&self, b: u64) -> Result<Vec<BinString>> {
        check_block(1, b)?;
        Ok(self.blocks.get(b as usize - 1).cloned().unwrap_or_default())
    }

    fn block_mass(&self, b: u64) -> Result<Rational> {
        Ok(self
            .block_strings(b)?
            .iter()
            .fold(Rational::zero(), |acc, x| acc + pow2(-(x.len() as i64))))
    }

    fn block_bound(&self, b: u64) -> f64 {
        self.block_mass(b).map(|m| to_f64(&m)).unwrap_or(f64::INFINITY)
    }

    fn tail_bound(&self, b0: u64) -> Option<f64> {
        if !self.total {
            return None;
        }
        Some((b0.max(1)..=self.blocks.len() as u64).map(|b| self.block_bound(b)).sum())
    }

    fn hit_in_block(&self, b: u64, x: &BinString) -> Option<usize> {
        let blk = self.blocks.get(b as usize - 1)?;
        blk.iter().filter(|y| y.is_prefix_of(x)).map(BinString::len).min()
    }
}

/// `{x_{k,n} : n >= m(2^{-k}, k)}` over a finite family. Block `b` of the
/// combination is block `start_k + b − 1` of every member `k`.
pub struct CombinedTest {
    pub members: Vec<Box<dyn SolovayTest>>,
    pub starts: Vec<u64>,
}

pub fn combine_tests(members: Vec<Box<dyn SolovayTest>>) -> Result<CombinedTest> {
    if members.is_empty() {
        return Err(Error::Test("cannot combine an empty family".into()));
    }
    let mut starts = Vec::with_capacity(members.len());
    for (i, t) in members.iter().enumerate() {
        let k = i as i32 + 1;
        let start = t
            .rate(2f64.powi(-k))
            .ok_or_else(|| Error::Test(format!("member {} ({}) has no uniform rate", k, t.id())))?;
        starts.push(start.max(t.first_block()));
    }
    Ok(CombinedTest { members, starts })
}

impl CombinedTest {
    fn member_block(&self, k: usize, b: u64) -> u64 {
        self.starts[k] + b - 1
    }
}

impl SolovayTest for CombinedTest {
    fn id(&self) -> String {
        let ids: Vec<String> = self.members.iter().map(|t| t.id()).collect();
        format!("combined[{}]", ids.join(","))
    }

    fn block_lengths(&self, b: u64) -> (u64, u64) {
        (0..self.members.len())
            .map(|k| self.members[k].block_lengths(self.member_block(k, b)))
            .fold((u64::MAX, 0), |(lo, hi), (a, c)| (lo.min(a), hi.max(c)))
    }

    fn block_strings(&self, b: u64) -> Result<Vec<BinString>> {
        check_block(1, b)?;
        let mut out = Vec::new();
        for k in 0..self.members.len() {
            out.extend(self.members[k].block_strings(self.member_block(k, b))?);
        }
        Ok(out)
    }

    fn block_mass(&self, b: u64) -> Result<Rational> {
        check_block(1, b)?;
        let mut acc = Rational::zero();
        for k in 0..self.members.len() {
            acc += self.members[k].block_mass(self.member_block(k, b))?;
        }
        Ok(acc)
    }

    fn block_bound(&self, b: u64) -> f64 {
        (0..self.members.len())
            .map(|k| self.members[k].block_bound(self.member_block(k, b)))
            .sum()
    }

    fn tail_bound(&self, b0: u64) -> Option<f64> {
        (0..self.members.len())
            .map(|k| self.members[k].tail_bound(self.member_block(k, b0.max(1))))
            .sum()
    }

    fn hit_in_block(&self, b: u64, x: &BinString) -> Option<usize> {
        (0..self.members.len())
            .filter_map(|k| self.members[k].hit_in_block(self.member_block(k, b), x))
            .min()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestVerdict {
    pub test_id: String,
    pub prefix_len: usize,
    /// `(block, length)` of every test string that is a prefix of the input.
    pub hits: Vec<(u64, usize)>,
    /// Upper bound on the mass of the blocks too long to be decided yet.
    pub tail_budget: f64,
}

/// Scans every block whose shortest string fits in `x`.
pub fn verdict(test: &dyn SolovayTest, x: &BinString) -> TestVerdict {
    let mut hits = Vec::new();
    let mut b = test.first_block();
    loop {
        let (lo, _) = test.block_lengths(b);
        if lo > x.len() as u64 {
            break;
        }
        if let Some(l) = test.hit_in_block(b, x) {
            hits.push((b, l));
        }
        b += 1;
    }
    TestVerdict {
        test_id: test.id(),
        prefix_len: x.len(),
        hits,
        tail_budget: test.tail_bound(b).unwrap_or(f64::INFINITY),
    }
}

/// Membership in level `n` of the Martin-Löf test built from a Solovay test
/// with `Σ 2^{-l} < 2^K`: at least `2^{n+K}` hits.
pub fn ml_conversion_count(hits: usize, n: u32, k: u32) -> bool {
    let need = BigUint::one() << (n + k);
    BigUint::from(hits) >= need
}

/// Same, counting the hits of `test` on `x`.
pub fn ml_conversion(test: &dyn SolovayTest, x: &BinString, n: u32, k: u32) -> bool {
    ml_conversion_count(verdict(test, x).hits.len(), n, k)
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockReport {
    pub test_id: String,
    pub block: u64,
    pub prefix_len: u64,
    #[serde(with = "crate::exact::serde_rational")]
    pub exact_mass: Rational,
    pub bound: String,
    pub within_bound: bool,
}

/// Exact mass versus analytic bound for blocks `first..=last`.
pub fn block_reports(test: &dyn SolovayTest, last: u64) -> Result<Vec<BlockReport>> {
    (test.first_block()..=last)
        .map(|b| {
            let mass = test.block_mass(b)?;
            let bound = test.block_bound(b);
            Ok(BlockReport {
                test_id: test.id(),
                block: b,
                prefix_len: test.block_lengths(b).1,
                within_bound: to_f64(&mass) <= bound,
                bound: format!("{bound:.12}"),
                exact_mass: mass,
            })
        })
        .collect()
}

/// `ν(n) = i` for `m(4^{-i}) <= n < m(4^{-(i+1)})`, `σ(n) = ⌊√ν(n)⌋`.
#[derive(Clone, Debug)]
pub struct NuSigma {
    /// `m(4^{-i})` for `i = 0, 1, …` up to the first value exceeding the horizon.
    pub brackets: Vec<u64>,
}

pub fn sigma_from_rate(m: &dyn Fn(&Rational) -> u64, horizon: u64) -> NuSigma {
    let mut brackets = Vec::new();
    for i in 0..64i64 {
        let v = m(&pow2(-2 * i));
        brackets.push(v);
        if v > horizon {
            break;
        }
    }
    NuSigma { brackets }
}

impl NuSigma {
    pub fn nu(&self, n: u64) -> u64 {
        let i = self.brackets.partition_point(|&m| m <= n);
        i.saturating_sub(1) as u64
    }

    pub fn sigma(&self, n: u64) -> u64 {
        self.nu(n).isqrt()
    }
}

/// `Σ 2^{-l(x)+ν(l(x))}` over blocks `m(1/4)..=last`, exact. Lengths are read
/// from `block_lengths`, so this is meant for tests whose blocks have a single length.
pub fn weighted_budget(test: &dyn SolovayTest, ns: &NuSigma, last: u64) -> Result<Rational> {
    let start = ns.brackets.get(1).copied().unwrap_or(u64::MAX).max(test.first_block());
    let mut acc = Rational::zero();
    for b in start..=last {
        let (lo, hi) = test.block_lengths(b);
        if lo != hi {
            return Err(Error::Test("weighted budget needs single-length blocks".into()));
        }
        acc += test.block_mass(b)? * pow2(ns.nu(lo) as i64);
    }
    Ok(acc)
}

/// `B{max_{k<=m} (S_k − k/2) > a}` and `B{S_m − m/2 > a}` by exhaustive enumeration.
pub fn maximal_inequality(m: u32, a: i64) -> (Rational, Rational) {
    let mut max_count = 0u64;
    let mut end_count = 0u64;
    for v in 0u64..(1 << m) {
        let mut d = 0i64;
        let mut best = i64::MIN;
        for i in 0..m {
            d += if (v >> i) & 1 == 1 { 1 } else { -1 };
            best = best.max(d);
        }
        // S_k − k/2 > a  ⇔  2S_k − k > 2a
        if best > 2 * a {
            max_count += 1;
        }
        if d > 2 * a {
            end_count += 1;
        }
    }
    let den = BigInt::one() << m;
    (
        Rational::new(BigInt::from(max_count), den.clone()),
        Rational::new(BigInt::from(end_count), den),
    )
}

/// Decimal rendering used in reports.
pub fn bound_decimal(q: &Rational) -> String {
    to_decimal(q, 12)
}
