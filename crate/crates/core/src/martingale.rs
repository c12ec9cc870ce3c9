//! Computable supermartingales, deficiency traces and the extension selector.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{factorial, format_rational, int, log2_approx, pow2, BinString, Rational};

pub trait Supermartingale {
    fn label(&self) -> String;

    fn value(&self, x: &BinString) -> Rational;

    /// `M(xy^1), …, M(xy^{l(y)})`.
    fn extension_values(&self, x: &BinString, y: &BinString) -> Vec<Rational> {
        (1..=y.len()).map(|j| self.value(&x.concat(&y.prefix(j)))).collect()
    }

    /// `M(x^0), …, M(x^{l(x)})`.
    fn prefix_values(&self, x: &BinString) -> Vec<Rational> {
        let mut v = vec![self.value(&BinString::new())];
        v.extend(self.extension_values(&BinString::new(), x));
        v
    }
}

/// Bayes–Laplace mixture over Bernoulli sources:
/// `M(x) = 2^{l(x)} · a!·b!/(a+b+1)!` with `a`, `b` the counts of zeros and ones.
#[derive(Clone, Copy, Debug, Default)]
pub struct KtMixture;

pub fn kt_mixture(x: &BinString) -> Rational {
    let b = x.ones() as u64;
    let a = x.len() as u64 - b;
    let num = BigInt::from(factorial(a) * factorial(b)) << x.len();
    Rational::new(num, BigInt::from(factorial(a + b + 1)))
}

impl Supermartingale for KtMixture {
    fn label(&self) -> String {
        "kt".into()
    }

    fn value(&self, x: &BinString) -> Rational {
        kt_mixture(x)
    }

    // M(xb) = M(x) · 2(c_b + 1)/(n + 2)
    fn extension_values(&self, x: &BinString, y: &BinString) -> Vec<Rational> {
        let mut counts = [(x.len() - x.ones()) as i64, x.ones() as i64];
        let mut m = kt_mixture(x);
        y.bits()
            .iter()
            .map(|&bit| {
                let n = counts[0] + counts[1];
                m = &m * int(2 * (counts[bit as usize] + 1)) / int(n + 2);
                counts[bit as usize] += 1;
                m.clone()
            })
            .collect()
    }
}

/// `M ≡ c`.
#[derive(Clone, Debug)]
pub struct ConstantMartingale(pub Rational);

impl Supermartingale for ConstantMartingale {
    fn label(&self) -> String {
        format!("const({})", format_rational(&self.0))
    }

    fn value(&self, _: &BinString) -> Rational {
        self.0.clone()
    }
}

/// Wraps an arbitrary evaluator (used for counterexample fixtures).
pub struct FnMartingale<F: Fn(&BinString) -> Rational> {
    pub name: String,
    pub f: F,
}

impl<F: Fn(&BinString) -> Rational> Supermartingale for FnMartingale<F> {
    fn label(&self) -> String {
        self.name.clone()
    }

    fn value(&self, x: &BinString) -> Rational {
        (self.f)(x)
    }
}

/// `M(Λ) <= 1`, `M >= 0` and `M(x) >= (M(x0)+M(x1))/2` for every `l(x) < depth`.
pub fn check_supermartingale(m: &dyn Supermartingale, depth: usize) -> bool {
    scan_tree(m, depth, |parent, avg| parent >= avg)
}

/// As [`check_supermartingale`] but with equality at every node.
pub fn check_martingale(m: &dyn Supermartingale, depth: usize) -> bool {
    scan_tree(m, depth, |parent, avg| parent == avg)
}

fn scan_tree(m: &dyn Supermartingale, depth: usize, ok: impl Fn(&Rational, &Rational) -> bool) -> bool {
    let root = m.value(&BinString::new());
    if root > int(1) || root.is_negative() {
        return false;
    }
    let mut level = vec![(BinString::new(), root)];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * 2);
        for (x, mx) in level {
            let m0 = m.value(&x.child(0));
            let m1 = m.value(&x.child(1));
            if m0.is_negative() || m1.is_negative() || !ok(&mx, &((&m0 + &m1) / int(2))) {
                return false;
            }
            next.push((x.child(0), m0));
            next.push((x.child(1), m1));
        }
        level = next;
    }
    true
}

/// Exact `M(x^j)` along a string; `d` is shown as `log2 M` only when rendered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeficiencyTrace {
    pub prefix: BinString,
    /// `M(x^j)` for `j = 0..=l(x)`.
    pub m_values: Vec<Rational>,
}

impl DeficiencyTrace {
    pub fn new(m: &dyn Supermartingale, x: &BinString) -> DeficiencyTrace {
        DeficiencyTrace { prefix: x.clone(), m_values: m.prefix_values(x) }
    }

    /// `d(x^j) = log2 M(x^j)`, for display.
    pub fn d_values(&self) -> Vec<f64> {
        self.m_values.iter().map(log2_approx).collect()
    }

    /// CSV `j,M,sigma,slack_ok`.
    pub fn to_csv(&self, sigma: &dyn Fn(u64) -> u64) -> String {
        let mut out = String::from("j,M,sigma,slack_ok\n");
        for (j, m) in self.m_values.iter().enumerate() {
            let s = sigma(j as u64);
            let ok = *m <= pow2(s as i64);
            out.push_str(&format!("{j},{},{s},{ok}\n", format_rational(m)));
        }
        out
    }
}

/// `M(ω^j) <= 2^{σ(j)}` for every `1 <= j <= l(ω)`.
pub fn budget_check(trace: &DeficiencyTrace, sigma: &dyn Fn(u64) -> u64) -> bool {
    first_budget_violation(trace, sigma).is_none()
}

pub fn first_budget_violation(trace: &DeficiencyTrace, sigma: &dyn Fn(u64) -> u64) -> Option<usize> {
    (1..trace.m_values.len()).find(|&j| trace.m_values[j] > pow2(sigma(j as u64) as i64))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub y: BinString,
    /// `max_j M(xy^j)`.
    #[serde(with = "crate::exact::serde_rational")]
    pub max_value: Rational,
    /// `B(Ã)` after dropping strings with a proper prefix in the set.
    #[serde(with = "crate::exact::serde_rational")]
    pub mass: Rational,
    /// `2M(x)/B(Ã)`.
    #[serde(with = "crate::exact::serde_rational")]
    pub bound: Rational,
    /// `B(Ã1)`: mass of the candidates that cross the bound somewhere.
    #[serde(with = "crate::exact::serde_rational")]
    pub over_mass: Rational,
    pub candidates: usize,
}

/// Drops duplicates and strings that extend another member, keeping `Ã` unchanged.
pub fn normalize_extensions(a: &[BinString]) -> Vec<BinString> {
    let set: BTreeSet<&BinString> = a.iter().collect();
    let mut kept: Vec<BinString> = Vec::new();
    // BTreeSet order puts a prefix right before its extensions
    for y in set {
        if kept.last().is_some_and(|p| p.is_prefix_of(y)) {
            continue;
        }
        kept.push(y.clone());
    }
    kept
}

/// Picks `y ∈ A` minimizing `max_{1<=j<=l(y)} M(xy^j)`, ties to the
/// lexicographically least, and asserts `M(xy^j) <= 2M(x)/B(Ã)`.
pub fn select_extension(m: &dyn Supermartingale, x: &BinString, a: &[BinString]) -> Result<Selection> {
    let cands = normalize_extensions(a);
    if cands.is_empty() {
        return Err(Error::Martingale("empty extension set".into()));
    }
    if cands.iter().any(BinString::is_empty) {
        // Ã is everything; the empty extension is the only minimal element
        let mx = m.value(x);
        return Ok(Selection {
            y: BinString::new(),
            bound: int(2) * &mx,
            max_value: mx,
            mass: int(1),
            over_mass: Rational::zero(),
            candidates: 1,
        });
    }
    let mass = cands.iter().fold(Rational::zero(), |acc, y| acc + pow2(-(y.len() as i64)));
    let mx = m.value(x);
    let bound = int(2) * &mx / &mass;
    let mut best: Option<(Rational, &BinString)> = None;
    let mut over_mass = Rational::zero();
    for y in &cands {
        let peak = m
            .extension_values(x, y)
            .into_iter()
            .max()
            .expect("non-empty extension");
        if peak > bound {
            over_mass += pow2(-(y.len() as i64));
        }
        let better = match &best {
            None => true,
            Some((v, z)) => peak < *v || (peak == *v && y < *z),
        };
        if better {
            best = Some((peak, y));
        }
    }
    let (max_value, y) = best.expect("non-empty candidates");
    if max_value > bound {
        return Err(Error::Martingale(format!(
            "supermartingale property violated: best peak {} exceeds 2M(x)/B = {}",
            format_rational(&max_value),
            format_rational(&bound)
        )));
    }
    Ok(Selection { y: y.clone(), max_value, mass, bound, over_mass, candidates: cands.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rat;

    fn s(x: &str) -> BinString {
        x.parse().unwrap()
    }

    #[test]
    fn kt_values() {
        assert_eq!(kt_mixture(&s("")), int(1));
        assert_eq!(kt_mixture(&s("0")), int(1));
        assert_eq!(kt_mixture(&s("00")), rat(4, 3));
        let inc = KtMixture.extension_values(&s("01"), &s("1101"));
        for j in 1..=4 {
            assert_eq!(inc[j - 1], kt_mixture(&s("01").concat(&s("1101").prefix(j))));
        }
    }

    #[test]
    fn martingale_checks() {
        assert!(check_martingale(&KtMixture, 10));
        assert!(check_supermartingale(&ConstantMartingale(int(1)), 6));
        let doubling = FnMartingale { name: "2^l".into(), f: |x: &BinString| pow2(x.len() as i64) };
        assert!(!check_supermartingale(&doubling, 1));
    }

    #[test]
    fn selector_examples() {
        let sel = select_extension(&KtMixture, &s(""), &[s("0"), s("1")]).unwrap();
        assert_eq!(sel.y, s("0"));
        assert_eq!(sel.max_value, int(1));
        assert_eq!(sel.mass, int(1));
        let single = select_extension(&KtMixture, &s("01"), &[s("111")]).unwrap();
        assert_eq!(single.y, s("111"));
        assert!(single.max_value <= single.bound);
        let all3: Vec<BinString> = BinString::all_of_length(3).collect();
        let sel = select_extension(&KtMixture, &s("1"), &all3).unwrap();
        assert!(sel.max_value <= int(2) * kt_mixture(&s("1")));
        assert!(sel.over_mass * int(2) <= sel.mass);
    }

    #[test]
    fn normalization_drops_extensions() {
        let n = normalize_extensions(&[s("01"), s("011"), s("01"), s("1")]);
        assert_eq!(n, vec![s("01"), s("1")]);
    }

    #[test]
    fn budget() {
        let t = DeficiencyTrace::new(&KtMixture, &s("0000"));
        assert!(budget_check(&t, &|_| 10));
        // M("00") = 4/3 > 2^0
        assert_eq!(first_budget_violation(&t, &|_| 0), Some(2));
        let csv = t.to_csv(&|_| 0);
        assert!(csv.starts_with("j,M,sigma,slack_ok\n0,1/1,0,true\n"));
    }
}
