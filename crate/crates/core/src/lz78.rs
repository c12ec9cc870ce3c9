//! LZ78 incremental parsing with `(prefix_index, bit)` tokens.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{format_rational, rat, to_decimal, BinString, Rational};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Lz78Parse {
    /// `(prefix_index, next_bit)`; index 0 is the empty phrase.
    pub phrases: Vec<(usize, u8)>,
    pub code_length: u64,
}

/// Bits spent on phrase `i >= 1`: `⌈log2 i⌉ + 1`.
pub fn phrase_cost(i: usize) -> u64 {
    debug_assert!(i >= 1);
    let ceil_log = if i <= 1 { 0 } else { usize::BITS - (i - 1).leading_zeros() };
    u64::from(ceil_log) + 1
}

/// Total bits for `k` phrases.
pub fn code_length_for(k: usize) -> u64 {
    (1..=k).map(phrase_cost).sum()
}

/// A trailing piece that is already a phrase is emitted as its parent index and last bit.
pub fn lz78_encode(x: &BinString) -> Lz78Parse {
    let mut dict: HashMap<(usize, u8), usize> = HashMap::new();
    let mut phrases = Vec::new();
    let mut node = 0usize;
    let mut tail: Option<(usize, u8)> = None;
    for &b in x.bits() {
        match dict.get(&(node, b)) {
            Some(&next) => {
                tail = Some((node, b));
                node = next;
            }
            None => {
                phrases.push((node, b));
                dict.insert((node, b), phrases.len());
                node = 0;
                tail = None;
            }
        }
    }
    if node != 0 {
        phrases.push(tail.expect("non-root node has a parent"));
    }
    let code_length = code_length_for(phrases.len());
    Lz78Parse { phrases, code_length }
}

pub fn lz78_decode(parse: &Lz78Parse) -> Result<BinString> {
    let mut table: Vec<BinString> = vec![BinString::new()];
    let mut out = BinString::new();
    for (k, &(p, b)) in parse.phrases.iter().enumerate() {
        if p > k || b > 1 {
            return Err(Error::Code(format!("bad token {k}: ({p}, {b})")));
        }
        let phrase = table[p].child(b);
        out.extend_from(&phrase);
        table.push(phrase);
    }
    Ok(out)
}

/// `code_length(x^n)/n` at each checkpoint.
pub fn ratio_series(x: &BinString, checkpoints: &[usize]) -> Result<Vec<RatioPoint>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Code("checkpoints must be increasing".into()));
    }
    if checkpoints.iter().any(|&n| n == 0 || n > x.len()) {
        return Err(Error::Code(format!("checkpoints must lie in 1..={}", x.len())));
    }
    Ok(checkpoints
        .iter()
        .map(|&n| {
            let bits = lz78_encode(&x.prefix(n)).code_length;
            RatioPoint { n, code_bits: bits, ratio: rat(bits as i64, n as i64) }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RatioPoint {
    pub n: usize,
    pub code_bits: u64,
    #[serde(with = "crate::exact::serde_rational")]
    pub ratio: Rational,
}

/// CSV `n,code_bits,ratio_decimal_20dp,ratio_exact`.
pub fn ratio_csv(points: &[RatioPoint]) -> String {
    let mut out = String::from("n,code_bits,ratio_decimal_20dp,ratio_exact\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.n,
            p.code_bits,
            to_decimal(&p.ratio, 20),
            format_rational(&p.ratio)
        ));
    }
    out
}

/// Mean of `code_length(x)/n` over all strings of length `n`.
pub fn mean_ratio(n: usize) -> Rational {
    let total: u64 = BinString::all_of_length(n).map(|x| lz78_encode(&x).code_length).sum();
    rat(total as i64, (n as i64) << n)
}
