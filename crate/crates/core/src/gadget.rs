//! Columns, gadgets and the cutting-and-stacking calculus.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{factorial, format_rational, int, serde_rational, BinString, Interval, Rational};

/// Identifies column `index` of the gadget labelled `stage`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub stage: u32,
    pub index: usize,
}

/// A stack of equal-width disjoint intervals, bottom level first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub levels: Vec<Interval>,
    pub names: BinString,
    /// Ancestor columns concatenated to build this one (empty for base columns).
    pub lineage: Vec<ColumnRef>,
}

impl Column {
    pub fn new(levels: Vec<Interval>, names: BinString) -> Result<Column> {
        let col = Column { levels, names, lineage: Vec::new() };
        col.validate()?;
        Ok(col)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Gadget("column has no levels".into()));
        }
        if self.levels.len() != self.names.len() {
            return Err(Error::Gadget(format!(
                "column has {} levels but {} names",
                self.levels.len(),
                self.names.len()
            )));
        }
        let w = self.width();
        if !w.is_positive() {
            return Err(Error::Gadget("column width must be positive".into()));
        }
        if self.levels.iter().any(|l| l.length() != w) {
            return Err(Error::Gadget("column levels have unequal widths".into()));
        }
        audit_disjoint(self.levels.iter())
    }

    pub fn width(&self) -> Rational {
        self.levels[0].length()
    }

    pub fn height(&self) -> usize {
        self.levels.len()
    }

    /// `λ(Ê) = w·h`.
    pub fn measure(&self) -> Rational {
        self.width() * int(self.height() as i64)
    }

    /// The level containing `x`, if any.
    pub fn level_of(&self, x: &Rational) -> Option<usize> {
        self.levels.iter().position(|l| l.contains(x))
    }
}

/// A finite collection of columns with disjoint supports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gadget {
    pub stage_id: u32,
    pub columns: Vec<Column>,
}

impl Gadget {
    pub fn new(stage_id: u32, columns: Vec<Column>) -> Result<Gadget> {
        let g = Gadget { stage_id, columns };
        for c in &g.columns {
            c.validate()?;
        }
        g.audit()?;
        Ok(g)
    }

    pub fn width(&self) -> Rational {
        self.columns.iter().map(Column::width).fold(Rational::zero(), |a, b| a + b)
    }

    /// Support measure `λ(Ĝ)`.
    pub fn measure(&self) -> Rational {
        self.columns.iter().map(Column::measure).fold(Rational::zero(), |a, b| a + b)
    }

    pub fn level_count(&self) -> usize {
        self.columns.iter().map(Column::height).sum()
    }

    /// Pairwise disjointness of every level of every column.
    pub fn audit(&self) -> Result<()> {
        audit_disjoint(self.columns.iter().flat_map(|c| c.levels.iter()))
    }

    /// `(column, level)` containing `x`.
    pub fn locate(&self, x: &Rational) -> Option<(usize, usize)> {
        self.columns
            .iter()
            .enumerate()
            .find_map(|(i, c)| c.level_of(x).map(|l| (i, l)))
    }

    /// Same gadget with every column's lineage replaced by a reference to itself.
    pub fn self_labelled(&self) -> Gadget {
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(index, c)| Column {
                lineage: vec![ColumnRef { stage: self.stage_id, index }],
                ..c.clone()
            })
            .collect();
        Gadget { stage_id: self.stage_id, columns }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let columns: Vec<ColumnDump> = self
            .columns
            .iter()
            .map(|c| ColumnDump {
                width: c.width(),
                height: c.height(),
                names: c.names.clone(),
                lineage: c.lineage.iter().map(|r| format!("{}:{}", r.stage, r.index)).collect(),
                levels: c.levels.clone(),
            })
            .collect();
        serde_json::json!({ "stage_id": self.stage_id, "columns": columns })
    }
}

#[derive(Serialize)]
struct ColumnDump {
    #[serde(with = "serde_rational")]
    width: Rational,
    height: usize,
    names: BinString,
    lineage: Vec<String>,
    levels: Vec<Interval>,
}

fn audit_disjoint<'a>(levels: impl Iterator<Item = &'a Interval>) -> Result<()> {
    let mut v: Vec<&Interval> = levels.collect();
    v.sort_by(|a, b| a.lo.cmp(&b.lo));
    for pair in v.windows(2) {
        if pair[0].hi > pair[1].lo {
            return Err(Error::Gadget(format!(
                "overlapping levels [{}, {}) and [{}, {})",
                format_rational(&pair[0].lo),
                format_rational(&pair[0].hi),
                format_rational(&pair[1].lo),
                format_rational(&pair[1].hi)
            )));
        }
    }
    Ok(())
}

/// The two-set observable `π = (π0, π1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub pi0: Vec<Interval>,
    pub pi1: Vec<Interval>,
}

impl Partition {
    pub fn new(pi0: Vec<Interval>, pi1: Vec<Interval>) -> Result<Partition> {
        let mut all: Vec<&Interval> = pi0.iter().chain(pi1.iter()).collect();
        audit_disjoint(all.iter().copied())?;
        all.sort_by(|a, b| a.lo.cmp(&b.lo));
        let mut cursor = Rational::zero();
        for iv in all {
            if iv.lo != cursor {
                return Err(Error::Gadget("partition does not cover [0,1)".into()));
            }
            cursor = iv.hi.clone();
        }
        if cursor != int(1) {
            return Err(Error::Gadget("partition does not cover [0,1)".into()));
        }
        Ok(Partition { pi0, pi1 })
    }

    /// `π1 = [1/2, 1/2 + r)`, `π0` its complement.
    pub fn standard(r: &Rational) -> Result<Partition> {
        let half = Rational::new(BigInt::one(), BigInt::from(2));
        if !r.is_positive() || r > &half {
            return Err(Error::Gadget("partition needs 0 < r <= 1/2".into()));
        }
        let top = &half + r;
        let mut pi0 = vec![Interval::new(Rational::zero(), half.clone())];
        if top < int(1) {
            pi0.push(Interval::new(top.clone(), int(1)));
        }
        Partition::new(pi0, vec![Interval::new(half, top)])
    }

    /// `χ(x)`: 1 on `π1`, 0 on `π0`.
    pub fn symbol(&self, x: &Rational) -> u8 {
        u8::from(self.pi1.iter().any(|iv| iv.contains(x)))
    }

    /// Symbol of an interval lying wholly inside one cell, or `None`.
    pub fn cell_of(&self, iv: &Interval) -> Option<u8> {
        if self.pi1.iter().any(|p| p.contains_interval(iv)) {
            Some(1)
        } else if self.pi0.iter().any(|p| p.contains_interval(iv)) {
            Some(0)
        } else {
            None
        }
    }

    /// Every level of `g` lies in a single cell whose symbol matches its name.
    pub fn compatible_with(&self, g: &Gadget) -> bool {
        g.columns.iter().all(|c| {
            c.levels
                .iter()
                .zip(c.names.bits())
                .all(|(l, &b)| self.cell_of(l) == Some(b))
        })
    }
}

/// `w(E_i)/w(g)` per column.
pub fn distribution(g: &Gadget) -> Result<Vec<Rational>> {
    if g.columns.is_empty() {
        return Err(Error::Gadget("empty gadget".into()));
    }
    let w = g.width();
    Ok(g.columns.iter().map(|c| c.width() / &w).collect())
}

/// Cuts every level left to right into pieces proportional to `weights`.
pub fn cut_copies(g: &Gadget, weights: &[Rational]) -> Result<Vec<Gadget>> {
    if weights.is_empty() || weights.iter().any(|w| !w.is_positive()) {
        return Err(Error::Gadget("cut weights must be positive".into()));
    }
    let total = weights.iter().fold(Rational::zero(), |a, b| a + b);
    if total != int(1) {
        return Err(Error::Gadget(format!("cut weights sum to {}, not 1", format_rational(&total))));
    }
    let mut offsets = Vec::with_capacity(weights.len() + 1);
    let mut acc = Rational::zero();
    offsets.push(acc.clone());
    for w in weights {
        acc += w;
        offsets.push(acc.clone());
    }
    let copies = (0..weights.len())
        .map(|m| {
            let columns = g
                .columns
                .iter()
                .map(|c| {
                    let w = c.width();
                    let levels = c
                        .levels
                        .iter()
                        .map(|l| Interval::new(&l.lo + &w * &offsets[m], &l.lo + &w * &offsets[m + 1]))
                        .collect();
                    Column { levels, names: c.names.clone(), lineage: c.lineage.clone() }
                })
                .collect();
            Gadget { stage_id: g.stage_id, columns }
        })
        .collect();
    Ok(copies)
}

/// `E1*E2`: `e2` placed on top of `e1`.
pub fn stack_columns(e1: &Column, e2: &Column) -> Result<Column> {
    if e1.width() != e2.width() {
        return Err(Error::Gadget(format!(
            "cannot stack columns of widths {} and {}",
            format_rational(&e1.width()),
            format_rational(&e2.width())
        )));
    }
    audit_disjoint(e1.levels.iter().chain(e2.levels.iter()))
        .map_err(|_| Error::Gadget("stacked columns overlap".into()))?;
    Ok(unchecked_stack(e1, e2))
}

fn unchecked_stack(e1: &Column, e2: &Column) -> Column {
    let mut levels = e1.levels.clone();
    levels.extend(e2.levels.iter().cloned());
    let mut lineage = e1.lineage.clone();
    lineage.extend(e2.lineage.iter().copied());
    Column { levels, names: e1.names.concat(&e2.names), lineage }
}

/// `Υ*Λ`: `l` is cut into copies matching the columns of `u` and each copy is
/// stacked on its column. Result columns are ordered `(i, j)` lexicographically.
pub fn stack_gadget_on_gadget(u: &Gadget, l: &Gadget) -> Result<Gadget> {
    let wu = u.width();
    let wl = l.width();
    if wu != wl {
        return Err(Error::Gadget(format!(
            "width mismatch: {} vs {}",
            format_rational(&wu),
            format_rational(&wl)
        )));
    }
    audit_disjoint(u.columns.iter().chain(l.columns.iter()).flat_map(|c| c.levels.iter()))
        .map_err(|_| Error::Gadget("gadget supports overlap".into()))?;
    Ok(product_unchecked(u, l))
}

fn product_unchecked(u: &Gadget, l: &Gadget) -> Gadget {
    let wl = l.width();
    let weights: Vec<Rational> = u.columns.iter().map(|c| c.width() / &wl).collect();
    let copies = cut_copies(l, &weights).expect("column widths give valid weights");
    let shares: Vec<Rational> = l.columns.iter().map(|c| c.width() / &wl).collect();
    let mut columns = Vec::with_capacity(u.columns.len() * l.columns.len());
    for (e, copy) in u.columns.iter().zip(&copies) {
        let pieces = cut_column(e, &shares);
        for (piece, c) in pieces.iter().zip(&copy.columns) {
            columns.push(unchecked_stack(piece, c));
        }
    }
    Gadget { stage_id: u.stage_id, columns }
}

/// Splits every level of `c` left to right into pieces proportional to `shares`.
fn cut_column(c: &Column, shares: &[Rational]) -> Vec<Column> {
    let w = c.width();
    let mut lo = Rational::zero();
    shares
        .iter()
        .map(|s| {
            let hi = &lo + s;
            let levels = c
                .levels
                .iter()
                .map(|l| Interval::new(&l.lo + &w * &lo, &l.lo + &w * &hi))
                .collect();
            lo = hi;
            Column { levels, names: c.names.clone(), lineage: c.lineage.clone() }
        })
        .collect()
}

/// `Υ^{*(m)} = Υ1*(Υ2*(…*Υm))` over `m` equal-width copies. Lineage words of the
/// result are over the columns of `g` (labelled `g.stage_id`); the result is
/// labelled `g.stage_id + 1`.
pub fn independent_cut_stack(g: &Gadget, m: usize) -> Result<Gadget> {
    if m == 0 {
        return Err(Error::Gadget("fold count must be at least 1".into()));
    }
    if g.columns.is_empty() {
        return Err(Error::Gadget("empty gadget".into()));
    }
    let labelled = g.self_labelled();
    let weights = vec![Rational::new(BigInt::one(), BigInt::from(m)); m];
    let mut copies = cut_copies(&labelled, &weights)?;
    let mut acc = copies.pop().expect("m >= 1");
    while let Some(next) = copies.pop() {
        acc = product_unchecked(&next, &acc);
    }
    acc.stage_id = g.stage_id + 1;
    Ok(acc)
}

/// Joins two gadgets with disjoint supports under a new label.
pub fn union(a: &Gadget, b: &Gadget, stage_id: u32) -> Result<Gadget> {
    let mut columns = a.columns.clone();
    columns.extend(b.columns.iter().cloned());
    let g = Gadget { stage_id, columns };
    g.audit()?;
    Ok(g)
}

/// `Σ_D Σ_E |λ(Ê∩D̂) − λ(Ê)λ(D̂)|` with `λ(Ê∩D̂) = #D·h(D)·w(E)` read from lineage.
pub fn well_distribution(lam: &Gadget, up: &Gadget) -> Result<Rational> {
    let words: Vec<Vec<usize>> = up
        .columns
        .iter()
        .map(|e| direct_word(lam, &e.lineage))
        .collect::<Result<_>>()?;
    Ok(metric_from_words(lam, up, &words))
}

/// As [`well_distribution`], but lineage may pass through the intermediate
/// gadgets in `chain` (ordered from just above `lam` up to just below `up`);
/// references are flattened by substituting each column's own lineage.
/// Returns the metric and whether any flattening happened.
pub fn well_distribution_through(lam: &Gadget, chain: &[&Gadget], up: &Gadget) -> Result<(Rational, bool)> {
    let mut multi = false;
    let mut words = Vec::with_capacity(up.columns.len());
    for e in &up.columns {
        let mut word = e.lineage.clone();
        for g in chain.iter().rev() {
            if word.iter().any(|r| r.stage == g.stage_id) {
                multi = true;
                word = flatten_once(g, &word)?;
            }
        }
        words.push(direct_word(lam, &word)?);
    }
    Ok((metric_from_words(lam, up, &words), multi))
}

fn flatten_once(g: &Gadget, word: &[ColumnRef]) -> Result<Vec<ColumnRef>> {
    let mut out = Vec::new();
    for r in word {
        if r.stage == g.stage_id {
            let col = g.columns.get(r.index).ok_or_else(untracked)?;
            if col.lineage.is_empty() {
                return Err(untracked());
            }
            out.extend(col.lineage.iter().copied());
        } else {
            out.push(*r);
        }
    }
    Ok(out)
}

fn untracked() -> Error {
    Error::Gadget("lineage not tracked to requested stage".into())
}

fn direct_word(lam: &Gadget, lineage: &[ColumnRef]) -> Result<Vec<usize>> {
    if lineage.is_empty() {
        return Err(untracked());
    }
    lineage
        .iter()
        .map(|r| {
            if r.stage == lam.stage_id && r.index < lam.columns.len() {
                Ok(r.index)
            } else {
                Err(untracked())
            }
        })
        .collect()
}

fn metric_from_words(lam: &Gadget, up: &Gadget, words: &[Vec<usize>]) -> Rational {
    let lam_d: Vec<Rational> = lam.columns.iter().map(Column::measure).collect();
    let total: Rational = lam_d.iter().fold(Rational::zero(), |a, b| a + b);
    let mut sum = Rational::zero();
    for (e, word) in up.columns.iter().zip(words) {
        let we = e.width();
        let le = e.measure();
        let mut counts: HashMap<usize, i64> = HashMap::new();
        for &d in word {
            *counts.entry(d).or_default() += 1;
        }
        let mut seen = Rational::zero();
        for (&d, &n) in &counts {
            let inter = int(n * lam.columns[d].height() as i64) * &we;
            sum += (inter - &le * &lam_d[d]).abs();
            seen += &lam_d[d];
        }
        sum += &le * (&total - seen);
    }
    sum
}

/// Exact well-distribution of a gadget in its `m`-fold independent
/// cut-and-stack, computed from letter compositions instead of materializing
/// the `K^m` columns. Letters are `(w(D)/w(Λ), h(D))`; `lam_width = w(Λ)`.
/// Returns `None` when more than `budget` compositions would be needed.
pub fn fold_metric(letters: &[(Rational, usize)], lam_width: &Rational, m: usize, budget: u64) -> Option<Rational> {
    let k = letters.len();
    if k == 0 || m == 0 || composition_count(m as u64, k as u64) > BigUint::from(budget) {
        return None;
    }
    let lam_d: Vec<Rational> = letters
        .iter()
        .map(|(p, h)| p * lam_width * int(*h as i64))
        .collect();
    let fact: Vec<BigUint> = (0..=m as u64).map(factorial).collect();
    let powers: Vec<Vec<Rational>> = letters
        .iter()
        .map(|(p, _)| {
            let mut v = vec![Rational::one()];
            for i in 0..m {
                let next = &v[i] * p;
                v.push(next);
            }
            v
        })
        .collect();
    let base_w = lam_width / int(m as i64);
    let mut sum = Rational::zero();
    let mut c = vec![0usize; k];
    for_each_composition(m, &mut c, 0, &mut |c| {
        let mut mult = fact[m].clone();
        let mut w = base_w.clone();
        let mut h_e = 0usize;
        for (i, &ci) in c.iter().enumerate() {
            mult /= &fact[ci];
            w *= &powers[i][ci];
            h_e += ci * letters[i].1;
        }
        let h_e = int(h_e as i64);
        let inner = c
            .iter()
            .enumerate()
            .map(|(i, &ci)| (int((ci * letters[i].1) as i64) - &h_e * &lam_d[i]).abs())
            .fold(Rational::zero(), |a, b| a + b);
        sum += Rational::from_integer(BigInt::from(mult)) * w * inner;
    });
    Some(sum)
}

/// `C(m + k − 1, k − 1)`, the number of compositions of `m` into `k` parts.
pub fn composition_count(m: u64, k: u64) -> BigUint {
    crate::exact::binomial(m + k - 1, k - 1)
}

fn for_each_composition(left: usize, c: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
    if i + 1 == c.len() {
        c[i] = left;
        f(c);
        return;
    }
    for v in 0..=left {
        c[i] = v;
        for_each_composition(left - v, c, i + 1, f);
    }
}

/// Doubles `m` from 1 until the fold metric drops below `eps`.
/// Returns the first such `m` with its metric.
pub fn fold_search(g: &Gadget, eps: &Rational, max_m: usize, budget: u64) -> Result<(usize, Rational)> {
    let dist = distribution(g)?;
    let letters: Vec<(Rational, usize)> = dist.into_iter().zip(g.columns.iter().map(Column::height)).collect();
    let w = g.width();
    let mut m = 1usize;
    let mut best: Option<(usize, Rational)> = None;
    while m <= max_m {
        match fold_metric(&letters, &w, m, budget) {
            Some(v) => {
                if &v < eps {
                    return Ok((m, v));
                }
                best = Some((m, v));
            }
            None => break,
        }
        m *= 2;
    }
    Err(Error::Gadget(match best {
        Some((m, v)) => format!("no fold count below the cap reaches the target; best m={m} metric {}", format_rational(&v)),
        None => "fold metric not computable within budget".into(),
    }))
}
