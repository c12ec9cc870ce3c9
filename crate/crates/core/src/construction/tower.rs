//! Stages `Π_s`, `Δ_s` of the instability construction with lazily indexed columns.
//!
//! `Π_s` is the `R_s`-fold independent cut-and-stack of `Λ_s = Π_{s-1} ∪ Δ''_{s-1}`.
//! Its columns are words `i_1 … i_R` over the letters of `Λ_s` (the columns of
//! `Π_{s-1}` in order, then `Δ''_{s-1}` last), indexed in base `K_s` with the
//! bottom letter most significant. A level of letter `i_t` sits in slice `t` of
//! the letter's level, and inside the slice the pieces are ordered
//! lexicographically by `(i_{t+1}, …, i_R, i_{t-1}, …, i_1)` with weights equal to
//! the letter shares. `Δ_s` always has one column and is kept explicitly.

use std::ops::Range;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{dyadic_exponent, format_rational, int, pow2, rat, BinString, Interval, Rational};
use crate::gadget::{cut_copies, fold_metric, independent_cut_stack, union, Column, Gadget, Partition};
use crate::transform::StageMap;

/// Stages with at most this many `Π_s` columns keep per-column data in memory.
pub const DEFAULT_CACHE_LIMIT: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColInfo {
    pub width: Rational,
    pub height: u64,
    pub ones: u64,
}

/// Well-distribution certificate of `Λ_s` in `Π_s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FoldCertificate {
    pub fold: u64,
    #[serde(with = "crate::exact::serde_rational")]
    pub threshold: Rational,
    /// Exact metric, `None` when the composition budget was exceeded.
    #[serde(with = "crate::exact::serde_opt_rational")]
    pub metric: Option<Rational>,
    /// `S·(S − Σ of the R largest λ(D̂))`: no column meets more than `R` letters.
    #[serde(with = "crate::exact::serde_opt_rational")]
    pub lower_bound: Option<Rational>,
    pub certified: bool,
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub s: u32,
    /// `R_s` (1 at stage 0).
    pub fold: u64,
    /// `K_s`, the number of letters of `Λ_s` (0 at stage 0).
    pub radix: BigUint,
    /// `N_s`, the number of columns of `Π_s`.
    pub columns: BigUint,
    pub pi_width: Rational,
    pub lambda_width: Rational,
    pub pi_measure: Rational,
    pub delta: Column,
    pub certificate: Option<FoldCertificate>,
    cache: Option<Vec<ColInfo>>,
    /// Cumulative letter shares of `Λ_s`, `K_s + 1` entries.
    cum: Option<Vec<Rational>>,
}

impl Stage {
    pub fn radix_u128(&self) -> Option<u128> {
        self.radix.to_u128()
    }

    pub fn columns_u128(&self) -> Option<u128> {
        self.columns.to_u128()
    }

    pub fn delta_measure(&self) -> Rational {
        self.delta.measure()
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }
}

/// How `R_s` is chosen when a stage is added.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum FoldChoice {
    Fixed(u64),
    /// Smallest power of two `<= cap` meeting the width bound and the certificate.
    Search { cap: u64 },
}

/// A level of a `Π_s` column met by a query interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelCell {
    pub column: u128,
    pub level: usize,
    pub height: u64,
    pub interval: Interval,
    pub clip: Interval,
}

#[derive(Clone, Debug)]
pub struct Tower {
    pub r: Rational,
    pub partition: Partition,
    /// Stage-0 level width is `2^-base_exp`.
    pub base_exp: u32,
    pub pi0: Column,
    pub stages: Vec<Stage>,
    pub cache_limit: u128,
    pub metric_budget: u64,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Construction(msg.into())
}

impl Tower {
    /// Stage 0: `Π_0` from `[0, 1/2 − r) ∪ [1/2 + r, 1)` and `Δ_0` from
    /// `[1/2 − r, 1/2 + r)`, each cut into levels of width `2^-max(h_0, t)` where
    /// `r = p/2^t`, stacked left to right.
    pub fn new(r: &Rational, h0: u128) -> Result<Tower> {
        let t = dyadic_exponent(r).ok_or_else(|| err(format!("r must be dyadic, got {}", format_rational(r))))?;
        if r <= &Rational::zero() || r > &rat(1, 8) {
            return Err(err(format!("r must satisfy 0 < r <= 1/8, got {}", format_rational(r))));
        }
        let base_exp = (h0 as u32).max(t);
        if h0 > 24 || base_exp > 24 {
            return Err(err(format!("stage-0 width 2^-{base_exp} is too fine to materialize")));
        }
        let partition = Partition::standard(r)?;
        let half = rat(1, 2);
        let w = pow2(-(base_exp as i64));
        let cut = |lo: Rational, hi: Rational| -> Vec<Interval> {
            let mut v = Vec::new();
            let mut x = lo;
            while x < hi {
                let next = &x + &w;
                v.push(Interval::new(x, next.clone()));
                x = next;
            }
            v
        };
        let mut pi_levels = cut(Rational::zero(), &half - r);
        pi_levels.extend(cut(&half + r, int(1)));
        let delta_levels = cut(&half - r, &half + r);
        let names = |levels: &[Interval]| -> Result<BinString> {
            levels
                .iter()
                .map(|l| partition.cell_of(l).ok_or_else(|| err("stage-0 level straddles the partition")))
                .collect::<Result<Vec<u8>>>()
                .map(BinString::from_bits)
        };
        let pi0 = Column::new(pi_levels.clone(), names(&pi_levels)?)?;
        let delta0 = Column::new(delta_levels.clone(), names(&delta_levels)?)?;
        let stage0 = Stage {
            s: 0,
            fold: 1,
            radix: BigUint::zero(),
            columns: BigUint::one(),
            pi_width: w.clone(),
            lambda_width: w.clone(),
            pi_measure: pi0.measure(),
            delta: delta0,
            certificate: None,
            cache: Some(vec![ColInfo { width: w, height: pi0.height() as u64, ones: pi0.names.ones() as u64 }]),
            cum: None,
        };
        Ok(Tower {
            r: r.clone(),
            partition,
            base_exp,
            pi0,
            stages: vec![stage0],
            cache_limit: DEFAULT_CACHE_LIMIT,
            metric_budget: 1 << 20,
        })
    }

    pub fn top(&self) -> u32 {
        self.stages.len() as u32 - 1
    }

    pub fn stage(&self, s: u32) -> Result<&Stage> {
        self.stages.get(s as usize).ok_or_else(|| err(format!("stage {s} not built")))
    }

    /// `K_s − 1`: the letter index of `Δ''_{s-1}` in `Λ_s`.
    pub fn delta_letter(&self, s: u32) -> Result<u128> {
        let st = self.stage(s)?;
        st.radix_u128()
            .and_then(|k| k.checked_sub(1))
            .ok_or_else(|| err(format!("stage {s} letters exceed the index range")))
    }

    fn delta_pp_info(&self, s_minus_1: u32) -> Result<ColInfo> {
        let d = &self.stage(s_minus_1)?.delta;
        Ok(ColInfo { width: d.width() / int(2), height: d.height() as u64, ones: d.names.ones() as u64 })
    }

    /// Digits `i_1 … i_R` of column `c` of `Π_s`.
    pub fn word(&self, s: u32, c: u128) -> Result<Vec<u128>> {
        let st = self.stage(s)?;
        if s == 0 {
            return if c == 0 { Ok(vec![0]) } else { Err(err("stage 0 has one column")) };
        }
        let k = st.radix_u128().ok_or_else(|| err(format!("stage {s} letters exceed the index range")))?;
        let n = st.columns_u128().ok_or_else(|| err(format!("stage {s} columns exceed the index range")))?;
        if c >= n {
            return Err(err(format!("column {c} out of range at stage {s}")));
        }
        let mut digits = vec![0u128; st.fold as usize];
        let mut rest = c;
        for d in digits.iter_mut().rev() {
            *d = rest % k;
            rest /= k;
        }
        Ok(digits)
    }

    pub fn index_of(&self, s: u32, word: &[u128]) -> Result<u128> {
        if s == 0 {
            return Ok(0);
        }
        let k = self.stage(s)?.radix_u128().ok_or_else(|| err("letters exceed the index range"))?;
        word.iter().try_fold(0u128, |acc, &d| {
            acc.checked_mul(k).and_then(|v| v.checked_add(d)).ok_or_else(|| err("column index overflow"))
        })
    }

    /// Width, height and ones of `Π_s` column `c`.
    pub fn col_info(&self, s: u32, c: u128) -> Result<ColInfo> {
        let st = self.stage(s)?;
        if let Some(cache) = &st.cache {
            return usize::try_from(c)
                .ok()
                .and_then(|i| cache.get(i))
                .cloned()
                .ok_or_else(|| err(format!("column {c} out of range at stage {s}")));
        }
        let word = self.word(s, c)?;
        self.info_from_word(s, &word)
    }

    fn info_from_word(&self, s: u32, word: &[u128]) -> Result<ColInfo> {
        let st = self.stage(s)?;
        let mut width = Rational::one();
        let (mut height, mut ones) = (0u64, 0u64);
        for &d in word {
            let li = self.letter_info(s, d)?;
            width *= &li.width / &st.lambda_width;
            height += li.height;
            ones += li.ones;
        }
        Ok(ColInfo { width: width * &st.lambda_width / int(st.fold as i64), height, ones })
    }

    /// Letter `j` of `Λ_s`.
    pub fn letter_info(&self, s: u32, j: u128) -> Result<ColInfo> {
        if j == self.delta_letter(s)? {
            self.delta_pp_info(s - 1)
        } else {
            self.col_info(s - 1, j)
        }
    }

    /// Share `w(letter)/w(Λ_s)`.
    pub fn share(&self, s: u32, j: u128) -> Result<Rational> {
        let st = self.stage(s)?;
        if let Some(cum) = &st.cum {
            let i = j as usize;
            return Ok(&cum[i + 1] - &cum[i]);
        }
        Ok(self.letter_info(s, j)?.width / &st.lambda_width)
    }

    /// Cumulative share of the letters before `j`; `j = K_s` gives 1.
    pub fn cum_share(&self, s: u32, j: u128) -> Result<Rational> {
        let st = self.stage(s)?;
        if let Some(cum) = &st.cum {
            return usize::try_from(j)
                .ok()
                .and_then(|i| cum.get(i))
                .cloned()
                .ok_or_else(|| err(format!("letter {j} out of range at stage {s}")));
        }
        let dl = self.delta_letter(s)?;
        if j > dl + 1 {
            return Err(err(format!("letter {j} out of range at stage {s}")));
        }
        if j == dl + 1 {
            return Ok(int(1));
        }
        if j == dl {
            return Ok(&self.stage(s - 1)?.pi_width / &st.lambda_width);
        }
        Ok(self.prefix_width(s - 1, j)? / &st.lambda_width)
    }

    /// Total width of the `Π_s` columns before `c`.
    fn prefix_width(&self, s: u32, c: u128) -> Result<Rational> {
        if s == 0 {
            return Ok(Rational::zero());
        }
        let st = self.stage(s)?;
        let mut acc = Rational::zero();
        let mut scale = Rational::one();
        for d in self.word(s, c)? {
            acc += &scale * self.cum_share(s, d)?;
            scale *= self.share(s, d)?;
        }
        Ok(acc * &st.lambda_width / int(st.fold as i64))
    }

    /// Letter `j` of `Λ_s` with `cum(j) <= g < cum(j + 1)`, for `0 <= g < 1`.
    pub fn letter_at(&self, s: u32, g: &Rational) -> Result<u128> {
        let st = self.stage(s)?;
        let dl = self.delta_letter(s)?;
        if let Some(cum) = &st.cum {
            return Ok(((cum.partition_point(|c| c <= g) - 1) as u128).min(dl));
        }
        let x = g * &st.lambda_width;
        let prev = self.stage(s - 1)?;
        if x >= prev.pi_width {
            return Ok(dl);
        }
        self.column_at(s - 1, &x)
    }

    /// Column of `Π_s` whose slot in the concatenated column widths contains `x`.
    fn column_at(&self, s: u32, x: &Rational) -> Result<u128> {
        if s == 0 {
            return Ok(0);
        }
        let st = self.stage(s)?;
        let mut g = x * int(st.fold as i64) / &st.lambda_width;
        let mut word = Vec::with_capacity(st.fold as usize);
        for _ in 0..st.fold {
            let d = self.letter_at(s, &g)?;
            g = (g - self.cum_share(s, d)?) / self.share(s, d)?;
            word.push(d);
        }
        self.index_of(s, &word)
    }

    /// Letters of `Λ_s` whose piece of `[lo, lo + len)` meets `j`.
    pub fn letters_meeting(&self, s: u32, lo: &Rational, len: &Rational, j: &Interval) -> Result<Range<u128>> {
        let a = (&j.lo - lo) / len;
        let b = (&j.hi - lo) / len;
        if b <= Rational::zero() || a >= int(1) {
            return Ok(0..0);
        }
        let dl = self.delta_letter(s)?;
        let first = if a < Rational::zero() { 0 } else { self.letter_at(s, &a)? };
        let last = if b >= int(1) {
            dl
        } else {
            let c = self.letter_at(s, &b)?;
            if self.cum_share(s, c)? == b {
                c - 1
            } else {
                c
            }
        };
        Ok(first..(last + 1).max(first))
    }

    /// Trajectory name of `Π_s` column `c`.
    pub fn col_name(&self, s: u32, c: u128) -> Result<BinString> {
        if s == 0 {
            return Ok(self.pi0.names.clone());
        }
        let mut out = BinString::new();
        for d in self.word(s, c)? {
            out.extend_from(&self.letter_name(s, d)?);
        }
        Ok(out)
    }

    pub fn letter_name(&self, s: u32, j: u128) -> Result<BinString> {
        if j == self.delta_letter(s)? {
            Ok(self.stage(s - 1)?.delta.names.clone())
        } else {
            self.col_name(s - 1, j)
        }
    }

    /// Level `l` of letter `j` of `Λ_s`.
    pub fn letter_level(&self, s: u32, j: u128, l: usize) -> Result<Interval> {
        if j == self.delta_letter(s)? {
            let d = &self.stage(s - 1)?.delta;
            let lv = d.levels.get(l).ok_or_else(|| err("level out of range"))?;
            let w = d.width() / int(2);
            Ok(Interval::new(&lv.lo + &w, lv.hi.clone()))
        } else {
            self.level_interval(s - 1, j, l)
        }
    }

    /// Level `l` of `Π_s` column `c`.
    pub fn level_interval(&self, s: u32, c: u128, l: usize) -> Result<Interval> {
        if s == 0 {
            return self.pi0.levels.get(l).cloned().ok_or_else(|| err("level out of range"));
        }
        let st = self.stage(s)?;
        let word = self.word(s, c)?;
        let r = st.fold as usize;
        let mut base = 0u64;
        let mut t = None;
        for (i, &d) in word.iter().enumerate() {
            let h = self.letter_info(s, d)?.height;
            if (l as u64) < base + h {
                t = Some(i);
                break;
            }
            base += h;
        }
        let t = t.ok_or_else(|| err("level out of range"))?;
        let e = word[t];
        let lv = self.letter_level(s, e, (l as u64 - base) as usize)?;
        let we = lv.length();
        let mut offset = Rational::zero();
        let mut scale = Rational::one();
        for &d in word[t + 1..].iter().chain(word[..t].iter().rev()) {
            offset += &scale * self.cum_share(s, d)?;
            scale *= self.share(s, d)?;
        }
        let slice = &we / int(r as i64);
        let lo = &lv.lo + &slice * (int(t as i64) + offset);
        let hi = &lo + &slice * scale;
        Ok(Interval::new(lo, hi))
    }

    /// Every level of `Π_s` column `c`, bottom to top.
    pub fn column_levels(&self, s: u32, c: u128) -> Result<Vec<Interval>> {
        if s == 0 {
            return Ok(self.pi0.levels.clone());
        }
        let st = self.stage(s)?;
        let word = self.word(s, c)?;
        let r = int(st.fold as i64);
        let mut out = Vec::new();
        for (t, &e) in word.iter().enumerate() {
            let mut offset = Rational::zero();
            let mut scale = Rational::one();
            for &d in word[t + 1..].iter().chain(word[..t].iter().rev()) {
                offset += &scale * self.cum_share(s, d)?;
                scale *= self.share(s, d)?;
            }
            let shift = int(t as i64) + offset;
            for lv in self.letter_levels(s, e)? {
                let slice = lv.length() / &r;
                let lo = &lv.lo + &slice * &shift;
                let hi = &lo + &slice * &scale;
                out.push(Interval::new(lo, hi));
            }
        }
        Ok(out)
    }

    fn letter_levels(&self, s: u32, j: u128) -> Result<Vec<Interval>> {
        if j == self.delta_letter(s)? {
            let d = &self.stage(s - 1)?.delta;
            let w = d.width() / int(2);
            Ok(d.levels.iter().map(|lv| Interval::new(&lv.lo + &w, lv.hi.clone())).collect())
        } else {
            self.column_levels(s - 1, j)
        }
    }

    /// `(column, level)` of `Π_s` containing `x`.
    pub fn locate(&self, s: u32, x: &Rational) -> Result<Option<(u128, usize)>> {
        if s == 0 {
            return Ok(self.pi0.level_of(x).map(|l| (0, l)));
        }
        let st = self.stage(s)?;
        let dl = self.delta_letter(s)?;
        let (e, l, lv) = if let Some((c, l)) = self.locate(s - 1, x)? {
            (c, l, self.level_interval(s - 1, c, l)?)
        } else {
            let d = &self.stage(s - 1)?.delta;
            match d.level_of(x) {
                Some(l) => {
                    let lv = self.letter_level(s, dl, l)?;
                    if !lv.contains(x) {
                        return Ok(None);
                    }
                    (dl, l, lv)
                }
                None => return Ok(None),
            }
        };
        let r = st.fold as usize;
        let f = (x - &lv.lo) / lv.length() * int(r as i64);
        let t = f.floor().to_integer().to_usize().expect("slice index");
        let mut g = f - int(t as i64);
        let mut word = vec![0u128; r];
        word[t] = e;
        for pos in (t + 1..r).chain((0..t).rev()) {
            let j = self.letter_at(s, &g)?;
            g = (g - self.cum_share(s, j)?) / self.share(s, j)?;
            word[pos] = j;
        }
        let mut level = l as u64;
        for &d in &word[..t] {
            level += self.letter_info(s, d)?.height;
        }
        Ok(Some((self.index_of(s, &word)?, level as usize)))
    }

    /// Every level of a `Π_s` column meeting `j`, in left-to-right order per parent level.
    /// Fails once more than `cap` cells would be produced.
    pub fn levels_in(&self, s: u32, j: &Interval, cap: usize) -> Result<Vec<LevelCell>> {
        if s == 0 {
            return Ok(self
                .pi0
                .levels
                .iter()
                .enumerate()
                .filter_map(|(l, lv)| {
                    lv.intersect(j).map(|clip| LevelCell {
                        column: 0,
                        level: l,
                        height: self.pi0.height() as u64,
                        interval: lv.clone(),
                        clip,
                    })
                })
                .collect());
        }
        let st = self.stage(s)?;
        let dl = self.delta_letter(s)?;
        let mut parents: Vec<(u128, usize, Interval)> =
            self.levels_in(s - 1, j, cap)?.into_iter().map(|c| (c.column, c.level, c.interval)).collect();
        let d = &self.stage(s - 1)?.delta;
        for l in 0..d.height() {
            let lv = self.letter_level(s, dl, l)?;
            if lv.overlaps(j) {
                parents.push((dl, l, lv));
            }
        }
        let r = st.fold as usize;
        let mut out = Vec::new();
        for (e, l, lv) in parents {
            let slice = lv.length() / int(r as i64);
            for t in 0..r {
                let lo = &lv.lo + &slice * int(t as i64);
                let iv = Interval::new(lo.clone(), &lo + &slice);
                if !iv.overlaps(j) {
                    continue;
                }
                let mut word = vec![0u128; r];
                word[t] = e;
                let order: Vec<usize> = (t + 1..r).chain((0..t).rev()).collect();
                self.descend(s, &order, 0, iv, &mut word, t, l, j, cap, &mut out)?;
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        s: u32,
        order: &[usize],
        depth: usize,
        iv: Interval,
        word: &mut [u128],
        t: usize,
        l: usize,
        j: &Interval,
        cap: usize,
        out: &mut Vec<LevelCell>,
    ) -> Result<()> {
        if depth == order.len() {
            if out.len() >= cap {
                return Err(err(format!("more than {cap} level cells at stage {s}")));
            }
            let mut level = l as u64;
            let mut height = 0u64;
            for (i, &d) in word.iter().enumerate() {
                let h = self.letter_info(s, d)?.height;
                if i < t {
                    level += h;
                }
                height += h;
            }
            let clip = iv.intersect(j).expect("overlapping cell");
            out.push(LevelCell { column: self.index_of(s, word)?, level: level as usize, height, interval: iv, clip });
            return Ok(());
        }
        let len = iv.length();
        for c in self.letters_meeting(s, &iv.lo, &len, j)? {
            let lo = &iv.lo + &len * self.cum_share(s, c)?;
            let hi = &lo + &len * self.share(s, c)?;
            word[order[depth]] = c;
            self.descend(s, order, depth + 1, Interval::new(lo, hi), word, t, l, j, cap, out)?;
        }
        Ok(())
    }

    /// Appends stage `s = top + 1` with `w(Π_s) <= 2^-h_s`.
    pub fn advance(&mut self, h_s: u128, choice: &FoldChoice) -> Result<&Stage> {
        let s = self.top() + 1;
        let prev = self.stage(s - 1)?;
        let lambda_width = &prev.pi_width + prev.delta.width() / int(2);
        let bound = if h_s > 4096 { Rational::zero() } else { pow2(-(h_s as i64)) };
        let fold = match choice {
            FoldChoice::Fixed(r) => {
                if *r == 0 {
                    return Err(err("fold count must be positive"));
                }
                if &lambda_width / int(*r as i64) > bound {
                    return Err(err(format!(
                        "R_{s} = {r} leaves w(Π_{s}) = {} above 2^-{h_s}",
                        format_rational(&(&lambda_width / int(*r as i64)))
                    )));
                }
                *r
            }
            FoldChoice::Search { cap } => {
                let mut tried = Vec::new();
                let mut found = None;
                let mut r = 2u64;
                while r <= *cap {
                    if &lambda_width / int(r as i64) <= bound {
                        let cert = self.certificate(s, r, &lambda_width)?;
                        if cert.certified {
                            found = Some(r);
                            break;
                        }
                        tried.push(describe(&cert));
                    } else {
                        tried.push(format!("R={r}: width above 2^-{h_s}"));
                    }
                    r *= 2;
                }
                found.ok_or_else(|| err(format!("R_{s} search exceeded cap {cap}; best metrics: {}", tried.join("; "))))?
            }
        };
        let certificate = Some(self.certificate(s, fold, &lambda_width)?);
        let prev = self.stage(s - 1)?;
        let radix = &prev.columns + BigUint::one();
        let columns = num_traits::pow::pow(radix.clone(), fold as usize);
        let pi_width = &lambda_width / int(fold as i64);
        let delta = fold_single(&prev.delta, fold);
        // letter table for positional queries
        let cum = match prev.cache.as_ref() {
            Some(cache) => {
                let mut v = Vec::with_capacity(cache.len() + 2);
                let mut acc = Rational::zero();
                v.push(acc.clone());
                for ci in cache {
                    acc += &ci.width / &lambda_width;
                    v.push(acc.clone());
                }
                v.push(int(1));
                Some(v)
            }
            None => None,
        };
        // λ(Π̂_s) = Σ over letters of w·h (the fold preserves support)
        let pi_measure = match prev.cache.as_ref() {
            Some(cache) => cache
                .iter()
                .fold(Rational::zero(), |a, c| a + &c.width * int(c.height as i64))
                + prev.delta.measure() / int(2),
            None => &prev.pi_measure + prev.delta.measure() / int(2),
        };
        self.stages.push(Stage {
            s,
            fold,
            radix,
            columns: columns.clone(),
            pi_width,
            lambda_width,
            pi_measure,
            delta,
            certificate,
            cache: None,
            cum,
        });
        if columns <= BigUint::from(self.cache_limit) {
            let n = columns.to_u128().expect("within cache limit");
            let cache = (0..n)
                .map(|c| self.word(s, c).and_then(|w| self.info_from_word(s, &w)))
                .collect::<Result<Vec<_>>>()?;
            let direct = cache.iter().fold(Rational::zero(), |a, c| a + &c.width * int(c.height as i64));
            let st = self.stages.last_mut().expect("just pushed");
            st.pi_measure = direct;
            st.cache = Some(cache);
        }
        self.stage(s)
    }

    /// Certificate for folding `Λ_s` `r` times.
    fn certificate(&self, s: u32, r: u64, lambda_width: &Rational) -> Result<FoldCertificate> {
        let prev = self.stage(s - 1)?;
        let threshold = rat(1, s as i64);
        let Some(cache) = prev.cache.as_ref() else {
            return Ok(FoldCertificate { fold: r, threshold, metric: None, lower_bound: None, certified: false });
        };
        let dpp = self.delta_pp_info(s - 1)?;
        let letters: Vec<(Rational, usize)> = cache
            .iter()
            .chain(std::iter::once(&dpp))
            .map(|c| (&c.width / lambda_width, c.height as usize))
            .collect();
        let mut lams: Vec<Rational> = cache
            .iter()
            .chain(std::iter::once(&dpp))
            .map(|c| &c.width * int(c.height as i64))
            .collect();
        let total = lams.iter().fold(Rational::zero(), |a, b| a + b);
        lams.sort_unstable_by(|a, b| b.cmp(a));
        let top = lams.iter().take(r as usize).fold(Rational::zero(), |a, b| a + b);
        let lower = (&total * (&total - top)).max(Rational::zero());
        let metric = if lower >= threshold {
            None
        } else {
            fold_metric(&letters, lambda_width, r as usize, self.metric_budget)
        };
        let certified = metric.as_ref().is_some_and(|m| m < &threshold);
        Ok(FoldCertificate { fold: r, threshold, metric, lower_bound: Some(lower), certified })
    }

    /// Exact `λ(Π̂_s)`, `λ(Δ̂_s)` and the targets `1 − 2^{-s+1} r`, `2^{-s+1} r`.
    pub fn measure_ledger(&self, s: u32) -> Result<MeasureLedger> {
        let st = self.stage(s)?;
        let delta_target = pow2(1 - s as i64) * &self.r;
        let pi_target = int(1) - &delta_target;
        Ok(MeasureLedger {
            s,
            pi: st.pi_measure.clone(),
            delta: st.delta.measure(),
            pi_target: pi_target.clone(),
            delta_target: delta_target.clone(),
            exact: st.pi_measure == pi_target && st.delta.measure() == delta_target,
            direct: st.cache.is_some(),
        })
    }

    /// `γ_s = λ(Δ̂'')/λ(Π̂_{s-1})` from the stage measures, and the printed closed
    /// form `2^{-s+1} r / (1 − 2^{-s+2})` when its denominator is positive.
    pub fn gamma(&self, s: u32) -> Result<(Rational, Option<Rational>)> {
        if s == 0 {
            return Err(err("γ is defined for s >= 1"));
        }
        let prev = self.stage(s - 1)?;
        let exact = prev.delta.measure() / int(2) / &prev.pi_measure;
        let den = int(1) - pow2(2 - s as i64);
        let printed = (den > Rational::zero()).then(|| pow2(1 - s as i64) * &self.r / den);
        Ok((exact, printed))
    }

    /// Checks every level of up to `max_columns` evenly spaced columns of `Π_s`:
    /// equal widths (so `T` carries each level onto the next with equal measure),
    /// containment in `[0, 1)` and pairwise disjointness.
    pub fn level_audit(&self, s: u32, max_columns: u128) -> Result<LevelAudit> {
        let st = self.stage(s)?;
        let n = st.columns_u128().ok_or_else(|| err(format!("stage {s} columns exceed the index range")))?;
        let take = n.min(max_columns.max(1));
        let mut levels = 0u64;
        for i in 0..take {
            let c = if take == n { i } else { i * (n / take) };
            let info = self.col_info(s, c)?;
            let mut ivs = self.column_levels(s, c)?;
            if ivs.len() as u64 != info.height {
                return Err(err(format!("stage {s} column {c} has {} levels, expected {}", ivs.len(), info.height)));
            }
            for (l, iv) in ivs.iter().enumerate() {
                if iv.length() != info.width || iv.lo < Rational::zero() || iv.hi > int(1) {
                    return Err(err(format!("stage {s} column {c} level {l} has the wrong width or range")));
                }
            }
            ivs.sort_by(|a, b| a.lo.cmp(&b.lo));
            if ivs.windows(2).any(|w| w[0].hi > w[1].lo) {
                return Err(err(format!("stage {s} column {c} has overlapping levels")));
            }
            levels += info.height;
        }
        Ok(LevelAudit { s, columns_checked: take, levels_checked: levels, exhaustive: take == n })
    }

    /// Explicit `Π_s` with every column materialized, when small enough.
    pub fn pi_gadget(&self, s: u32, max_levels: u64) -> Result<Gadget> {
        let st = self.stage(s)?;
        let n = st.columns_u128().ok_or_else(|| err("too many columns"))?;
        let mut total = 0u64;
        let mut columns = Vec::new();
        for c in 0..n {
            let info = self.col_info(s, c)?;
            total += info.height;
            if total > max_levels {
                return Err(err(format!("Π_{s} has more than {max_levels} levels")));
            }
            let levels = self.column_levels(s, c)?;
            columns.push(Column { levels, names: self.col_name(s, c)?, lineage: Vec::new() });
        }
        Ok(Gadget { stage_id: s, columns })
    }

    /// Rebuilds `Π_s`, `Δ_s` through the gadget calculus from stage 0.
    pub fn explicit_route(&self, s: u32) -> Result<(Gadget, Gadget)> {
        let mut pi = Gadget::new(0, vec![self.pi0.clone()])?;
        let mut delta = Gadget::new(0, vec![self.stage(0)?.delta.clone()])?;
        for k in 1..=s {
            let fold = self.stage(k)?.fold as usize;
            let halves = cut_copies(&delta, &[rat(1, 2), rat(1, 2)])?;
            let lam = union(&pi, &halves[1], k - 1)?;
            pi = independent_cut_stack(&lam, fold)?;
            delta = independent_cut_stack(&halves[0], fold)?;
        }
        Ok((pi, delta))
    }
}

fn describe(c: &FoldCertificate) -> String {
    let m = c.metric.as_ref().map_or("over budget".to_string(), format_rational);
    let lb = c.lower_bound.as_ref().map_or("n/a".to_string(), format_rational);
    format!("R={}: metric {m}, lower bound {lb}", c.fold)
}

/// `R`-fold cut-and-stack of the left half of a single column.
fn fold_single(d: &Column, r: u64) -> Column {
    let half = d.width() / int(2);
    let slice = &half / int(r as i64);
    let mut levels = Vec::with_capacity(d.height() * r as usize);
    let mut names = BinString::new();
    for t in 0..r {
        for lv in &d.levels {
            let lo = &lv.lo + &slice * int(t as i64);
            levels.push(Interval::new(lo.clone(), lo + &slice));
        }
        names.extend_from(&d.names);
    }
    Column { levels, names, lineage: Vec::new() }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MeasureLedger {
    pub s: u32,
    #[serde(with = "crate::exact::serde_rational")]
    pub pi: Rational,
    #[serde(with = "crate::exact::serde_rational")]
    pub delta: Rational,
    #[serde(with = "crate::exact::serde_rational")]
    pub pi_target: Rational,
    #[serde(with = "crate::exact::serde_rational")]
    pub delta_target: Rational,
    pub exact: bool,
    /// `λ(Π̂_s)` summed over materialized columns rather than letters.
    pub direct: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LevelAudit {
    pub s: u32,
    pub columns_checked: u128,
    pub levels_checked: u64,
    pub exhaustive: bool,
}

/// `T` of stage `s` of a tower.
pub struct TowerStage<'a> {
    pub tower: &'a Tower,
    pub s: u32,
}

impl StageMap for TowerStage<'_> {
    fn evaluate_t(&self, x: &Rational) -> Result<Rational> {
        let undefined = || Error::Undefined { point: format_rational(x), defined_up_to: 0 };
        let (c, l) = self.tower.locate(self.s, x)?.ok_or_else(undefined)?;
        let h = self.tower.col_info(self.s, c)?.height as usize;
        if l + 1 >= h {
            return Err(undefined());
        }
        let here = self.tower.level_interval(self.s, c, l)?;
        let next = self.tower.level_interval(self.s, c, l + 1)?;
        Ok(x - here.lo + next.lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(r: Rational, folds: &[u64]) -> Tower {
        let mut t = Tower::new(&r, 3).unwrap();
        for &f in folds {
            t.advance(1, &FoldChoice::Fixed(f)).unwrap();
        }
        t
    }

    #[test]
    fn stage_zero() {
        let t = Tower::new(&rat(1, 8), 3).unwrap();
        assert_eq!(t.pi0.height(), 6);
        assert_eq!(t.pi0.names.ones(), 0);
        assert_eq!(t.stages[0].delta.names.to_string(), "01");
        let led = t.measure_ledger(0).unwrap();
        assert_eq!((led.pi.clone(), led.delta.clone()), (rat(3, 4), rat(1, 4)));
        assert!(led.exact);
        assert!(Tower::new(&rat(3, 32), 3).is_ok());
        assert!(Tower::new(&rat(1, 6), 3).is_err());
    }

    #[test]
    fn lazy_matches_explicit() {
        let t = toy(rat(1, 8), &[4, 2]);
        for s in 1..=2 {
            let (pi, delta) = t.explicit_route(s).unwrap();
            let lazy = t.pi_gadget(s, 1 << 16).unwrap();
            assert_eq!(pi.columns.len(), lazy.columns.len());
            for (a, b) in pi.columns.iter().zip(&lazy.columns) {
                assert_eq!(a.levels, b.levels);
                assert_eq!(a.names, b.names);
            }
            assert_eq!(delta.columns[0].levels, t.stage(s).unwrap().delta.levels);
        }
    }

    #[test]
    fn locate_inverts_levels() {
        let t = toy(rat(1, 8), &[4, 2, 2]);
        for s in 0..=3 {
            let n = t.stage(s).unwrap().columns_u128().unwrap();
            for c in (0..n).step_by(((n / 7).max(1)) as usize) {
                let h = t.col_info(s, c).unwrap().height as usize;
                for l in 0..h {
                    let iv = t.level_interval(s, c, l).unwrap();
                    let mid = (&iv.lo + &iv.hi) / int(2);
                    assert_eq!(t.locate(s, &iv.lo).unwrap(), Some((c, l)));
                    assert_eq!(t.locate(s, &mid).unwrap(), Some((c, l)));
                }
            }
        }
    }

    #[test]
    fn column_levels_match_single_queries() {
        let t = toy(rat(1, 8), &[4, 2, 2]);
        for s in 0..=3 {
            let n = t.stage(s).unwrap().columns_u128().unwrap();
            for c in (0..n).step_by(((n / 5).max(1)) as usize) {
                let all = t.column_levels(s, c).unwrap();
                let one: Vec<Interval> = (0..all.len()).map(|l| t.level_interval(s, c, l).unwrap()).collect();
                assert_eq!(all, one);
            }
        }
    }

    #[test]
    fn lazy_letter_queries_match_tables() {
        let cached = toy(rat(1, 8), &[4, 2, 2]);
        let mut lazy = Tower::new(&rat(1, 8), 3).unwrap();
        lazy.cache_limit = 0;
        for f in [4, 2, 2] {
            lazy.advance(1, &FoldChoice::Fixed(f)).unwrap();
        }
        for s in 2..=3 {
            assert!(!lazy.stage(s).unwrap().is_cached());
            let k = cached.delta_letter(s).unwrap() + 1;
            for j in (0..=k).step_by(((k / 9).max(1)) as usize).chain([k - 1, k]) {
                let c = cached.cum_share(s, j).unwrap();
                assert_eq!(lazy.cum_share(s, j).unwrap(), c, "s={s} j={j}");
                if j < k {
                    assert_eq!(lazy.letter_at(s, &c).unwrap(), j);
                }
            }
            let q = Interval::new(rat(3, 7), rat(3, 7) + rat(1, 256));
            assert_eq!(lazy.levels_in(s, &q, 1 << 16).unwrap(), cached.levels_in(s, &q, 1 << 16).unwrap());
            for x in [rat(1, 3), rat(5, 9), rat(7, 8)] {
                assert_eq!(lazy.locate(s, &x).unwrap(), cached.locate(s, &x).unwrap());
            }
        }
    }

    #[test]
    fn ledger_and_gamma() {
        for r in [rat(1, 8), rat(1, 16)] {
            let t = toy(r.clone(), &[4, 2, 2]);
            for s in 0..=3 {
                assert!(t.measure_ledger(s).unwrap().exact, "stage {s}");
            }
            let (g, printed) = t.gamma(3).unwrap();
            assert_eq!(g, pow2(-2) * &r / (int(1) - pow2(-1) * &r));
            assert_eq!(printed, Some(pow2(-2) * &r / rat(1, 2)));
            assert_eq!(t.gamma(2).unwrap().1, None);
        }
    }

    #[test]
    fn levels_in_partitions_query() {
        let t = toy(rat(1, 8), &[4, 2]);
        let j = Interval::new(rat(1, 16), rat(5, 16));
        for s in 0..=2 {
            let cells = t.levels_in(s, &j, 1 << 16).unwrap();
            let mass = cells.iter().fold(Rational::zero(), |a, c| a + c.clip.length());
            assert_eq!(mass, j.length(), "stage {s}");
            for c in &cells {
                assert_eq!(t.level_interval(s, c.column, c.level).unwrap(), c.interval);
            }
        }
        assert!(t.levels_in(2, &j, 3).is_err());
    }

    #[test]
    fn fold_choice_checks() {
        let mut t = Tower::new(&rat(1, 8), 3).unwrap();
        assert!(t.advance(10, &FoldChoice::Fixed(2)).is_err());
        let st = t.advance(4, &FoldChoice::Search { cap: 64 }).unwrap();
        assert!(st.certificate.as_ref().unwrap().certified);
        assert!(t.level_audit(1, 100).unwrap().exhaustive);
    }

    #[test]
    fn transform_steps_up_a_column() {
        let t = toy(rat(1, 8), &[4]);
        let view = TowerStage { tower: &t, s: 1 };
        let iv0 = t.level_interval(1, 3, 0).unwrap();
        let iv1 = t.level_interval(1, 3, 1).unwrap();
        assert_eq!(view.evaluate_t(&iv0.lo).unwrap(), iv1.lo);
        let top = t.col_info(1, 3).unwrap().height as usize - 1;
        let ivt = t.level_interval(1, 3, top).unwrap();
        assert!(view.evaluate_t(&ivt.lo).is_err());
    }
}
