//! Partial transformations defined by a gadget: orbits, names, ergodic
//! averages and their L¹ norms.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{ceil_int, format_rational, int, serde_rational, BinString, Interval, Rational};
use crate::gadget::{Gadget, Partition};

/// Anything that can apply one step of `T`.
pub trait StageMap {
    fn evaluate_t(&self, x: &Rational) -> Result<Rational>;
}

/// A gadget viewed as a partial map, with a sorted level index for lookup.
#[derive(Clone, Debug)]
pub struct TransformStage {
    pub gadget: Gadget,
    pub stage_index: usize,
    index: Vec<(Rational, usize, usize)>,
}

impl TransformStage {
    pub fn new(gadget: Gadget, stage_index: usize) -> Result<TransformStage> {
        gadget.audit()?;
        let mut index: Vec<(Rational, usize, usize)> = gadget
            .columns
            .iter()
            .enumerate()
            .flat_map(|(c, col)| col.levels.iter().enumerate().map(move |(l, iv)| (iv.lo.clone(), c, l)))
            .collect();
        index.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(TransformStage { gadget, stage_index, index })
    }

    /// `(column, level)` containing `x`, by binary search.
    pub fn locate(&self, x: &Rational) -> Option<(usize, usize)> {
        let pos = self.index.partition_point(|(lo, _, _)| lo <= x);
        if pos == 0 {
            return None;
        }
        let (_, c, l) = &self.index[pos - 1];
        self.gadget.columns[*c].levels[*l].contains(x).then_some((*c, *l))
    }
}

impl StageMap for TransformStage {
    fn evaluate_t(&self, x: &Rational) -> Result<Rational> {
        let undefined = || Error::Undefined { point: format_rational(x), defined_up_to: 0 };
        let (c, l) = self.locate(x).ok_or_else(undefined)?;
        let col = &self.gadget.columns[c];
        if l + 1 >= col.height() {
            return Err(undefined());
        }
        Ok(x + &col.levels[l + 1].lo - &col.levels[l].lo)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Orbit {
    #[serde(with = "serde_rational")]
    pub start: Rational,
    #[serde(skip)]
    pub points: Vec<Rational>,
    pub name: BinString,
    pub defined_up_to: usize,
}

impl Orbit {
    /// CSV rows `step,point,symbol`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,point,symbol\n");
        for (i, (p, b)) in self.points.iter().zip(self.name.bits()).enumerate() {
            out.push_str(&format!("{i},{},{b}\n", format_rational(p)));
        }
        out
    }
}

/// Up to `n` points `x, Tx, …`, stopping early where `T` is undefined.
pub fn orbit(stage: &dyn StageMap, x: &Rational, n: usize, pi: &Partition) -> Orbit {
    let mut points = vec![x.clone()];
    while points.len() < n.max(1) {
        match stage.evaluate_t(points.last().unwrap()) {
            Ok(y) => points.push(y),
            Err(_) => break,
        }
    }
    let name = BinString::from_bits(points.iter().map(|p| pi.symbol(p)).collect());
    Orbit { start: x.clone(), defined_up_to: points.len(), points, name }
}

/// Rational-valued observable on `[0,1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observable {
    /// `χ_{π1}`.
    Pi1,
    Const(Rational),
    /// Value on `π0`, value on `π1`.
    OnPartition(Rational, Rational),
    /// Piecewise constant; zero outside the listed pieces.
    Step(Vec<(Interval, Rational)>),
}

impl Observable {
    pub fn value(&self, x: &Rational, pi: &Partition) -> Rational {
        match self {
            Observable::Pi1 => int(pi.symbol(x) as i64),
            Observable::Const(c) => c.clone(),
            Observable::OnPartition(a, b) => if pi.symbol(x) == 1 { b.clone() } else { a.clone() },
            Observable::Step(pieces) => pieces
                .iter()
                .find(|(iv, _)| iv.contains(x))
                .map(|(_, v)| v.clone())
                .unwrap_or_else(Rational::zero),
        }
    }

    /// Value on `iv` when it is constant there.
    pub fn value_on(&self, iv: &Interval, pi: &Partition) -> Option<Rational> {
        match self {
            Observable::Const(c) => Some(c.clone()),
            Observable::Pi1 | Observable::OnPartition(..) => pi.cell_of(iv).map(|_| self.value(&iv.lo, pi)),
            Observable::Step(pieces) => {
                let v = self.value(&iv.lo, pi);
                let clean = pieces.iter().all(|(p, _)| !p.overlaps(iv) || p.contains_interval(iv));
                clean.then_some(v)
            }
        }
    }

    /// `∫_0^1 f dλ`.
    pub fn mean(&self, pi: &Partition) -> Rational {
        let total = |ivs: &[Interval]| ivs.iter().map(Interval::length).fold(Rational::zero(), |a, b| a + b);
        match self {
            Observable::Pi1 => total(&pi.pi1),
            Observable::Const(c) => c.clone(),
            Observable::OnPartition(a, b) => a * total(&pi.pi0) + b * total(&pi.pi1),
            Observable::Step(pieces) => pieces.iter().fold(Rational::zero(), |acc, (iv, v)| acc + iv.length() * v),
        }
    }

    /// `sup |f|`.
    pub fn sup_abs(&self) -> Rational {
        match self {
            Observable::Pi1 => int(1),
            Observable::Const(c) => c.abs(),
            Observable::OnPartition(a, b) => a.abs().max(b.abs()),
            Observable::Step(pieces) => pieces.iter().map(|(_, v)| v.abs()).fold(Rational::zero(), Rational::max),
        }
    }

    /// `sup |f − c|`.
    fn sup_dev(&self, c: &Rational) -> Rational {
        match self {
            Observable::Pi1 => (int(1) - c).abs().max(c.abs()),
            Observable::Const(v) => (v - c).abs(),
            Observable::OnPartition(a, b) => (a - c).abs().max((b - c).abs()),
            Observable::Step(pieces) => pieces
                .iter()
                .map(|(_, v)| (v - c).abs())
                .fold(c.abs(), Rational::max),
        }
    }
}

/// `A_n^f(x) = (1/n) Σ_{k<n} f(T^k x)`, exact.
pub fn ergodic_average(stage: &dyn StageMap, x: &Rational, n: usize, f: &Observable, pi: &Partition) -> Result<Rational> {
    if n == 0 {
        return Err(Error::Transform("average needs n >= 1".into()));
    }
    let o = orbit(stage, x, n, pi);
    if o.defined_up_to < n {
        return Err(Error::Undefined { point: format_rational(x), defined_up_to: o.defined_up_to });
    }
    let sum = o.points.iter().fold(Rational::zero(), |acc, p| acc + f.value(p, pi));
    Ok(sum / int(n as i64))
}

fn level_values(stage: &TransformStage, f: &Observable, pi: &Partition) -> Result<Vec<Vec<Rational>>> {
    stage
        .gadget
        .columns
        .iter()
        .map(|c| {
            c.levels
                .iter()
                .map(|l| {
                    f.value_on(l, pi)
                        .ok_or_else(|| Error::Transform("observable is not constant on a level".into()))
                })
                .collect()
        })
        .collect()
}

/// `(∫|A_n^f − ∫f| dλ` over points whose `n`-step orbit stays in the stage,
/// measure of that set`)`.
pub fn average_l1_norm(stage: &TransformStage, f: &Observable, n: usize, pi: &Partition) -> Result<(Rational, Rational)> {
    if n == 0 {
        return Err(Error::Transform("average needs n >= 1".into()));
    }
    let values = level_values(stage, f, pi)?;
    norm_from_values(stage, &values, &f.mean(pi), n)
}

fn norm_from_values(stage: &TransformStage, values: &[Vec<Rational>], mean: &Rational, n: usize) -> Result<(Rational, Rational)> {
    let nn = int(n as i64);
    let mut norm = Rational::zero();
    let mut mass = Rational::zero();
    for (col, vals) in stage.gadget.columns.iter().zip(values) {
        let h = col.height();
        if h < n {
            continue;
        }
        let w = col.width();
        let mut window: Rational = vals[..n].iter().fold(Rational::zero(), |a, b| a + b);
        for j in 0..=h - n {
            if j > 0 {
                window = window - &vals[j - 1] + &vals[j + n - 1];
            }
            norm += (&window / &nn - mean).abs() * &w;
        }
        mass += &w * int((h - n + 1) as i64);
    }
    if mass.is_zero() {
        return Err(Error::Transform(format!("no defined mass for n={n}")));
    }
    Ok((norm, mass))
}

/// CSV `n,norm,defined_mass` for `n = 1..=max_n` (rows with no defined mass are skipped).
pub fn norm_table_csv(stage: &TransformStage, f: &Observable, max_n: usize, pi: &Partition) -> Result<String> {
    let values = level_values(stage, f, pi)?;
    let mean = f.mean(pi);
    let mut out = String::from("n,norm,defined_mass\n");
    for n in 1..=max_n {
        if let Ok((norm, mass)) = norm_from_values(stage, &values, &mean, n) {
            out.push_str(&format!("{n},{},{}\n", format_rational(&norm), format_rational(&mass)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rate {
    pub p: usize,
    /// `m(δ,ε) = ⌈2(p−1)·sup|f|/δ⌉`.
    pub m: u64,
    /// Certified upper bound on `‖A_p^f − ∫f‖₁` over all of `[0,1)`.
    #[serde(with = "serde_rational")]
    pub bound: Rational,
}

/// `⌈2(p−1)·sup|f|/δ⌉`.
pub fn rate_m(p: usize, sup: &Rational, delta: &Rational) -> Result<u64> {
    let m = ceil_int(&(int(2 * (p as i64 - 1)) * sup / delta));
    u64::try_from(m).map_err(|_| Error::Transform("rate overflows u64".into()))
}

/// Smallest `p` whose norm bound is `<= δε/2`. Points outside the defined set
/// are charged `sup|f − ∫f|`, so the bound covers the whole interval.
pub fn convergence_rate(stage: &TransformStage, f: &Observable, delta: &Rational, eps: &Rational, pi: &Partition) -> Result<Rate> {
    if !delta.is_positive() || !eps.is_positive() {
        return Err(Error::Transform("delta and eps must be positive".into()));
    }
    let values = level_values(stage, f, pi)?;
    let mean = f.mean(pi);
    let dev = f.sup_dev(&mean);
    let target = delta * eps / int(2);
    let max_h = stage.gadget.columns.iter().map(|c| c.height()).max().unwrap_or(0);
    let mut best: Option<(usize, Rational)> = None;
    for p in 1..=max_h {
        let (norm, mass) = norm_from_values(stage, &values, &mean, p)?;
        let bound = norm + &dev * (int(1) - mass);
        if bound <= target {
            return Ok(Rate { p, m: rate_m(p, &f.sup_abs(), delta)?, bound });
        }
        if best.as_ref().is_none_or(|(_, b)| &bound < b) {
            best = Some((p, bound));
        }
    }
    let (p, b) = best.unwrap_or((0, int(1)));
    Err(Error::Transform(format!(
        "stage too shallow: best p={p} with bound {} > {}",
        format_rational(&b),
        format_rational(&target)
    )))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SchnorrSet {
    pub i: usize,
    /// Largest `j` whose rate the stage could certify.
    pub j_max: usize,
    pub intervals: Vec<Interval>,
    #[serde(with = "serde_rational")]
    pub measure: Rational,
    /// Mass where not even the first required average is available.
    #[serde(with = "serde_rational")]
    pub undefined_mass: Rational,
}

/// Finite-stage `U_i = ∪_{i<j≤j_max} V_j`, `V_j = ∪_{n,n'≥m(1/j,2^-j)} {|A_n − A_n'| > 1/j}`,
/// with `n, n'` ranging over averages defined inside the stage.
pub fn schnorr_sets(stage: &TransformStage, f: &Observable, i: usize, pi: &Partition) -> Result<SchnorrSet> {
    let values = level_values(stage, f, pi)?;
    let rate_for = |j: usize| {
        let jj = int(j as i64);
        let delta = int(1) / &jj;
        let eps = crate::exact::pow2(-(j as i64));
        convergence_rate(stage, f, &delta, &eps, pi)
    };
    let first = rate_for(i + 1).map_err(|e| match e {
        Error::Transform(msg) => Error::Transform(format!("cannot build U_{i}: {msg}")),
        other => other,
    })?;
    let mut rates = vec![(i + 1, first.m.max(1) as usize)];
    // further j only while the stage certifies them
    for j in (i + 2).. {
        match rate_for(j) {
            Ok(r) => rates.push((j, r.m.max(1) as usize)),
            Err(_) => break,
        }
        if j > i + 64 {
            break;
        }
    }
    let j_max = rates.last().unwrap().0;
    let m0 = rates[0].1;
    let mut intervals = Vec::new();
    let mut defined = Rational::zero();
    for (col, vals) in stage.gadget.columns.iter().zip(&values) {
        let h = col.height();
        for (l, iv) in col.levels.iter().enumerate() {
            let avail = h - l;
            if avail >= m0 {
                defined += iv.length();
            }
            // prefix sums of the averages A_1..A_avail from this level
            let mut avgs = Vec::with_capacity(avail);
            let mut acc = Rational::zero();
            for (k, v) in vals[l..].iter().enumerate() {
                acc += v;
                avgs.push(&acc / int(k as i64 + 1));
            }
            let hit = rates.iter().any(|&(j, m)| {
                if avail < m {
                    return false;
                }
                let window = &avgs[m - 1..];
                let lo = window.iter().min().unwrap();
                let hi = window.iter().max().unwrap();
                hi - lo > int(1) / int(j as i64)
            });
            if hit {
                intervals.push(iv.clone());
            }
        }
    }
    intervals.sort_by(|a, b| a.lo.cmp(&b.lo));
    let measure = intervals.iter().map(Interval::length).fold(Rational::zero(), |a, b| a + b);
    Ok(SchnorrSet { i, j_max, intervals, measure, undefined_mass: int(1) - defined })
}

/// Integer part of a non-negative rational, for indices.
pub fn floor_usize(q: &Rational) -> usize {
    let f: BigInt = q.floor().to_integer();
    usize::try_from(f).unwrap_or(usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rat;
    use crate::gadget::Column;

    fn two_level() -> TransformStage {
        let col = Column::new(
            vec![Interval::new(int(0), rat(1, 2)), Interval::new(rat(1, 2), int(1))],
            "01".parse().unwrap(),
        )
        .unwrap();
        TransformStage::new(Gadget::new(0, vec![col]).unwrap(), 0).unwrap()
    }

    fn pi() -> Partition {
        Partition::new(vec![Interval::new(int(0), rat(1, 2))], vec![Interval::new(rat(1, 2), int(1))]).unwrap()
    }

    #[test]
    fn translation_and_top() {
        let st = two_level();
        assert_eq!(st.evaluate_t(&rat(1, 4)).unwrap(), rat(3, 4));
        assert!(matches!(st.evaluate_t(&rat(3, 4)), Err(Error::Undefined { .. })));
    }

    #[test]
    fn orbit_basics() {
        let st = two_level();
        let o = orbit(&st, &rat(1, 4), 1, &pi());
        assert_eq!((o.name.to_string(), o.defined_up_to), ("0".to_string(), 1));
        let o = orbit(&st, &rat(1, 4), 5, &pi());
        assert_eq!((o.name.to_string(), o.defined_up_to), ("01".to_string(), 2));
        assert_eq!(o.to_csv(), "step,point,symbol\n0,1/4,0\n1,3/4,1\n");
    }

    #[test]
    fn averages() {
        let st = two_level();
        let p = pi();
        assert_eq!(ergodic_average(&st, &rat(1, 8), 2, &Observable::Pi1, &p).unwrap(), rat(1, 2));
        assert_eq!(ergodic_average(&st, &rat(1, 8), 2, &Observable::Const(int(1)), &p).unwrap(), int(1));
        assert!(matches!(
            ergodic_average(&st, &rat(1, 8), 3, &Observable::Pi1, &p),
            Err(Error::Undefined { defined_up_to: 2, .. })
        ));
    }

    #[test]
    fn norm_one_step_balanced() {
        // full support, r = mean(χπ1) = 1/2: ∫|f − r| = 2r(1−r)
        let st = two_level();
        let (norm, mass) = average_l1_norm(&st, &Observable::Pi1, 1, &pi()).unwrap();
        assert_eq!(norm, rat(1, 2));
        assert_eq!(mass, int(1));
        let (norm, _) = average_l1_norm(&st, &Observable::Const(rat(3, 7)), 2, &pi()).unwrap();
        assert_eq!(norm, int(0));
        assert!(average_l1_norm(&st, &Observable::Pi1, 3, &pi()).is_err());
    }

    #[test]
    fn rate_of_constant() {
        let st = two_level();
        let r = convergence_rate(&st, &Observable::Const(int(1)), &rat(1, 2), &rat(1, 2), &pi()).unwrap();
        assert_eq!((r.p, r.m), (1, 0));
    }

    fn alternating(h: usize) -> TransformStage {
        // level 2t in π0, level 2t+1 in π1, all of width 1/h
        let w = rat(1, h as i64);
        let levels = (0..h)
            .map(|k| {
                let t = int((k / 2) as i64);
                let base = if k % 2 == 0 { int(0) } else { rat(1, 2) };
                Interval::new(&base + &t * &w, &base + (&t + int(1)) * &w)
            })
            .collect();
        let names = BinString::from_bits((0..h).map(|k| (k % 2) as u8).collect());
        TransformStage::new(Gadget::new(0, vec![Column::new(levels, names).unwrap()]).unwrap(), 0).unwrap()
    }

    #[test]
    fn rate_formula_and_shallow_error() {
        assert_eq!(rate_m(5, &int(1), &rat(1, 2)).unwrap(), 16);
        let st = alternating(100);
        let r = convergence_rate(&st, &Observable::Pi1, &rat(1, 2), &rat(1, 2), &pi()).unwrap();
        assert_eq!((r.p, r.m), (2, 4));
        assert_eq!(r.bound, rat(1, 200));
        assert!(convergence_rate(&st, &Observable::Pi1, &rat(1, 100), &rat(1, 100), &pi()).is_err());
    }

    #[test]
    fn deeper_stage_never_slower() {
        let shallow = convergence_rate(&alternating(20), &Observable::Pi1, &rat(1, 4), &rat(1, 4), &pi()).unwrap();
        let deep = convergence_rate(&alternating(200), &Observable::Pi1, &rat(1, 4), &rat(1, 4), &pi()).unwrap();
        assert!(deep.m <= shallow.m);
    }

    #[test]
    fn schnorr_constant_is_empty() {
        let st = two_level();
        let s = schnorr_sets(&st, &Observable::Const(int(1)), 1, &pi()).unwrap();
        assert!(s.intervals.is_empty());
        assert_eq!(s.measure, int(0));
    }
}
