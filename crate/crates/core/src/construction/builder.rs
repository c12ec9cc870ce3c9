//! Inductive builder of `ω(0) ⊂ ω(1) ⊂ …` alternating low- and high-frequency steps.

use std::collections::HashMap;

use num_traits::Zero;
use serde::Serialize;

use super::schedule::HeightSchedule;
use super::tower::{FoldCertificate, FoldChoice, LevelCell, MeasureLedger, Tower};
use crate::error::{Error, Result};
use crate::exact::{
    dyadic_subinterval, format_rational, int, log2_approx, pow2, rat, string_to_interval, to_decimal, BinString,
    Interval, Rational,
};
use crate::lz78::{ratio_series, RatioPoint};
use crate::martingale::{budget_check, kt_mixture, select_extension, DeficiencyTrace, KtMixture, Supermartingale};
use crate::sigma::Sigma;

#[derive(Clone, Debug, Serialize)]
pub struct BuildConfig {
    #[serde(with = "crate::exact::serde_rational")]
    pub r: Rational,
    pub sigma: Sigma,
    pub schedule: HeightSchedule,
    /// `R_s` rule for stage `s = 1, 2, …`; the last entry repeats.
    pub folds: Vec<FoldChoice>,
    pub k_max: usize,
    pub stage_cap: u32,
    pub cell_cap: usize,
    /// Upper letters examined for a `Δ''` passage in even steps.
    pub lookahead: usize,
    pub metric_budget: u64,
}

impl BuildConfig {
    /// The desk-scale configuration used by the acceptance run.
    pub fn toy(r: Rational, sigma: Sigma) -> Result<BuildConfig> {
        let schedule = HeightSchedule::toy(&r, vec![3, 4, 5, 6, 7, 8])?;
        Ok(BuildConfig {
            r,
            sigma,
            schedule,
            folds: [4, 2, 2, 2, 2].iter().map(|&f| FoldChoice::Fixed(f)).collect(),
            k_max: 4,
            stage_cap: 5,
            cell_cap: 1 << 20,
            lookahead: 1,
            metric_budget: 1 << 20,
        })
    }

    fn fold_for(&self, s: u32) -> Result<&FoldChoice> {
        self.folds
            .get(s as usize - 1)
            .or(self.folds.last())
            .ok_or_else(|| Error::Construction("no fold rule configured".into()))
    }
}

/// A prefix of the trajectory name of `ω` fixed by a step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Checkpoint {
    pub n: usize,
    pub ones: usize,
    #[serde(with = "crate::exact::serde_rational")]
    pub freq: Rational,
    pub freq_decimal: String,
}

impl Checkpoint {
    fn new(n: usize, ones: usize) -> Checkpoint {
        let freq = rat(ones as i64, n as i64);
        Checkpoint { n, ones, freq_decimal: to_decimal(&freq, 6), freq }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Hypotheses {
    /// `d(ω(k−1)) <= σ(h_{s(k−2)}) − 5` (odd) or `<= σ(h_{s(k−2)})` (even).
    pub deficiency: bool,
    /// `l(ω(k−1)) >= h_{s(k−1)}`.
    pub length: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub kind: &'static str,
    pub s: u32,
    pub fold: u64,
    pub prefix_len: usize,
    pub omega: BinString,
    pub candidates: usize,
    /// `B(Ã)` relative to the previous prefix.
    #[serde(with = "crate::exact::serde_rational")]
    pub candidate_mass: Rational,
    #[serde(with = "crate::exact::serde_rational")]
    pub required_mass: Rational,
    /// Share of the previous interval with trajectory frequency `<= 2r` (odd steps).
    #[serde(with = "crate::exact::serde_opt_rational")]
    pub low_frequency_mass: Option<Rational>,
    #[serde(with = "crate::exact::serde_rational")]
    pub peak: Rational,
    /// `2M(x)/B(Ã)`.
    #[serde(with = "crate::exact::serde_rational")]
    pub selection_bound: Rational,
    /// `32·M(a)` (odd) or `64·M(b)/γ` (even), the stated penalty in exact form.
    #[serde(with = "crate::exact::serde_rational")]
    pub penalty_bound: Rational,
    pub penalty_ok: bool,
    pub checkpoint: Option<Checkpoint>,
    #[serde(with = "crate::exact::serde_opt_rational")]
    pub gamma: Option<Rational>,
    #[serde(with = "crate::exact::serde_opt_rational")]
    pub gamma_printed: Option<Rational>,
    pub hypotheses: Option<Hypotheses>,
    pub budget_ok: bool,
    /// `min_j σ(j) − log2 M(ω^j)` over the new positions, for display.
    pub min_slack: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub s: u32,
    pub fold: u64,
    pub columns: String,
    #[serde(with = "crate::exact::serde_rational")]
    pub pi_width: Rational,
    pub h: Option<u128>,
    pub width_ok: bool,
    pub ledger: MeasureLedger,
    pub certificate: Option<FoldCertificate>,
}

pub struct Construction {
    pub config: BuildConfig,
    pub tower: Tower,
    pub omega: BinString,
    pub steps: Vec<StepRecord>,
    pub s_of_k: Vec<u32>,
    /// Longest trajectory-name prefix of `ω` fixed so far.
    pub name: BinString,
}

struct Candidate {
    string: BinString,
    checkpoint: Checkpoint,
    name: BinString,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Construction(msg.into())
}

impl Construction {
    pub fn new(config: BuildConfig) -> Result<Construction> {
        let h0 = config.schedule.stage(0).ok_or_else(|| err("schedule has no h_0"))?;
        let mut tower = Tower::new(&config.r, h0)?;
        tower.metric_budget = config.metric_budget;
        Ok(Construction { config, tower, omega: BinString::new(), steps: Vec::new(), s_of_k: Vec::new(), name: BinString::new() })
    }

    pub fn ensure_stage(&mut self, s: u32) -> Result<()> {
        while self.tower.top() < s {
            let next = self.tower.top() + 1;
            if next > self.config.stage_cap {
                return Err(err(format!("stage cap {} reached", self.config.stage_cap)));
            }
            let h = self.config.schedule.stage(next).ok_or_else(|| err(format!("schedule has no h_{next}")))?;
            let choice = self.config.fold_for(next)?.clone();
            self.tower.advance(h, &choice)?;
        }
        Ok(())
    }

    /// `ω(0)`: a `Π_0` level chosen by the extension selector, with `d <= 2`.
    pub fn init(&mut self) -> Result<()> {
        let cands: Vec<BinString> = self
            .tower
            .pi0
            .levels
            .iter()
            .map(|l| dyadic_subinterval(&l.lo, &l.hi).map(|d| d.to_bin_string()))
            .collect::<Result<_>>()?;
        let sel = select_extension(&KtMixture, &BinString::new(), &cands)?;
        if sel.max_value > int(4) {
            return Err(err("ω(0) exceeds d <= 2"));
        }
        self.omega = sel.y.clone();
        self.s_of_k = vec![0];
        let (budget_ok, min_slack) = self.budget_since(0);
        self.steps.push(StepRecord {
            k: 0,
            kind: "init",
            s: 0,
            fold: 1,
            prefix_len: self.omega.len(),
            omega: self.omega.clone(),
            candidates: sel.candidates,
            candidate_mass: sel.mass.clone(),
            required_mass: self.tower.stage(0)?.pi_measure.clone(),
            low_frequency_mass: None,
            peak: sel.max_value.clone(),
            selection_bound: sel.bound,
            penalty_bound: int(4),
            penalty_ok: sel.max_value <= int(4),
            checkpoint: None,
            gamma: None,
            gamma_printed: None,
            hypotheses: None,
            budget_ok,
            min_slack,
        });
        Ok(())
    }

    fn budget_since(&self, from: usize) -> (bool, String) {
        let vals = KtMixture.extension_values(&self.omega.prefix(from), &self.omega.suffix_from(from));
        let mut ok = true;
        let mut slack = f64::INFINITY;
        for (i, m) in vals.iter().enumerate() {
            let j = (from + i + 1) as u64;
            let sig = self.config.sigma.eval(j);
            ok &= *m <= pow2(sig as i64);
            slack = slack.min(sig as f64 - log2_approx(m));
        }
        (ok, format!("{slack:.6}"))
    }

    fn hypotheses(&self, k: usize, odd: bool) -> Hypotheses {
        let s_km2 = if k >= 2 { self.s_of_k[k - 2] } else { 0 };
        let s_km1 = self.s_of_k[k - 1];
        let sig = self.config.schedule.stage(s_km2).map(|h| self.config.sigma.eval_wide(h));
        let m = kt_mixture(&self.omega);
        let deficiency = match sig {
            Some(v) if odd => v >= 5 && v - 5 < 4096 && m <= pow2((v - 5) as i64),
            Some(v) => v < 4096 && m <= pow2(v as i64),
            None => false,
        };
        let length = self.config.schedule.stage(s_km1).is_some_and(|h| self.omega.len() as u128 >= h);
        Hypotheses { deficiency, length }
    }

    fn names_cache<'a>(&self, s: u32, cells: &[LevelCell], cache: &'a mut HashMap<u128, BinString>) -> Result<&'a HashMap<u128, BinString>> {
        for c in cells {
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(c.column) {
                e.insert(self.tower.col_name(s, c.column)?);
            }
        }
        Ok(cache)
    }

    /// Odd step: the first stage where at least half of `I_a` has `Π_s`-trajectory
    /// frequency `<= 2r`, candidates from the lower halves of those columns.
    pub fn odd_step(&mut self) -> Result<()> {
        let k = self.s_of_k.len();
        let a = self.omega.clone();
        let ia = string_to_interval(&a).as_interval();
        let hyp = self.hypotheses(k, true);
        let two_r = int(2) * &self.config.r;
        let mut s = self.s_of_k[k - 1] + 1;
        let mut last_low = Rational::zero();
        let (cells, names) = loop {
            if s > self.config.stage_cap {
                return Err(err(format!(
                    "stage cap {} reached before the low-frequency condition; measured share {}",
                    self.config.stage_cap,
                    format_rational(&last_low)
                )));
            }
            self.ensure_stage(s)?;
            let cells = self.tower.levels_in(s, &ia, self.config.cell_cap)?;
            let mut cache = HashMap::new();
            self.names_cache(s, &cells, &mut cache)?;
            let low = cells
                .iter()
                .filter(|c| {
                    let suf = cache[&c.column].suffix_from(c.level);
                    int(suf.ones() as i64) <= &two_r * int(suf.len() as i64)
                })
                .fold(Rational::zero(), |acc, c| acc + c.clip.length());
            last_low = low / ia.length();
            if last_low >= rat(1, 2) {
                break (cells, cache);
            }
            s += 1;
        };
        let mut cands = Vec::new();
        for c in &cells {
            let suf = names[&c.column].suffix_from(c.level);
            let low = int(suf.ones() as i64) <= &two_r * int(suf.len() as i64);
            if low && (c.level as u64) < c.height.div_ceil(2) {
                let d = dyadic_subinterval(&c.clip.lo, &c.clip.hi)?;
                cands.push(Candidate { string: d.to_bin_string(), checkpoint: Checkpoint::new(suf.len(), suf.ones()), name: suf });
            }
        }
        let required = rat(1, 16);
        let gamma = None;
        self.finish_step(k, "odd", s, a, cands, required, Some(last_low), hyp, gamma, |ma, _| int(32) * ma)
    }

    /// Even step at `s = s(k−1) + 1`: parts of `I_b` whose trajectories pass
    /// through a copy of `Δ''_{s-1}` with ones-frequency `>= 1/8` at its top.
    pub fn even_step(&mut self) -> Result<()> {
        let k = self.s_of_k.len();
        let b = self.omega.clone();
        let ib = string_to_interval(&b).as_interval();
        let hyp = self.hypotheses(k, false);
        let s = self.s_of_k[k - 1] + 1;
        self.ensure_stage(s)?;
        let parents = self.tower.levels_in(s - 1, &ib, self.config.cell_cap)?;
        let st = self.tower.stage(s)?;
        let r = st.fold as usize;
        let dl = self.tower.delta_letter(s)?;
        let dname = self.tower.letter_name(s, dl)?;
        let mut cands = Vec::new();
        let mut found = 0usize;
        for p in &parents {
            let rest = self.tower.col_name(s - 1, p.column)?.suffix_from(p.level);
            let slice = p.interval.length() / int(r as i64);
            for t in 0..r {
                let lo = &p.interval.lo + &slice * int(t as i64);
                let iv = Interval::new(lo.clone(), &lo + &slice);
                if !iv.overlaps(&ib) {
                    continue;
                }
                let depth = self.config.lookahead.min(r - t - 1);
                self.scan_upper(s, &iv, &ib, depth, &rest, dl, &dname, &mut cands, &mut found)?;
            }
        }
        let (gamma, printed) = self.tower.gamma(s)?;
        let required = &gamma / int(16);
        let g = gamma.clone();
        self.finish_step(k, "even", s, b, cands, required, None, hyp, Some((gamma, printed)), move |mb, _| {
            int(64) * mb / &g
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_upper(
        &self,
        s: u32,
        iv: &Interval,
        ib: &Interval,
        depth: usize,
        so_far: &BinString,
        dl: u128,
        dname: &BinString,
        out: &mut Vec<Candidate>,
        found: &mut usize,
    ) -> Result<()> {
        if depth == 0 {
            return Ok(());
        }
        let len = iv.length();
        let delta_iv = {
            let lo = &iv.lo + &len * self.tower.cum_share(s, dl)?;
            Interval::new(lo, iv.hi.clone())
        };
        if let Some(clip) = delta_iv.intersect(ib) {
            let name = so_far.concat(dname);
            if int(8) * int(name.ones() as i64) >= int(name.len() as i64) {
                *found += 1;
                if *found > self.config.cell_cap {
                    return Err(err("too many high-frequency cells"));
                }
                let d = dyadic_subinterval(&clip.lo, &clip.hi)?;
                out.push(Candidate { string: d.to_bin_string(), checkpoint: Checkpoint::new(name.len(), name.ones()), name });
            }
        }
        if depth == 1 {
            return Ok(());
        }
        for j in self.tower.letters_meeting(s, &iv.lo, &len, ib)? {
            if j == dl {
                continue;
            }
            let lo = &iv.lo + &len * self.tower.cum_share(s, j)?;
            let hi = &lo + &len * self.tower.share(s, j)?;
            let name = so_far.concat(&self.tower.letter_name(s, j)?);
            self.scan_upper(s, &Interval::new(lo, hi), ib, depth - 1, &name, dl, dname, out, found)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_step(
        &mut self,
        k: usize,
        kind: &'static str,
        s: u32,
        x: BinString,
        cands: Vec<Candidate>,
        required: Rational,
        low: Option<Rational>,
        hyp: Hypotheses,
        gamma: Option<(Rational, Option<Rational>)>,
        penalty: impl Fn(&Rational, &Rational) -> Rational,
    ) -> Result<()> {
        let l = x.len();
        let mass = cands
            .iter()
            .fold(Rational::zero(), |acc, c| acc + pow2(-((c.string.len() - l) as i64)));
        if mass < required {
            let what = if kind == "even" { "frequency mass shortfall" } else { "candidate mass shortfall" };
            return Err(err(format!(
                "{what} at step {k}: measured {} < required {}",
                format_rational(&mass),
                format_rational(&required)
            )));
        }
        let ys: Vec<BinString> = cands.iter().map(|c| c.string.suffix_from(l)).collect();
        let sel = select_extension(&KtMixture, &x, &ys)?;
        let chosen = x.concat(&sel.y);
        let cand = cands.iter().find(|c| c.string == chosen).expect("selected from candidates");
        if !(self.name.is_prefix_of(&cand.name) || cand.name.is_prefix_of(&self.name)) {
            return Err(err(format!("trajectory names disagree at step {k}")));
        }
        if cand.name.len() > self.name.len() {
            self.name = cand.name.clone();
        }
        let mx = kt_mixture(&x);
        let pb = penalty(&mx, &sel.mass);
        let from = self.omega.len();
        self.omega = chosen;
        self.s_of_k.push(s);
        let (budget_ok, min_slack) = self.budget_since(from);
        let (g, gp) = match gamma {
            Some((g, p)) => (Some(g), p),
            None => (None, None),
        };
        self.steps.push(StepRecord {
            k,
            kind,
            s,
            fold: self.tower.stage(s)?.fold,
            prefix_len: self.omega.len(),
            omega: self.omega.clone(),
            candidates: sel.candidates,
            candidate_mass: mass,
            required_mass: required,
            low_frequency_mass: low,
            penalty_ok: sel.max_value <= pb,
            peak: sel.max_value,
            selection_bound: sel.bound,
            penalty_bound: pb,
            checkpoint: Some(cand.checkpoint.clone()),
            gamma: g,
            gamma_printed: gp,
            hypotheses: Some(hyp),
            budget_ok,
            min_slack,
        });
        Ok(())
    }

    pub fn deficiency_trace(&self) -> DeficiencyTrace {
        DeficiencyTrace::new(&KtMixture, &self.omega)
    }

    pub fn budget_ok(&self) -> bool {
        let sigma = &self.config.sigma;
        budget_check(&self.deficiency_trace(), &|j| sigma.eval(j))
    }

    pub fn stage_records(&self) -> Result<Vec<StageRecord>> {
        (0..=self.tower.top())
            .map(|s| {
                let st = self.tower.stage(s)?;
                let h = self.config.schedule.stage(s);
                let width_ok = h.is_some_and(|h| h <= 4096 && st.pi_width <= pow2(-(h as i64)));
                Ok(StageRecord {
                    s,
                    fold: st.fold,
                    columns: st.columns.to_string(),
                    pi_width: st.pi_width.clone(),
                    h,
                    width_ok,
                    ledger: self.tower.measure_ledger(s)?,
                    certificate: st.certificate.clone(),
                })
            })
            .collect()
    }

    /// `(n, is_even)` per completed step.
    pub fn checkpoints(&self) -> Vec<(usize, bool)> {
        self.steps
            .iter()
            .filter_map(|st| st.checkpoint.as_ref().map(|c| (c.n, st.kind == "even")))
            .collect()
    }

    /// LZ78 ratios of the trajectory name at the step checkpoints.
    pub fn ratio_points(&self) -> Result<Vec<(RatioPoint, bool)>> {
        let mut cps = self.checkpoints();
        cps.sort();
        cps.dedup_by_key(|c| c.0);
        let ns: Vec<usize> = cps.iter().map(|c| c.0).collect();
        let pts = ratio_series(&self.name, &ns)?;
        Ok(pts.into_iter().zip(cps.into_iter().map(|c| c.1)).collect())
    }

    /// `max(even ratios) − min(odd ratios)`.
    pub fn ratio_gap(&self) -> Result<Option<Rational>> {
        let pts = self.ratio_points()?;
        let even = pts.iter().filter(|p| p.1).map(|p| p.0.ratio.clone()).max();
        let odd = pts.iter().filter(|p| !p.1).map(|p| p.0.ratio.clone()).min();
        Ok(even.zip(odd).map(|(e, o)| e - o))
    }

    /// One JSON object per line: the configuration, every stage, then every step.
    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut push = |v: serde_json::Value| {
            out.push_str(&v.to_string());
            out.push('\n');
        };
        push(serde_json::json!({ "record": "config", "toy": self.config.schedule.toy, "config": self.config }));
        for st in self.stage_records()? {
            push(serde_json::json!({ "record": "stage", "stage": st }));
        }
        for st in &self.steps {
            push(serde_json::json!({ "record": "step", "step": st }));
        }
        push(serde_json::json!({
            "record": "summary",
            "omega": self.omega,
            "name": self.name,
            "s_of_k": self.s_of_k,
            "budget_ok": self.budget_ok(),
        }));
        Ok(out)
    }
}

/// Runs `ω(0)` and then `k_max` alternating steps.
pub fn build_unstable(config: BuildConfig) -> Result<Construction> {
    let mut c = Construction::new(config)?;
    c.init()?;
    for k in 1..=c.config.k_max {
        if k % 2 == 1 {
            c.odd_step()?;
        } else {
            c.even_step()?;
        }
    }
    Ok(c)
}
