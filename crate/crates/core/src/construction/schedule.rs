//! Height schedules `h_{-2} < h_{-1} < h_0 < …`.

use num_traits::Signed;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{dyadic_exponent, format_rational, pow2, rat, Rational};
use crate::sigma::Sigma;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HeightSchedule {
    #[serde(with = "crate::exact::serde_rational")]
    pub r: Rational,
    /// `h_{-2}, h_{-1}, h_0, …`.
    pub h: Vec<u128>,
    /// Explicit list that bypasses the growth inequality.
    pub toy: bool,
}

impl HeightSchedule {
    /// Explicit heights `h_0, h_1, …`; `h_{-2}, h_{-1}` are filled in below `h_0`.
    pub fn toy(r: &Rational, stage_heights: Vec<u128>) -> Result<HeightSchedule> {
        check_r(r)?;
        if stage_heights.is_empty() {
            return Err(Error::Construction("toy schedule needs at least h_0".into()));
        }
        if stage_heights.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Construction("toy schedule must be strictly increasing".into()));
        }
        if stage_heights[0] < 3 {
            return Err(Error::Construction("toy schedule needs h_0 >= 3".into()));
        }
        let h0 = stage_heights[0];
        let mut h = vec![h0 - 2, h0 - 1];
        h.extend(stage_heights);
        Ok(HeightSchedule { r: r.clone(), h, toy: true })
    }

    /// `h_i` for `i >= -2`.
    pub fn get(&self, i: i64) -> Option<u128> {
        usize::try_from(i + 2).ok().and_then(|j| self.h.get(j)).copied()
    }

    /// `h_s` for stage `s`.
    pub fn stage(&self, s: u32) -> Option<u128> {
        self.get(s as i64)
    }

    pub fn stages(&self) -> usize {
        self.h.len() - 2
    }

    /// Whether `σ(h_{i-1}) − σ(h_{i-2}) > i − log2 r + 11` holds, for each `i`.
    pub fn inequality_report(&self, sigma: &Sigma) -> Vec<bool> {
        (0..self.h.len() - 1)
            .map(|i| satisfies(sigma, &self.r, i as u128, self.h[i], self.h[i + 1]))
            .collect()
    }
}

pub fn check_r(r: &Rational) -> Result<()> {
    if !r.is_positive() || r > &rat(1, 8) || dyadic_exponent(r).is_none() {
        return Err(Error::Construction(format!("r must be dyadic with 0 < r <= 1/8, got {}", format_rational(r))));
    }
    Ok(())
}

/// `σ(cur) − σ(prev) − i − 11 > −log2 r`, i.e. `r > 2^{-(σ(cur) − σ(prev) − i − 11)}`.
fn satisfies(sigma: &Sigma, r: &Rational, i: u128, prev: u128, cur: u128) -> bool {
    let a = sigma.eval_wide(cur);
    let b = sigma.eval_wide(prev).saturating_add(i).saturating_add(11);
    if a <= b {
        return false;
    }
    let d = a - b;
    d >= 64 || r > &pow2(-(d as i64))
}

/// Greedy pointwise-minimal schedule with `h_{-2} = 1`, returning `h_{-2}, …, h_{count-1}`.
pub fn compute_schedule(sigma: &Sigma, r: &Rational, count: usize) -> Result<HeightSchedule> {
    check_r(r)?;
    let mut h: Vec<u128> = vec![1];
    for i in 0..=count as u128 {
        let prev = *h.last().expect("non-empty");
        let ok = |x: u128| satisfies(sigma, r, i, prev, x);
        // exponential probe then bisection; σ is nondecreasing so `ok` is monotone
        let mut hi = prev.checked_add(1).ok_or_else(|| flat(i, prev))?;
        while !ok(hi) {
            if hi > u128::MAX / 2 {
                return Err(flat(i, u128::MAX));
            }
            hi *= 2;
        }
        let mut lo = prev;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        h.push(hi);
    }
    Ok(HeightSchedule { r: r.clone(), h, toy: false })
}

fn flat(i: u128, horizon: u128) -> Error {
    Error::Construction(format!("sigma too flat: no h_{} found up to search horizon {horizon}", i as i128 - 1))
}
