//! Named budget functions `σ(n)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A computable nondecreasing `σ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sigma {
    /// `⌊log2 n⌋ + add` (0 at n = 0).
    Log2 { add: u64 },
    /// `⌊√n⌋`.
    Sqrt,
    /// `⌊n·p/q⌋`.
    Linear { p: u64, q: u64 },
    Const(u64),
    /// Explicit values for `n = 0, 1, …`; the last value repeats.
    Table(Vec<u64>),
}

impl Sigma {
    pub fn eval(&self, n: u64) -> u64 {
        match self {
            Sigma::Log2 { add } => if n == 0 { *add } else { n.ilog2() as u64 + add },
            Sigma::Sqrt => n.isqrt(),
            Sigma::Linear { p, q } => ((n as u128 * *p as u128) / *q as u128) as u64,
            Sigma::Const(c) => *c,
            Sigma::Table(v) => v.get(n as usize).or(v.last()).copied().unwrap_or(0),
        }
    }

    /// [`Sigma::eval`] over `u128`, saturating at `u128::MAX`.
    pub fn eval_wide(&self, n: u128) -> u128 {
        match self {
            Sigma::Log2 { add } => if n == 0 { *add as u128 } else { n.ilog2() as u128 + *add as u128 },
            Sigma::Sqrt => n.isqrt(),
            Sigma::Linear { p, q } => n.saturating_mul(*p as u128) / *q as u128,
            Sigma::Const(c) => *c as u128,
            Sigma::Table(v) => {
                let i = usize::try_from(n).unwrap_or(usize::MAX);
                v.get(i).or(v.last()).copied().unwrap_or(0) as u128
            }
        }
    }

    /// `false` when `σ` is eventually constant.
    pub fn is_unbounded(&self) -> bool {
        !matches!(self, Sigma::Const(_) | Sigma::Table(_))
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Log2 { add: 0 } => write!(f, "log2"),
            Sigma::Log2 { add } => write!(f, "log2+{add}"),
            Sigma::Sqrt => write!(f, "sqrt"),
            Sigma::Linear { p, q } => write!(f, "linear:{p}/{q}"),
            Sigma::Const(c) => write!(f, "const:{c}"),
            Sigma::Table(v) => {
                let parts: Vec<String> = v.iter().map(u64::to_string).collect();
                write!(f, "table:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Sigma> {
        let s = s.trim();
        let bad = || Error::Construction(format!("unknown sigma spec {s:?} (log2, log2+c, sqrt, linear:p/q, const:c, table:a,b,…)"));
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
        if s == "log2" {
            return Ok(Sigma::Log2 { add: 0 });
        }
        if let Some(c) = s.strip_prefix("log2+") {
            return Ok(Sigma::Log2 { add: num(c)? });
        }
        if s == "sqrt" {
            return Ok(Sigma::Sqrt);
        }
        if let Some(r) = s.strip_prefix("linear:") {
            let (p, q) = r.split_once('/').ok_or_else(bad)?;
            let (p, q) = (num(p)?, num(q)?);
            if q == 0 {
                return Err(bad());
            }
            return Ok(Sigma::Linear { p, q });
        }
        if let Some(c) = s.strip_prefix("const:") {
            return Ok(Sigma::Const(num(c)?));
        }
        if let Some(t) = s.strip_prefix("table:") {
            let v = t.split(',').map(num).collect::<Result<Vec<u64>>>()?;
            if v.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Construction("sigma table must be nondecreasing".into()));
            }
            return Ok(Sigma::Table(v));
        }
        Err(bad())
    }
}

impl TryFrom<String> for Sigma {
    type Error = Error;

    fn try_from(s: String) -> Result<Sigma> {
        s.parse()
    }
}

impl From<Sigma> for String {
    fn from(s: Sigma) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let s: Sigma = "log2".parse().unwrap();
        assert_eq!((s.eval(1), s.eval(32768), s.eval(32767)), (0, 15, 14));
        let s: Sigma = "linear:1/3".parse().unwrap();
        assert_eq!(s.eval(10), 3);
        let s: Sigma = "table:0,1,1,5".parse().unwrap();
        assert_eq!((s.eval(3), s.eval(100)), (5, 5));
        assert!("table:3,1".parse::<Sigma>().is_err());
        assert!("cube".parse::<Sigma>().is_err());
        for spec in ["log2+4", "sqrt", "const:7", "table:1,2"] {
            assert_eq!(spec.parse::<Sigma>().unwrap().to_string(), spec);
        }
    }
}
