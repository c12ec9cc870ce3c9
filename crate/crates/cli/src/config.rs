//! Run parameters: command-line flags over an optional TOML file over defaults.

use std::path::Path;

use instab::construction::{BuildConfig, FoldChoice, HeightSchedule};
use instab::exact::{parse_rational, Rational};
use instab::Sigma;
use serde::Deserialize;

use crate::CliError;

/// Keys accepted in a `--config` file. All optional; flags win.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub r: Option<String>,
    pub sigma: Option<String>,
    pub heights: Option<Vec<u64>>,
    pub folds: Option<String>,
    pub k_max: Option<usize>,
    pub stage_cap: Option<u32>,
    pub lookahead: Option<usize>,
    pub cell_cap: Option<usize>,
    pub metric_budget: Option<u64>,
    pub margin: Option<String>,
    pub out: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

pub fn rational(s: &str) -> Result<Rational, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

pub fn sigma(s: &str) -> Result<Sigma, String> {
    s.parse::<Sigma>().map_err(|e| e.to_string())
}

/// Fold rules as one flag value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldList(pub Vec<FoldChoice>);

/// `4,2,2` (one fixed count per stage, the last repeating) or `search:CAP`.
pub fn folds(s: &str) -> Result<FoldList, String> {
    let bad = || format!("cli-harness: folds must be `R1,R2,…` or `search:CAP`, got {s:?}");
    if let Some(cap) = s.strip_prefix("search:") {
        let cap = cap.trim().parse::<u64>().map_err(|_| bad())?;
        return Ok(FoldList(vec![FoldChoice::Search { cap }]));
    }
    s.split(',')
        .map(|t| match t.trim().parse::<u64>() {
            Ok(r) if r > 0 => Ok(FoldChoice::Fixed(r)),
            _ => Err(bad()),
        })
        .collect::<Result<Vec<_>, String>>()
        .map(FoldList)
}

/// Construction parameters before validation.
#[derive(Clone, Debug, Default)]
pub struct BuildArgs {
    pub r: Option<Rational>,
    pub sigma: Option<Sigma>,
    pub heights: Option<Vec<u64>>,
    pub folds: Option<FoldList>,
    pub k_max: Option<usize>,
    pub stage_cap: Option<u32>,
    pub lookahead: Option<usize>,
    pub cell_cap: Option<usize>,
    pub metric_budget: Option<u64>,
}

impl BuildArgs {
    /// Validated [`BuildConfig`]; every failure here is a usage error.
    pub fn resolve(&self, file: &FileConfig) -> Result<BuildConfig, CliError> {
        let usage = |e: String| CliError::Usage(e);
        let r = match (&self.r, &file.r) {
            (Some(r), _) => r.clone(),
            (None, Some(s)) => rational(s).map_err(usage)?,
            (None, None) => instab::exact::rat(1, 8),
        };
        let sigma = match (&self.sigma, &file.sigma) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => sigma(s).map_err(usage)?,
            (None, None) => Sigma::Log2 { add: 4 },
        };
        let mut cfg = BuildConfig::toy(r.clone(), sigma).map_err(|e| usage(e.to_string()))?;
        if let Some(h) = self.heights.clone().or_else(|| file.heights.clone()) {
            cfg.schedule =
                HeightSchedule::toy(&r, h.into_iter().map(u128::from).collect()).map_err(|e| usage(e.to_string()))?;
        }
        let file_folds = file.folds.as_deref().map(folds).transpose().map_err(usage)?;
        if let Some(f) = self.folds.clone().or(file_folds) {
            cfg.folds = f.0;
        }
        if let Some(k) = self.k_max.or(file.k_max) {
            cfg.k_max = k;
        }
        if let Some(c) = self.stage_cap.or(file.stage_cap) {
            cfg.stage_cap = c;
        }
        if let Some(l) = self.lookahead.or(file.lookahead) {
            if l == 0 {
                return Err(usage("cli-harness: lookahead must be at least 1".into()));
            }
            cfg.lookahead = l;
        }
        if let Some(c) = self.cell_cap.or(file.cell_cap) {
            cfg.cell_cap = c;
        }
        if let Some(b) = self.metric_budget.or(file.metric_budget) {
            cfg.metric_budget = b;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use instab::exact::rat;

    #[test]
    fn fold_lists_parse() {
        assert_eq!(folds("4,2").unwrap().0, vec![FoldChoice::Fixed(4), FoldChoice::Fixed(2)]);
        assert_eq!(folds("search:64").unwrap().0, vec![FoldChoice::Search { cap: 64 }]);
        assert!(folds("4,0").is_err());
        assert!(folds("search:").is_err());
        assert!(folds("").is_err());
    }

    #[test]
    fn flags_override_file_over_defaults() {
        let file = FileConfig { r: Some("1/16".into()), k_max: Some(2), lookahead: Some(3), ..FileConfig::default() };
        let cfg = BuildArgs { k_max: Some(5), ..BuildArgs::default() }.resolve(&file).unwrap();
        assert_eq!(cfg.r, rat(1, 16));
        assert_eq!(cfg.k_max, 5);
        assert_eq!(cfg.lookahead, 3);
        let cfg = BuildArgs::default().resolve(&FileConfig::default()).unwrap();
        assert_eq!(cfg.r, rat(1, 8));
        assert_eq!(cfg.sigma, Sigma::Log2 { add: 4 });
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = |file: FileConfig| matches!(BuildArgs::default().resolve(&file), Err(CliError::Usage(_)));
        assert!(bad(FileConfig { r: Some("1/3".into()), ..FileConfig::default() }));
        assert!(bad(FileConfig { lookahead: Some(0), ..FileConfig::default() }));
        assert!(bad(FileConfig { folds: Some("x".into()), ..FileConfig::default() }));
        assert!(toml::from_str::<FileConfig>("radius = 1").is_err());
    }
}
