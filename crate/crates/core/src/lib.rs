//! Exact-arithmetic workbench for cutting-and-stacking transformations,
//! randomness tests, supermartingale deficiency and an instability
//! construction with universal-code demonstrations.

pub mod construction;
pub mod error;
pub mod exact;
pub mod gadget;
pub mod lz78;
pub mod martingale;
pub mod randomness;
pub mod sigma;
pub mod transform;

pub use error::{Error, Result};
pub use exact::{BinString, DyadicInterval, Interval, Rational};
pub use gadget::{Column, ColumnRef, Gadget, Partition};
pub use transform::{Observable, Orbit, StageMap, TransformStage};
pub use randomness::{SolovayTest, TestVerdict};
pub use martingale::{DeficiencyTrace, KtMixture, Supermartingale};
pub use sigma::Sigma;
pub use lz78::{lz78_decode, lz78_encode, Lz78Parse};
