//! Stage builder for the unstable transformation and the inductive sequence builder.

pub mod builder;
pub mod schedule;
pub mod tower;

pub use schedule::{compute_schedule, HeightSchedule};
pub use tower::{FoldCertificate, FoldChoice, LevelCell, MeasureLedger, Stage, Tower, TowerStage};
pub use builder::{build_unstable, BuildConfig, Checkpoint, Construction, StepRecord};
