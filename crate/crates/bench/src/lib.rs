//! Criterion benchmarks for the workbench live under `benches/`.
