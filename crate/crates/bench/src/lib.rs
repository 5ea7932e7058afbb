//! Criterion benchmarks for drillforge-core live under `benches/`.
