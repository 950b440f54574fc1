//! Criterion benchmarks for backpar; see `benches/`.
