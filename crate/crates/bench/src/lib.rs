//! Criterion benchmarks for the reshaping pipeline live in `benches/`.
