//! Criterion benchmarks for the seeking engine live in `benches/`.
