//! Criterion benchmarks for the rectiflow engine live in `benches/`.
