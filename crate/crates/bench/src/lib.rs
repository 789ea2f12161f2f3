//! Criterion benchmarks for groundwork live in `benches/`.
