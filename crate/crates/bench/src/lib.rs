//! Criterion benchmarks for the receiver chain live under `benches/`.
