//! Criterion benchmarks for `attnexplain-core` live under `benches/`.
