//! Criterion benchmarks for `procbench-core`; see `benches/`.
