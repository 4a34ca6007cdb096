//! Criterion benchmarks for the network kernels live under `benches/`.
