//! Criterion benchmarks for the hot loops of `fbl-core`; see `benches/`.
