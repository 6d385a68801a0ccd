//! Benchmarks for the polypkit pipeline live under `benches/`.
