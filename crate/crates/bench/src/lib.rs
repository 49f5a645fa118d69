//! Criterion benchmarks for the dualtrain pipeline live under `benches/`.
