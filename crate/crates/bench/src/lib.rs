//! Criterion benchmarks for the robust OCO crate; see `benches/`.
