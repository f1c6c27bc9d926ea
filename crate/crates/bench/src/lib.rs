//! Criterion benchmarks for shapekit; see `benches/`.
