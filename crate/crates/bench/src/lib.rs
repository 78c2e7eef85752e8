//! Criterion benchmarks for the engine layers, the reconstruction loss and
//! whole training iterations; see `benches/engine.rs`.
