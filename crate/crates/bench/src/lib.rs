//! Criterion benchmarks for the hot paths of `crflab-core`. See `benches/`.

pub use crflab_core as core;
