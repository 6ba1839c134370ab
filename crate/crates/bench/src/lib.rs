//! Benchmarks only; see `benches/cdaae.rs`.
