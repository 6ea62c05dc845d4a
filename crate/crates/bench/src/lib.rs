//! Benchmark-only crate; see `benches/fitdnn.rs`.
