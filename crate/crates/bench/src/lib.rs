//! Micro-benchmark crate; see `benches/kernels.rs`.
