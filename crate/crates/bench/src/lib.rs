//! Criterion benchmarks for the convolution kernel and the forward and
//! backward passes; see `benches/kernels.rs`.
