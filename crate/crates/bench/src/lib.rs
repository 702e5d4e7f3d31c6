//! Criterion benchmarks of the geometry kernels and the classifier
//! backbone; run with `cargo bench -p cbns-bench`.
