//! Embedding-versus-autocorrelation study and latency benchmarking.

pub mod bench;
pub mod correlation;

pub use bench::{bench_latency, BenchConfig, BenchReport, BenchRow};
pub use correlation::{acf, embedding_acf_correlation, midranks, spearman, AcfCorrelationReport};
