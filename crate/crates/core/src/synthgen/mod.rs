//! Synthetic periodic series drawn from Gaussian processes with randomly
//! composed kernels.

pub mod dataset;
pub mod expr;
pub mod gp;
pub mod kernel;
pub mod store;

pub use dataset::{
    generate, generate_dataset, generate_sample, stratified_split, validate_periods, Split, SynthConfig,
    SyntheticDataset, SyntheticSample, DEFAULT_PERIODS, MAX_NONPERIODIC, SERIES_LENGTH,
};
pub use expr::{covariance_on_index_grid, eval_expr, random_expr, CombineOp, KernelExpr};
pub use gp::{factorize, sample_gp, Factorization};
pub use kernel::{eval_kernel, KernelKind, KernelSpec};
pub use store::{read_dataset, read_meta, write_dataset, DatasetMeta};
