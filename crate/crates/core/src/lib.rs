//! Reprogramming a frozen time-series encoder into a frozen language-model
//! backbone.
//!
//! The pipeline: synthetic periodic series ([`synthgen`]) are encoded by a
//! frozen tokenize-then-encode model ([`backbone::tfm`]); a small trainable
//! adapter ([`adapter`]) maps those features into the input-embedding space
//! of a frozen causal language model ([`backbone::llm`]) and projects its
//! pooled output to an embedding. The adapter is fit on a periodicity
//! pretext task ([`trainer`]), and the embeddings are evaluated with linear
//! probes ([`downstream`]) and structural analyses ([`analysis`]).

pub mod adapter;
pub mod analysis;
pub mod backbone;
pub mod config;
pub mod downstream;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod real;
pub mod registry;
pub mod seed;
pub mod synthgen;
pub mod trainer;

pub use error::{Result, T2lError};
pub use real::Real;
