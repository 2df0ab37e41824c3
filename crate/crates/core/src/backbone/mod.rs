//! Frozen backbones behind object-safe interfaces, selected by name.
//!
//! Two kinds are registered: series encoders (`tokenized-encoder`) that map
//! a series to a fixed `(context, feature_dim)` matrix, and embedding
//! backbones (`causal-decoder`) that consume embedding sequences directly.
//! Alternative implementations, for example ones backed by real weights,
//! are added with [`Registry::register`].

pub mod llm;
pub mod tfm;
pub mod transformer;

use std::any::Any;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Result, T2lError};
use crate::real::Real;
pub use crate::registry::Registry;

pub use llm::{CausalDecoder, LlmConfig};
pub use tfm::{adapt_length, mean_scale, quantize, TfmConfig, TfmEmbedding, TokenizedEncoder};

/// Frozen series encoder producing `(context, feature_dim)` matrices.
pub trait SeriesEncoder: Send + Sync {
    fn kind(&self) -> &'static str;

    /// `(context, feature_dim)`.
    fn output_shape(&self) -> (usize, usize);

    fn encode_batch(&self, series: &[&[f64]]) -> Result<Vec<TfmEmbedding>>;

    fn encode(&self, series: &[f64]) -> Result<TfmEmbedding> {
        Ok(self.encode_batch(&[series])?.remove(0))
    }

    /// Every frozen weight, in a fixed order.
    fn parameters(&self) -> Vec<f32>;
}

/// Opaque forward record consumed by [`EmbeddingBackbone::backward_input`].
pub type Tape = Box<dyn Any + Send>;

/// Frozen sequence model that accepts embeddings in place of token ids.
pub trait EmbeddingBackbone<T: Real>: Send + Sync {
    fn kind(&self) -> &'static str;

    fn hidden(&self) -> usize;

    fn max_positions(&self) -> usize;

    /// Last-layer hidden states for one `(tokens, hidden)` sequence.
    fn forward_embeddings(&self, seq: ArrayView2<T>) -> Result<Array2<T>>;

    /// `batch` equal-length sequences stacked row-wise. Returns the stacked
    /// hidden states and a tape for [`Self::backward_input`].
    fn forward_batch(&self, x: ArrayView2<T>, batch: usize) -> Result<(Array2<T>, Tape)>;

    /// Gradient with respect to the input given the gradient of the output.
    fn backward_input(&self, tape: &Tape, grad_out: &Array2<T>) -> Result<Array2<T>>;

    fn parameters(&self) -> Vec<T>;
}

/// Arithmetic mean over the token axis.
pub fn mean_pool<T: Real>(states: ArrayView2<T>) -> Result<Array1<T>> {
    states
        .mean_axis(Axis(0))
        .ok_or_else(|| T2lError::invalid("mean_pool over zero tokens"))
}

/// Hex SHA-256 over the little-endian bytes of `values` widened to `f64`.
pub fn fingerprint<T: Real>(values: &[T]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.as_f64().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub type EncoderFactory = fn(&TfmConfig) -> Result<Box<dyn SeriesEncoder>>;
pub type LlmFactory<T> = fn(&LlmConfig) -> Result<Box<dyn EmbeddingBackbone<T>>>;

pub fn encoder_registry() -> Registry<EncoderFactory> {
    let mut r: Registry<EncoderFactory> = Registry::new("series encoder");
    r.register(tfm::KIND, |c| Ok(Box::new(TokenizedEncoder::new(c)?)));
    r
}

pub fn llm_registry<T: Real>() -> Registry<LlmFactory<T>> {
    let mut r: Registry<LlmFactory<T>> = Registry::new("embedding backbone");
    r.register(llm::KIND, |c| Ok(Box::new(CausalDecoder::<T>::new(c)?)));
    r
}

pub fn build_encoder(config: &TfmConfig) -> Result<Box<dyn SeriesEncoder>> {
    encoder_registry().get(&config.kind)?(config)
}

pub fn build_llm<T: Real>(config: &LlmConfig) -> Result<Box<dyn EmbeddingBackbone<T>>> {
    llm_registry::<T>().get(&config.kind)?(config)
}

/// The pair of frozen models used by the adapter.
pub struct Backbones<T: Real> {
    pub tfm: Box<dyn SeriesEncoder>,
    pub llm: Box<dyn EmbeddingBackbone<T>>,
}

impl<T: Real> Backbones<T> {
    pub fn build(tfm: &TfmConfig, llm: &LlmConfig) -> Result<Self> {
        Ok(Backbones {
            tfm: build_encoder(tfm)?,
            llm: build_llm(llm)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_pool_examples() {
        let v = array![[1.0, -2.0, 0.5]];
        assert_eq!(mean_pool(v.view()).unwrap(), array![1.0, -2.0, 0.5]);
        let sym = array![[1.0, 2.0], [-1.0, -2.0]];
        assert_eq!(mean_pool(sym.view()).unwrap(), array![0.0, 0.0]);
        let rows = array![[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]];
        assert_eq!(mean_pool(rows.view()).unwrap(), array![2.0, 3.0, 4.0]);
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(mean_pool(empty.view()).is_err());
    }

    #[test]
    fn unknown_kind_lists_registered_names() {
        let cfg = TfmConfig {
            kind: "nope".into(),
            ..TfmConfig::tiny()
        };
        match build_encoder(&cfg) {
            Err(T2lError::UnknownStrategy { name, available, .. }) => {
                assert_eq!(name, "nope");
                assert!(available.contains(tfm::KIND));
            }
            _ => panic!("expected unknown strategy"),
        }
        assert_eq!(llm_registry::<f32>().names(), vec![llm::KIND]);
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        assert_eq!(fingerprint(&[1.0f32, 2.0]), fingerprint(&[1.0f64, 2.0]));
        assert_ne!(fingerprint(&[1.0f32, 2.0]), fingerprint(&[2.0f32, 1.0]));
        assert_eq!(fingerprint::<f32>(&[]).len(), 64);
    }
}
