//! End-to-end composition of the frozen backbones and the adapter.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::adapter::nn::Mode;
use crate::adapter::{Adapter, AdapterConfig, AdapterParams, BackboneDims};
use crate::backbone::{Backbones, LlmConfig, SeriesEncoder, TfmConfig};
use crate::error::Result;
use crate::real::Real;

/// Samples per encoder call when filling feature caches.
pub const ENCODE_CHUNK: usize = 16;

pub fn backbone_dims(tfm: &TfmConfig, llm: &LlmConfig) -> BackboneDims {
    BackboneDims {
        context: tfm.context,
        feature_dim: tfm.feature_dim,
        hidden: llm.hidden,
        max_positions: llm.max_positions,
    }
}

/// Encoder features for many series. Chunks are fixed by index, so results
/// do not depend on the number of worker threads.
pub fn encode_all<S: AsRef<[f32]> + Sync>(tfm: &dyn SeriesEncoder, series: &[S]) -> Result<Vec<Array2<f32>>> {
    let chunks: Vec<Result<Vec<Array2<f32>>>> = series
        .par_chunks(ENCODE_CHUNK)
        .map(|chunk| {
            let owned: Vec<Vec<f64>> = chunk.iter().map(|s| s.as_ref().iter().map(|&v| v as f64).collect()).collect();
            let refs: Vec<&[f64]> = owned.iter().map(|v| v.as_slice()).collect();
            Ok(tfm.encode_batch(&refs)?.into_iter().map(|e| e.matrix).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(series.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Eval-mode outputs for one sample.
#[derive(Debug, Clone)]
pub struct ForwardResult<T> {
    pub logits: Array1<T>,
    pub z_o: Array1<T>,
    pub z_c: Array2<f32>,
}

pub struct Pipeline<T: Real> {
    pub adapter: Adapter,
    pub backbones: Backbones<T>,
    pub params: AdapterParams<T>,
}

impl<T: Real> Pipeline<T> {
    pub fn new(adapter: &AdapterConfig, tfm: &TfmConfig, llm: &LlmConfig, params: Option<AdapterParams<T>>) -> Result<Self> {
        let backbones = Backbones::build(tfm, llm)?;
        let adapter = Adapter::new(adapter, backbone_dims(tfm, llm))?;
        let params = params.unwrap_or_else(|| adapter.init_params());
        adapter.check_params(&params)?;
        Ok(Pipeline {
            adapter,
            backbones,
            params,
        })
    }

    pub fn forward(&self, series: &[f64]) -> Result<ForwardResult<T>> {
        let z_c = self.backbones.tfm.encode(series)?.matrix;
        let (out, _, _) = self
            .adapter
            .forward(&self.params, self.backbones.llm.as_ref(), &[z_c.view()], true, &mut Mode::Eval)?;
        Ok(ForwardResult {
            logits: out.logits.column(0).to_owned(),
            z_o: out.z_o.column(0).to_owned(),
            z_c,
        })
    }

    /// Penultimate activations without the encoder residual.
    pub fn extract_embedding(&self, series: &[f64]) -> Result<Array1<T>> {
        let z_c = self.backbones.tfm.encode(series)?.matrix;
        Ok(self.embed_features(&[z_c.view()], false)?.column(0).to_owned())
    }

    /// `(proj_dims.1, batch)` embeddings from cached encoder features.
    pub fn embed_features(&self, z_c: &[ArrayView2<f32>], residual: bool) -> Result<Array2<T>> {
        let (out, _, _) = self
            .adapter
            .forward(&self.params, self.backbones.llm.as_ref(), z_c, residual, &mut Mode::Eval)?;
        Ok(out.z_o)
    }

    /// One embedding row per series, residual-free, batched by `batch`.
    pub fn embed_series<S: AsRef<[f32]> + Sync>(&self, series: &[S], batch: usize) -> Result<Array2<T>> {
        let mut rows = Vec::with_capacity(series.len());
        for chunk in series.chunks(batch.max(1)) {
            let z_c = encode_all(self.backbones.tfm.as_ref(), chunk)?;
            let views: Vec<_> = z_c.iter().map(|z| z.view()).collect();
            rows.push(self.embed_features(&views, false)?.reversed_axes());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }
}
