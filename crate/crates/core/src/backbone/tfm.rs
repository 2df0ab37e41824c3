//! Tokenize-then-encode reference series encoder.
//!
//! `adapt_length` → `mean_scale` → `quantize` → append EOS, left-pad with PAD
//! → token embedding → bidirectional transformer with key-padding mask.
//!
//! Bin tokens are embedded with random Fourier features of the bin-centre
//! value, so neighbouring bins get neighbouring vectors; PAD and EOS get
//! independent Gaussian vectors.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::transformer::{BatchLayout, StackShape, TransformerStack};
use super::SeriesEncoder;
use crate::error::{Result, T2lError};
use crate::seed::{self, streams};

pub const KIND: &str = "tokenized-encoder";

/// Value length scale of the bin-token features (in mean-scaled units).
pub const TOKEN_LENGTH_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfmConfig {
    pub kind: String,
    pub context: usize,
    pub feature_dim: usize,
    pub vocab_bins: usize,
    pub clip_limit: f64,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub init_seed: u64,
}

impl Default for TfmConfig {
    fn default() -> Self {
        Self::paper_shape()
    }
}

impl TfmConfig {
    pub fn paper_shape() -> Self {
        TfmConfig {
            kind: KIND.into(),
            context: 513,
            feature_dim: 768,
            vocab_bins: 512,
            clip_limit: 15.0,
            layers: 2,
            heads: 12,
            ff_dim: 3072,
            init_seed: 1,
        }
    }

    pub fn desk() -> Self {
        TfmConfig {
            context: 129,
            feature_dim: 96,
            heads: 4,
            ff_dim: 192,
            ..Self::paper_shape()
        }
    }

    /// Small shape for unit tests.
    pub fn tiny() -> Self {
        TfmConfig {
            context: 17,
            feature_dim: 16,
            vocab_bins: 64,
            layers: 1,
            heads: 2,
            ff_dim: 32,
            ..Self::paper_shape()
        }
    }

    /// Real series points that fit next to the EOS token.
    pub fn context_points(&self) -> usize {
        self.context - 1
    }

    pub fn pad_token(&self) -> usize {
        self.vocab_bins
    }

    pub fn eos_token(&self) -> usize {
        self.vocab_bins + 1
    }

    pub fn stack_shape(&self) -> StackShape {
        StackShape {
            dim: self.feature_dim,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_positions: self.context,
            causal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context < 2 || self.feature_dim < 1 || self.vocab_bins < 2 {
            return Err(T2lError::invalid(format!(
                "tfm requires context >= 2, feature_dim >= 1, vocab_bins >= 2 (got {}, {}, {})",
                self.context, self.feature_dim, self.vocab_bins
            )));
        }
        if !(self.clip_limit.is_finite() && self.clip_limit > 0.0) {
            return Err(T2lError::invalid(format!("clip_limit must be positive, got {}", self.clip_limit)));
        }
        self.stack_shape().validate()
    }

    pub fn param_count(&self) -> usize {
        (self.vocab_bins + 2) * self.feature_dim + self.stack_shape().param_count()
    }
}

/// Encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct TfmEmbedding {
    /// `(context, feature_dim)`.
    pub matrix: Array2<f32>,
    pub scale: f64,
}

/// Window means over `context_points` near-equal contiguous windows; window
/// `i` covers `[floor(i n / c), floor((i + 1) n / c))`.
pub fn adapt_length(series: &[f64], context_points: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(T2lError::invalid("adapt_length on an empty series"));
    }
    if context_points == 0 {
        return Err(T2lError::invalid("context_points must be >= 1"));
    }
    let n = series.len();
    if n <= context_points {
        return Ok(series.to_vec());
    }
    Ok((0..context_points)
        .map(|i| {
            let w = &series[i * n / context_points..(i + 1) * n / context_points];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect())
}

/// Divide by the mean absolute value (1 when that is below `1e-12`).
pub fn mean_scale(series: &[f64]) -> (Vec<f64>, f64) {
    let mut scale = series.iter().map(|v| v.abs()).sum::<f64>() / series.len().max(1) as f64;
    if scale < 1e-12 {
        scale = 1.0;
    }
    (series.iter().map(|v| v / scale).collect(), scale)
}

/// Uniform bins over `[-clip_limit, clip_limit]`.
pub fn quantize(scaled: &[f64], config: &TfmConfig) -> Vec<usize> {
    let (l, b) = (config.clip_limit, config.vocab_bins);
    scaled
        .iter()
        .map(|&v| {
            let v = v.clamp(-l, l);
            (((v + l) / (2.0 * l) * b as f64).floor() as usize).min(b - 1)
        })
        .collect()
}

/// Token ids of length `context` plus the number of leading PAD tokens.
pub fn tokenize(series: &[f64], config: &TfmConfig) -> Result<(Vec<usize>, usize, f64)> {
    if let Some(v) = series.iter().find(|v| !v.is_finite()) {
        return Err(T2lError::invalid(format!("series contains non-finite value {v}")));
    }
    let adapted = adapt_length(series, config.context_points())?;
    let (scaled, scale) = mean_scale(&adapted);
    let bins = quantize(&scaled, config);
    let pad = config.context - bins.len() - 1;
    let mut tokens = vec![config.pad_token(); pad];
    tokens.extend(bins);
    tokens.push(config.eos_token());
    Ok((tokens, pad, scale))
}

pub struct TokenizedEncoder {
    config: TfmConfig,
    embedding: Array2<f32>,
    stack: TransformerStack<f32>,
}

impl TokenizedEncoder {
    pub fn new(config: &TfmConfig) -> Result<Self> {
        config.validate()?;
        let (b, d) = (config.vocab_bins, config.feature_dim);
        let mut rng = seed::child_rng(config.init_seed, streams::WEIGHTS, 1);
        let freq = Normal::new(0.0, 1.0 / TOKEN_LENGTH_SCALE).expect("positive std");
        let omega: Vec<f64> = (0..d).map(|_| freq.sample(&mut rng)).collect();
        let phase: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let mut embedding = Array2::zeros((b + 2, d));
        let width = 2.0 * config.clip_limit / b as f64;
        for t in 0..b {
            let centre = -config.clip_limit + (t as f64 + 0.5) * width;
            for k in 0..d {
                embedding[[t, k]] = (std::f64::consts::SQRT_2 * (omega[k] * centre + phase[k]).cos()) as f32;
            }
        }
        let special: Array2<f32> = super::transformer::gaussian_matrix(&mut rng, 2, d, 1.0);
        embedding.slice_mut(s![b.., ..]).assign(&special);
        Ok(TokenizedEncoder {
            config: config.clone(),
            embedding,
            stack: TransformerStack::new(config.stack_shape(), config.init_seed)?,
        })
    }

    pub fn config(&self) -> &TfmConfig {
        &self.config
    }
}

impl SeriesEncoder for TokenizedEncoder {
    fn kind(&self) -> &'static str {
        KIND
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.config.context, self.config.feature_dim)
    }

    fn encode_batch(&self, series: &[&[f64]]) -> Result<Vec<TfmEmbedding>> {
        let (c, d) = self.output_shape();
        let mut x = Array2::zeros((series.len() * c, d));
        let mut pads = Vec::with_capacity(series.len());
        let mut scales = Vec::with_capacity(series.len());
        for (i, s) in series.iter().enumerate() {
            let (tokens, pad, scale) = tokenize(s, &self.config)?;
            for (p, &t) in tokens.iter().enumerate() {
                x.row_mut(i * c + p).assign(&self.embedding.row(t));
            }
            pads.push(pad);
            scales.push(scale);
        }
        let layout = BatchLayout {
            batch: series.len(),
            seq: c,
            pad: pads,
        };
        let y = self.stack.forward(x.view(), &layout)?;
        Ok(scales
            .into_iter()
            .enumerate()
            .map(|(i, scale)| TfmEmbedding {
                matrix: y.slice(s![i * c..(i + 1) * c, ..]).to_owned(),
                scale,
            })
            .collect())
    }

    fn parameters(&self) -> Vec<f32> {
        let mut p: Vec<f32> = self.embedding.iter().copied().collect();
        p.extend(self.stack.parameters());
        p
    }
}
