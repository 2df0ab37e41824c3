//! Causal decoder reference backbone fed with embeddings directly.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::transformer::{BatchLayout, StackShape, StackTape, TransformerStack};
use super::{EmbeddingBackbone, Tape};
use crate::error::{Result, T2lError};
use crate::real::Real;

pub const KIND: &str = "causal-decoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub kind: String,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub init_seed: u64,
    pub attend_padding: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self::paper_shape()
    }
}

impl LlmConfig {
    pub fn paper_shape() -> Self {
        LlmConfig {
            kind: KIND.into(),
            hidden: 2048,
            layers: 2,
            heads: 32,
            ff_dim: 8192,
            max_positions: 128,
            init_seed: 2,
            attend_padding: true,
        }
    }

    pub fn desk() -> Self {
        LlmConfig {
            hidden: 256,
            heads: 4,
            ff_dim: 512,
            ..Self::paper_shape()
        }
    }

    pub fn tiny() -> Self {
        LlmConfig {
            hidden: 16,
            layers: 1,
            heads: 2,
            ff_dim: 24,
            max_positions: 16,
            ..Self::paper_shape()
        }
    }

    pub fn stack_shape(&self) -> StackShape {
        StackShape {
            dim: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_positions: self.max_positions,
            causal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.attend_padding {
            return Err(T2lError::invalid(
                "attend_padding = false is not supported: padding is along the feature axis, so there is nothing to mask",
            ));
        }
        self.stack_shape().validate()
    }

    pub fn param_count(&self) -> usize {
        self.stack_shape().param_count()
    }
}

pub struct CausalDecoder<T> {
    config: LlmConfig,
    stack: TransformerStack<T>,
}

impl<T: Real> CausalDecoder<T> {
    pub fn new(config: &LlmConfig) -> Result<Self> {
        config.validate()?;
        Ok(CausalDecoder {
            config: config.clone(),
            stack: TransformerStack::new(config.stack_shape(), config.init_seed)?,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn layout(&self, rows: usize, batch: usize) -> Result<BatchLayout> {
        if batch == 0 || !rows.is_multiple_of(batch) {
            return Err(T2lError::shape(format!("{rows} rows do not split into {batch} sequences")));
        }
        Ok(BatchLayout::unpadded(batch, rows / batch))
    }
}

impl<T: Real> EmbeddingBackbone<T> for CausalDecoder<T> {
    fn kind(&self) -> &'static str {
        KIND
    }

    fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn max_positions(&self) -> usize {
        self.config.max_positions
    }

    fn forward_embeddings(&self, seq: ArrayView2<T>) -> Result<Array2<T>> {
        let layout = self.layout(seq.nrows(), 1)?;
        self.stack.forward(seq, &layout)
    }

    fn forward_batch(&self, x: ArrayView2<T>, batch: usize) -> Result<(Array2<T>, Tape)> {
        let layout = self.layout(x.nrows(), batch)?;
        let (y, tape) = self.stack.forward_tape(x, &layout)?;
        Ok((y, Box::new(tape)))
    }

    fn backward_input(&self, tape: &Tape, grad_out: &Array2<T>) -> Result<Array2<T>> {
        let tape = tape
            .downcast_ref::<StackTape<T>>()
            .ok_or_else(|| T2lError::invalid("tape was not produced by this backbone"))?;
        self.stack.backward_input(tape, grad_out)
    }

    fn parameters(&self) -> Vec<T> {
        self.stack.parameters()
    }
}
