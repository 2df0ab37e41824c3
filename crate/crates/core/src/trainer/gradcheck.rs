//! Analytic versus central-difference gradients in `f64`.
//!
//! Runs in eval mode (running batch-norm statistics, no dropout) on a single
//! sample so the loss is a smooth deterministic function of the parameters.
//! Relative error is `|a - n| / max(|a|, |n|, abs_floor)`; the floor keeps
//! gradients far below finite-difference round-off (`~eps * loss / h`) from
//! dominating the maximum.

use ndarray::ArrayView2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::loss::softmax_cross_entropy;
use crate::adapter::nn::{Group, Mode};
use crate::adapter::{Adapter, AdapterParams};
use crate::backbone::EmbeddingBackbone;
use crate::error::{Result, T2lError};
use crate::seed::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub n_params: usize,
    pub tolerance: f64,
    pub relative_step: f64,
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            n_params: 240,
            tolerance: 1e-4,
            relative_step: 1e-5,
            abs_floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub index: usize,
    pub group: Group,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradEntry>,
    /// Parameters whose analytic and numeric gradients are both zero.
    pub zero_gradient: Vec<usize>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.entries.len()
    }

    pub fn count(&self, group: Group) -> usize {
        self.entries.iter().filter(|e| e.group == group).count()
    }
}

/// Indices spread evenly over f, g and l (l is capped at its size).
fn choose(adapter: &Adapter, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::child_rng(seed, streams::GRADCHECK, 0);
    let groups = [Group::L, Group::G, Group::F];
    let mut chosen = Vec::with_capacity(n);
    let mut remaining = n;
    for (k, g) in groups.iter().enumerate() {
        let members: Vec<usize> = adapter
            .layout()
            .slots
            .iter()
            .filter(|s| s.group == *g)
            .flat_map(|s| s.offset..s.offset + s.len)
            .collect();
        let want = (remaining / (groups.len() - k)).min(members.len());
        for i in index::sample(&mut rng, members.len(), want) {
            chosen.push(members[i]);
        }
        remaining -= want;
    }
    chosen.sort_unstable();
    chosen
}

pub fn gradient_check(
    adapter: &Adapter,
    params: &AdapterParams<f64>,
    llm: &dyn EmbeddingBackbone<f64>,
    z_c: ArrayView2<f32>,
    label: usize,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if config.n_params == 0 {
        return Err(T2lError::invalid("gradient check needs at least one parameter"));
    }
    let loss = |p: &AdapterParams<f64>| -> Result<f64> {
        let (out, _, _) = adapter.forward(p, llm, &[z_c], true, &mut Mode::Eval)?;
        Ok(softmax_cross_entropy(out.logits.view(), &[label])?.0)
    };
    let (out, tape, _) = adapter.forward(params, llm, &[z_c], true, &mut Mode::Eval)?;
    let (_, dlogits) = softmax_cross_entropy(out.logits.view(), &[label])?;
    let grad = adapter.backward(params, llm, &tape, &dlogits)?;

    let mut p = params.clone();
    let mut entries = Vec::new();
    let mut zero_gradient = Vec::new();
    for i in choose(adapter, config.n_params, config.seed) {
        let orig = p.params[i];
        let h = config.relative_step * orig.abs().max(1.0);
        p.params[i] = orig + h;
        let up = loss(&p)?;
        p.params[i] = orig - h;
        let down = loss(&p)?;
        p.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad[i];
        if analytic == 0.0 && numeric.abs() < config.abs_floor {
            zero_gradient.push(i);
            continue;
        }
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(config.abs_floor);
        entries.push(GradEntry {
            index: i,
            group: adapter.layout().group_of(i).expect("index inside layout"),
            analytic,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < config.tolerance,
        max_rel_error,
        tolerance: config.tolerance,
        entries,
        zero_gradient,
    })
}
