//! Labeled synthetic datasets for the periodicity pretext task.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expr::random_expr;
use super::gp::sample_gp;
use crate::error::{Result, T2lError};
use crate::seed::{self, streams};

pub const DEFAULT_PERIODS: [usize; 6] = [30, 60, 90, 120, 150, 180];
pub const SERIES_LENGTH: usize = 1440;
pub const MAX_NONPERIODIC: usize = 4;

/// 70/10/20 train/val/test.
pub const SPLIT_FRACTIONS: (f64, f64) = (0.7, 0.1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// Unnormalized GP draw, stored at the persisted (32-bit) precision.
    pub series: Vec<f32>,
    pub period_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub length: usize,
    pub periods: Vec<usize>,
    pub max_nonperiodic: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 6000,
            length: SERIES_LENGTH,
            periods: DEFAULT_PERIODS.to_vec(),
            max_nonperiodic: MAX_NONPERIODIC,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        validate_periods(&self.periods, self.length)?;
        if self.n < self.periods.len() {
            return Err(T2lError::invalid(format!(
                "n = {} is smaller than the number of period classes ({})",
                self.n,
                self.periods.len()
            )));
        }
        if self.max_nonperiodic == 0 {
            return Err(T2lError::invalid("max_nonperiodic must be at least 1"));
        }
        Ok(())
    }
}

/// Periods must be non-empty, strictly increasing, at least 2 and shorter than
/// the series so the repetition is observable.
pub fn validate_periods(periods: &[usize], length: usize) -> Result<()> {
    if periods.is_empty() {
        return Err(T2lError::invalid("period set is empty"));
    }
    if periods.windows(2).any(|w| w[0] >= w[1]) {
        return Err(T2lError::invalid(format!("period set {periods:?} must be strictly increasing")));
    }
    if let Some(p) = periods.iter().find(|&&p| p < 2 || p >= length) {
        return Err(T2lError::invalid(format!("period {p} outside [2, {length})")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<SyntheticSample>,
    pub splits: Vec<Split>,
    pub config: SynthConfig,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.config.periods.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.splits {
            c[*s as usize] += 1;
        }
        c
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for s in &self.samples {
            c[s.period_class] += 1;
        }
        c
    }
}

/// Generate sample `index` of the dataset keyed by `master_seed`.
pub fn generate_sample(config: &SynthConfig, index: usize) -> Result<SyntheticSample> {
    let period_class = index % config.periods.len();
    let sample_seed = seed::derive(config.seed, streams::SAMPLE, index as u64);
    let expr = random_expr(
        seed::derive(sample_seed, streams::EXPR, 0),
        config.periods[period_class],
        config.max_nonperiodic,
    )?;
    let x = sample_gp(&expr, config.length, seed::derive(sample_seed, streams::GP_DRAW, 0))?;
    Ok(SyntheticSample {
        series: x.into_iter().map(|v| v as f32).collect(),
        period_class,
        seed: sample_seed,
    })
}

/// Stratified 70/10/20 assignment: each class is shuffled on its own, the
/// classes are interleaved round-robin, and the interleaved order is cut at
/// the split boundaries. Every prefix is balanced to within one per class.
pub fn stratified_split(labels: &[usize], num_classes: usize, seed: u64) -> Vec<Split> {
    let n = labels.len();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        per_class[c].push(i);
    }
    let mut rng = seed::child_rng(seed, streams::SPLIT, 0);
    for members in per_class.iter_mut() {
        members.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(n);
    let longest = per_class.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..longest {
        for members in &per_class {
            if let Some(&i) = members.get(r) {
                order.push(i);
            }
        }
    }
    let n_train = (SPLIT_FRACTIONS.0 * n as f64).round() as usize;
    let n_val = (SPLIT_FRACTIONS.1 * n as f64).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let samples = (0..config.n)
        .into_par_iter()
        .map(|i| generate_sample(config, i))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.period_class).collect();
    let splits = stratified_split(&labels, config.periods.len(), config.seed);
    Ok(SyntheticDataset {
        samples,
        splits,
        config: config.clone(),
    })
}

/// `n` series of the default length with periods cycled over `period_set`.
pub fn generate_dataset(n: usize, period_set: &[usize], seed: u64) -> Result<SyntheticDataset> {
    generate(&SynthConfig {
        n,
        periods: period_set.to_vec(),
        seed,
        ..SynthConfig::default()
    })
}
