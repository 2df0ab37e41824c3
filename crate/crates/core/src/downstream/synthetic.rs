//! Bundled binary benchmark: is a record's dominant component periodic or
//! noise? Records are grouped into subjects whose labels lean toward a
//! subject-level majority, and some cells are blanked as missing.

use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledSeries;
use crate::error::{Result, T2lError};
use crate::seed::{self, streams};
use crate::synthgen::{sample_gp, KernelExpr, KernelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub subjects: usize,
    pub records_per_subject: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Probability that a record carries its subject's majority label.
    pub subject_bias: f64,
    /// Share of records with light missingness (kept by ingestion).
    pub light_missing_rate: f64,
    /// Share of records with heavy missingness (dropped by ingestion).
    pub heavy_missing_rate: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            subjects: 200,
            records_per_subject: 3,
            min_length: 720,
            max_length: 1440,
            subject_bias: 0.75,
            light_missing_rate: 0.1,
            heavy_missing_rate: 0.03,
            seed: 11,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 || self.records_per_subject == 0 {
            return Err(T2lError::invalid("benchmark needs >= 2 subjects with >= 1 record each"));
        }
        if self.min_length < 16 || self.max_length < self.min_length {
            return Err(T2lError::invalid(format!(
                "lengths must satisfy 16 <= min <= max, got {}..{}",
                self.min_length, self.max_length
            )));
        }
        for (name, v) in [
            ("subject_bias", self.subject_bias),
            ("light_missing_rate", self.light_missing_rate),
            ("heavy_missing_rate", self.heavy_missing_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(T2lError::invalid(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.light_missing_rate + self.heavy_missing_rate > 1.0 {
            return Err(T2lError::invalid("missing rates sum above 1"));
        }
        Ok(())
    }
}

fn component(spec: KernelSpec, variance: f64, length: usize, seed: u64) -> Result<Vec<f64>> {
    let x = sample_gp(&KernelExpr::leaf(spec), length, seed)?;
    Ok(x.into_iter().map(|v| v * variance.sqrt()).collect())
}

/// Label 1: periodic draw plus weak noise. Label 0: white noise plus a
/// smooth RBF drift and a weak periodic draw.
fn record_series(label: u8, length: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = seed::rng(seed);
    let period = rng.random_range(6.0..48.0f64).round();
    let periodic = KernelSpec::PeriodicSine {
        length_scale: rng.random_range(0.7..1.5),
        period,
    };
    let rbf = KernelSpec::Rbf {
        length_scale: rng.random_range(40.0..120.0),
    };
    let (v_per, v_noise, v_rbf): (f64, f64, f64) = if label == 1 { (1.0, 0.1, 0.1) } else { (0.1, 1.0, 0.5) };
    let p = component(periodic, v_per, length, seed::derive(seed, streams::GP_DRAW, 0))?;
    let r = component(rbf, v_rbf, length, seed::derive(seed, streams::GP_DRAW, 1))?;
    let offset: f64 = rng.random_range(-1.0..1.0);
    // White noise has a diagonal covariance, so it is drawn directly.
    let mut noise_rng = seed::child_rng(seed, streams::GP_DRAW, 2);
    Ok((0..length)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut noise_rng);
            offset + p[i] + r[i] + v_noise.sqrt() * e
        })
        .collect())
}

/// Subject id for subject `s`.
pub fn subject_name(s: usize) -> String {
    format!("s{s:04}")
}

/// Deterministic in the config. Missing cells are `NaN`.
pub fn generate_benchmark(config: &BenchmarkConfig) -> Result<Vec<LabeledSeries>> {
    config.validate()?;
    let total = config.subjects * config.records_per_subject;
    (0..total)
        .into_par_iter()
        .map(|r| {
            let s = r / config.records_per_subject;
            let mut subject_rng = seed::child_rng(config.seed, streams::DOWNSTREAM, s as u64);
            let majority: u8 = subject_rng.random_bool(0.5) as u8;
            let record_seed = seed::derive(config.seed, streams::SAMPLE, r as u64);
            let mut rng = seed::rng(record_seed);
            let label = if rng.random_bool(config.subject_bias) { majority } else { 1 - majority };
            let length = rng.random_range(config.min_length..=config.max_length);
            let mut series = record_series(label, length, seed::derive(record_seed, streams::EXPR, 0))?;
            let u: f64 = rng.random();
            let missing = if u < config.heavy_missing_rate {
                rng.random_range(0.3..0.5)
            } else if u < config.heavy_missing_rate + config.light_missing_rate {
                rng.random_range(0.02..0.2)
            } else {
                0.0
            };
            let n_missing = (missing * length as f64).round() as usize;
            for i in rand::seq::index::sample(&mut rng, length, n_missing) {
                series[i] = f64::NAN;
            }
            Ok(LabeledSeries {
                subject_id: subject_name(s),
                series,
                label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        BenchmarkConfig {
            subjects: 12,
            records_per_subject: 2,
            min_length: 64,
            max_length: 96,
            heavy_missing_rate: 0.2,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = generate_benchmark(&small()).unwrap();
        let b = generate_benchmark(&small()).unwrap();
        assert_eq!(a.len(), 24);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.subject_id, y.subject_id);
            assert_eq!(x.label, y.label);
            assert_eq!(
                x.series.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.series.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert!((64..=96).contains(&x.series.len()));
        }
        assert_eq!(a[0].subject_id, a[1].subject_id);
        assert_ne!(a[1].subject_id, a[2].subject_id);
    }

    #[test]
    fn periodic_records_have_stronger_lag_structure() {
        use crate::analysis::acf;
        let recs = generate_benchmark(&BenchmarkConfig {
            subjects: 40,
            records_per_subject: 1,
            min_length: 256,
            max_length: 256,
            light_missing_rate: 0.0,
            heavy_missing_rate: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mean_lag1 = |label: u8| {
            let v: Vec<f64> = recs.iter().filter(|r| r.label == label).map(|r| acf(&r.series, 1).unwrap()[1]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_lag1(1) > mean_lag1(0) + 0.2, "{} {}", mean_lag1(1), mean_lag1(0));
    }

    #[test]
    fn rejects_bad_config() {
        let bad = BenchmarkConfig {
            subjects: 1,
            ..Default::default()
        };
        assert!(generate_benchmark(&bad).is_err());
        let bad = BenchmarkConfig {
            min_length: 100,
            max_length: 50,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
