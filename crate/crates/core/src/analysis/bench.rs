//! Latency and throughput of an end-to-end forward callable.

use std::path::Path;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, T2lError};
use crate::seed::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![256, 512, 1024, 2048, 4096],
            repeats: 100,
            warmup: 100,
            batch: 16,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(T2lError::invalid("bench lengths must be non-empty and positive"));
        }
        if self.repeats == 0 || self.batch == 0 {
            return Err(T2lError::invalid("repeats and batch must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub length: usize,
    /// Milliseconds per single-sample forward.
    pub latency_ms_mean: f64,
    pub latency_ms_std: f64,
    /// Predictions per second at the configured batch size.
    pub throughput_mean: f64,
    pub throughput_std: f64,
    /// True when the timer resolution is finer than 1% of the mean latency.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Pipeline configuration the timings belong to.
    pub header: serde_json::Value,
    pub warmup: usize,
    pub repeats: usize,
    pub batch: usize,
    pub timer_resolution_ns: u64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, length: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.length == length)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "length",
            "latency_ms_mean",
            "latency_ms_std",
            "throughput_mean",
            "throughput_std",
            "reliable",
            "batch",
            "repeats",
            "warmup",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.length.to_string(),
                r.latency_ms_mean.to_string(),
                r.latency_ms_std.to_string(),
                r.throughput_mean.to_string(),
                r.throughput_std.to_string(),
                r.reliable.to_string(),
                self.batch.to_string(),
                self.repeats.to_string(),
                self.warmup.to_string(),
            ])?;
        }
        w.flush().map_err(|e| T2lError::io(path, e))
    }
}

/// Smallest observable non-zero tick of `Instant`.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Deterministic noisy sinusoid used as benchmark input.
pub fn bench_series(length: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = seed::child_rng(seed, streams::BENCH, (length as u64) << 16 | index as u64);
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    (0..length)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + noise.sample(&mut rng))
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Time `run` on single samples (latency) and on batches (throughput).
/// Warmup calls precede each timed phase and are not recorded. Timed
/// sections run one at a time on the calling thread.
pub fn bench_latency<F>(run: F, config: &BenchConfig, header: serde_json::Value) -> Result<BenchReport>
where
    F: Fn(&[Vec<f64>]) -> Result<()>,
{
    config.validate()?;
    let resolution = timer_resolution();
    let mut rows = Vec::with_capacity(config.lengths.len());
    for &length in &config.lengths {
        let batch: Vec<Vec<f64>> = (0..config.batch).map(|i| bench_series(length, config.seed, i)).collect();
        let single = &batch[..1];

        for _ in 0..config.warmup {
            run(single)?;
        }
        let mut latency = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            let t = Instant::now();
            run(single)?;
            latency.push(t.elapsed().as_secs_f64() * 1e3);
        }

        for _ in 0..config.warmup {
            run(&batch)?;
        }
        let mut throughput = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            let t = Instant::now();
            run(&batch)?;
            throughput.push(config.batch as f64 / t.elapsed().as_secs_f64().max(1e-12));
        }

        let (latency_ms_mean, latency_ms_std) = mean_std(&latency);
        let (throughput_mean, throughput_std) = mean_std(&throughput);
        let reliable = resolution.as_secs_f64() * 1e3 < 0.01 * latency_ms_mean;
        if !reliable {
            log::warn!("length {length}: timer resolution {resolution:?} is coarse relative to the latency");
        }
        rows.push(BenchRow {
            length,
            latency_ms_mean,
            latency_ms_std,
            throughput_mean,
            throughput_std,
            reliable,
        });
    }
    Ok(BenchReport {
        header,
        warmup: config.warmup,
        repeats: config.repeats,
        batch: config.batch,
        timer_resolution_ns: resolution.as_nanos() as u64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn warmup_is_excluded_and_rows_follow_lengths() {
        let calls = Cell::new(0usize);
        let cfg = BenchConfig {
            lengths: vec![8, 32],
            repeats: 5,
            warmup: 3,
            batch: 4,
            seed: 1,
        };
        let rep = bench_latency(
            |b: &[Vec<f64>]| {
                calls.set(calls.get() + 1);
                std::thread::sleep(Duration::from_micros(200 * b.len() as u64));
                Ok(())
            },
            &cfg,
            serde_json::json!({"pipeline": "sleep"}),
        )
        .unwrap();
        assert_eq!(calls.get(), 2 * 2 * (5 + 3));
        assert_eq!(rep.rows.iter().map(|r| r.length).collect::<Vec<_>>(), vec![8, 32]);
        for r in &rep.rows {
            assert!(r.latency_ms_mean >= 0.2 && r.latency_ms_std >= 0.0);
            assert!(r.throughput_mean > 0.0 && r.throughput_mean < 4.0 / 0.0008);
        }
    }

    #[test]
    fn errors_propagate_and_config_is_checked() {
        let fail = |_: &[Vec<f64>]| Err(T2lError::invalid("boom"));
        assert!(bench_latency(fail, &BenchConfig::default(), serde_json::Value::Null).is_err());
        let bad = BenchConfig {
            lengths: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn inputs_are_deterministic() {
        assert_eq!(bench_series(64, 3, 1), bench_series(64, 3, 1));
        assert_ne!(bench_series(64, 3, 1), bench_series(64, 3, 2));
    }
}
