//! Dataset directory layout:
//!
//! * `meta.json`   – format tag, version, n, length, period set, master seed
//! * `series.f32`  – little-endian `f32`, row-major, one row per sample
//! * `labels.csv`  – `index,period_class,period,seed,split`

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{validate_periods, Split, SynthConfig, SyntheticDataset, SyntheticSample};
use crate::error::{Result, T2lError};
use crate::io;

pub const DATASET_FORMAT: &str = "t2l-synthetic-dataset";
pub const DATASET_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const SERIES_FILE: &str = "series.f32";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub length: usize,
    pub period_set: Vec<usize>,
    pub master_seed: u64,
    pub max_nonperiodic: usize,
    pub split_counts: SplitCounts,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    index: usize,
    period_class: usize,
    period: usize,
    seed: u64,
    split: String,
}

pub fn write_dataset(dir: &Path, ds: &SyntheticDataset) -> Result<DatasetMeta> {
    io::ensure_dir(dir)?;
    let [train, val, test] = ds.split_counts();
    let meta = DatasetMeta {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        n: ds.len(),
        length: ds.config.length,
        period_set: ds.config.periods.clone(),
        master_seed: ds.config.seed,
        max_nonperiodic: ds.config.max_nonperiodic,
        split_counts: SplitCounts { train, val, test },
        class_counts: ds.class_counts(),
    };
    io::write_json(&dir.join(META_FILE), &meta)?;
    io::write_f32_le(
        &dir.join(SERIES_FILE),
        ds.samples.iter().flat_map(|s| s.series.iter().copied()),
    )?;
    let path = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for (i, (s, split)) in ds.samples.iter().zip(&ds.splits).enumerate() {
        w.serialize(LabelRow {
            index: i,
            period_class: s.period_class,
            period: ds.config.periods[s.period_class],
            seed: s.seed,
            split: split.as_str().into(),
        })?;
    }
    w.flush().map_err(|e| T2lError::io(&path, e))?;
    Ok(meta)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let meta: DatasetMeta = io::read_json(&path)?;
    if meta.format != DATASET_FORMAT || meta.version != DATASET_VERSION {
        return Err(T2lError::Incompatible {
            path,
            message: format!(
                "expected {DATASET_FORMAT} v{DATASET_VERSION}, found {} v{}",
                meta.format, meta.version
            ),
        });
    }
    Ok(meta)
}

pub fn read_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let meta = read_meta(dir)?;
    let incompatible = |message: String| T2lError::Incompatible {
        path: dir.to_path_buf(),
        message,
    };
    validate_periods(&meta.period_set, meta.length).map_err(|e| incompatible(e.to_string()))?;
    let payload = io::read_f32_le(&dir.join(SERIES_FILE))?;
    if payload.len() != meta.n * meta.length {
        return Err(incompatible(format!(
            "series payload holds {} values, expected {} x {}",
            payload.len(),
            meta.n,
            meta.length
        )));
    }
    let mut r = csv::Reader::from_path(dir.join(LABELS_FILE))?;
    let mut samples = Vec::with_capacity(meta.n);
    let mut splits = Vec::with_capacity(meta.n);
    for (row_idx, row) in r.deserialize::<LabelRow>().enumerate() {
        let row = row?;
        let line = row_idx + 2;
        if row.index != row_idx || row.period_class >= meta.period_set.len() {
            return Err(T2lError::Parse {
                line,
                message: format!("bad label row {row:?}"),
            });
        }
        let split = Split::parse(&row.split).ok_or_else(|| T2lError::Parse {
            line,
            message: format!("unknown split `{}`", row.split),
        })?;
        let start = row_idx * meta.length;
        samples.push(SyntheticSample {
            series: payload[start..start + meta.length].to_vec(),
            period_class: row.period_class,
            seed: row.seed,
        });
        splits.push(split);
    }
    if samples.len() != meta.n {
        return Err(incompatible(format!("label table has {} rows, expected {}", samples.len(), meta.n)));
    }
    Ok(SyntheticDataset {
        samples,
        splits,
        config: SynthConfig {
            n: meta.n,
            length: meta.length,
            periods: meta.period_set,
            max_nonperiodic: meta.max_nonperiodic,
            seed: meta.master_seed,
        },
    })
}
