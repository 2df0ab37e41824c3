//! Labeled series ingestion, subject-wise splitting and the linear-probe
//! evaluation protocol.

pub mod logistic;
pub mod metrics;
pub mod probe;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, T2lError};
use crate::seed;

pub use metrics::{auprc, auroc};
pub use probe::{probe, ProbeConfig, ProbeReport};
pub use synthetic::{generate_benchmark, BenchmarkConfig};


pub const DEFAULT_MISSING_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub subject_id: String,
    pub series: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub records: Vec<LabeledSeries>,
    /// Zero-based data-row index of every retained record.
    pub source_rows: Vec<usize>,
    pub dropped: usize,
    pub total: usize,
}

/// Read `subject_id,label,v0,v1,...`; rows may be ragged and empty cells are
/// missing. Rows with missing fraction below `missing_threshold` are kept and
/// zero-filled; the rest are dropped.
pub fn ingest_csv(path: &Path, missing_threshold: f64) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => T2lError::io(path, io),
            other => T2lError::Parse {
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("subject_id") || header.get(1) != Some("label") {
        return Err(T2lError::Parse {
            line: 1,
            message: "header must start with `subject_id,label`".into(),
        });
    }
    let mut out = IngestReport {
        records: Vec::new(),
        source_rows: Vec::new(),
        dropped: 0,
        total: 0,
    };
    for (row_idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(row_idx + 2, |p| p.line() as usize);
        let parse_err = |message: String| T2lError::Parse { line, message };
        if row.len() < 3 {
            return Err(parse_err("expected subject_id, label and at least one value".into()));
        }
        let subject_id = row[0].trim().to_string();
        if subject_id.is_empty() {
            return Err(parse_err("empty subject_id".into()));
        }
        let label = match row[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(format!("label `{other}` is not 0 or 1"))),
        };
        let mut missing = 0usize;
        let mut series = Vec::with_capacity(row.len() - 2);
        for cell in row.iter().skip(2) {
            let cell = cell.trim();
            if cell.is_empty() {
                missing += 1;
                series.push(0.0);
            } else {
                let v: f64 = cell.parse().map_err(|_| parse_err(format!("bad value `{cell}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite value `{cell}`")));
                }
                series.push(v);
            }
        }
        out.total += 1;
        if (missing as f64) / (series.len() as f64) < missing_threshold && missing < series.len() {
            out.records.push(LabeledSeries {
                subject_id,
                series,
                label,
            });
            out.source_rows.push(row_idx);
        } else {
            out.dropped += 1;
        }
    }
    if out.records.is_empty() {
        return Err(T2lError::EmptyDataset(format!(
            "no record of {} passed the missingness filter",
            out.total
        )));
    }
    Ok(out)
}

/// Write records in the ingest format; `NaN` values become empty cells.
pub fn write_csv(path: &Path, records: &[LabeledSeries]) -> Result<()> {
    let width = records.iter().map(|r| r.series.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    let mut header = vec!["subject_id".to_string(), "label".to_string()];
    header.extend((0..width).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.subject_id.clone(), r.label.to_string()];
        row.extend(r.series.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| T2lError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Majority label per subject (ties go to the positive class).
pub fn subject_majority(subjects: &[String], labels: &[u8]) -> BTreeMap<String, u8> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (s, &y) in subjects.iter().zip(labels) {
        let e = tally.entry(s.clone()).or_default();
        if y == 1 {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    tally.into_iter().map(|(s, (n0, n1))| (s, (n1 >= n0) as u8)).collect()
}

/// Partition subject *names* into `k` groups, stratified by majority label.
/// Strata are shuffled independently and dealt round-robin.
pub fn stratified_subject_groups(majority: &BTreeMap<String, u8>, k: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = seed::rng(seed);
    let mut groups = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<&String> = majority.iter().filter(|(_, &y)| y == class).map(|(s, _)| s).collect();
        members.shuffle(&mut rng);
        for s in members {
            groups[next % k].push(s.clone());
            next += 1;
        }
    }
    groups
}

/// Hold out `round(test_fraction * subjects)` subjects (at least one on each
/// side), allocated to majority-label strata by largest remainder.
pub fn subject_split(subjects: &[String], labels: &[u8], test_fraction: f64, seed: u64) -> Result<SubjectSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(T2lError::invalid(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    if subjects.len() != labels.len() {
        return Err(T2lError::invalid("subjects and labels differ in length"));
    }
    let majority = subject_majority(subjects, labels);
    let n = majority.len();
    if n < 2 {
        return Err(T2lError::invalid(format!("subject split needs >= 2 subjects, got {n}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let strata: Vec<Vec<&String>> = [0u8, 1]
        .iter()
        .map(|&c| majority.iter().filter(|(_, &y)| y == c).map(|(s, _)| s).collect())
        .collect();
    let quotas: Vec<f64> = strata.iter().map(|s| s.len() as f64 * n_test as f64 / n as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut left = n_test - take.iter().sum::<usize>();
    for &c in order.iter().cycle().take(4) {
        if left == 0 {
            break;
        }
        if take[c] < strata[c].len() {
            take[c] += 1;
            left -= 1;
        }
    }
    let mut rng = seed::rng(seed);
    let mut test_subjects = std::collections::BTreeSet::new();
    for (c, members) in strata.into_iter().enumerate() {
        let mut members = members;
        members.shuffle(&mut rng);
        test_subjects.extend(members.into_iter().take(take[c]).cloned());
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in subjects.iter().enumerate() {
        if test_subjects.contains(s) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(SubjectSplit { train, test })
}

#[cfg(test)]
mod tests;
