//! Linear-probe protocol: repeated subject-wise hold-out, subject-grouped
//! grid-search cross-validation on the training side, refit, hold-out scores.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::{classifier_registry, Classifier, Hyper, Penalty, SolverConfig};
use super::metrics::{auprc, auroc};
use super::{stratified_subject_groups, subject_majority, subject_split};
use crate::error::{Result, T2lError};
use crate::seed::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub test_fraction: f64,
    pub cv_folds: usize,
    pub n_shuffles: usize,
    pub classifier: String,
    pub c_values: Vec<f64>,
    /// Any of `l1`, `l2`, `elasticnet`, `none`.
    pub penalties: Vec<String>,
    pub l1_ratios: Vec<f64>,
    pub solver: SolverConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            test_fraction: 0.2,
            cv_folds: 3,
            n_shuffles: 5,
            classifier: "logistic".into(),
            c_values: vec![0.1, 1.0, 10.0, 100.0],
            penalties: ["l1", "l2", "elasticnet", "none"].map(String::from).to_vec(),
            l1_ratios: vec![0.5, 0.7, 0.9],
            solver: SolverConfig::default(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(T2lError::invalid(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.cv_folds < 2 {
            return Err(T2lError::invalid("cv_folds must be at least 2"));
        }
        if self.n_shuffles == 0 {
            return Err(T2lError::invalid("n_shuffles must be at least 1"));
        }
        if self.solver.max_iter == 0 || !(self.solver.tol > 0.0) {
            return Err(T2lError::invalid("solver needs max_iter >= 1 and tol > 0"));
        }
        classifier_registry().get(&self.classifier)?;
        self.hyper_grid().map(|_| ())
    }

    /// Grid in declaration order; `none` ignores `C` and appears once.
    pub fn hyper_grid(&self) -> Result<Vec<Hyper>> {
        if self.c_values.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(T2lError::invalid("C values must be positive"));
        }
        if self.l1_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(T2lError::invalid("l1 ratios must lie in [0, 1]"));
        }
        let mut grid = Vec::new();
        for p in &self.penalties {
            let kinds: Vec<Penalty> = match p.as_str() {
                "l1" => vec![Penalty::L1],
                "l2" => vec![Penalty::L2],
                "elasticnet" => self.l1_ratios.iter().map(|&l1_ratio| Penalty::ElasticNet { l1_ratio }).collect(),
                "none" => {
                    grid.push(Hyper {
                        penalty: Penalty::None,
                        c: 1.0,
                    });
                    continue;
                }
                other => return Err(T2lError::invalid(format!("unknown penalty `{other}`"))),
            };
            for penalty in kinds {
                for &c in &self.c_values {
                    grid.push(Hyper { penalty, c });
                }
            }
        }
        if grid.is_empty() {
            return Err(T2lError::invalid("hyperparameter grid is empty"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleResult {
    pub shuffle: usize,
    pub seed: u64,
    pub hyper: Hyper,
    pub cv_auroc: f64,
    pub skipped_folds: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub test_subjects: usize,
    pub auroc: f64,
    pub auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub classifier: String,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub shuffles: Vec<ShuffleResult>,
}

/// Per-column standardization fitted on one fold.
struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    fn fit(x: ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty fold");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Standardizer { mean, scale }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

fn rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn pick(y: &[u8], idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| y[i]).collect()
}

fn two_classes(y: &[u8]) -> bool {
    y.contains(&0) && y.contains(&1)
}

fn fit_score(
    clf: &dyn Classifier,
    x: ArrayView2<f64>,
    y: &[u8],
    train: &[usize],
    eval: &[usize],
    hyper: &Hyper,
) -> Result<(Array1<f64>, Vec<u8>)> {
    let xt = rows(x, train);
    let std = Standardizer::fit(xt.view());
    let model = clf.fit(std.apply(xt.view()).view(), &pick(y, train), hyper)?;
    let scores = model.decision(std.apply(rows(x, eval).view()).view());
    Ok((scores, pick(y, eval)))
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Run the probe. `subjects[i]` groups record `i` for splitting; records of
/// one subject never straddle a split.
pub fn probe(
    embeddings: ArrayView2<f64>,
    labels: &[u8],
    subjects: &[String],
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    config.validate()?;
    let n = embeddings.nrows();
    if n != labels.len() || n != subjects.len() {
        return Err(T2lError::shape(format!(
            "{n} embedding rows, {} labels, {} subject ids",
            labels.len(),
            subjects.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(T2lError::invalid("labels must be 0 or 1"));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(T2lError::invalid("embeddings contain non-finite values"));
    }
    let clf = classifier_registry().get(&config.classifier)?(&config.solver);
    let grid = config.hyper_grid()?;

    let mut shuffles = Vec::with_capacity(config.n_shuffles);
    for s in 0..config.n_shuffles {
        let shuffle_seed = seed::derive(seed, streams::PROBE, s as u64);
        let split = subject_split(subjects, labels, config.test_fraction, shuffle_seed)?;
        let train_subjects: BTreeSet<&String> = split.train.iter().map(|&i| &subjects[i]).collect();
        let test_subjects: BTreeSet<&String> = split.test.iter().map(|&i| &subjects[i]).collect();
        assert!(train_subjects.is_disjoint(&test_subjects), "subject leaked across the split");

        let train_names: Vec<String> = split.train.iter().map(|&i| subjects[i].clone()).collect();
        let majority = subject_majority(&train_names, &pick(labels, &split.train));
        let k = config.cv_folds.min(majority.len());
        let groups = stratified_subject_groups(&majority, k, seed::derive(shuffle_seed, streams::PROBE, 1));
        let folds: Vec<(Vec<usize>, Vec<usize>)> = groups
            .iter()
            .map(|g| {
                let held: BTreeSet<&String> = g.iter().collect();
                split.train.iter().partition(|&&i| !held.contains(&subjects[i]))
            })
            .collect();

        let cv: Vec<(Option<f64>, usize)> = grid
            .par_iter()
            .map(|hyper| {
                let mut scores = Vec::new();
                let mut skipped = 0;
                for (tr, va) in &folds {
                    if k < 2 || !two_classes(&pick(labels, tr)) || !two_classes(&pick(labels, va)) {
                        skipped += 1;
                        continue;
                    }
                    let (s, y) = fit_score(clf.as_ref(), embeddings, labels, tr, va, hyper)?;
                    scores.push(auroc(s.as_slice().expect("contiguous"), &y)?);
                }
                let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
                Ok((mean, skipped))
            })
            .collect::<Result<_>>()?;
        let skipped_folds = cv[0].1;
        if skipped_folds > 0 {
            log::warn!("shuffle {s}: skipped {skipped_folds} of {} folds with a single class", folds.len());
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, (m, _)) in cv.iter().enumerate() {
            if let Some(m) = *m {
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((i, m));
                }
            }
        }
        let (best_idx, cv_auroc) = best.ok_or_else(|| {
            T2lError::DegenerateLabels(format!("shuffle {s}: every cross-validation fold has a single class"))
        })?;
        let hyper = grid[best_idx];

        let (scores, y_test) = fit_score(clf.as_ref(), embeddings, labels, &split.train, &split.test, &hyper)?;
        let scores = scores.to_vec();
        shuffles.push(ShuffleResult {
            shuffle: s,
            seed: shuffle_seed,
            hyper,
            cv_auroc,
            skipped_folds,
            train_records: split.train.len(),
            test_records: split.test.len(),
            test_subjects: test_subjects.len(),
            auroc: auroc(&scores, &y_test)?,
            auprc: auprc(&scores, &y_test)?,
        });
    }
    let a: Vec<f64> = shuffles.iter().map(|r| r.auroc).collect();
    let p: Vec<f64> = shuffles.iter().map(|r| r.auprc).collect();
    Ok(ProbeReport {
        classifier: clf.name().to_string(),
        auroc_mean: a.iter().sum::<f64>() / a.len() as f64,
        auroc_std: population_std(&a),
        auprc_mean: p.iter().sum::<f64>() / p.len() as f64,
        auprc_std: population_std(&p),
        shuffles,
    })
}

/// One CSV row per shuffle.
pub fn write_probe_csv(path: &std::path::Path, report: &ProbeReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "shuffle",
        "seed",
        "hyper",
        "cv_auroc",
        "skipped_folds",
        "train_records",
        "test_records",
        "test_subjects",
        "auroc",
        "auprc",
    ])?;
    for r in &report.shuffles {
        w.write_record([
            r.shuffle.to_string(),
            r.seed.to_string(),
            r.hyper.to_string(),
            r.cv_auroc.to_string(),
            r.skipped_folds.to_string(),
            r.train_records.to_string(),
            r.test_records.to_string(),
            r.test_subjects.to_string(),
            r.auroc.to_string(),
            r.auprc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| T2lError::io(path, e))
}
