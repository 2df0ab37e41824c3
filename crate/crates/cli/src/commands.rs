//! Subcommand implementations. Each prints a one-line JSON summary on
//! stdout and writes its artifacts under the paths it is given.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde_json::json;
use t2l_core::adapter::checkpoint::Checkpoint;
use t2l_core::adapter::nn::Mode;
use t2l_core::adapter::{Adapter, AdapterParams};
use t2l_core::analysis::{bench_latency, embedding_acf_correlation, BenchConfig};
use t2l_core::backbone::{fingerprint, Backbones};
use t2l_core::config::RunConfig;
use t2l_core::downstream::probe::write_probe_csv;
use t2l_core::downstream::{generate_benchmark, ingest_csv, probe as run_probe, write_csv};
use t2l_core::io::{ensure_dir, write_json};
use t2l_core::pipeline::{backbone_dims, Pipeline};
use t2l_core::seed::{self, streams};
use t2l_core::synthgen::{self, read_dataset, write_dataset, Split, SyntheticDataset};
use t2l_core::trainer::{evaluate_pretext, fit, write_metrics, SplitFeatures};
use t2l_core::{Result, T2lError};

use crate::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.t2l";
pub const METRICS_FILE: &str = "metrics.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const INDEX_FILE: &str = "index.csv";

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(T2lError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
        )))
    }
}

fn emit(summary: &serde_json::Value, file: Option<&Path>) -> CliResult<()> {
    if let Some(path) = file {
        write_json(path, summary)?;
    }
    println!("{summary}");
    Ok(())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split `{s}` (train, val, test)"))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples (default from config).
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated period set.
    #[arg(long, value_delimiter = ',')]
    pub periods: Option<Vec<usize>>,
    /// Series length (default from config).
    #[arg(long)]
    pub length: Option<usize>,
}

pub fn generate_dataset(config: &RunConfig, args: &GenerateArgs) -> CliResult<SyntheticDataset> {
    let mut synth = config.synthgen.clone();
    if let Some(n) = args.n {
        synth.n = n;
    }
    if let Some(p) = &args.periods {
        synth.periods = p.clone();
    }
    if let Some(l) = args.length {
        synth.length = l;
    }
    synth.validate().map_err(CliError::usage)?;
    let ds = synthgen::generate(&synth)?;
    write_dataset(&args.out, &ds)?;
    Ok(ds)
}

pub fn generate(config: &RunConfig, args: &GenerateArgs) -> CliResult<()> {
    let start = Instant::now();
    let ds = generate_dataset(config, args)?;
    let [train, val, test] = ds.split_counts();
    emit(
        &json!({
            "command": "generate",
            "out": args.out,
            "n": ds.len(),
            "length": ds.config.length,
            "periods": ds.config.periods,
            "seed": ds.config.seed,
            "class_counts": ds.class_counts(),
            "split_counts": {"train": train, "val": val, "test": test},
            "seconds": start.elapsed().as_secs_f64(),
        }),
        None,
    )
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn init(config: &RunConfig, args: &InitArgs) -> CliResult<()> {
    let adapter = Adapter::new(&config.adapter, backbone_dims(&config.tfm, &config.llm))?;
    let params = adapter.init_params::<f32>();
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    Checkpoint::new(&config.adapter, &config.tfm, &config.llm, &params).save(&args.out)?;
    emit(
        &json!({"command": "init", "out": args.out, "param_count": params.params.len()}),
        None,
    )
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn train(config: &RunConfig, args: &TrainArgs) -> CliResult<()> {
    require(&args.data)?;
    let mut trainer = config.trainer.clone();
    if let Some(e) = args.epochs {
        trainer.epochs = e;
    }
    trainer.validate().map_err(CliError::usage)?;
    let start = Instant::now();
    let ds = read_dataset(&args.data)?;
    if ds.num_classes() != config.adapter.num_classes {
        return Err(CliError::usage(T2lError::invalid(format!(
            "dataset has {} classes but the adapter predicts {}",
            ds.num_classes(),
            config.adapter.num_classes
        ))));
    }
    let backbones = Backbones::<f32>::build(&config.tfm, &config.llm)?;
    let adapter = Adapter::new(&config.adapter, backbone_dims(&config.tfm, &config.llm))?;
    let tfm_before = fingerprint(&backbones.tfm.parameters());
    let llm_before = fingerprint(&backbones.llm.parameters());

    let tfm = backbones.tfm.as_ref();
    let splits = [Split::Train, Split::Val, Split::Test]
        .map(|s| SplitFeatures::encode(&ds, s, tfm));
    let [train_f, val_f, test_f] = splits;
    let (train_f, val_f, test_f) = (train_f?, val_f?, test_f?);
    log::info!(
        "encoded {} / {} / {} samples in {:.1}s",
        train_f.len(),
        val_f.len(),
        test_f.len(),
        start.elapsed().as_secs_f64()
    );

    ensure_dir(&args.out)?;
    std::fs::write(args.out.join("config.toml"), config.to_toml()).map_err(|e| T2lError::io(&args.out, e))?;
    let metrics_path = args.out.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| T2lError::io(&metrics_path, e))?);
    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    let mut side_error: Option<T2lError> = None;
    let result = fit(&adapter, backbones.llm.as_ref(), &train_f, &val_f, &trainer, &mut |m, best| {
        log::info!(
            "epoch {} train loss {:.4} acc {:.3} val loss {:.4} acc {:.3} ({:.1}s)",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.val_loss.unwrap_or(f64::NAN),
            m.val_accuracy.unwrap_or(f64::NAN),
            m.seconds
        );
        let r = write_metrics(&mut metrics, m)
            .and_then(|_| metrics.flush().map_err(|e| T2lError::io(&metrics_path, e)))
            .and_then(|_| Checkpoint::new(&config.adapter, &config.tfm, &config.llm, best).save(&ckpt_path));
        if let Err(e) = r {
            side_error.get_or_insert(e);
        }
    });
    if let Some(e) = side_error {
        return Err(e.into());
    }
    let result = result?;
    Checkpoint::new(&config.adapter, &config.tfm, &config.llm, &result.params).save(&ckpt_path)?;
    let test = evaluate_pretext(&adapter, &result.params, backbones.llm.as_ref(), &test_f, trainer.batch_size)?;
    let tfm_after = fingerprint(&backbones.tfm.parameters());
    let llm_after = fingerprint(&backbones.llm.parameters());
    let best = &result.metrics.epochs[result.metrics.best_epoch - 1];
    emit(
        &json!({
            "command": "train",
            "out": args.out,
            "checkpoint": ckpt_path,
            "train_samples": train_f.len(),
            "val_samples": val_f.len(),
            "test_samples": test_f.len(),
            "epochs": result.metrics.epochs.len(),
            "initial_loss": result.metrics.initial_loss,
            "best_epoch": result.metrics.best_epoch,
            "best_val_loss": best.val_loss,
            "best_val_accuracy": best.val_accuracy,
            "test_loss": test.loss,
            "test_accuracy": test.accuracy,
            "test_confusion": test.confusion,
            "tfm_fingerprint": {"before": tfm_before, "after": tfm_after},
            "llm_fingerprint": {"before": llm_before, "after": llm_after},
            "backbones_unchanged": tfm_before == tfm_after && llm_before == llm_after,
            "seconds": start.elapsed().as_secs_f64(),
        }),
        Some(&args.out.join(SUMMARY_FILE)),
    )
}

/// Pipeline rebuilt from the architecture recorded in a checkpoint.
pub fn load_pipeline(path: &Path) -> CliResult<Pipeline<f32>> {
    require(path)?;
    let ckpt = Checkpoint::load(path)?;
    let h = &ckpt.header;
    Ok(Pipeline::new(&h.adapter, &h.tfm, &h.llm, Some(ckpt.params.cast::<f32>()))?)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Adapter checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to evaluate: train, val or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Also write the summary to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(config: &RunConfig, args: &EvalArgs) -> CliResult<()> {
    require(&args.data)?;
    let pipe = load_pipeline(&args.checkpoint)?;
    let ds = read_dataset(&args.data)?;
    if ds.num_classes() != pipe.adapter.config().num_classes {
        return Err(CliError::usage(T2lError::invalid("dataset and checkpoint disagree on the class count")));
    }
    let data = SplitFeatures::encode(&ds, args.split, pipe.backbones.tfm.as_ref())?;
    let r = evaluate_pretext(&pipe.adapter, &pipe.params, pipe.backbones.llm.as_ref(), &data, config.embed_batch)?;
    emit(
        &json!({
            "command": "eval",
            "split": args.split.as_str(),
            "samples": data.len(),
            "loss": r.loss,
            "accuracy": r.accuracy,
            "confusion": r.confusion,
        }),
        args.out.as_deref(),
    )
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Labeled CSV (`subject_id,label,v0,...`).
    #[arg(long)]
    pub input: PathBuf,
    /// Adapter checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for embeddings and the aligned index.
    #[arg(long)]
    pub out: PathBuf,
    /// Drop records whose missing share reaches this value.
    #[arg(long)]
    pub missing_threshold: Option<f64>,
}

pub fn embed(config: &RunConfig, args: &EmbedArgs) -> CliResult<()> {
    require(&args.input)?;
    let threshold = args.missing_threshold.unwrap_or(config.downstream.missing_threshold);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CliError::usage(T2lError::invalid("missing threshold must lie in (0, 1]")));
    }
    let pipe = load_pipeline(&args.checkpoint)?;
    let start = Instant::now();
    let report = ingest_csv(&args.input, threshold)?;
    let series: Vec<Vec<f32>> = report
        .records
        .iter()
        .map(|r| r.series.iter().map(|&v| v as f32).collect())
        .collect();
    let emb = pipe.embed_series(&series, config.embed_batch)?;
    ensure_dir(&args.out)?;
    write_embeddings(&args.out.join(EMBEDDINGS_FILE), &emb.mapv(f64::from))?;
    let idx_path = args.out.join(INDEX_FILE);
    let mut w = csv::Writer::from_path(&idx_path).map_err(T2lError::from)?;
    w.write_record(["row", "source_row", "subject_id", "label"]).map_err(T2lError::from)?;
    for (i, (r, src)) in report.records.iter().zip(&report.source_rows).enumerate() {
        w.write_record([i.to_string(), src.to_string(), r.subject_id.clone(), r.label.to_string()])
            .map_err(T2lError::from)?;
    }
    w.flush().map_err(|e| T2lError::io(&idx_path, e))?;
    emit(
        &json!({
            "command": "embed",
            "out": args.out,
            "records": report.records.len(),
            "dropped": report.dropped,
            "total": report.total,
            "dim": emb.ncols(),
            "seconds": start.elapsed().as_secs_f64(),
        }),
        Some(&args.out.join(SUMMARY_FILE)),
    )
}

pub fn write_embeddings(path: &Path, emb: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..emb.ncols()).map(|j| format!("e{j}")))?;
    for row in emb.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| T2lError::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(T2lError::Parse {
                line: i + 2,
                message: format!("expected {width} values, found {}", rec.len()),
            });
        }
        for cell in rec.iter() {
            values.push(cell.parse::<f64>().map_err(|_| T2lError::Parse {
                line: i + 2,
                message: format!("bad value `{cell}`"),
            })?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width), values).map_err(|e| T2lError::shape(e.to_string()))
}

/// `(subject_ids, labels)` from an index file written by `embed`.
pub fn read_index(path: &Path) -> Result<(Vec<String>, Vec<u8>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| T2lError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (si, li) = (col("subject_id")?, col("label")?);
    let (mut subjects, mut labels) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        subjects.push(rec[si].to_string());
        labels.push(match &rec[li] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(T2lError::Parse {
                    line: i + 2,
                    message: format!("label `{other}` is not 0 or 1"),
                })
            }
        });
    }
    Ok((subjects, labels))
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Embedding CSV written by `embed`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Index file with `subject_id` and `label` columns.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory for the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Shuffle labels before probing (null baseline).
    #[arg(long)]
    pub permute_labels: bool,
}

pub fn probe(config: &RunConfig, args: &ProbeArgs) -> CliResult<()> {
    require(&args.embeddings)?;
    require(&args.labels)?;
    let emb = read_embeddings(&args.embeddings)?;
    let (subjects, mut labels) = read_index(&args.labels)?;
    if emb.nrows() != labels.len() {
        return Err(CliError::usage(T2lError::shape(format!(
            "{} embedding rows but {} index rows",
            emb.nrows(),
            labels.len()
        ))));
    }
    if args.permute_labels {
        labels.shuffle(&mut seed::child_rng(config.seed, streams::PROBE, u64::MAX));
    }
    let report = run_probe(emb.view(), &labels, &subjects, &config.probe, config.seed)?;
    let summary_path = match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_probe_csv(&dir.join("probe_shuffles.csv"), &report)?;
            write_json(&dir.join("probe_report.json"), &report)?;
            Some(dir.join(SUMMARY_FILE))
        }
        None => None,
    };
    emit(
        &json!({
            "command": "probe",
            "records": labels.len(),
            "permuted": args.permute_labels,
            "classifier": report.classifier,
            "auroc_mean": report.auroc_mean,
            "auroc_std": report.auroc_std,
            "auprc_mean": report.auprc_mean,
            "auprc_std": report.auprc_std,
            "hyperparameters": report.shuffles.iter().map(|s| s.hyper.to_string()).collect::<Vec<_>>(),
        }),
        summary_path.as_deref(),
    )
}

#[derive(Debug, Args)]
pub struct AnalyzeAcfArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Adapter checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split to sample from: train, val or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Number of samples taken from the split in index order.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn analyze_acf(config: &RunConfig, args: &AnalyzeAcfArgs) -> CliResult<()> {
    require(&args.data)?;
    let pipe = load_pipeline(&args.checkpoint)?;
    let ds = read_dataset(&args.data)?;
    let want = args.samples.unwrap_or(config.analysis.samples);
    let idx: Vec<usize> = ds.indices(args.split).into_iter().take(want).collect();
    let series: Vec<&[f32]> = idx.iter().map(|&i| ds.samples[i].series.as_slice()).collect();
    let emb = pipe.embed_series(&series, config.embed_batch)?.mapv(f64::from);
    let series64: Vec<Vec<f64>> = series.iter().map(|s| s.iter().map(|&v| v as f64).collect()).collect();
    let report = embedding_acf_correlation(&series64, emb.view(), config.analysis.n_lags)?;
    ensure_dir(&args.out)?;
    report.write_csv(&args.out.join("acf_matrix.csv"), &args.out.join("acf_max.csv"))?;
    emit(
        &json!({
            "command": "analyze-acf",
            "samples": idx.len(),
            "dims": emb.ncols(),
            "n_lags": config.analysis.n_lags,
            "threshold": report.threshold,
            "count_above_threshold": report.count_above_threshold,
            "fraction_above_threshold": report.fraction_above_threshold(),
            "skipped_cells": report.skipped_cells,
        }),
        Some(&args.out.join(SUMMARY_FILE)),
    )
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; a fresh initialization is used when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated series lengths.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    /// Timed calls per length.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Untimed calls before each timed phase.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Batch size for the throughput phase.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Also write the rows to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Time the encoder-adapter-backbone path on raw series batches.
pub fn bench_pipeline(pipe: &Pipeline<f32>, config: &BenchConfig) -> Result<t2l_core::analysis::BenchReport> {
    let h = json!({
        "adapter": pipe.adapter.config(),
        "dims": pipe.adapter.dims(),
        "tfm": pipe.backbones.tfm.kind(),
        "llm": pipe.backbones.llm.kind(),
        "threads": rayon::current_num_threads(),
    });
    bench_latency(
        |batch: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = batch.iter().map(|s| s.as_slice()).collect();
            let z: Vec<Array2<f32>> = pipe.backbones.tfm.encode_batch(&refs)?.into_iter().map(|e| e.matrix).collect();
            let views: Vec<_> = z.iter().map(|m| m.view()).collect();
            let (out, _, _) =
                pipe.adapter
                    .forward(&pipe.params, pipe.backbones.llm.as_ref(), &views, true, &mut Mode::Eval)?;
            std::hint::black_box(out.logits.sum_axis(Axis(0)));
            Ok(())
        },
        config,
        h,
    )
}

pub fn bench(config: &RunConfig, args: &BenchArgs) -> CliResult<()> {
    let mut bc = config.analysis.bench.clone();
    if let Some(l) = &args.lengths {
        bc.lengths = l.clone();
    }
    if let Some(r) = args.repeats {
        bc.repeats = r;
    }
    if let Some(w) = args.warmup {
        bc.warmup = w;
    }
    if let Some(b) = args.batch {
        bc.batch = b;
    }
    bc.validate().map_err(CliError::usage)?;
    let pipe = match &args.checkpoint {
        Some(p) => load_pipeline(p)?,
        None => Pipeline::new(&config.adapter, &config.tfm, &config.llm, None::<AdapterParams<f32>>)?,
    };
    let report = bench_pipeline(&pipe, &bc)?;
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        report.write_csv(&dir.join("bench.csv"))?;
        write_json(&dir.join("bench.json"), &report)?;
    }
    emit(
        &json!({
            "command": "bench",
            "batch": report.batch,
            "repeats": report.repeats,
            "warmup": report.warmup,
            "rows": report.rows,
        }),
        None,
    )
}

#[derive(Debug, Args)]
pub struct SynthDownstreamArgs {
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of subjects (default from config).
    #[arg(long)]
    pub subjects: Option<usize>,
}

pub fn synth_downstream(config: &RunConfig, args: &SynthDownstreamArgs) -> CliResult<()> {
    let mut bc = config.downstream.benchmark.clone();
    if let Some(s) = args.subjects {
        bc.subjects = s;
    }
    bc.validate().map_err(CliError::usage)?;
    let records = generate_benchmark(&bc)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_csv(&args.out, &records)?;
    emit(
        &json!({
            "command": "synth-downstream",
            "out": args.out,
            "records": records.len(),
            "subjects": bc.subjects,
            "positives": records.iter().filter(|r| r.label == 1).count(),
            "with_missing": records.iter().filter(|r| r.series.iter().any(|v| v.is_nan())).count(),
        }),
        None,
    )
}
