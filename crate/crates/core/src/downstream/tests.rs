use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::error::T2lError;

fn write_tmp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn ingest_applies_threshold_and_zero_fills() {
    // 10 values each: 2 missing (20%), 3 missing (30%), none missing.
    let f = write_tmp(
        "subject_id,label,v0,v1,v2,v3,v4,v5,v6,v7,v8,v9\n\
         a,1,1,,3,4,5,6,7,8,,10\n\
         a,0,,,,4,5,6,7,8,9,10\n\
         b,0,1,2,3,4,5,6,7,8,9,10\n",
    );
    let rep = ingest_csv(f.path(), DEFAULT_MISSING_THRESHOLD).unwrap();
    assert_eq!((rep.records.len(), rep.dropped, rep.total), (2, 1, 3));
    assert_eq!(rep.records[0].series, vec![1.0, 0.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 0.0, 10.0]);
    assert_eq!(rep.records[1].series, (1..=10).map(f64::from).collect::<Vec<_>>());
    assert_eq!(rep.source_rows, vec![0, 2]);
}

#[test]
fn ingest_accepts_ragged_rows() {
    let f = write_tmp("subject_id,label,v0,v1,v2\nx,1,1,2\ny,0,1,2,3,4\n");
    let rep = ingest_csv(f.path(), 0.25).unwrap();
    assert_eq!(rep.records[0].series.len(), 2);
    assert_eq!(rep.records[1].series.len(), 4);
}

#[test]
fn ingest_errors_name_the_line() {
    let f = write_tmp("subject_id,label,v0\na,1,1\nb,2,1\n");
    match ingest_csv(f.path(), 0.25) {
        Err(T2lError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let f = write_tmp("subject_id,label,v0\na,1,abc\n");
    assert!(matches!(ingest_csv(f.path(), 0.25), Err(T2lError::Parse { line: 2, .. })));
    let f = write_tmp("subject_id,label,v0,v1\na,1,,\n");
    assert!(matches!(ingest_csv(f.path(), 0.25), Err(T2lError::EmptyDataset(_))));
    let f = write_tmp("id,y,v0\na,1,1\n");
    assert!(matches!(ingest_csv(f.path(), 0.25), Err(T2lError::Parse { line: 1, .. })));
}

#[test]
fn csv_roundtrip_preserves_missing_markers() {
    let recs = vec![
        LabeledSeries {
            subject_id: "a".into(),
            series: vec![1.5, f64::NAN, 2.0, 3.0, 4.0, 5.0],
            label: 1,
        },
        LabeledSeries {
            subject_id: "b".into(),
            series: vec![0.25; 3],
            label: 0,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    write_csv(&p, &recs).unwrap();
    let back = ingest_csv(&p, 0.25).unwrap();
    assert_eq!(back.records[0].series, vec![1.5, 0.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(back.records[1], recs[1]);
}

fn subjects_of(n: usize, per: usize) -> (Vec<String>, Vec<u8>) {
    let s = (0..n * per).map(|i| format!("s{}", i / per)).collect();
    let y = (0..n * per).map(|i| ((i / per) % 2) as u8).collect();
    (s, y)
}

#[test]
fn subject_split_examples() {
    let (s, y) = subjects_of(10, 3);
    let sp = subject_split(&s, &y, 0.2, 4).unwrap();
    let test: std::collections::BTreeSet<_> = sp.test.iter().map(|&i| &s[i]).collect();
    let train: std::collections::BTreeSet<_> = sp.train.iter().map(|&i| &s[i]).collect();
    assert_eq!((train.len(), test.len()), (8, 2));
    assert!(train.is_disjoint(&test));
    assert_eq!(sp.train.len() + sp.test.len(), 30);
    // Stratified: one subject of each majority label.
    assert_eq!(sp.test.iter().map(|&i| y[i] as usize).sum::<usize>(), 3);
    assert_eq!(sp, subject_split(&s, &y, 0.2, 4).unwrap());
    assert!(subject_split(&s[..3], &y[..3], 0.2, 4).is_err());
    assert!(subject_split(&s, &y, 1.0, 4).is_err());
}

#[test]
fn probe_separable_embeddings_score_one() {
    let (s, y) = subjects_of(20, 3);
    let emb = Array2::from_shape_fn((60, 2), |(i, _)| y[i] as f64);
    let cfg = ProbeConfig {
        n_shuffles: 2,
        ..Default::default()
    };
    let rep = probe(emb.view(), &y, &s, &cfg, 1).unwrap();
    assert_eq!(rep.auroc_mean, 1.0);
    assert_eq!(rep.auprc_mean, 1.0);
    assert_eq!(rep.shuffles.len(), 2);
}

#[test]
fn probe_std_is_zero_for_one_shuffle_and_report_is_deterministic() {
    let (s, y) = subjects_of(20, 2);
    let mut rng = crate::seed::rng(8);
    let emb = Array2::from_shape_fn((40, 3), |(i, _)| y[i] as f64 + rng.sample::<f64, _>(StandardNormal));
    let cfg = ProbeConfig {
        n_shuffles: 1,
        ..Default::default()
    };
    let a = probe(emb.view(), &y, &s, &cfg, 3).unwrap();
    assert_eq!(a.auroc_std, 0.0);
    assert_eq!(a, probe(emb.view(), &y, &s, &cfg, 3).unwrap());
}

#[test]
fn probe_on_noise_is_near_chance() {
    // Permutation-null oracle: the mean over many independent noise draws
    // must centre on 0.5.
    let (s, _) = subjects_of(60, 2);
    let mut means = Vec::new();
    for rep in 0..6u64 {
        let mut rng = crate::seed::rng(100 + rep);
        let y: Vec<u8> = (0..120).map(|i| ((i / 2) % 2) as u8).collect();
        let emb = Array2::from_shape_fn((120, 8), |_| rng.sample::<f64, _>(StandardNormal));
        let cfg = ProbeConfig {
            n_shuffles: 3,
            penalties: vec!["l2".into()],
            ..Default::default()
        };
        means.push(probe(emb.view(), &y, &s, &cfg, rep).unwrap().auroc_mean);
    }
    let m = means.iter().sum::<f64>() / means.len() as f64;
    assert!((m - 0.5).abs() < 0.1, "{means:?}");
}

#[test]
fn probe_degenerate_labels() {
    let (s, _) = subjects_of(10, 2);
    let y = vec![1u8; 20];
    let emb = Array2::<f64>::zeros((20, 2));
    let err = probe(emb.view(), &y, &s, &ProbeConfig::default(), 0).unwrap_err();
    assert!(matches!(err, T2lError::DegenerateLabels(_)), "{err:?}");
}

#[test]
fn probe_config_grid() {
    let cfg = ProbeConfig::default();
    let grid = cfg.hyper_grid().unwrap();
    assert_eq!(grid.len(), 4 + 4 + 12 + 1);
    assert!(ProbeConfig {
        cv_folds: 1,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(ProbeConfig {
        classifier: "forest".into(),
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(ProbeConfig {
        penalties: vec!["l3".into()],
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn benchmark_ingest_drops_heavy_missingness() {
    let cfg = BenchmarkConfig {
        subjects: 30,
        records_per_subject: 2,
        min_length: 40,
        max_length: 60,
        heavy_missing_rate: 0.2,
        light_missing_rate: 0.3,
        ..Default::default()
    };
    let recs = generate_benchmark(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bench.csv");
    write_csv(&p, &recs).unwrap();
    let rep = ingest_csv(&p, DEFAULT_MISSING_THRESHOLD).unwrap();
    let heavy = recs
        .iter()
        .filter(|r| r.series.iter().filter(|v| v.is_nan()).count() as f64 / r.series.len() as f64 >= 0.25)
        .count();
    assert!(heavy > 0);
    assert_eq!(rep.dropped, heavy);
    assert_eq!(rep.records.len() + rep.dropped, recs.len());
}
