use ndarray::Array2;
use rand::Rng;

use super::*;
use crate::adapter::nn::Group;
use crate::adapter::{AdapterConfig, BackboneDims};
use crate::backbone::{CausalDecoder, LlmConfig};

fn tiny_adapter() -> Adapter {
    let cfg = AdapterConfig {
        base_filters: 4,
        out_channels: 5,
        out_tokens: 8,
        proj_dims: (12, 6),
        num_classes: 2,
        ..AdapterConfig::default()
    };
    Adapter::new(
        &cfg,
        BackboneDims {
            context: 17,
            feature_dim: 16,
            hidden: 16,
            max_positions: 16,
        },
    )
    .unwrap()
}

/// Two linearly separable classes of random features.
fn toy_split(n: usize, seed: u64) -> SplitFeatures {
    let mut rng = seed::rng(seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let shift = if y == 0 { -0.5 } else { 0.5 };
        features.push(Array2::from_shape_simple_fn((17, 16), || rng.random_range(-1.0f32..1.0) + shift));
        labels.push(y);
    }
    SplitFeatures {
        indices: (0..n).collect(),
        features,
        labels,
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn confusion_and_accuracy_examples() {
    let labels = [0, 1, 2, 0, 1, 2];
    let m = confusion_matrix(&labels, &labels, 3);
    assert_eq!(m, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    assert_eq!(accuracy(&labels, &labels), 1.0);
    let constant = [1; 6];
    assert!((accuracy(&labels, &constant) - 1.0 / 3.0).abs() < 1e-12);
    let m = confusion_matrix(&labels, &constant, 3);
    assert_eq!(m.iter().map(|r| r.iter().sum::<usize>()).collect::<Vec<_>>(), vec![2, 2, 2]);
}

#[test]
fn fit_learns_and_reproduces_and_keeps_backbone_frozen() {
    let adapter = tiny_adapter();
    let llm = CausalDecoder::<f32>::new(&LlmConfig::tiny()).unwrap();
    let before = llm.parameters();
    let (train, val) = (toy_split(49, 1), toy_split(16, 2));
    let mut records = Vec::new();
    let a = fit(&adapter, &llm, &train, &val, &small_config(), &mut |m, _| {
        write_metrics(&mut records, m).unwrap()
    })
    .unwrap();
    assert_eq!(llm.parameters(), before);
    assert!(a.metrics.epochs[0].train_loss < a.metrics.initial_loss);
    let last = a.metrics.epochs.last().unwrap();
    assert!(last.val_accuracy.unwrap() > 0.8, "{last:?}");
    let text = String::from_utf8(records).unwrap();
    assert_eq!(text.lines().count(), 8);
    let rec: MetricRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!((rec.epoch, rec.split.as_str()), (1, "train"));

    let b = fit(&adapter, &llm, &train, &val, &small_config(), &mut |_, _| {}).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.metrics.best_epoch, b.metrics.best_epoch);
}

#[test]
fn divergence_is_reported() {
    let adapter = tiny_adapter();
    let llm = CausalDecoder::<f32>::new(&LlmConfig::tiny()).unwrap();
    let mut train = toy_split(8, 1);
    train.features[3][[0, 0]] = f32::NAN;
    let err = fit(&adapter, &llm, &train, &toy_split(4, 2), &small_config(), &mut |_, _| {});
    assert!(matches!(err, Err(T2lError::TrainingDiverged { epoch: 1, .. })), "{:?}", err.err());
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            grad_clip: Some(-1.0),
            ..TrainConfig::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn gradient_check_passes_and_is_deterministic() {
    let adapter = tiny_adapter();
    let llm = CausalDecoder::<f64>::new(&LlmConfig::tiny()).unwrap();
    let params = adapter.init_params::<f64>();
    let z = toy_split(1, 9).features.remove(0);
    let cfg = GradCheckConfig::default();
    let r = gradient_check(&adapter, &params, &llm, z.view(), 1, &cfg).unwrap();
    assert!(r.passed, "max rel error {}", r.max_rel_error);
    assert!(r.checked() + r.zero_gradient.len() >= 200);
    for g in [Group::F, Group::G, Group::L] {
        assert!(r.count(g) > 0);
    }
    let again = gradient_check(&adapter, &params, &llm, z.view(), 1, &cfg).unwrap();
    assert_eq!(r, again);
}
