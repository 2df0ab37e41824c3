use ndarray::{array, Array1, Array2};
use rand::Rng;

use super::*;
use crate::backbone::{CausalDecoder, LlmConfig};

fn tiny_config() -> AdapterConfig {
    AdapterConfig {
        base_filters: 4,
        blocks: 6,
        out_channels: 5,
        out_tokens: 8,
        proj_dims: (12, 6),
        num_classes: 3,
        dropout: 0.0,
        ..AdapterConfig::default()
    }
}

fn tiny_dims() -> BackboneDims {
    BackboneDims {
        context: 17,
        feature_dim: 16,
        hidden: 16,
        max_positions: 16,
    }
}

fn features(batch: usize, seed: u64) -> Vec<Array2<f32>> {
    let mut rng = seed::rng(seed);
    (0..batch)
        .map(|_| Array2::from_shape_simple_fn((17, 16), || rng.random_range(-1.0f32..1.0)))
        .collect()
}

/// Count parameters from the architecture description alone.
fn count_oracle(cfg: &AdapterConfig, feature_dim: usize, hidden: usize) -> (usize, usize, usize) {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k + cout;
    let bn = |c: usize| 2 * c;
    let k = cfg.kernel_size;
    let mut f = conv(feature_dim, cfg.base_filters, k) + bn(cfg.base_filters);
    let mut cin = cfg.base_filters;
    for i in 0..cfg.blocks {
        let cout = cfg.base_filters * 2usize.pow((i / 2) as u32);
        f += if i == 0 {
            conv(cin, cout, k) + bn(cout) + conv(cout, cout, k)
        } else {
            bn(cin) + conv(cin, cout, k) + bn(cout) + conv(cout, cout, k)
        };
        cin = cout;
    }
    f += bn(cin) + conv(cin, cfg.out_channels, 1);
    let (p1, p2) = cfg.proj_dims;
    let g = hidden * p1 + p1 + bn(p1) + p1 * p2 + p2 + bn(p2);
    let l = p2 * cfg.num_classes + cfg.num_classes;
    (f, g, l)
}

#[test]
fn paper_shape_parameter_budgets() {
    let dims = BackboneDims {
        context: 513,
        feature_dim: 768,
        hidden: 2048,
        max_positions: 128,
    };
    let a = Adapter::new(&AdapterConfig::default(), dims).unwrap();
    let (f, g, l) = count_oracle(&AdapterConfig::default(), 768, 2048);
    assert_eq!(a.param_count(Group::F), f);
    assert_eq!(a.param_count(Group::G), g);
    assert_eq!(a.param_count(Group::L), l);
    assert!((240_000..=360_000).contains(&f), "{f}");
    assert!((1_400_000..=2_000_000).contains(&g), "{g}");
    assert_eq!(a.spatial_lengths(), vec![257, 257, 257, 129, 129, 65, 65]);
    assert!(a.resize.is_none());
    let other = Adapter::new(
        &AdapterConfig {
            init_seed: 99,
            ..AdapterConfig::default()
        },
        dims,
    )
    .unwrap();
    assert_eq!(other.param_count(Group::F), f);
}

#[test]
fn desk_shape_lengths() {
    let dims = BackboneDims {
        context: 129,
        feature_dim: 96,
        hidden: 256,
        max_positions: 128,
    };
    let a = Adapter::new(&AdapterConfig::default(), dims).unwrap();
    assert_eq!(a.spatial_lengths(), vec![65, 65, 65, 33, 33, 17, 17]);
    assert_eq!(a.resize.as_ref().unwrap().dim(), (768, 96));
}

#[test]
fn rejects_inconsistent_dims() {
    let dims = BackboneDims {
        hidden: 4,
        ..tiny_dims()
    };
    assert!(matches!(Adapter::new(&tiny_config(), dims), Err(T2lError::Shape(_))));
    let cfg = AdapterConfig {
        out_tokens: 17,
        ..tiny_config()
    };
    assert!(matches!(Adapter::new(&cfg, tiny_dims()), Err(T2lError::Capacity(_))));
    let cfg = AdapterConfig {
        dropout: 1.0,
        ..tiny_config()
    };
    assert!(Adapter::new(&cfg, tiny_dims()).is_err());
}

#[test]
fn forward_shapes_and_eval_determinism() {
    let a = Adapter::new(&tiny_config(), tiny_dims()).unwrap();
    let llm = CausalDecoder::<f64>::new(&LlmConfig::tiny()).unwrap();
    let p = a.init_params::<f64>();
    let zc = features(3, 1);
    let views: Vec<_> = zc.iter().map(|z| z.view()).collect();
    let (out, _, upd) = a.forward(&p, &llm, &views, true, &mut Mode::Eval).unwrap();
    assert!(upd.is_empty());
    assert_eq!(out.z_i.dim(), (5, 3 * 8));
    assert_eq!(out.z_m.dim(), (16, 3));
    assert_eq!(out.z_o.dim(), (6, 3));
    assert_eq!(out.logits.dim(), (3, 3));
    let (again, _, _) = a.forward(&p, &llm, &views, true, &mut Mode::Eval).unwrap();
    assert_eq!(out.logits, again.logits);
    let single = a.input_encode(&p, zc[0].view()).unwrap();
    let diff = (&single - &out.z_i.slice(s![.., ..8])).iter().fold(0f64, |m, d| m.max(d.abs()));
    assert!(diff < 1e-12);
    let bad = Array2::<f32>::zeros((16, 16));
    assert!(matches!(
        a.forward(&p, &llm, &[bad.view()], true, &mut Mode::Eval),
        Err(T2lError::Shape(_))
    ));
}

#[test]
fn residual_free_path_equals_zero_addend() {
    let a = Adapter::new(&tiny_config(), tiny_dims()).unwrap();
    let p = a.init_params::<f64>();
    let z_m: Array1<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    let zero = Array1::zeros(16);
    let with_zero = a.project(&p, z_m.view(), zero.view()).unwrap();
    let (no_res, _) = a.g_forward(
        &p.params,
        &p.buffers,
        z_m.clone().insert_axis(ndarray::Axis(1)),
        None,
        false,
        &mut Vec::new(),
    );
    assert_eq!(with_zero, no_res.column(0));
    let ones = Array1::from_elem(16, 1.0);
    assert_ne!(a.project(&p, z_m.view(), ones.view()).unwrap(), with_zero);
    assert_eq!(with_zero.len(), 6);
}

#[test]
fn classify_with_zero_weights_returns_bias() {
    let a = Adapter::new(&tiny_config(), tiny_dims()).unwrap();
    let mut p = a.init_params::<f64>();
    let ((w, wl), (b, bl)) = a.head_slots();
    p.params[w..w + wl].fill(0.0);
    for (i, v) in p.params[b..b + bl].iter_mut().enumerate() {
        *v = i as f64 - 1.0;
    }
    let logits = a.classify(&p, Array1::from_elem(6, 3.0).view()).unwrap();
    assert_eq!(logits, array![-1.0, 0.0, 1.0]);
    let e = logits.mapv(f64::exp);
    assert!((e.sum() / e.sum() - 1.0).abs() < 1e-12);
    assert!(a.classify(&p, Array1::zeros(5).view()).is_err());
}

#[test]
fn pad_features_examples() {
    let z = array![[1.0, 2.0], [3.0, -4.0]];
    let padded = pad_features(z.view(), 5).unwrap();
    assert_eq!(padded.dim(), (2, 5));
    assert!(padded.slice(s![.., 2..]).iter().all(|&v| v == 0.0));
    assert_eq!(padded.row(1).sum(), z.row(1).sum());
    assert_eq!(pad_features(z.view(), 2).unwrap(), z);
    assert!(pad_features(z.view(), 1).is_err());
}

/// Loss = sum(logits * w) for a fixed random `w`; compare analytic and
/// central-difference gradients on every parameter.
fn gradient_check(train_bn: bool) {
    let a = Adapter::new(&tiny_config(), tiny_dims()).unwrap();
    let llm = CausalDecoder::<f64>::new(&LlmConfig::tiny()).unwrap();
    let mut p = a.init_params::<f64>();
    let mut rng = seed::rng(5);
    for slot in &a.buffer_layout().slots {
        for v in &mut p.buffers[slot.offset..slot.offset + slot.len] {
            if slot.name.ends_with("running_mean") {
                *v += rng.random_range(-0.1..0.1);
            } else {
                *v *= rng.random_range(0.5..1.5);
            }
        }
    }
    let zc = features(3, 2);
    let views: Vec<_> = zc.iter().map(|z| z.view()).collect();
    let w = Array2::from_shape_simple_fn((3, 3), || rng.random_range(-1.0..1.0));
    let mut rng_mode = seed::rng(0);
    let mut run = |p: &AdapterParams<f64>| {
        let mut mode = if train_bn {
            Mode::Train {
                rng: &mut rng_mode,
                dropout: 0.0,
            }
        } else {
            Mode::Eval
        };
        a.forward(p, &llm, &views, true, &mut mode).unwrap()
    };
    let (_, tape, _) = run(&p);
    let grad = a.backward(&p, &llm, &tape, &w).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..p.params.len() {
        let orig = p.params[i];
        p.params[i] = orig + h;
        let fp = (&run(&p).0.logits * &w).sum();
        p.params[i] = orig - h;
        let fm = (&run(&p).0.logits * &w).sum();
        p.params[i] = orig;
        let num = (fp - fm) / (2.0 * h);
        let scale = num.abs().max(grad[i].abs());
        if scale < 1e-7 {
            continue;
        }
        checked += 1;
        worst = worst.max((num - grad[i]).abs() / scale);
    }
    assert!(checked > p.params.len() / 2, "{checked}");
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn gradients_match_finite_differences_eval_mode() {
    gradient_check(false);
}

#[test]
fn gradients_match_finite_differences_batch_statistics() {
    gradient_check(true);
}

#[test]
fn train_mode_dropout_is_seeded() {
    let cfg = AdapterConfig {
        dropout: 0.5,
        ..tiny_config()
    };
    let a = Adapter::new(&cfg, tiny_dims()).unwrap();
    let llm = CausalDecoder::<f64>::new(&LlmConfig::tiny()).unwrap();
    let p = a.init_params::<f64>();
    let zc = features(2, 3);
    let views: Vec<_> = zc.iter().map(|z| z.view()).collect();
    let go = |s: u64| {
        let mut r = seed::rng(s);
        let (out, _, upd) = a
            .forward(
                &p,
                &llm,
                &views,
                true,
                &mut Mode::Train {
                    rng: &mut r,
                    dropout: 0.5,
                },
            )
            .unwrap();
        assert!(!upd.is_empty());
        out.logits
    };
    assert_eq!(go(1), go(1));
    assert_ne!(go(1), go(2));
}
