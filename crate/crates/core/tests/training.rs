use kai_core::data::{synth_generate, Dataset, LatLonGrid, NormStats, Split, SynthConfig};
use kai_core::metrics::lat_weights;
use kai_core::model::{KaiModel, ModelConfig};
use kai_core::tensor::{ParamSet, Tensor, Var};
use kai_core::training::{
    adamw_step, cosine_lr, log_to_csv, loss, train, AdamWConfig, AdamWState, TrainConfig,
};
use kai_core::{Error, ErrorCategory};

fn small_data(days: usize) -> (Dataset, NormStats) {
    let ds = synth_generate(&SynthConfig {
        days,
        ..SynthConfig::default()
    })
    .unwrap();
    let stats = NormStats::compute(ds.split(Split::Train)).unwrap();
    (ds, stats)
}

fn quick(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        ..TrainConfig::default()
    }
}

fn one_param(w: f64) -> ParamSet<f64> {
    let mut ps = ParamSet::new();
    ps.add("w", Tensor::new(vec![1], vec![w]).unwrap()).unwrap();
    ps
}

fn value(ps: &ParamSet<f64>) -> f64 {
    ps.iter().next().unwrap().value.data()[0]
}

#[test]
fn loss_is_latitude_weighted_mean_square() {
    let grid = LatLonGrid::regular(4, 8);
    let w = lat_weights(&grid.lat).unwrap();
    let pred = Tensor::<f64>::from_fn(&[2, 4, 8], |k| (k % 7) as f64 * 0.1);
    let target = Tensor::<f64>::from_fn(&[2, 4, 8], |k| (k % 5) as f64 * 0.05);
    let mut naive = 0.0;
    for c in 0..2 {
        for i in 0..4 {
            for j in 0..8 {
                let k = (c * 4 + i) * 8 + j;
                let d = pred.data()[k] - target.data()[k];
                naive += w.a[i] * d * d;
            }
        }
    }
    naive /= 64.0;
    let l = loss(
        &Var::constant(pred.clone()),
        &Var::constant(target.clone()),
        &w,
    )
    .unwrap();
    assert!((l.value().data()[0] - naive).abs() < 1e-12);
    let same = loss(&Var::constant(target.clone()), &Var::constant(target), &w).unwrap();
    assert_eq!(same.value().data()[0], 0.0);
}

#[test]
fn adamw_single_step_matches_hand_computation() {
    let cfg = AdamWConfig::default();
    let (w0, g, lr) = (0.5, 0.2, 1e-3);
    let mut ps = one_param(w0);
    let mut state = AdamWState::new(&ps);
    adamw_step(&mut ps, &[vec![g]], &mut state, lr, &cfg).unwrap();
    // After one step the bias-corrected moments are g and g^2.
    let expected = w0 * (1.0 - lr * cfg.weight_decay) - lr * g / (g.abs() + cfg.eps);
    assert!((value(&ps) - expected).abs() < 1e-12);
    assert_eq!(state.step, 1);
}

#[test]
fn zero_gradient_applies_only_weight_decay() {
    let cfg = AdamWConfig::default();
    let mut ps = one_param(2.0);
    let mut state = AdamWState::new(&ps);
    adamw_step(&mut ps, &[vec![0.0]], &mut state, 0.1, &cfg).unwrap();
    assert!((value(&ps) - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);

    let no_decay = AdamWConfig {
        weight_decay: 0.0,
        ..cfg
    };
    let mut ps = one_param(2.0);
    let mut state = AdamWState::new(&ps);
    adamw_step(&mut ps, &[vec![0.0]], &mut state, 0.1, &no_decay).unwrap();
    assert_eq!(value(&ps), 2.0);
}

#[test]
fn adamw_multi_step_matches_reference_loop() {
    let cfg = AdamWConfig {
        beta1: 0.8,
        beta2: 0.99,
        eps: 1e-6,
        weight_decay: 0.05,
    };
    let grads = [0.3, -1.2, 0.05, 2.0, -0.4];
    let lr = 0.02;
    let mut ps = one_param(-0.7);
    let mut state = AdamWState::new(&ps);
    let (mut w, mut m, mut v) = (-0.7f64, 0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        adamw_step(&mut ps, &[vec![g]], &mut state, lr, &cfg).unwrap();
        let t = (t + 1) as i32;
        w -= lr * cfg.weight_decay * w;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1.powi(t));
        let v_hat = v / (1.0 - cfg.beta2.powi(t));
        w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        assert!((value(&ps) - w).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn adamw_rejects_mismatched_gradients() {
    let mut ps = one_param(1.0);
    let mut state = AdamWState::new(&ps);
    let cfg = AdamWConfig::default();
    assert!(adamw_step(&mut ps, &[], &mut state, 0.1, &cfg).is_err());
    assert!(adamw_step(&mut ps, &[vec![1.0, 2.0]], &mut state, 0.1, &cfg).is_err());
}

#[test]
fn adamw_descends_a_quadratic_bowl() {
    let centre = [1.5, -2.0, 0.25];
    let mut ps = ParamSet::new();
    ps.add("x", Tensor::new(vec![3], vec![0.0; 3]).unwrap())
        .unwrap();
    let mut state = AdamWState::new(&ps);
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    for step in 0..3000 {
        let x = ps.iter().next().unwrap().value.data().to_vec();
        let g: Vec<f64> = x.iter().zip(centre).map(|(a, c)| 2.0 * (a - c)).collect();
        let lr = cosine_lr(step, 0.05, 0.0, 3000).unwrap();
        adamw_step(&mut ps, &[g], &mut state, lr, &cfg).unwrap();
    }
    let x = ps.iter().next().unwrap().value.data().to_vec();
    for (a, c) in x.iter().zip(centre) {
        assert!((a - c).abs() < 1e-3, "{a} vs {c}");
    }
}

#[test]
fn cosine_schedule_endpoints_and_midpoint() {
    let (hi, lo, t) = (1e-3, 1e-5, 150);
    assert!((cosine_lr(0, hi, lo, t).unwrap() - hi).abs() < 1e-18);
    assert!((cosine_lr(t, hi, lo, t).unwrap() - lo).abs() < 1e-18);
    assert!((cosine_lr(75, hi, lo, t).unwrap() - (hi + lo) / 2.0).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for e in 0..=t {
        let lr = cosine_lr(e, hi, lo, t).unwrap();
        assert!(lr <= prev);
        prev = lr;
    }
    assert_eq!(
        cosine_lr(151, hi, lo, t).unwrap_err().category(),
        ErrorCategory::Config
    );
    assert_eq!(
        cosine_lr(0, hi, lo, 0).unwrap_err().category(),
        ErrorCategory::Config
    );
}

#[test]
fn lr_is_held_at_the_floor_past_the_period() {
    let cfg = TrainConfig {
        lr: 0.1,
        lr_min: 0.01,
        max_epochs: 10,
        t_max: Some(4),
        ..TrainConfig::default()
    };
    assert_eq!(cfg.t_max(), 4);
    assert_eq!(cfg.lr_at(4).unwrap(), cfg.lr_at(9).unwrap());
    assert!((cfg.lr_at(9).unwrap() - 0.01).abs() < 1e-15);
    assert_eq!(quick(7).t_max(), 7);
}

#[test]
fn train_config_validation() {
    let bad = [
        TrainConfig {
            lr: 0.0,
            ..quick(1)
        },
        TrainConfig {
            lr: f64::NAN,
            ..quick(1)
        },
        TrainConfig {
            lr_min: 1.0,
            ..quick(1)
        },
        TrainConfig {
            max_epochs: 0,
            ..quick(1)
        },
        TrainConfig {
            batch_size: 0,
            ..quick(1)
        },
        TrainConfig {
            t_max: Some(0),
            ..quick(1)
        },
        TrainConfig {
            clip_norm: Some(0.0),
            ..quick(1)
        },
    ];
    for cfg in bad {
        assert_eq!(
            cfg.validate().unwrap_err().category(),
            ErrorCategory::Config,
            "{cfg:?}"
        );
    }
    assert!(TrainConfig::default().validate().is_ok());
    let parsed: Result<TrainConfig, _> = serde_json::from_str(r#"{"lr": 0.1, "bogus": 1}"#);
    assert!(parsed.is_err());
}

#[test]
fn training_is_deterministic_and_logs_the_schedule() {
    let (ds, stats) = small_data(24);
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 3).unwrap();
        let out = train(&mut m, &ds, &stats, &cfg).unwrap();
        (m, out)
    };
    let (m1, o1) = run();
    let (m2, o2) = run();
    assert_eq!(log_to_csv(&o1.log), log_to_csv(&o2.log));
    for (a, b) in m1.params().iter().zip(m2.params().iter()) {
        assert!(a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(o1.log.len(), 3);
    for e in &o1.log {
        assert_eq!(e.lr, cosine_lr(e.epoch, cfg.lr, cfg.lr_min, 3).unwrap());
        assert!(e.train_loss.is_finite());
        assert!(e.val_wrmse.is_some());
    }
    let best = o1
        .log
        .iter()
        .filter_map(|e| e.val_wrmse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(o1.best_val_wrmse, Some(best));
    assert_eq!(o1.log[o1.best_epoch].val_wrmse, Some(best));

    let csv = log_to_csv(&o1.log);
    assert!(csv.starts_with("epoch,lr,train_loss,val_wrmse\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn step_cap_and_patience_stop_training() {
    let (ds, stats) = small_data(24);
    let pairs = ds.pairs(Split::Train).len();
    let per_epoch = pairs.div_ceil(4);
    assert!(per_epoch > 1);

    let mut m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).unwrap();
    let capped = TrainConfig {
        max_steps: Some(per_epoch + 1),
        ..quick(10)
    };
    let out = train(&mut m, &ds, &stats, &capped).unwrap();
    assert_eq!(out.steps, per_epoch + 1);
    assert_eq!(out.log.len(), 2);

    let mut m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).unwrap();
    let patient = TrainConfig {
        patience: Some(0),
        ..quick(10)
    };
    let out = train(&mut m, &ds, &stats, &patient).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.log.len(), 1);
}

#[test]
fn non_finite_training_aborts_with_a_numerical_error() {
    let (ds, stats) = small_data(24);
    let mut m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).unwrap();
    m.params_mut().iter_mut().next().unwrap().value.data_mut()[0] = f32::NAN;
    let err = train(&mut m, &ds, &stats, &quick(2)).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Numerical);
    assert!(err.to_string().contains("epoch 0, step 1"), "{err}");

    // A learning rate this large overflows f32 within a few steps; the model
    // keeps its last finite parameters.
    let mut m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).unwrap();
    let huge = TrainConfig {
        lr: 1e30,
        ..quick(5)
    };
    match train(&mut m, &ds, &stats, &huge) {
        Err(e @ Error::Numerical(_)) => assert!(e.to_string().contains("epoch"), "{e}"),
        other => panic!("expected a numerical error, got {other:?}"),
    }
    assert!(m.params().iter().all(|p| p.value.is_finite()));
}

#[test]
fn training_without_pairs_is_a_data_error() {
    let ds = synth_generate(&SynthConfig {
        days: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = Dataset::with_fractions(ds.fields().to_vec(), 0.5, 0.5).unwrap();
    let stats = NormStats::compute(ds.fields()).unwrap();
    let mut m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).unwrap();
    let err = train(&mut m, &ds, &stats, &quick(1)).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Data);
}
