use std::path::Path;

use kai_core::blocks::{Activation, ChannelMixer};
use kai_core::data::{LatLonGrid, NormStats};
use kai_core::metrics::lat_weights;
use kai_core::model::{param_count, Checkpoint, KaiModel, ModelConfig, CHECKPOINT_MAGIC};
use kai_core::padding::PaddingMode;
use kai_core::tensor::{grad_check, GradCheckConfig, Tensor, Var};
use kai_core::training::loss;
use kai_core::{Error, ErrorCategory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: kai_core::tensor::Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-1.0..1.0)))
}

fn tiny(channels: usize) -> ModelConfig {
    let mut cfg = ModelConfig::desk(channels, 4, 8);
    cfg.dims = [8, 8, 8, 8];
    cfg.mixer.band_kernel = 3;
    cfg
}

/// Move every parameter away from the small initialisation so that all
/// activations are O(1) and finite differences stay in the linear regime.
fn spread(model: &mut KaiModel<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut().iter_mut() {
        let fan_in = (p.value.numel() / p.value.shape()[0]).max(1) as f64;
        let kind = p.name.rsplit('.').next().unwrap_or_default().to_string();
        for v in p.value.data_mut() {
            let u: f64 = rng.gen_range(-1.0..1.0);
            *v = match kind.as_str() {
                "weight" => u * (3.0 / fan_in).sqrt(),
                "gamma" => 1.0 + 0.5 * u,
                _ => 0.5 * u,
            };
        }
    }
}

#[test]
fn forward_preserves_shape_for_every_variant() {
    for mixer in [
        ChannelMixer::PointwiseConv,
        ChannelMixer::ConvMlp,
        ChannelMixer::Mlp,
    ] {
        for scale_invariant in [true, false] {
            let mut cfg = ModelConfig::desk(5, 8, 16);
            cfg.block.channel_mixer = mixer;
            cfg.scale_invariant = scale_invariant;
            // Coarse stages shrink to 1x2, so the band kernel must fit.
            cfg.mixer.band_kernel = 3;
            let m = KaiModel::<f32>::new(cfg, 0).unwrap();
            let y = m.forward(&random(&[5, 8, 16], 1)).unwrap();
            assert_eq!(y.shape(), [5, 8, 16]);
            assert!(y.is_finite());
        }
    }
    let mut cfg = ModelConfig::desk(3, 6, 12);
    cfg.out_channels = 2;
    let m = KaiModel::<f64>::new(cfg, 0).unwrap();
    assert_eq!(
        m.forward(&random(&[3, 6, 12], 1)).unwrap().shape(),
        [2, 6, 12]
    );
}

#[test]
fn wrong_input_shape_is_a_config_error() {
    let m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).unwrap();
    let err = m.forward(&random(&[5, 8, 12], 1)).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Config);
}

#[test]
fn non_finite_input_names_the_layer() {
    let m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).unwrap();
    let mut x = random::<f32>(&[5, 8, 16], 1);
    x.data_mut()[17] = f32::NAN;
    match m.forward(&x).unwrap_err() {
        Error::NonFinite { layer, .. } => assert_eq!(layer.as_deref(), Some("stem")),
        other => panic!("{other}"),
    }
}

#[test]
fn parameter_registry_matches_closed_form() {
    for mixer in [
        ChannelMixer::PointwiseConv,
        ChannelMixer::ConvMlp,
        ChannelMixer::Mlp,
    ] {
        let mut cfg = ModelConfig::desk(5, 8, 16);
        cfg.block.channel_mixer = mixer;
        let m = KaiModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.params().num_scalars(), param_count(&cfg).unwrap().total);
    }
    let full = param_count(&ModelConfig::paper()).unwrap();
    assert_eq!(full.total, 6_842_087);
    assert_eq!(
        full.rows.iter().map(|r| r.count).sum::<usize>(),
        full.total
    );
}

#[test]
fn same_seed_same_weights() {
    let a = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 4).unwrap();
    let b = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 4).unwrap();
    let c = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 5).unwrap();
    let flat = |m: &KaiModel<f32>| {
        m.params()
            .iter()
            .flat_map(|p| p.value.data().to_vec())
            .collect::<Vec<_>>()
    };
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn geocyclic_model_commutes_with_longitude_roll() {
    for precision_f32 in [false, true] {
        let m = KaiModel::<f64>::new(ModelConfig::desk(5, 8, 16), 2).unwrap();
        let x = random::<f64>(&[5, 8, 16], 3);
        for k in [1isize, 3, 4, 8, -5] {
            let rel = if precision_f32 {
                let m32 = m.cast::<f32>();
                let x32 = x.cast::<f32>();
                let lhs = m32.forward(&x32.roll_last(k)).unwrap();
                let rhs = m32.forward(&x32).unwrap().roll_last(k);
                lhs.max_abs_diff(&rhs) / rhs.max_abs()
            } else {
                let lhs = m.forward(&x.roll_last(k)).unwrap();
                let rhs = m.forward(&x).unwrap().roll_last(k);
                lhs.max_abs_diff(&rhs) / rhs.max_abs()
            };
            assert!(rel < 1e-4, "k={k}: {rel}");
        }
    }
}

#[test]
fn zero_padding_breaks_roll_equivariance() {
    let mut cfg = ModelConfig::desk(5, 8, 16);
    cfg.block.padding_mode = PaddingMode::Zero;
    let m = KaiModel::<f64>::new(cfg, 2).unwrap();
    let x = random::<f64>(&[5, 8, 16], 3);
    let lhs = m.forward(&x.roll_last(4)).unwrap();
    let rhs = m.forward(&x).unwrap().roll_last(4);
    assert!(lhs.max_abs_diff(&rhs) / rhs.max_abs() > 1e-2);
}

#[test]
fn precisions_agree() {
    let m = KaiModel::<f64>::new(ModelConfig::desk(5, 8, 16), 6).unwrap();
    let x = random::<f64>(&[5, 8, 16], 7);
    let y64 = m.forward(&x).unwrap();
    let y32 = m.cast::<f32>().forward(&x.cast()).unwrap().cast::<f64>();
    assert!(y64.max_abs_diff(&y32) / y64.max_abs() < 1e-4);
}

// LeakyReLU is left to the per-op checks: its kink at zero makes central
// differences across the whole network unreliable.
#[test]
fn gradients_match_finite_differences_for_each_variant() {
    let variants = [
        (
            ChannelMixer::PointwiseConv,
            Activation::Gelu,
            PaddingMode::Geocyclic,
            true,
        ),
        (
            ChannelMixer::ConvMlp,
            Activation::Gelu,
            PaddingMode::Zero,
            true,
        ),
        (
            ChannelMixer::Mlp,
            Activation::Gelu,
            PaddingMode::Geocyclic,
            true,
        ),
        (
            ChannelMixer::PointwiseConv,
            Activation::Gelu,
            PaddingMode::Geocyclic,
            false,
        ),
    ];
    for (i, (mixer, activation, padding, scale_invariant)) in variants.into_iter().enumerate() {
        let mut cfg = tiny(2);
        cfg.block.channel_mixer = mixer;
        cfg.block.activation = activation;
        cfg.block.padding_mode = padding;
        if !scale_invariant {
            cfg.scale_invariant = false;
            cfg.grid.height = 8;
            cfg.grid.width = 16;
        }
        let (h, w) = (cfg.grid.height, cfg.grid.width);
        let mut m = KaiModel::<f64>::new(cfg, i as u64).unwrap();
        spread(&mut m, 100 + i as u64);
        let weights = lat_weights(&LatLonGrid::regular(h, w).lat).unwrap();
        let x = Var::constant(random(&[2, h, w], 1));
        let target = Var::constant(random(&[2, h, w], 2));
        let mut params = m.params().clone();
        let report = grad_check(
            &mut params,
            |b| loss(&m.forward_graph(b, &x)?, &target, &weights),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "variant {i}: {:?}", report.worst());
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 8).unwrap();
    let stats = NormStats {
        channels: (0..5).map(|i| format!("c{i}")).collect(),
        mean: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        std: vec![0.5; 5],
    };
    let path = dir.path().join("m.kaickpt");
    Checkpoint::from_model(&m, Some(stats.clone()))
        .save(&path)
        .unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.norm_stats, Some(stats));
    assert_eq!(&ck.config, m.config());
    let back: KaiModel<f32> = ck.into_model().unwrap();
    let x = random::<f32>(&[5, 8, 16], 9);
    let a = m.forward(&x).unwrap();
    let b = back.forward(&x).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
    // Re-serialising gives the same bytes.
    assert_eq!(
        Checkpoint::from_model(&back, ck_stats(&path))
            .to_bytes()
            .unwrap(),
        bytes
    );
}

fn ck_stats(path: &Path) -> Option<NormStats> {
    Checkpoint::load(path).unwrap().norm_stats
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 8).unwrap();
    let bytes = Checkpoint::from_model(&m, None).to_bytes().unwrap();
    let p = Path::new("c.kaickpt");

    let mut bad = bytes.clone();
    bad[3] ^= 0xff;
    assert!(matches!(
        Checkpoint::from_bytes(p, &bad),
        Err(Error::BadMagic { .. })
    ));

    match Checkpoint::from_bytes(p, &bytes[..bytes.len() - 8]) {
        Err(Error::Truncated {
            expected, actual, ..
        }) => assert_eq!(expected - actual, 8),
        other => panic!("{other:?}"),
    }

    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut header: serde_json::Value =
        serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
    let payload = &bytes[12 + header_len..];

    let mut v = header.clone();
    v["format_version"] = 7.into();
    let framed = kai_core::io_util::encode_framed(CHECKPOINT_MAGIC, &v, payload).unwrap();
    assert!(matches!(
        Checkpoint::from_bytes(p, &framed),
        Err(Error::Version { found: 7, .. })
    ));

    // A configuration that disagrees with the stored tensors names the first offender.
    header["config"]["dims"][0] = 16.into();
    let framed = kai_core::io_util::encode_framed(CHECKPOINT_MAGIC, &header, payload).unwrap();
    match Checkpoint::from_bytes(p, &framed).unwrap_err() {
        Error::ParamShape { name, .. } => assert_eq!(name, "stem.pw.weight"),
        other => panic!("{other}"),
    }
}
