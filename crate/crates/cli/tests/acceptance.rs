//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail. Runs without the libtest harness so the lines
//! are always visible.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use kai_core::ablate::{ablate, default_variants};
use kai_core::data::{
    synth_generate, ChannelInfo, Dataset, GridField, LatLonGrid, NormStats, Split, SynthConfig,
};
use kai_core::evaluate::{evaluate, EvalOptions};
use kai_core::metrics::{acc, lat_weights, weighted_rmse, AnomalyMode};
use kai_core::model::{Checkpoint, KaiModel, ModelConfig};
use kai_core::padding::{PaddingMode, PaddingSpec};
use kai_core::rollout::{init_indices, rollout};
use kai_core::tensor::{self, grad_check, GradCheckConfig, ParamSet, Tensor, Var};
use kai_core::training::{
    adamw_step, cosine_lr, split_wrmse, train, AdamWConfig, AdamWState, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn random_field(c: usize, h: usize, w: usize, seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Tensor::from_fn(&[c, h, w], |_| rng.gen_range(-2.0f32..2.0));
    let channels = (0..c)
        .map(|i| ChannelInfo::new(format!("v{i}"), "1"))
        .collect();
    let date = NaiveDate::from_ymd_opt(2001, 3, 1).unwrap();
    GridField::new(data, date, channels, LatLonGrid::regular(h, w)).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_kai"))
        .args(["inspect", "--preset", "paper"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    if !out.status.success() {
        return Err(format!("kai inspect exited with {}", out.status));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let total: usize = stdout
        .lines()
        .find_map(|l| l.strip_prefix("total"))
        .and_then(|v| v.trim().parse().ok())
        .ok_or("no total line in `kai inspect` output")?;
    within(elapsed, Duration::from_secs(1))?;
    check(
        (6_000_000..=8_500_000).contains(&total),
        format!("total {total} scalars, expected [6.0M, 8.5M]; {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let model = KaiModel::<f32>::new(ModelConfig::paper(), 0).map_err(|e| e.to_string())?;
    let x = random(&[67, 72, 144], 1).cast::<f32>();
    let t = Instant::now();
    let y = model.forward(&x).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    check(
        y.shape() == [67, 72, 144] && y.is_finite(),
        format!("[67, 72, 144] -> {:?} in {elapsed:.2?}", y.shape()),
    )
}

fn op_check(
    shapes: &[Vec<usize>],
    seed: u64,
    f: impl Fn(&[&Var<f64>]) -> kai_core::Result<Var<f64>>,
) -> Result<f64, String> {
    let mut ps = ParamSet::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| ps.add(format!("p{i}"), random(s, seed + i as u64)).unwrap())
        .collect();
    let cfg = GradCheckConfig {
        rel_step: 1e-5,
        tolerance: 1e-6,
        abs_floor: 1e-8,
    };
    let report = grad_check(
        &mut ps,
        |b| {
            let vars: Vec<&Var<f64>> = ids.iter().map(|&id| b.get(id)).collect();
            let out = f(&vars)?;
            let dir = Var::constant(random(out.shape(), 999));
            tensor::sum(&tensor::mul(&out, &dir)?)
        },
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    Ok(report.max_rel_err())
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let geo = |k: usize, l: usize| PaddingSpec::same(PaddingMode::Geocyclic, k, l).unwrap();
    let per_op = [
        (
            "conv",
            op_check(&[vec![3, 6, 8], vec![3, 1, 3, 3], vec![3]], 1, |v| {
                tensor::conv2d(v[0], v[1], Some(v[2]), 3, geo(3, 3))
            })?,
        ),
        (
            "layer_norm",
            op_check(&[vec![5, 3, 4], vec![5], vec![5]], 2, |v| {
                tensor::layer_norm(v[0], v[1], v[2], 1e-6)
            })?,
        ),
        (
            "gelu",
            op_check(&[vec![2, 3, 4]], 3, |v| tensor::gelu(v[0]))?,
        ),
        (
            "geocyclic_pad",
            op_check(&[vec![2, 4, 6]], 4, |v| {
                tensor::pad(v[0], PaddingSpec::new(PaddingMode::Geocyclic, 2, 3))
            })?,
        ),
    ];
    let op_worst = per_op.iter().map(|p| p.1).fold(0.0, f64::max);

    // The check runs at a generic point with O(1) activations. At the 0.02
    // initialisation the stem's layer norm sees a variance near its epsilon,
    // where a 1e-4 difference step is no longer small.
    let mut model =
        KaiModel::<f64>::new(ModelConfig::desk(5, 8, 16), 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
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
    let w = lat_weights(&LatLonGrid::regular(8, 16).lat).map_err(|e| e.to_string())?;
    let x = Var::constant(random(&[5, 8, 16], 10));
    let target = Var::constant(random(&[5, 8, 16], 11));
    let mut params = model.params().clone();
    let n = params.num_scalars();
    let report = grad_check(
        &mut params,
        |b| kai_core::training::loss(&model.forward_graph(b, &x)?, &target, &w),
        &GradCheckConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(300))?;
    let worst = report.worst().map(|p| p.name.clone()).unwrap_or_default();
    check(
        report.max_rel_err() < 1e-4 && op_worst < 1e-6,
        format!(
            "model: max rel err {:.2e} over {n} scalars (worst `{worst}`), limit 1e-4; per-op max {:.2e} ({}), limit 1e-6; {elapsed:.1?}",
            report.max_rel_err(),
            op_worst,
            per_op.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn equivariance_errors(mode: PaddingMode) -> Result<Vec<f64>, String> {
    let mut cfg = ModelConfig::desk(5, 8, 16);
    cfg.block.padding_mode = mode;
    let model = KaiModel::<f64>::new(cfg, 5).map_err(|e| e.to_string())?;
    let x = random(&[5, 8, 16], 20);
    let y = model.forward(&x).map_err(|e| e.to_string())?;
    [1isize, 4, 8]
        .iter()
        .map(|&k| {
            let lhs = model.forward(&x.roll_last(k)).map_err(|e| e.to_string())?;
            let rhs = y.roll_last(k);
            Ok(lhs.max_abs_diff(&rhs) / rhs.max_abs())
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let geo = equivariance_errors(PaddingMode::Geocyclic)?;
    let zero = equivariance_errors(PaddingMode::Zero)?;
    within(t.elapsed(), Duration::from_secs(60))?;
    let geo_max = geo.iter().copied().fold(0.0, f64::max);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|e| format!("{e:.1e}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let zero_min = zero.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        geo_max < 1e-4 && zero_min > 1e-2,
        format!(
            "k in {{1, 4, 8}}: geocyclic rel err [{}] (< 1e-4); zero padding [{}] (> 1e-2)",
            fmt(&geo),
            fmt(&zero)
        ),
    )
}

fn criterion_5() -> Outcome {
    let grid72 = LatLonGrid::regular(72, 144);
    let w72 = lat_weights(&grid72.lat).map_err(|e| e.to_string())?;
    let sum_err = (w72.a.iter().sum::<f64>() - 72.0).abs();

    let (h, wd) = (8, 16);
    let w = lat_weights(&LatLonGrid::regular(h, wd).lat).map_err(|e| e.to_string())?;
    let truth = vec![random_field(3, h, wd, 1), random_field(3, h, wd, 2)];
    let delta = 0.37f32;
    let shifted: Vec<GridField> = truth
        .iter()
        .map(|f| f.with_data(f.data.map(|v| v + delta), f.date).unwrap())
        .collect();
    let uniform_err = weighted_rmse(&shifted, &truth, &w)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|r| (r - delta as f64).abs())
        .fold(0.0, f64::max);

    let self_acc =
        acc(&truth, &truth, &w, AnomalyMode::SpatialMeanRemoved).map_err(|e| e.to_string())?;
    let flipped: Vec<GridField> = truth
        .iter()
        .map(|f| f.with_data(f.data.map(|v| -v), f.date).unwrap())
        .collect();
    let flip_acc =
        acc(&flipped, &truth, &w, AnomalyMode::SpatialMeanRemoved).map_err(|e| e.to_string())?;
    let ident_err = self_acc
        .iter()
        .map(|a| (a - 1.0).abs())
        .chain(flip_acc.iter().map(|a| (a + 1.0).abs()))
        .fold(0.0, f64::max);

    // Naive oracles: weights from first principles, plain nested loops.
    let forecast = vec![random_field(3, h, wd, 3), random_field(3, h, wd, 4)];
    let lat: Vec<f64> = (0..h)
        .map(|i| 90.0 - (i as f64 + 0.5) * 180.0 / h as f64)
        .collect();
    let cos: Vec<f64> = lat
        .iter()
        .map(|p| (p * std::f64::consts::PI / 180.0).cos())
        .collect();
    let a: Vec<f64> = cos
        .iter()
        .map(|c| h as f64 * c / cos.iter().sum::<f64>())
        .collect();
    let at =
        |f: &GridField, c: usize, i: usize, j: usize| f.data.data()[(c * h + i) * wd + j] as f64;
    let rmse = weighted_rmse(&forecast, &truth, &w).map_err(|e| e.to_string())?;
    let accs =
        acc(&forecast, &truth, &w, AnomalyMode::SpatialMeanRemoved).map_err(|e| e.to_string())?;
    let mut oracle_err = 0.0f64;
    for c in 0..3 {
        let mut s = 0.0;
        let mut acc_sum = 0.0;
        for (f, y) in forecast.iter().zip(&truth) {
            let mut fm = 0.0;
            let mut ym = 0.0;
            for i in 0..h {
                for j in 0..wd {
                    s += a[i] * (at(f, c, i, j) - at(y, c, i, j)).powi(2);
                    fm += a[i] * at(f, c, i, j);
                    ym += a[i] * at(y, c, i, j);
                }
            }
            fm /= (h * wd) as f64;
            ym /= (h * wd) as f64;
            let (mut num, mut ff, mut yy) = (0.0, 0.0, 0.0);
            for i in 0..h {
                for j in 0..wd {
                    let df = at(f, c, i, j) - fm;
                    let dy = at(y, c, i, j) - ym;
                    num += a[i] * df * dy;
                    ff += a[i] * df * df;
                    yy += a[i] * dy * dy;
                }
            }
            acc_sum += num / (ff * yy).sqrt();
        }
        let naive_rmse = (s / (2 * h * wd) as f64).sqrt();
        oracle_err = oracle_err
            .max((naive_rmse - rmse[c]).abs())
            .max((acc_sum / 2.0 - accs[c]).abs());
    }
    check(
        sum_err < 1e-10 && uniform_err < 1e-6 && ident_err < 1e-12 && oracle_err < 1e-10,
        format!(
            "|sum A - 72| {sum_err:.1e} (1e-10); uniform |wRMSE - d| {uniform_err:.1e} (1e-6); \
             ACC identities {ident_err:.1e} (1e-12); naive oracles {oracle_err:.1e} (1e-10)"
        ),
    )
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let synth = synth_generate(&SynthConfig {
        days: 17,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let ds =
        Dataset::with_fractions(synth.fields().to_vec(), 1.0, 0.0).map_err(|e| e.to_string())?;
    let stats = NormStats::compute(ds.split(Split::Train)).map_err(|e| e.to_string())?;
    let mut model =
        KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lr: 1e-3,
        lr_min: 1e-3,
        max_epochs: 500,
        batch_size: 16,
        max_steps: Some(500),
        ..TrainConfig::default()
    };
    let out = train(&mut model, &ds, &stats, &cfg).map_err(|e| e.to_string())?;
    let inputs =
        kai_core::training::normalize_all::<f32>(&ds, &stats).map_err(|e| e.to_string())?;
    let w = lat_weights(&ds.first().grid.lat).map_err(|e| e.to_string())?;
    let pairs = ds.pairs(Split::Train);
    let final_wrmse = split_wrmse(&model, &inputs, &pairs, &w)
        .map_err(|e| e.to_string())?
        .unwrap_or(f64::NAN);
    let early: Vec<f64> = out.log.iter().take(20).map(|e| e.train_loss).collect();
    let mut diffs: Vec<f64> = early.windows(2).map(|p| p[1] - p[0]).collect();
    diffs.sort_by(f64::total_cmp);
    let median = diffs[diffs.len() / 2];
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(600))?;
    check(
        final_wrmse < 0.05 && median <= 0.0 && early[early.len() - 1] < early[0] && out.steps <= 500,
        format!(
            "{} samples, {} steps: train wRMSE {final_wrmse:.4} (< 0.05); first 20 epochs loss {:.3e} -> {:.3e}, \
             median step change {median:.2e}; {elapsed:.1?}",
            pairs.len(),
            out.steps,
            early[0],
            early[early.len() - 1]
        ),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let ds = synth_generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let stats = NormStats::compute(ds.split(Split::Train)).map_err(|e| e.to_string())?;
    let mut model =
        KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 60,
        batch_size: 4,
        ..TrainConfig::default()
    };
    train(&mut model, &ds, &stats, &cfg).map_err(|e| e.to_string())?;
    let inits = init_indices(&ds, ds.range(Split::Test), 5);
    let runs = inits
        .iter()
        .map(|&i| rollout(&model, &ds.fields()[i], 5, &stats, None))
        .collect::<kai_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let report = evaluate(&runs, &ds, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    let mut min_acc = f64::INFINITY;
    let mut worst_ratio = 0.0f64;
    for ch in ds.first().channels.iter().filter(|c| !c.is_static) {
        for lead in 1..=5 {
            let m = report
                .find("model", &ch.name, lead)
                .ok_or("missing model row")?;
            let p = report
                .find("persistence", &ch.name, lead)
                .ok_or("missing persistence row")?;
            worst_ratio = worst_ratio.max(m.rmse / p.rmse);
            if m.rmse >= p.rmse {
                failures.push(format!(
                    "{} lead {lead}: {:.3} >= {:.3}",
                    ch.name, m.rmse, p.rmse
                ));
            }
            if lead == 1 {
                let a = m.acc.unwrap_or(f64::NAN);
                min_acc = min_acc.min(a);
                if !(a > 0.9) {
                    failures.push(format!("{} lead-1 ACC {a:.3}", ch.name));
                }
            }
        }
    }
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(900))?;
    check(
        failures.is_empty(),
        format!(
            "{} test inits; worst model/persistence wRMSE ratio over leads 1-5 {worst_ratio:.3}; \
             min lead-1 ACC {min_acc:.4} (> 0.9); {elapsed:.1?}{}",
            runs.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

fn criterion_8() -> Outcome {
    let ds = synth_generate(&SynthConfig {
        days: 24,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let stats = NormStats::compute(ds.split(Split::Train)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 1,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || -> Result<(KaiModel<f32>, f64), String> {
        let mut m =
            KaiModel::<f32>::new(ModelConfig::desk(5, 8, 16), 9).map_err(|e| e.to_string())?;
        let out = train(&mut m, &ds, &stats, &cfg).map_err(|e| e.to_string())?;
        Ok((m, out.log[0].train_loss))
    };
    let (model, l1) = run()?;
    let (_, l2) = run()?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.kaickpt");
    Checkpoint::from_model(&model, Some(stats.clone()))
        .save(&path)
        .map_err(|e| e.to_string())?;
    let loaded: KaiModel<f32> = Checkpoint::load(&path)
        .and_then(|c| c.into_model())
        .map_err(|e| e.to_string())?;
    let x = stats
        .normalize::<f32>(&ds.fields()[3].data)
        .map_err(|e| e.to_string())?;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_forward = bits(&model.forward(&x).map_err(|e| e.to_string())?)
        == bits(&loaded.forward(&x).map_err(|e| e.to_string())?);

    let init = &ds.fields()[2];
    let long = rollout(&model, init, 6, &stats, None).map_err(|e| e.to_string())?;
    let short = rollout(&model, init, 3, &stats, None).map_err(|e| e.to_string())?;
    let prefix = short
        .fields
        .iter()
        .zip(&long.fields)
        .all(|(a, b)| a.date == b.date && bits(&a.data) == bits(&b.data));
    check(
        l1.to_bits() == l2.to_bits() && same_forward && prefix,
        format!(
            "epoch-0 loss {l1:.9e} vs {l2:.9e} bit-identical {}; checkpoint forward bit-identical {same_forward}; \
             3-day rollout is a bit-exact prefix of 6-day {prefix}",
            l1.to_bits() == l2.to_bits()
        ),
    )
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let ds = synth_generate(&SynthConfig {
        days: 24,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let stats = NormStats::compute(ds.split(Split::Train)).map_err(|e| e.to_string())?;
    let mut variants = default_variants();
    variants.push(variants[0]);
    let cfg = TrainConfig {
        max_epochs: 2,
        max_steps: Some(6),
        ..TrainConfig::default()
    };
    let report = ablate::<f32>(
        &ds,
        &stats,
        &ModelConfig::desk(5, 8, 16),
        &variants,
        &cfg,
        0,
    )
    .map_err(|e| e.to_string())?;
    let complete = report.rows.len() == 13
        && report
            .rows
            .iter()
            .all(|r| r.val_wrmse.is_some() && r.val_acc.is_some());
    let mut labels: Vec<&str> = report.rows[..12].iter().map(|r| r.label.as_str()).collect();
    labels.sort();
    labels.dedup();
    let duplicate_equal = report.rows[0] == report.rows[12]
        && report.rows[0].final_train_loss.to_bits() == report.rows[12].final_train_loss.to_bits();
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(1800))?;
    check(
        complete && labels.len() == 12 && report.all_finite() && duplicate_equal,
        format!(
            "{} rows, {} distinct variants, all finite {}, duplicate rows identical {duplicate_equal}; {elapsed:.1?}",
            report.rows.len(),
            labels.len(),
            report.all_finite()
        ),
    )
}

fn criterion_10() -> Outcome {
    let cfg = AdamWConfig::default();
    let (w0, g, lr) = (0.5f64, 0.2f64, 1e-3f64);
    let mut ps = ParamSet::new();
    ps.add("w", Tensor::new(vec![1], vec![w0]).unwrap())
        .unwrap();
    let mut state = AdamWState::new(&ps);
    adamw_step(&mut ps, &[vec![g]], &mut state, lr, &cfg).map_err(|e| e.to_string())?;
    let got = ps.iter().next().unwrap().value.data()[0];
    // By hand: decay, then one bias-corrected Adam step where m_hat = g, v_hat = g^2.
    let decayed = w0 - lr * cfg.weight_decay * w0;
    let oracle = decayed - lr * g / (g.abs() + cfg.eps);
    let adam_err = (got - oracle).abs();

    let lr0 = cosine_lr(0, 1e-3, 0.0, 150).map_err(|e| e.to_string())?;
    let lr_end = cosine_lr(150, 1e-3, 1e-5, 150).map_err(|e| e.to_string())?;
    let lr_mid = cosine_lr(75, 1e-3, 0.0, 150).map_err(|e| e.to_string())?;
    let mid_formula = 0.5 * 1e-3 * (1.0 + (std::f64::consts::PI * 0.5).cos());
    check(
        adam_err < 1e-12 && lr0 == 1e-3 && lr_end == 1e-5 && lr_mid == mid_formula,
        format!(
            "AdamW |step - oracle| {adam_err:.1e} (1e-12); lr(0) = {lr0:e}, lr(T) = {lr_end:e}, lr(T/2) = {lr_mid:e}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("parameter count", criterion_1),
        ("shape contract", criterion_2),
        ("gradient correctness", criterion_3),
        ("geocyclic equivariance", criterion_4),
        ("metric identities", criterion_5),
        ("learning sanity (overfit)", criterion_6),
        ("forecast skill", criterion_7),
        ("determinism and persistence", criterion_8),
        ("ablation harness", criterion_9),
        ("optimizer and schedule oracles", criterion_10),
    ];
    let only: Option<usize> = std::env::var("KAI_ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
