use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kai_core::ablate::{ablate, default_variants, Variant};
use kai_core::data::{import_raw, synth_generate, Dataset, NormStats, Split};
use kai_core::evaluate::{evaluate, AccMode, EvalOptions};
use kai_core::heatmap::render_heatmap;
use kai_core::io_util::write_atomic;
use kai_core::model::{param_count, Checkpoint, KaiModel, ModelConfig};
use kai_core::rollout::{init_indices, rollout, sha256_hex, ForecastRun};
use kai_core::tensor::Scalar;
use kai_core::training::{log_to_csv, train, Precision};
use kai_core::Error;

use crate::config::RunConfig;
use crate::{Cli, Command};

/// Print to stdout, ignoring a closed pipe (e.g. `kai inspect | head`).
macro_rules! say {
    () => { say_raw!("\n") };
    ($($t:tt)*) => { say_raw!("{}\n", format!($($t)*)) };
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref(), cli.global.preset)?;
    if let Some(seed) = cli.global.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(p) = cli.global.precision {
        cfg.train.precision = p;
    }
    match cli.command {
        Command::SynthData {
            out,
            days,
            height,
            width,
            channels,
            noise,
            start_date,
        } => {
            let s = &mut cfg.synth;
            set(&mut s.days, days);
            set(&mut s.height, height);
            set(&mut s.width, width);
            set(&mut s.n_channels, channels);
            set(&mut s.noise, noise);
            set(&mut s.start_date, start_date);
            let ds = synth_generate(&cfg.synth)?;
            ds.save(&out)?;
            say!("wrote {} days to {}", ds.len(), out.display());
            Ok(())
        }
        Command::ImportRaw {
            blob,
            manifest,
            out,
        } => {
            let ds = import_raw(&blob, &manifest)?;
            ds.save(&out)?;
            say!("imported {} days to {}", ds.len(), out.display());
            Ok(())
        }
        Command::Train {
            data,
            out,
            epochs,
            lr,
            batch_size,
            max_steps,
            patience,
        } => {
            let t = &mut cfg.train;
            set(&mut t.max_epochs, epochs);
            set(&mut t.lr, lr);
            set(&mut t.batch_size, batch_size);
            t.max_steps = max_steps.or(t.max_steps);
            t.patience = patience.or(t.patience);
            let ds = Dataset::load(&data)?;
            fit_model_to_data(&mut cfg.model, &ds);
            match cfg.train.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, &ds, &out),
                Precision::F64 => cmd_train::<f64>(&cfg, &ds, &out),
            }
        }
        Command::Forecast {
            checkpoint,
            data,
            init_date,
            days,
            out,
            heatmap,
        } => match cfg.train.precision {
            Precision::F32 => cmd_forecast::<f32>(
                &checkpoint,
                &data,
                init_date,
                days,
                &out,
                heatmap.as_deref(),
            ),
            Precision::F64 => cmd_forecast::<f64>(
                &checkpoint,
                &data,
                init_date,
                days,
                &out,
                heatmap.as_deref(),
            ),
        },
        Command::Evaluate {
            forecasts,
            data,
            out,
            acc_mode,
        } => {
            let acc_mode = match acc_mode.as_deref() {
                Some("climatology_anomaly") => AccMode::ClimatologyAnomaly,
                Some(_) => AccMode::SpatialMeanRemoved,
                None => cfg.eval.acc_mode,
            };
            let runs = load_runs(&forecasts)?;
            let ds = Dataset::load(&data)?;
            let report = evaluate(
                &runs,
                &ds,
                &EvalOptions {
                    acc_mode,
                    region: cfg.eval.region,
                },
            )?;
            write_atomic(&with_suffix(&out, "csv"), report.to_csv().as_bytes())?;
            write_atomic(&with_suffix(&out, "json"), report.to_json()?.as_bytes())?;
            say!("{}", report.to_csv());
            Ok(())
        }
        Command::Ablate {
            data,
            out,
            variants,
        } => {
            let variants: Vec<Variant> = match variants {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => default_variants(),
            };
            let ds = Dataset::load(&data)?;
            fit_model_to_data(&mut cfg.model, &ds);
            let stats = NormStats::compute(ds.split(Split::Train))?;
            let seed = cfg.train.seed;
            let report = match cfg.train.precision {
                Precision::F32 => {
                    ablate::<f32>(&ds, &stats, &cfg.model, &variants, &cfg.train, seed)?
                }
                Precision::F64 => {
                    ablate::<f64>(&ds, &stats, &cfg.model, &variants, &cfg.train, seed)?
                }
            };
            write_atomic(&out.join("ablation.csv"), report.to_csv().as_bytes())?;
            write_atomic(&out.join("ablation.json"), report.to_json()?.as_bytes())?;
            say_raw!("{}", report.to_csv());
            Ok(())
        }
        Command::Inspect { json } => {
            let pc = param_count(&cfg.model)?;
            if json {
                let v = serde_json::json!({ "param_count": pc, "config": cfg });
                say!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                say!("{pc}");
                say!();
                say!("{}", serde_json::to_string_pretty(&cfg)?);
            }
            Ok(())
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Channel counts and grid always come from the data.
fn fit_model_to_data(model: &mut ModelConfig, ds: &Dataset) {
    let f = ds.first();
    model.in_channels = f.num_channels();
    model.out_channels = f.num_channels();
    model.grid.height = f.height();
    model.grid.width = f.width();
}

fn cmd_train<T: Scalar>(cfg: &RunConfig, ds: &Dataset, out: &Path) -> Result<()> {
    let stats = NormStats::compute(ds.split(Split::Train))?;
    let mut model = KaiModel::<T>::new(cfg.model.clone(), cfg.train.seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    write_atomic(&out.join("norm_stats.csv"), stats.to_csv().as_bytes())?;
    let outcome = match train(&mut model, ds, &stats, &cfg.train) {
        Ok(o) => o,
        Err(e) => {
            if matches!(e.category(), kai_core::ErrorCategory::Numerical) {
                let path = out.join("last_good.kaickpt");
                Checkpoint::from_model(&model, Some(stats)).save(&path)?;
                return Err(e).with_context(|| {
                    format!(
                        "training aborted; last good parameters in {}",
                        path.display()
                    )
                });
            }
            return Err(e.into());
        }
    };
    write_atomic(
        &out.join("train_log.csv"),
        log_to_csv(&outcome.log).as_bytes(),
    )?;
    Checkpoint::from_model(&model, Some(stats.clone())).save(&out.join("last.kaickpt"))?;
    let best = KaiModel::from_params(cfg.model.clone(), outcome.best_params)?;
    Checkpoint::from_model(&best, Some(stats)).save(&out.join("checkpoint.kaickpt"))?;
    say_raw!("{}", log_to_csv(&outcome.log));
    say!(
        "{} steps; best epoch {} (val wRMSE {}); checkpoint {}",
        outcome.steps,
        outcome.best_epoch,
        outcome
            .best_val_wrmse
            .map_or("n/a".to_string(), |v| format!("{v:.6}")),
        out.join("checkpoint.kaickpt").display()
    );
    Ok(())
}

fn cmd_forecast<T: Scalar>(
    checkpoint: &Path,
    data: &Path,
    init_date: Option<chrono::NaiveDate>,
    days: u32,
    out: &Path,
    heatmap: Option<&str>,
) -> Result<()> {
    let bytes = fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let hash = sha256_hex(&bytes);
    let ckpt = Checkpoint::from_bytes(checkpoint, &bytes)?;
    let stats = ckpt.norm_stats.clone().ok_or_else(|| {
        Error::Data(format!(
            "{} carries no normalization statistics",
            checkpoint.display()
        ))
    })?;
    let model: KaiModel<T> = ckpt.into_model()?;
    let ds = Dataset::load(data)?;
    let inits: Vec<usize> = match init_date {
        Some(d) => vec![ds
            .index_of(d)
            .ok_or_else(|| Error::Data(format!("dataset has no field for {d}")))?],
        None => init_indices(&ds, ds.range(Split::Test), days),
    };
    if inits.is_empty() {
        return Err(Error::Data("no test-split day has enough verifying data".into()).into());
    }
    let single = init_date.is_some();
    for &i in &inits {
        let initial = &ds.fields()[i];
        let run = rollout(&model, initial, days, &stats, Some(hash.clone()))?;
        let dir = if single {
            out.to_path_buf()
        } else {
            out.join(initial.date.to_string())
        };
        run.save(&dir)?;
        if let Some(name) = heatmap {
            let c = initial
                .channel_index(name)
                .ok_or_else(|| Error::Data(format!("no channel named `{name}`")))?;
            for (lead, f) in run.lead_days.iter().zip(&run.fields) {
                render_heatmap(f, c, &dir.join(format!("lead{lead:03}_{name}.ppm")))?;
            }
        }
        say!(
            "forecast from {} written to {}",
            initial.date,
            dir.display()
        );
    }
    Ok(())
}

fn load_runs(path: &Path) -> Result<Vec<ForecastRun>> {
    if path.join("run.json").is_file() {
        return Ok(vec![ForecastRun::load(path)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("run.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!("no forecasts found under {}", path.display())).into());
    }
    dirs.iter().map(|d| Ok(ForecastRun::load(d)?)).collect()
}
