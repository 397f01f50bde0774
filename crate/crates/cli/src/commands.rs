//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sharpen_core::attention::{attention_maps, Mechanism};
use sharpen_core::data::{batch_iter, generate_synth, load_dataset, save_dataset, Dataset, LoadOptions, SynthSpec};
use sharpen_core::experiment::{run_trend, side_by_side, TrendConfig};
use sharpen_core::metrics::{
    attention_overlap_report, export_heatmap, ks_chart, predict, ranked_classes, summarize, write_ks_csv,
    write_metrics_csv, write_overlap_csv,
};
use sharpen_core::nn::{forward, load_checkpoint, Layer, Params};
use sharpen_core::train::{train_to_dir, Trainer};
use sharpen_core::Tape;

use crate::config::{RunConfig, UsageError};
use crate::{AttendArgs, EvalArgs, KsArgs, SynthArgs, TrainArgs, TrendArgs};

fn path_value(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn require_data(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .as_deref()
        .ok_or_else(|| UsageError("no dataset given (--data or `data` in the config file)".into()).into())
}

/// Loads a dataset and checks it against the model it will be fed to.
fn load_for_model(dir: &Path, params: &Params) -> Result<Dataset> {
    let m = &params.config;
    let ds = load_dataset(
        dir,
        LoadOptions {
            classes: Some(m.classes),
            multi_label: Some(m.multi_label),
        },
    )?;
    if (ds.channels, ds.height, ds.width) != (m.input_channels, m.input_size.0, m.input_size.1) {
        bail!(sharpen_core::Error::Data(format!(
            "{}: images are {}x{}x{}, the checkpoint expects {}x{}x{}",
            dir.display(),
            ds.channels,
            ds.height,
            ds.width,
            m.input_channels,
            m.input_size.0,
            m.input_size.1
        )));
    }
    if ds.is_empty() {
        bail!(sharpen_core::Error::Data(format!("{}: no samples", dir.display())));
    }
    Ok(ds)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: a.classes,
        height: a.height,
        width: a.width,
        motif_size: a.motif_size,
        noise_std: a.noise,
        seed: a.seed,
    };
    let ds = generate_synth(&spec, a.per_class)?;
    save_dataset(&a.out, &ds)?;
    println!(
        "wrote {} images ({} classes x {}) of {}x{} to {}",
        ds.len(),
        a.classes,
        a.per_class,
        a.height,
        a.width,
        a.out.display()
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.common.resolve(
        RunConfig::default(),
        &[
            ("data", path_value(&a.data)),
            ("test_data", path_value(&a.test_data)),
            ("channels", a.channels.clone()),
            ("milestones", a.milestones.clone()),
        ],
    )?;
    let train = load_dataset(
        require_data(&cfg)?,
        LoadOptions {
            classes: None,
            multi_label: cfg.multi_label,
        },
    )?;
    let test = cfg
        .test_data
        .as_deref()
        .map(|dir| {
            load_dataset(
                dir,
                LoadOptions {
                    classes: Some(train.classes),
                    multi_label: Some(train.multi_label),
                },
            )
        })
        .transpose()?;
    cfg.train.fit_to(&train);
    let trainer = match &a.resume {
        Some(path) => Trainer::resume(cfg.train.clone(), load_checkpoint(path)?)?,
        None => Trainer::new(cfg.train.clone())?,
    };
    cfg.write_echo(&cfg.out)?;
    let outcome = train_to_dir(trainer, &train, test.as_ref(), &cfg.out)?;
    if let Some(last) = outcome.rows.last() {
        println!(
            "epoch {}: loss {:.6}, train accuracy {:.4}{}",
            last.epoch,
            last.total,
            last.train_accuracy,
            last.test_accuracy.map(|t| format!(", test accuracy {t:.4}")).unwrap_or_default()
        );
    }
    println!("log {}, checkpoints in {}", outcome.log.display(), cfg.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.common.resolve(RunConfig::default(), &[("data", path_value(&a.data))])?;
    let params = load_checkpoint(&a.checkpoint)?.params;
    let ds = load_for_model(require_data(&cfg)?, &params)?;
    let pred = predict(&params, &ds, cfg.train.batch_size)?;
    let rows = summarize(&pred)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_metrics_csv(&cfg.out.join("metrics.csv"), &rows)?;
    let overlap = attention_overlap_report(&params, &ds, &cfg.train.icasc, cfg.train.batch_size)?;
    write_overlap_csv(&cfg.out.join("overlap.csv"), &overlap)?;
    cfg.write_echo(&cfg.out)?;
    for r in rows.iter().filter(|r| r.scope == "all") {
        println!("{:<24} {:.6}", r.metric, r.value);
    }
    println!(
        "{:<24} {:.6} ({} attention, skip rate {:.4})",
        "mean_l_as_last", overlap.mean_separation_last, cfg.train.icasc.mechanism, overlap.skip_rate
    );
    Ok(())
}

pub fn attend(a: &AttendArgs) -> Result<()> {
    let cfg = a.common.resolve(RunConfig::default(), &[("data", path_value(&a.data))])?;
    let params = load_checkpoint(&a.checkpoint)?.params;
    let classes = params.config.classes;
    if a.top_k == 0 || a.top_k > classes {
        bail!(UsageError(format!("--top-k {} must lie in 1..={classes}", a.top_k)));
    }
    let mut ds = load_for_model(require_data(&cfg)?, &params)?;
    ds.samples = match &a.ids {
        Some(ids) => ids
            .split(',')
            .map(str::trim)
            .filter(|id| !id.is_empty())
            .map(|id| {
                ds.samples
                    .iter()
                    .find(|s| s.id == id)
                    .cloned()
                    .ok_or_else(|| sharpen_core::Error::Data(format!("no sample with id {id:?}")))
            })
            .collect::<Result<_, _>>()?,
        None => ds.samples.into_iter().take(a.limit).collect(),
    };
    let mechanisms = match &a.common.mechanism {
        Some(m) => vec![m.parse::<Mechanism>().map_err(|e| UsageError(e.to_string()))?],
        None => vec![Mechanism::GradCam, Mechanism::ACh],
    };
    let size = a.size.map_or(params.config.input_size, |s| (s, s));
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let ext = if a.gray { "pgm" } else { "ppm" };
    let mut manifest = String::from("id,rank,class,probability,layer,mechanism,file\n");
    let layers = [Layer::Inner, Layer::Last];
    for batch in batch_iter(&ds, cfg.train.batch_size, None, 0, false)? {
        let tape = Tape::new();
        let rec = forward(&tape, &params, &batch.images)?;
        let ranked: Vec<Vec<usize>> = (0..rec.batch).map(|n| ranked_classes(rec.probability_row(n))).collect();
        for rank in 0..a.top_k {
            let chosen: Vec<usize> = ranked.iter().map(|r| r[rank]).collect();
            for &mech in &mechanisms {
                let maps = attention_maps(&tape, &rec, &chosen, &layers, mech, false)?;
                for map in &maps {
                    for (n, id) in batch.ids.iter().enumerate() {
                        let file = format!("{id}_top{}_c{}_{}_{}.{ext}", rank + 1, chosen[n], map.layer.as_str(), mech);
                        export_heatmap(map.sample(n), map.spatial(), size, !a.gray, &cfg.out.join(&file))?;
                        manifest.push_str(&format!(
                            "{id},{},{},{},{},{},{file}\n",
                            rank + 1,
                            chosen[n],
                            rec.probability_row(n)[chosen[n]],
                            map.layer.as_str(),
                            mech
                        ));
                    }
                }
            }
        }
    }
    let path = cfg.out.join("manifest.csv");
    fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} heatmaps for {} samples to {}",
        ds.len() * a.top_k * mechanisms.len() * layers.len(),
        ds.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn ks(a: &KsArgs) -> Result<()> {
    let cfg = a.common.resolve(RunConfig::default(), &[("data", path_value(&a.data))])?;
    let params = load_checkpoint(&a.checkpoint)?.params;
    let ds = load_for_model(require_data(&cfg)?, &params)?;
    let pred = predict(&params, &ds, cfg.train.batch_size)?;
    let (target, confusing) = pred.target_and_confusing()?;
    let curve = ks_chart(&target, &confusing, a.grid)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_ks_csv(&cfg.out.join("ks.csv"), &curve)?;
    let summary = format!(
        "samples = {}\nks_exact = {}\nks_exact_threshold = {}\nks_grid = {}\nks_grid_threshold = {}\n",
        target.len(),
        curve.exact_ks,
        curve.exact_threshold,
        curve.grid_ks,
        curve.grid_threshold
    );
    let path = cfg.out.join("ks_summary.txt");
    fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
    print!("{summary}");
    Ok(())
}

pub fn trend(a: &TrendArgs) -> Result<()> {
    let defaults = TrendConfig::default();
    let base = RunConfig {
        train: defaults.train.clone(),
        ..RunConfig::default()
    };
    let cfg = a.common.resolve(base, &[])?;
    if a.seeds == 0 {
        bail!(UsageError("--seeds must be positive".into()));
    }
    let first = a.common.seed.unwrap_or(1);
    let mechanisms = match &a.common.mechanism {
        Some(_) => vec![cfg.train.icasc.mechanism],
        None => vec![Mechanism::ACh, Mechanism::GradCam],
    };
    let trend = TrendConfig {
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        seeds: (first..first + a.seeds).collect(),
        mechanisms,
        train: cfg.train.clone(),
        ..defaults
    };
    let reports = run_trend(&trend)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    for report in &reports {
        let table = report.to_table();
        let path = cfg.out.join(format!("trend_{}.txt", report.mechanism));
        fs::write(&path, format!("{table}\n")).with_context(|| format!("writing {}", path.display()))?;
        println!("{table}\n");
    }
    if let [x, y] = reports.as_slice() {
        let table = side_by_side(x, y);
        let path = cfg.out.join("trend_side_by_side.txt");
        fs::write(&path, format!("{table}\n")).with_context(|| format!("writing {}", path.display()))?;
        println!("{table}");
    }
    cfg.write_echo(&cfg.out)?;
    Ok(())
}
