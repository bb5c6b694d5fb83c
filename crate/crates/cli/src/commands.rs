use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maskpool::data::{synth_dataset, Manifest, Sample, SynthSpec, Task};
use maskpool::dsp::{read_feature_cache, read_wav, stft_with_params, write_feature_cache, Spectrogram, Standardizer};
use maskpool::layers::LengthMask;
use maskpool::mask_reference::verify;
use maskpool::metrics::{eer_per_tag, ConfusionMatrix, Report};
use maskpool::model::{check_config, head_probabilities, load_checkpoint, save_checkpoint, Network};
use maskpool::numerics::{Rng, Tensor};
use maskpool::optimize::{evaluate, train as run_training, EpochRecord};
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::{ConfigArgs, Preset, Split};

/// Marks errors caused by invalid invocations or configuration.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// 2 usage, 3 data, 4 numeric divergence.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(maskpool::Error::Divergence(_)) = cause.downcast_ref::<maskpool::Error>() {
            return 4;
        }
    }
    3
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let cfg = RunConfig::load(args.config.as_deref(), args.task.map(Into::into))
        .and_then(RunConfig::resolve)
        .map_err(|e| usage(format!("{e:#}")))?;
    Ok(cfg)
}

fn echo(cfg: &RunConfig) -> Result<()> {
    eprintln!("effective config:\n{}", serde_json::to_string_pretty(cfg)?);
    Ok(())
}

fn check_fold(cfg: &RunConfig, fold: usize) -> Result<()> {
    if fold == 0 || fold > cfg.folds() {
        return Err(usage(format!("fold {fold} outside 1..={}", cfg.folds())));
    }
    Ok(())
}

pub fn synth(out: &Path, preset: Preset, seed: Option<u64>, clips: Option<usize>) -> Result<()> {
    let mut spec = match preset {
        Preset::Tones => SynthSpec::tones(),
        Preset::Tags => SynthSpec::tags(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = clips {
        spec.n_per_class = n;
    }
    let written = synth_dataset(&spec, out).with_context(|| format!("writing dataset to {}", out.display()))?;
    let mut cfg = RunConfig {
        task: spec.task,
        num_folds: Some(spec.num_folds),
        sample_rate: Some(spec.sample_rate),
        ..RunConfig::default()
    };
    cfg.train.seed = spec.seed;
    let path = out.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{}",
        json!({"clips": written.len(), "classes": spec.classes.len(), "config": path})
    );
    Ok(())
}

fn spectrogram(cfg: &RunConfig, wav: &Path) -> Result<Spectrogram> {
    let clip = read_wav(wav)?;
    let expected = cfg.sample_rate.unwrap_or_default();
    if clip.sample_rate != expected {
        bail!("{}: sample rate {} Hz, config expects {expected} Hz", wav.display(), clip.sample_rate);
    }
    Ok(stft_with_params(&clip, cfg.stft())?)
}

pub fn features(args: &ConfigArgs, fold: Option<usize>) -> Result<()> {
    let cfg = load_config(args)?;
    echo(&cfg)?;
    if let Some(f) = fold {
        check_fold(&cfg, f)?;
    }
    let manifest = cfg.manifest()?;
    let results: Vec<Result<Spectrogram>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let spec = spectrogram(&cfg, &e.path)?;
            let cache = cfg.cache_path(&e.path);
            if let Some(dir) = cache.parent() {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            write_feature_cache(&cache, &spec)?;
            Ok(spec)
        })
        .collect();
    let failures: Vec<String> = results
        .iter()
        .filter_map(|r| r.as_ref().err().map(|e| format!("  {e:#}")))
        .collect();
    if !failures.is_empty() {
        bail!("{} of {} clips failed:\n{}", failures.len(), results.len(), failures.join("\n"));
    }
    let specs: Vec<Spectrogram> = results.into_iter().map(Result::unwrap).collect();

    let folds: Vec<usize> = fold.map_or_else(|| (1..=cfg.folds()).collect(), |f| vec![f]);
    for f in folds {
        let (train_idx, _) = manifest.split(f)?;
        let standardizer = maskpool::dsp::fit_standardizer(train_idx.iter().map(|&i| &specs[i]), cfg.stft())
            .with_context(|| format!("fitting the fold {f} standardizer"))?;
        standardizer.save(cfg.standardizer_path(f))?;
    }
    println!(
        "{}",
        json!({"clips": specs.len(), "bins": cfg.stft().bins(), "feature_dir": cfg.feature_dir})
    );
    Ok(())
}

fn load_standardizer(cfg: &RunConfig, fold: usize) -> Result<Standardizer> {
    let path = cfg.standardizer_path(fold);
    Standardizer::load(&path).with_context(|| {
        format!("missing standardizer {}; run `maskpool features` first", path.display())
    })
}

fn load_samples(cfg: &RunConfig, manifest: &Manifest, indices: &[usize], standardizer: &Standardizer) -> Result<Vec<Sample>> {
    indices
        .iter()
        .map(|&i| {
            let entry = &manifest.entries[i];
            let cache = cfg.cache_path(&entry.path);
            let spec = read_feature_cache(&cache).with_context(|| {
                format!("missing feature cache {}; run `maskpool features` first", cache.display())
            })?;
            Ok(Sample {
                features: standardizer.apply(&spec)?,
                labels: entry.labels.clone(),
            })
        })
        .collect()
}

fn group_digits(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn print_layer_table(net: &Network<f32>) {
    println!("{:<4} {:<16} {:>6} {:>6} {:>6} {:>11}", "No.", "Layer", "Depth", "Height", "Width", "Parameters");
    for row in net.layer_table() {
        println!(
            "{:<4} {:<16} {:>6} {:>6} {:>6} {:>11}",
            row.index,
            row.layer,
            row.depth,
            row.height,
            row.width,
            row.params.map(group_digits).unwrap_or_default()
        );
    }
    println!("Total conv + dense parameters: {}", group_digits(net.layer_param_count()));
    println!(
        "Batch-norm parameters: {} ({} trainable)",
        group_digits(net.bn_param_count()),
        group_digits(net.bn_param_count() / 2)
    );
}

pub fn train(
    args: &ConfigArgs,
    fold: usize,
    dry_run: bool,
    seed: Option<u64>,
    max_epochs: Option<usize>,
    deterministic: bool,
) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(n) = max_epochs {
        cfg.train.max_epochs = n;
    }
    cfg.train.deterministic |= deterministic;
    echo(&cfg)?;
    check_fold(&cfg, fold)?;

    let net = Network::<f32>::build(cfg.network(), &mut Rng::new(cfg.train.seed)).map_err(|e| usage(e.to_string()))?;
    if dry_run {
        print_layer_table(&net);
        return Ok(());
    }

    let manifest = cfg.manifest()?;
    let standardizer = load_standardizer(&cfg, fold)?;
    if standardizer.bins() != cfg.network().input_bins {
        bail!(
            "standardizer has {} bins but the config implies {}",
            standardizer.bins(),
            cfg.network().input_bins
        );
    }
    let (train_idx, val_idx) = manifest.split(fold)?;
    let train_set = load_samples(&cfg, &manifest, &train_idx, &standardizer)?;
    let val_set = load_samples(&cfg, &manifest, &val_idx, &standardizer)?;

    std::fs::create_dir_all(&cfg.checkpoint_dir)
        .with_context(|| format!("creating {}", cfg.checkpoint_dir.display()))?;
    let ckpt = cfg.checkpoint_path(fold);
    let log_path = cfg.log_path(fold);
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let on_epoch = |record: &EpochRecord, best: Option<&Network<f32>>| -> maskpool::Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| maskpool::Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        eprintln!("{line}");
        if let Some(net) = best {
            save_checkpoint(net, &ckpt)?;
        }
        Ok(())
    };
    let outcome = run_training(net, &train_set, &val_set, cfg.task, &cfg.train, on_epoch)
        .with_context(|| format!("training fold {fold}; last good checkpoint: {}", ckpt.display()))?;
    save_checkpoint(&outcome.model, &ckpt)?;

    let best = &outcome.log[outcome.best_epoch - 1];
    println!(
        "{}",
        json!({
            "fold": fold,
            "epochs": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_loss": best.val_loss,
            "best_val_metric": best.val_metric,
            "stopped_early": outcome.stopped_early,
            "checkpoint": ckpt,
            "log": log_path,
        })
    );
    Ok(())
}

/// Per-fold predictions kept for pooling.
enum Pooled {
    Scene(ConfusionMatrix),
    Tagging { scores: Vec<f64>, targets: Vec<bool> },
}

fn build_report(cfg: &RunConfig, names: &[String], folds: Vec<usize>, pooled: &Pooled) -> Result<Report> {
    let (metric, per_class, average) = match pooled {
        Pooled::Scene(conf) => {
            let (per, avg) = conf.accuracy()?;
            ("accuracy_percent", per.iter().map(|v| 100.0 * v).collect::<Vec<_>>(), 100.0 * avg)
        }
        Pooled::Tagging { scores, targets } => {
            let r = eer_per_tag(scores, targets, names.len())?;
            ("eer", r.per_tag, r.average)
        }
    };
    Ok(Report {
        task: match cfg.task {
            Task::Scene => "scene".into(),
            Task::Tagging => "tagging".into(),
        },
        aggregation: if folds.len() > 1 { "pooled".into() } else { "single_fold".into() },
        folds,
        metric: metric.into(),
        average,
        per_class: names.iter().cloned().zip(per_class).collect(),
    })
}

pub fn eval(args: &ConfigArgs, fold: Option<usize>, split: Split, checkpoint: Option<PathBuf>, run_verify: bool) -> Result<()> {
    let cfg = load_config(args)?;
    echo(&cfg)?;
    let folds: Vec<usize> = match fold {
        Some(f) => {
            check_fold(&cfg, f)?;
            vec![f]
        }
        None => (1..=cfg.folds()).collect(),
    };
    let manifest = cfg.manifest()?;
    let names = manifest.class_names.clone();
    let k = names.len();
    let multi = cfg.task.multi_label();
    let split_name = match split {
        Split::Train => "train",
        Split::Val => "val",
    };

    let mut pooled = if multi {
        Pooled::Tagging { scores: Vec::new(), targets: Vec::new() }
    } else {
        Pooled::Scene(ConfusionMatrix::new(k))
    };
    for &f in &folds {
        let path = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path(f));
        let net = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        check_config(net.config(), &cfg.network()).with_context(|| format!("checkpoint {}", path.display()))?;
        let standardizer = load_standardizer(&cfg, f)?;
        let (train_idx, val_idx) = manifest.split(f)?;
        let idx = if split == Split::Train { train_idx } else { val_idx };
        let samples = load_samples(&cfg, &manifest, &idx, &standardizer)?;
        let evaluation = evaluate(&net, &samples, multi, cfg.train.batch_size)?;

        let fold_pool = if multi {
            let scores = evaluation.probabilities.clone();
            let targets = samples
                .iter()
                .flat_map(|s| (0..k).map(move |c| s.labels.contains(&c)))
                .collect::<Vec<_>>();
            if let Pooled::Tagging { scores: all_s, targets: all_t } = &mut pooled {
                all_s.extend_from_slice(&scores);
                all_t.extend_from_slice(&targets);
            }
            Pooled::Tagging { scores, targets }
        } else {
            let truth: Vec<usize> = samples.iter().map(|s| s.labels[0]).collect();
            let conf = ConfusionMatrix::from_pairs(k, &truth, &evaluation.predictions())?;
            if let Pooled::Scene(all) = &mut pooled {
                all.merge(&conf)?;
            }
            Pooled::Scene(conf)
        };
        let report = build_report(&cfg, &names, vec![f], &fold_pool)?;
        report.write(&cfg.report_dir, &format!("fold{f}_{split_name}"))?;
        println!("{}", serde_json::to_string(&report)?);

        if run_verify {
            let v = verify(&net, &samples, cfg.train.batch_size)?;
            println!("{}", json!({"fold": f, "verify": v}));
        }
    }
    if folds.len() > 1 {
        let report = build_report(&cfg, &names, folds, &pooled)?;
        report.write(&cfg.report_dir, &format!("pooled_{split_name}"))?;
        println!("{}", serde_json::to_string(&report)?);
    }
    Ok(())
}

pub fn predict(args: &ConfigArgs, fold: usize, checkpoint: Option<PathBuf>, wav: &Path) -> Result<()> {
    let cfg = load_config(args)?;
    echo(&cfg)?;
    let path = checkpoint.unwrap_or_else(|| cfg.checkpoint_path(fold));
    let net = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    check_config(net.config(), &cfg.network())?;
    let standardizer = load_standardizer(&cfg, fold)?;
    let features = standardizer.apply(&spectrogram(&cfg, wav)?)?;
    let minimum = net.config().min_input_frames();
    if features.frames < minimum {
        bail!(maskpool::Error::SampleTooShort { index: 0, frames: features.frames, minimum });
    }
    let x = features.data.clone().reshape(&[1, 1, features.frames, features.bins])?;
    let logits = net.forward_eval(&x, &LengthMask::full(1, features.frames)?)?;
    let probs: Tensor<f64> = head_probabilities(&logits.cast(), net.config().head);

    let names: Vec<String> = if cfg.classes.exists() {
        maskpool::data::read_classes(&cfg.classes)?
    } else {
        (0..probs.len()).map(|i| format!("class{i}")).collect()
    };
    let mut out = serde_json::Map::new();
    for (name, &p) in names.iter().zip(probs.data()) {
        out.insert(name.clone(), json!(p));
    }
    println!("{}", serde_json::Value::Object(out));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_are_grouped() {
        assert_eq!(group_digits(141_312), "141,312");
        assert_eq!(group_digits(3_855), "3,855");
        assert_eq!(group_digits(999), "999");
        assert_eq!(group_digits(1_000_000), "1,000,000");
    }

    #[test]
    fn divergence_maps_to_exit_code_four() {
        let e = anyhow::Error::new(maskpool::Error::Divergence("nan".into())).context("training");
        assert_eq!(exit_code(&e), 4);
        assert_eq!(exit_code(&usage("bad flag")), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("missing file")), 3);
    }
}
