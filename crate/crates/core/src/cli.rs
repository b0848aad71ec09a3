//! Command-line entry points. Every command reads an optional TOML config
//! (`--config`), applies the command-line overrides, validates before doing
//! any work, and writes its outputs plus `resolved-config.toml` under `--out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_model, Checkpoint};
use crate::config::RunConfig;
use crate::data::{read_samples, write_samples};
use crate::error::{Error, Result};
use crate::geometry::Sample;
use crate::network::{parameter_table, Architecture, InputFeature, LossMode, Model};
use crate::training::{
    evaluate, fit, gradcheck, holdout_split, lam_file_name, run_loso, synth_dataset, top_k_edges,
    train_and_test, write_lam, write_loss_trace, write_predictions, RunArtifacts,
};

#[derive(Debug, Parser)]
#[command(
    name = "gtsgn",
    version,
    about = "Landmark-graph micro-expression recognition"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Ssgn,
    Gtsgn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeatureArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Me,
    Au,
    Aau,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seeds initialization, shuffling, augmentation and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub fusion_layer: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    pub feature: Option<FeatureArg>,
    #[arg(long, global = true, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file (synth-data) or directory (everything else).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic JSONL dataset.
    SynthData {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        per_subject: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        au_vocab: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train on every sample of a dataset and save a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Leave-one-subject-out or subject-disjoint holdout evaluation.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "holdout")]
        loso: bool,
        #[arg(long)]
        holdout: bool,
        /// With --holdout: score this checkpoint on the whole file instead of training.
        #[arg(long, requires = "holdout")]
        checkpoint: Option<PathBuf>,
    },
    /// Write predictions of a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference check of every parameter gradient; exits 1 on failure.
    Gradcheck {
        /// Use the small 8-8-16-16 network regardless of the configured widths.
        #[arg(long)]
        micro: bool,
        #[arg(long)]
        tol: Option<f64>,
        /// Take the check batch from this file instead of synthesizing it.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Export learnable adjacency matrices and list their strongest edges.
    InspectLam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Parameter count per tensor and in total.
    CountParams {
        #[arg(long)]
        verbose: bool,
    },
}

/// Loads `--config` and applies the overrides.
pub fn resolve_config(global: &GlobalArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = match (&global.config, base) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(base)) => base,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(beta) = global.beta {
        cfg.model.beta = beta;
    }
    if let Some(f) = global.fusion_layer {
        cfg.model.fusion_layer = f;
    }
    if let Some(m) = global.mode {
        cfg.model.mode = match m {
            ModeArg::Ssgn => Architecture::Ssgn,
            ModeArg::Gtsgn => Architecture::Gtsgn,
        };
    }
    if let Some(f) = global.feature {
        cfg.model.feature = match f {
            FeatureArg::A => InputFeature::A,
            FeatureArg::B => InputFeature::B,
        };
    }
    if let Some(l) = global.loss {
        cfg.model.loss = match l {
            LossArg::Me => LossMode::Me,
            LossArg::Au => LossMode::Au,
            LossArg::Aau => LossMode::Aau,
        };
    }
    if let Some(j) = global.jobs {
        cfg.run.jobs = j;
    }
    Ok(cfg)
}

fn out_dir(global: &GlobalArgs, default: &str) -> Result<PathBuf> {
    let dir = global.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_data(path: &Path) -> Result<Vec<Sample>> {
    let samples = read_samples(path)?;
    if samples.is_empty() {
        return Err(Error::Empty("dataset file"));
    }
    Ok(samples)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; human-readable output goes to `out`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            write!(out, "{}", e.render())?;
            return Ok(code);
        }
    };
    run(cli, out)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::SynthData {
            subjects,
            per_subject,
            classes,
            au_vocab,
            noise,
        } => {
            let mut cfg = resolve_config(g, None)?;
            let s = &mut cfg.synth;
            if let Some(v) = subjects {
                s.num_subjects = *v;
            }
            if let Some(v) = per_subject {
                s.samples_per_subject = *v;
            }
            if let Some(v) = classes {
                s.num_classes = *v;
            }
            if let Some(v) = au_vocab {
                s.au_vocab_size = *v;
            }
            if let Some(v) = noise {
                s.noise_sigma = *v;
            }
            let samples = synth_dataset(&cfg.synth)?;
            let path = g
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("synth.jsonl"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            write_samples(&path, &samples)?;
            writeln!(
                out,
                "wrote {} samples ({} subjects, {} classes, {} AUs) to {}",
                samples.len(),
                cfg.synth.num_subjects,
                cfg.synth.num_classes,
                cfg.synth.au_vocab_size,
                path.display()
            )?;
        }
        Command::Train { data, epochs, lr } => {
            let mut cfg = resolve_config(g, None)?;
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.train.lr = *lr;
            }
            cfg.validate()?;
            let samples = load_data(data)?;
            let dir = out_dir(g, "runs/train")?;
            cfg.save(&dir.join("resolved-config.toml"))?;
            let model = Model::build(&cfg.model, cfg.train.seed)?;
            let report = fit(&model, &samples, &cfg.train)?;
            Checkpoint::capture(&model, Some(&report.optimizer_state))
                .save(&dir.join("checkpoint.json"))?;
            write_loss_trace(
                &dir.join("loss_trace.csv"),
                &[("all".into(), report.loss_trace.clone())],
            )?;
            let train_eval = evaluate(&model, &samples)?;
            let last = report.loss_trace.last().map_or(f64::NAN, |e| e.total);
            writeln!(
                out,
                "trained {} epochs on {} samples: final loss {last:.6}, train accuracy {:.4}",
                cfg.train.epochs,
                samples.len(),
                train_eval.metrics.accuracy
            )?;
            writeln!(out, "checkpoint: {}", dir.join("checkpoint.json").display())?;
        }
        Command::Evaluate {
            data,
            loso,
            holdout,
            checkpoint,
        } => {
            if !loso && !holdout {
                return Err(Error::Config("evaluate needs --loso or --holdout".into()));
            }
            let mut cfg = resolve_config(g, None)?;
            if let Some(path) = checkpoint {
                cfg.model = Checkpoint::load(path)?.config;
            }
            cfg.validate()?;
            let samples = load_data(data)?;
            let dir = out_dir(g, "runs/evaluate")?;
            cfg.save(&dir.join("resolved-config.toml"))?;
            let artifacts = if *loso {
                let report = run_loso(&samples, &cfg.model, &cfg.train, cfg.run.jobs)?;
                for f in &report.folds {
                    writeln!(
                        out,
                        "fold {:>10}: accuracy {:.4} f1 {:.4} ({} samples)",
                        f.held_out_subject, f.metrics.accuracy, f.metrics.f1, f.metrics.num_samples
                    )?;
                }
                RunArtifacts::from_loso(&report, crate::geometry::NUM_NODES)
            } else if let Some(path) = checkpoint {
                let model = load_model(path)?;
                let eval = evaluate(&model, &samples)?;
                RunArtifacts {
                    pooled: Some(eval.metrics.clone()),
                    folds: vec![("checkpoint".into(), eval.metrics)],
                    predictions: eval.predictions,
                    hidden: eval.hidden,
                    ..RunArtifacts::default()
                }
            } else {
                let fold = holdout_split(&samples, cfg.run.holdout_fraction)?;
                writeln!(
                    out,
                    "holdout: training on {} samples, testing on {} (subjects {})",
                    fold.train.len(),
                    fold.test.len(),
                    fold.held_out_subject
                )?;
                let r = train_and_test(&samples, &fold, 0, &cfg.model, &cfg.train)?;
                let report = crate::training::LosoReport {
                    pooled: r.metrics.clone(),
                    folds: vec![r],
                    constrained_layers: cfg.model.constrained_layers(),
                };
                RunArtifacts::from_loso(&report, crate::geometry::NUM_NODES)
            };
            artifacts.write_all(&dir)?;
            if let Some(m) = &artifacts.pooled {
                writeln!(
                    out,
                    "accuracy {:.4}  macro-F1 {:.4}  ({} samples)",
                    m.accuracy, m.f1, m.num_samples
                )?;
            }
            writeln!(out, "outputs in {}", dir.display())?;
        }
        Command::Predict { checkpoint, data } => {
            let model = load_model(checkpoint)?;
            let samples = load_data(data)?;
            let (predictions, _) = crate::training::predict(&model, &samples)?;
            let dir = out_dir(g, "runs/predict")?;
            let path = dir.join("predictions.csv");
            write_predictions(&path, &predictions)?;
            writeln!(
                out,
                "wrote {} predictions to {}",
                predictions.len(),
                path.display()
            )?;
        }
        Command::Gradcheck { micro, tol, data } => {
            let mut cfg = resolve_config(
                g,
                if *micro {
                    Some(RunConfig::micro())
                } else {
                    None
                },
            )?;
            if *micro {
                let m = RunConfig::micro().model;
                cfg.model.layer_widths = m.layer_widths;
                cfg.model.num_classes = m.num_classes;
                cfg.model.au_vocab_size = m.au_vocab_size;
            }
            cfg.validate()?;
            let samples = match data {
                Some(path) => load_data(path)?,
                None => synth_dataset(&crate::training::SynthSpec {
                    num_classes: cfg.model.num_classes,
                    au_vocab_size: cfg.model.au_vocab_size,
                    ..cfg.synth.clone()
                })?,
            };
            let n = cfg.run.gradcheck_samples.min(samples.len());
            let model = Model::build(&cfg.model, cfg.train.seed)?;
            let total = crate::network::count_parameters(&model);
            if total > 20_000 {
                log::warn!("gradient check over {total} parameters will be slow; consider --micro");
            }
            let tol = tol.unwrap_or(cfg.run.gradcheck_tol);
            let report = gradcheck(&model, &samples[..n], tol)?;
            writeln!(
                out,
                "{:<32} {:>7} {:>12} {:>12} {:>9}",
                "parameter", "size", "max rel err", "max abs err", "one-sided"
            )?;
            for e in &report.entries {
                let flag = if e.max_rel_err < tol && e.unresolved == 0 {
                    ""
                } else {
                    "  FAIL"
                };
                writeln!(
                    out,
                    "{:<32} {:>7} {:>12.3e} {:>12.3e} {:>9}{flag}",
                    e.name, e.numel, e.max_rel_err, e.max_abs_err, e.one_sided
                )?;
            }
            let verdict = if report.passed { "PASS" } else { "FAIL" };
            writeln!(out, "gradcheck {verdict} (tolerance {tol:e})")?;
            if !report.passed {
                return Ok(1);
            }
        }
        Command::InspectLam { checkpoint, top_k } => {
            let cfg = resolve_config(g, None)?;
            let model = load_model(checkpoint)?;
            let k = top_k.unwrap_or(cfg.run.top_k);
            let dir = out_dir(g, "runs/inspect-lam")?;
            let n = model.graph().num_nodes;
            let lams = model.learnable_adjacencies();
            if lams.is_empty() {
                writeln!(out, "model has no learnable adjacency (use_lam = false)")?;
            }
            for (name, t) in lams {
                let values = t.to_vec();
                let path = dir.join(lam_file_name(&name));
                write_lam(&path, n, &values)?;
                writeln!(out, "{name} -> {}", path.display())?;
                for (i, j, v) in top_k_edges(&values, n, k) {
                    writeln!(out, "  {i:>2} -> {j:>2}  {v:+.6}")?;
                }
            }
        }
        Command::CountParams { verbose } => {
            let cfg = resolve_config(g, None)?;
            cfg.model.validate()?;
            let model = Model::build(&cfg.model, cfg.train.seed)?;
            let table = parameter_table(&model);
            let total: usize = table.iter().map(|(_, _, c)| c).sum();
            if *verbose {
                for (name, shape, count) in &table {
                    writeln!(out, "{name:<32} {:<14} {count:>8}", format!("{shape:?}"))?;
                }
            } else {
                // One line per SS module / head group.
                let mut groups: Vec<(String, usize)> = Vec::new();
                for (name, _, count) in &table {
                    let group = name.rsplit_once('.').map(|x| x.0).unwrap_or(name);
                    let group = group
                        .trim_end_matches(".gcn")
                        .trim_end_matches(".tcn")
                        .to_string();
                    match groups.last_mut() {
                        Some((g, c)) if *g == group => *c += count,
                        _ => groups.push((group, *count)),
                    }
                }
                for (group, count) in groups {
                    writeln!(out, "{group:<32} {count:>8}")?;
                }
            }
            writeln!(out, "total {total}")?;
        }
    }
    Ok(0)
}
