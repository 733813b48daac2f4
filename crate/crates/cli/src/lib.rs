//! The `biasaware` command line: generate synthetic data, train, evaluate,
//! audit external scores and describe dataset demographics.
//!
//! [`run`] is the whole program; `main` only forwards the process arguments
//! and exits with its status.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use biasaware::io::{load_dataset, load_model, save_dataset, save_model, write_atomic, LambdaSetting, PredictionFile, RunConfig};
use biasaware::pipeline::{self, dataset_threshold, Mode};
use biasaware::{generate, Confounder, Dataset, Split, SubgroupReport, TrainingData};
use clap::{Parser, Subcommand, ValueEnum};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for data and configuration errors.
pub const EXIT_DATA: i32 = 1;
/// Exit status for command-line usage errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "biasaware", version, about = "Bias-aware adversarial training and subgroup AUC evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset from the generator keys of a run config.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split, early-stopping on validation AUC.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out_model: PathBuf,
        /// Per-epoch training log (tab-separated).
        #[arg(long)]
        log: PathBuf,
    },
    /// Score a split with a trained model and write the subgroup report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Also write the scores as an `id,score` file.
        #[arg(long)]
        dump_scores: Option<PathBuf>,
        /// Young/old boundary; defaults to the median training age.
        #[arg(long)]
        age_threshold: Option<f64>,
    },
    /// Subgroup report for scores produced elsewhere.
    Audit {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long)]
        age_threshold: Option<f64>,
    },
    /// Print per-split demographics.
    Describe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        age_threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    BiasAware,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    /// Aligned plain-text table.
    Table,
    /// `key = value` document at full precision.
    Kv,
}

/// Runs one command. `args` includes the program name.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                EXIT_USAGE
            } else {
                let _ = stdout.write_all(text.as_bytes());
                EXIT_OK
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Generate { spec, seed, out } => {
            let cfg = RunConfig::load(&spec)?;
            let data = generate(&cfg.gen, seed)?;
            save_dataset(&data, &out)?;
            writeln!(stderr, "wrote {} rows to {}", data.examples.len(), out.display())?;
        }
        Command::Train {
            data,
            config,
            mode,
            out_model,
            log,
        } => {
            let cfg = RunConfig::load(&config)?;
            let dataset = load_dataset(&data)?;
            let td = TrainingData::from_dataset(&dataset)?;
            let mode = match mode {
                ModeArg::Baseline => Mode::Baseline,
                ModeArg::BiasAware => {
                    if cfg.train.confounder == Confounder::None {
                        bail!("{}: bias-aware mode needs `confounder = age` or `sex`", config.display());
                    }
                    Mode::BiasAware
                }
            };
            let train_cfg = match mode {
                Mode::Baseline => cfg.train.clone(),
                Mode::BiasAware => pipeline::resolve_lambda(&td, &cfg.train, cfg.lambda)?,
            };
            if mode == Mode::BiasAware && cfg.lambda == LambdaSetting::Auto {
                writeln!(stderr, "lambda = {} (from pilot run)", train_cfg.lambda)?;
            }
            let (model, history) = pipeline::train(&td, &train_cfg, mode)?;
            save_model(&model, &out_model)?;
            write_atomic(&log, history.render_log().as_bytes())?;
            writeln!(
                stderr,
                "trained {} epochs ({}), best epoch {}",
                history.epochs.len(),
                history.stop_reason.map_or("no epochs", |r| r.name()),
                history.best_epoch.map_or("-".into(), |e| e.to_string())
            )?;
        }
        Command::Evaluate {
            model,
            data,
            split,
            report,
            format,
            dump_scores,
            age_threshold,
        } => {
            let model = load_model(&model)?;
            let dataset = load_dataset(&data)?;
            let threshold = threshold_for(&dataset, age_threshold, &data)?;
            let (result, preds) = pipeline::evaluate(&model, &dataset, split, &threshold)?;
            write_report(&result, format, &report)?;
            if let Some(path) = dump_scores {
                preds.save(&path)?;
            }
            stdout.write_all(result.render_table().as_bytes())?;
        }
        Command::Audit {
            predictions,
            data,
            split,
            report,
            format,
            age_threshold,
        } => {
            let preds = PredictionFile::load(&predictions)?;
            let dataset = load_dataset(&data)?;
            let threshold = threshold_for(&dataset, age_threshold, &data)?;
            let result = pipeline::audit(&preds, &dataset, split, &threshold)?;
            write_report(&result, format, &report)?;
            stdout.write_all(result.render_table().as_bytes())?;
        }
        Command::Describe { data, age_threshold } => {
            let dataset = load_dataset(&data)?;
            let threshold = threshold_for(&dataset, age_threshold, &data)?;
            stdout.write_all(dataset.describe(&threshold).render().as_bytes())?;
        }
    }
    Ok(())
}

fn threshold_for(data: &Dataset, explicit: Option<f64>, path: &Path) -> anyhow::Result<biasaware::Threshold> {
    dataset_threshold(data, explicit)
        .with_context(|| format!("{}: no age threshold; pass --age-threshold", path.display()))
}

fn write_report(report: &SubgroupReport, format: Format, path: &Path) -> anyhow::Result<()> {
    let text = match format {
        Format::Table => report.render_table(),
        Format::Kv => report.to_kv().render(),
    };
    write_atomic(path, text.as_bytes())?;
    Ok(())
}
