//! Command-line pipeline: synth, extract, train, predict, evaluate and
//! plot-filterbank over a data directory.
//!
//! ```text
//! <data_dir>/records/<id>/   header.txt, ch01.f32 .. ch13.f32, arousal.i8, pred.f32
//! <data_dir>/features/<id>.feat
//! <data_dir>/models/         model.ckpt or foldN.ckpt, loss*.csv, ensemble.txt, cv.*
//! <data_dir>/eval/           report.txt, report.csv
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Context;
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "somnoscat", version, about = "Arousal detection pipeline for PSG records")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact root; falls back to the config file, then SOMNOSCAT_DATA_DIR.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-record work (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic records with arousal annotations.
    Synth {
        #[arg(long)]
        records: Option<usize>,
        /// Record length in seconds (multiple of 5).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Compute per-window feature matrices for every record.
    Extract {
        /// physio75, scatter390 or all465.
        #[arg(long)]
        feature_set: Option<String>,
    },
    /// Train a model, or one model per cross-validation fold.
    Train {
        #[arg(long)]
        feature_set: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        unidirectional: bool,
        /// Pre-train on all columns, then retrain on the top-scoring ones.
        #[arg(long)]
        pretrain_select: bool,
        #[arg(long)]
        select_k: Option<usize>,
    },
    /// Write sample-level probabilities for every feature matrix.
    Predict,
    /// Score predictions against annotations.
    Evaluate,
    /// Write the filter-bank magnitude curves as CSV and SVG.
    PlotFilterbank {
        /// Output directory (default: <data_dir>/plots).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    ShowConfig,
}

/// Config file, then flag overrides.
pub fn resolve(cli: &Cli) -> CliResult<Context> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(j) = cli.jobs {
        config.jobs = j;
    }
    match &cli.command {
        Command::Synth { records, duration } => {
            if let Some(n) = records {
                config.synth.records = *n;
            }
            if let Some(d) = duration {
                config.synth.duration_s = *d;
            }
        }
        Command::Extract { feature_set } => {
            if let Some(f) = feature_set {
                config.feature_set = f.clone();
            }
        }
        Command::Train {
            feature_set,
            folds,
            epochs,
            restarts,
            unidirectional,
            pretrain_select,
            select_k,
        } => {
            if let Some(f) = feature_set {
                config.feature_set = f.clone();
            }
            if let Some(k) = folds {
                config.train.folds = *k;
            }
            if let Some(e) = epochs {
                config.train.epochs = *e;
            }
            if let Some(r) = restarts {
                config.train.restarts = *r;
            }
            if let Some(k) = select_k {
                config.train.select_k = *k;
            }
            config.net.unidirectional |= *unidirectional;
            config.train.pretrain_select |= *pretrain_select;
        }
        _ => {}
    }
    config.feature_set()?;
    let data_dir = config.resolve_data_dir(cli.data_dir.as_deref());
    Ok(Context { config, data_dir })
}

/// Runs one parsed invocation and returns a one-line summary.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let ctx = resolve(cli)?;
    Ok(match &cli.command {
        Command::Synth { .. } => {
            let ids = commands::cmd_synth(&ctx)?;
            format!("wrote {} records to {}", ids.len(), ctx.records_dir().display())
        }
        Command::Extract { .. } => {
            let s = commands::cmd_extract(&ctx)?;
            format!(
                "extracted {} records ({} skipped) into {}",
                s.written.len(),
                s.skipped.len(),
                ctx.features_dir().display()
            )
        }
        Command::Train { .. } => {
            let s = commands::cmd_train(&ctx)?;
            match s.cv {
                Some(t) => format!("trained {} fold models\n{}", s.checkpoints.len(), t.to_text()),
                None => format!("trained {}", ctx.models_dir().join(&s.checkpoints[0]).display()),
            }
        }
        Command::Predict => {
            let done = commands::cmd_predict(&ctx)?;
            format!("wrote predictions for {} records", done.len())
        }
        Command::Evaluate => commands::cmd_evaluate(&ctx)?.to_text(),
        Command::PlotFilterbank { out } => {
            let dir = out.clone().unwrap_or_else(|| ctx.data_dir.join(commands::PLOTS_DIR));
            let (csv, svg) = commands::cmd_plot_filterbank(&dir)?;
            format!("wrote {} and {}", csv.display(), svg.display())
        }
        Command::ShowConfig => ctx.config.render()?,
    })
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
