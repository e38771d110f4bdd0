use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idkit_cli::commands::{self, CliError};
use idkit_cli::config::{schema_help, RunConfig};

/// Identity-conditioned diffusion at desk scale: train a conditional
/// denoiser on a toy identity dataset, generate synthetic identity sets,
/// and score them with biometric verification metrics.
#[derive(Parser)]
#[command(name = "idkit", version, after_long_help = schema_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key-value configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set train.cpd_p=0.25
    /// (repeatable; applied after the config file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser; generates and saves the toy dataset if needed.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset CSV (defaults to paths.dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint output (defaults to paths.checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training log CSV (defaults to paths.log).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate identity sets from a trained checkpoint.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained checkpoint to sample from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Context source: uniform | authentic | two-stage.
        #[arg(long)]
        mode: Option<String>,
        /// Number of identities.
        #[arg(long)]
        ids: Option<usize>,
        /// Samples per identity.
        #[arg(long = "per-id")]
        per_id: Option<usize>,
        /// Sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Samples CSV output (contexts land next to it).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Unconditional companion checkpoint (two-stage mode).
        #[arg(long = "uncond-checkpoint")]
        uncond_checkpoint: Option<PathBuf>,
        /// Reference dataset (authentic mode).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Encode a samples CSV and compute verification metrics.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Samples CSV to evaluate.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Report output path (histogram lands next to it).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Encoder seed override (must match the training encoder).
        #[arg(long = "encoder-seed")]
        encoder_seed: Option<u64>,
    },
    /// Merge evaluation reports into a comparison table.
    Report {
        /// Report JSON files, one table row each.
        files: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_sets(raw: &[String]) -> Result<Vec<(String, String)>, CliError> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {s:?}")))
        })
        .collect()
}

fn push_path(sets: &mut Vec<(String, String)>, key: &str, value: Option<PathBuf>) {
    if let Some(v) = value {
        sets.push((key.to_string(), v.display().to_string()));
    }
}

/// Derive a sibling path `<file>.<suffix>` next to `primary`.
fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let mut name = primary
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    name.push('.');
    name.push_str(suffix);
    primary.with_file_name(name)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { cfg, dataset, out, log } => {
            let mut sets = parse_sets(&cfg.sets)?;
            push_path(&mut sets, "paths.dataset", dataset);
            push_path(&mut sets, "paths.checkpoint", out);
            push_path(&mut sets, "paths.log", log);
            let config = RunConfig::resolve(cfg.config.as_deref(), &sets)?;
            let outcome = commands::cmd_train(&config)?;
            println!(
                "trained {} steps (final loss {:.6}) -> {}",
                outcome.steps,
                outcome.final_loss,
                outcome.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Sample {
            cfg,
            checkpoint,
            mode,
            ids,
            per_id,
            seed,
            out,
            uncond_checkpoint,
            dataset,
        } => {
            let mut sets = parse_sets(&cfg.sets)?;
            push_path(&mut sets, "paths.checkpoint", checkpoint);
            if let Some(m) = mode {
                sets.push(("sample.mode".into(), m));
            }
            if let Some(n) = ids {
                sets.push(("sample.ids".into(), n.to_string()));
            }
            if let Some(m) = per_id {
                sets.push(("sample.per_id".into(), m.to_string()));
            }
            if let Some(s) = seed {
                sets.push(("seed.sample".into(), s.to_string()));
            }
            if let Some(out) = &out {
                sets.push(("paths.samples".into(), out.display().to_string()));
                // keep contexts next to an explicit samples path unless the
                // caller overrode them separately
                if !cfg.sets.iter().any(|s| s.starts_with("paths.contexts")) {
                    sets.push((
                        "paths.contexts".into(),
                        sibling(out, "contexts.csv").display().to_string(),
                    ));
                }
            }
            push_path(&mut sets, "paths.uncond_checkpoint", uncond_checkpoint);
            push_path(&mut sets, "paths.dataset", dataset);
            let config = RunConfig::resolve(cfg.config.as_deref(), &sets)?;
            let outcome = commands::cmd_sample(&config)?;
            println!(
                "wrote {} sample rows -> {} (contexts: {})",
                outcome.rows,
                outcome.samples_path.display(),
                outcome.contexts_path.display()
            );
            Ok(())
        }
        Command::Eval {
            cfg,
            samples,
            out,
            encoder_seed,
        } => {
            let mut sets = parse_sets(&cfg.sets)?;
            push_path(&mut sets, "paths.samples", samples);
            if let Some(out) = &out {
                sets.push(("paths.report".into(), out.display().to_string()));
                if !cfg.sets.iter().any(|s| s.starts_with("paths.histogram")) {
                    sets.push((
                        "paths.histogram".into(),
                        sibling(out, "hist.csv").display().to_string(),
                    ));
                }
            }
            if let Some(s) = encoder_seed {
                sets.push(("seed.encoder".into(), s.to_string()));
            }
            let config = RunConfig::resolve(cfg.config.as_deref(), &sets)?;
            let outcome = commands::cmd_eval(&config)?;
            println!(
                "eer={:.4} fdr={:.3} -> {}",
                outcome.report.eer,
                outcome.report.fdr,
                outcome.report_path.display()
            );
            Ok(())
        }
        Command::Report { files, out } => {
            let table = commands::cmd_report(&files)?;
            if let Some(out) = out {
                std::fs::write(&out, &table.csv)
                    .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
            }
            print!("{}", table.text);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
