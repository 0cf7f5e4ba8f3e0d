//! Command-line driver: configuration, checkpoints, and the train /
//! ablate-beta / stage-study / verify / analyze commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

use checkpoint::Checkpoint;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "gorl", version, about = "Latent Gaussian policies with generative action decoders")]
pub struct Cli {
    /// Run configuration (flat key = value file).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "gorl_out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub env: Option<String>,
    /// identity | fm | diffusion
    #[arg(long, global = true)]
    pub decoder: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Staged training run.
    Train,
    /// One training run per KL coefficient.
    AblateBeta {
        /// Comma-separated betas; defaults to `beta_list` from the config.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Retrain a fresh encoder against each stage's decoder snapshot in --out.
    StageStudy,
    /// Numeric checks of the policy-gradient and improvement lemmas.
    Verify,
    /// Action-density analysis of a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output tag; defaults to the checkpoint file stem.
        #[arg(long)]
        tag: Option<String>,
        /// Comma-separated raw state; defaults to the configured rule.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        state: Option<Vec<f64>>,
    },
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = &cli.env {
        cfg.env = e.clone();
    }
    if let Some(d) = &cli.decoder {
        cfg.decoder = d.clone();
    }
    cfg.train_config()?;
    Ok(cfg)
}

/// Cap the rayon pool from `GORL_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("GORL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::config("GORL_THREADS", format!("expected a positive integer, got '{v}'")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Execute one parsed invocation; returns a one-line summary for stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    configure_threads()?;
    let cfg = resolve_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Train => {
            let o = commands::cmd_train(&cfg, out)?;
            Ok(format!(
                "trained {} steps, final return {:.4}, modes {}",
                o.summary.total_steps, o.summary.final_return, o.summary.mode_count
            ))
        }
        Command::AblateBeta { betas } => {
            let list = betas.clone().unwrap_or_else(|| cfg.beta_list.clone());
            let rows = commands::cmd_ablate_beta(&cfg, &list, out)?;
            Ok(rows
                .iter()
                .map(|r| format!("beta {:e}: kl {:.4} return {:.4}", r.beta, r.final_kl_to_prior, r.final_return))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::StageStudy => {
            let rows = commands::cmd_stage_study(&cfg, out)?;
            Ok(rows
                .iter()
                .map(|r| format!("stage {} ({}): return {:.4}", r.stage, r.decoder, r.final_return))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Verify => {
            let r = commands::cmd_verify(cfg.seed, out)?;
            Ok(format!("{} checks passed", r.checks.len()))
        }
        Command::Analyze { checkpoint, tag, state } => {
            let ck = Checkpoint::load(checkpoint)?;
            let tag = tag.clone().unwrap_or_else(|| {
                checkpoint
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "analysis".into())
            });
            let r = commands::cmd_analyze(&ck, &tag, state.clone().map(|s| (s, "explicit".to_string())), out)?;
            Ok(format!("{} modes at {:?}", r.modes, r.locations))
        }
    }
}
