//! `adda`: pre-train, adapt, evaluate and draw figures from IDX datasets.
//!
//! Exit codes: 0 success, 1 missing or unreadable input, 2 malformed input
//! (bad IDX magic, checkpoint fingerprint, config), 3 numerical divergence.
//! Failures print one line to stderr:
//! `adda: error reason=<code> exit=<n> detail="<message>"`.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use adda_core::eval::TsneConfig;
use adda_core::pipeline::RunConfig;
use adda_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

use commands::TsneArgs;
use context::Context;

const DATA_DIR_ENV: &str = "ADDA_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "adda",
    version,
    about = "Adversarial discriminative domain adaptation for digits"
)]
struct Cli {
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EmbedOpts {
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Points sampled per domain.
    #[arg(long, default_value_t = 1000)]
    sample_cap: usize,
}

impl EmbedOpts {
    fn config(&self, seed: u64) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            sample_cap: self.sample_cap,
            seed,
            ..TsneConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train encoder and classifier on a labeled source domain.
    Pretrain {
        #[arg(long)]
        source: String,
    },
    /// Adversarially fit a target encoder from a pre-trained checkpoint.
    Adapt {
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        /// Checkpoint written by `pretrain`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score an encoder and classifier on one IDX pair.
    Eval {
        #[arg(long)]
        encoder: PathBuf,
        /// Defaults to the encoder checkpoint.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        dataset: String,
    },
    /// Full protocol with confusion matrices and embeddings.
    Report {
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        /// Skip the t-SNE figures.
        #[arg(long)]
        no_tsne: bool,
        #[command(flatten)]
        embed: EmbedOpts,
    },
    /// Write a shifted or sliced copy of an IDX pair.
    Synth {
        #[arg(long)]
        dataset: String,
        /// Name of the new pair.
        #[arg(long)]
        name: String,
        /// Shift spec JSON, e.g. '{"kind":"invert","seed":0}'. Falls back to
        /// the config's `shift`; without either the slice is copied as is.
        #[arg(long)]
        shift: Option<String>,
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long)]
        take: Option<usize>,
    },
    /// Embed encoder features of one or two datasets.
    Tsne {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Second dataset, drawn as hollow squares.
        #[arg(long)]
        target: Option<String>,
        /// Encoder for the second dataset; defaults to `--encoder`.
        #[arg(long)]
        target_encoder: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedOpts,
    },
    /// Confusion matrix figure and tables from a predictions file.
    Confusion {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "confusion")]
        title: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pretrain { .. } => "pretrain",
            Command::Adapt { .. } => "adapt",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
            Command::Synth { .. } => "synth",
            Command::Tsne { .. } => "tsne",
            Command::Confusion { .. } => "confusion",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if matches!(e, Error::Io { .. }) {
        1
    } else if e.is_numeric() {
        3
    } else {
        2
    }
}

fn effective_config(cli: &Cli) -> Result<(RunConfig, PathBuf, PathBuf)> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    if cfg.data_dir.is_none() {
        cfg.data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    }
    let data_dir = cfg.data_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("adda-out"));
    Ok((cfg, data_dir, out))
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, data_dir, out) = effective_config(&cli)?;
    let seed = cfg.seed;
    let mut ctx = Context::new(cli.command.name(), cfg, data_dir, out)?;
    match &cli.command {
        Command::Pretrain { source } => commands::pretrain(&mut ctx, source)?,
        Command::Adapt {
            source,
            target,
            checkpoint,
        } => commands::adapt(&mut ctx, source, target, checkpoint)?,
        Command::Eval {
            encoder,
            classifier,
            dataset,
        } => commands::eval(&mut ctx, encoder, classifier.as_deref(), dataset)?,
        Command::Report {
            source,
            target,
            no_tsne,
            embed,
        } => {
            let tsne = (!no_tsne).then(|| embed.config(seed));
            commands::report(&mut ctx, source, target, tsne)?
        }
        Command::Synth {
            dataset,
            name,
            shift,
            skip,
            take,
        } => commands::synth(&mut ctx, dataset, name, shift.as_deref(), *skip, *take)?,
        Command::Tsne {
            encoder,
            dataset,
            target,
            target_encoder,
            embed,
        } => commands::tsne(
            &mut ctx,
            TsneArgs {
                encoder,
                dataset,
                target: target.as_deref(),
                target_encoder: target_encoder.as_deref(),
                cfg: embed.config(seed),
            },
        )?,
        Command::Confusion { predictions, title } => commands::confusion(&mut ctx, predictions, title)?,
    }
    ctx.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let detail = serde_json::to_string(&e.to_string()).unwrap_or_default();
            eprintln!("adda: error reason={} exit={code} detail={detail}", e.reason());
            ExitCode::from(code)
        }
    }
}
