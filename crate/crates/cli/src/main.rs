use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mge_cli::commands::{self, AnalyzeOptions};
use mge_cli::{exit, CliError, CliResult, Context, RunConfig};

/// Training-free model generation and evolution.
#[derive(Debug, Parser)]
#[command(name = "mge", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides [output].dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for training, generation and evolution.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "MGE_WORKERS")]
    workers: Option<usize>,
    /// Progress on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the base model.
    Train,
    /// Spectrum report of a model.
    Analyze {
        /// Model file; defaults to the trained base.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Noise scale of the band-sensitivity probe.
        #[arg(long, default_value_t = 0.2)]
        band_scale: f64,
        /// Fraction of positions marked unimportant per band.
        #[arg(long, default_value_t = 0.1)]
        mask_fraction: f64,
    },
    /// Generate a pool from the base model.
    Generate {
        /// Base model file; defaults to the trained base.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Pool size; overrides [generator].count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Evolve a population seeded from the base model.
    Evolve {
        /// Base model file; defaults to the trained base.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Transfer and robust-accuracy attacks on a pool.
    Attack {
        /// Pool directory; defaults to the generated pool.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Consolidated tables for one or more pools.
    Report {
        /// Pool directories; defaults to the generated and evolved pools.
        #[arg(long = "pool")]
        pools: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let common = cli.common;
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let ctx = Context::new(cfg, common.out, common.verbose);

    match cli.command {
        Command::Train => {
            let o = commands::cmd_train(&ctx)?;
            println!(
                "trained {} -> {} (validation {:.4}, test {:.4})",
                o.record.network.param_count(),
                o.base_path.display(),
                o.record.accuracy.validation,
                o.record.accuracy.test
            );
        }
        Command::Analyze {
            model,
            band_scale,
            mask_fraction,
        } => {
            let opts = AnalyzeOptions {
                band_scale,
                mask_fraction,
                ..AnalyzeOptions::default()
            };
            let o = commands::cmd_analyze(&ctx, model.as_deref(), &opts)?;
            for (f, a) in &o.decay {
                println!("fill={f:.2} accuracy={a:.4}");
            }
        }
        Command::Generate { base, count } => {
            let o = commands::cmd_generate(&ctx, base.as_deref(), count)?;
            println!(
                "pool {} -> {} ({} models, {} attempts)",
                o.manifest.pool_id,
                o.dir.display(),
                o.manifest.members.len(),
                o.manifest.attempts
            );
        }
        Command::Evolve { base } => {
            let o = commands::cmd_evolve(&ctx, base.as_deref())?;
            println!(
                "best {} (F={:.6}) after {} generations -> {}",
                o.outcome.best.id(),
                o.outcome.best.fitness.total,
                o.outcome.history.len() - 1,
                o.dir.display()
            );
        }
        Command::Attack { pool } => {
            let o = commands::cmd_attack(&ctx, pool.as_deref())?;
            print!("{}", o.record.transfer.to_text());
            print!("{}", o.record.robust.to_table().to_text());
        }
        Command::Report { pools } => {
            let o = commands::cmd_report(&ctx, &pools)?;
            print!("{}", o.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
