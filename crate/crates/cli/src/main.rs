use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoi_contact::harness::{self, CHECKPOINT_FILE};
use hoi_contact::{Result, RunConfig};

#[derive(Parser)]
#[command(name = "hoi-contact", version, about = "Interaction detection with body-part contact segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train and eval splits to the data directory.
    Gen(Common),
    /// Train and write a checkpoint plus a JSON-lines loss log.
    Train(Common),
    /// Score a checkpoint on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train baseline, +CPAM, +H-O and +M-G and tabulate their metrics.
    Ablate(Common),
    /// Train across the (alpha, beta) loss-weight grid.
    SweepLoss(Common),
    /// Draw prediction overlays as PNG files.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sample ids; the first four eval samples when omitted.
        #[arg(long = "id")]
        ids: Vec<String>,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn print_json<S: serde::Serialize>(v: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ck = |cfg: &RunConfig, p: Option<PathBuf>| p.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE));
    match cli.command {
        Command::Gen(c) => print_json(&harness::cmd_gen(&c.load()?)?),
        Command::Train(c) => print_json(&harness::cmd_train(&c.load()?)?),
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            print_json(&harness::cmd_eval(&cfg, &ck(&cfg, checkpoint))?)
        }
        Command::Ablate(c) => {
            let rows = harness::cmd_ablate(&c.load()?)?;
            print!("{}", harness::ablation_table(&rows));
            Ok(())
        }
        Command::SweepLoss(c) => {
            let rows = harness::cmd_sweep_loss(&c.load()?)?;
            print!("{}", harness::sweep_table(&rows));
            Ok(())
        }
        Command::Viz { common, checkpoint, ids } => {
            let cfg = common.load()?;
            for p in harness::cmd_viz(&cfg, &ck(&cfg, checkpoint), &ids)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
