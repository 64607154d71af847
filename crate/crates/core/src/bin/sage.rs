use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sage::cli;
use sage::config::RunConfig;
use sage::{Result, SageError};

#[derive(Parser)]
#[command(name = "sage", version, about = "Semi-supervised training with simplex anchors and relational consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration file (key = value records)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `enable_gri=false` or `train.seed=3`
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: run.output_dir, or $SAGE_OUT_DIR)
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simplex anchor frame and print its verification report
    GenAnchors {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write (A, P, G) of the probe batch at every evaluation
        #[arg(long)]
        dump_graphs: bool,
    },
    /// Run the baseline / +AB / +DRP / full ladder over several seeds
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Test accuracy as one hyperparameter varies
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        param: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Diagnostic report of a checkpoint on a dataset, as JSON
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Also write (A, P, G) of the probe batch to this file
        #[arg(long)]
        dump_graph: Option<PathBuf>,
    },
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenAnchors { k, d, seed, out } => {
            print!("{}", cli::gen_anchors(k, d, seed, &out)?);
        }
        Command::Train { cfg, dump_graphs } => {
            let cfg = cfg.resolve()?;
            init_logging(&cfg.log_level);
            let out = cli::train(&cfg, dump_graphs)?;
            let r = out.final_report();
            println!("test_acc {} -> {}", r.test_acc, cfg.output_dir.display());
        }
        Command::Ablate { cfg, seeds } => {
            let cfg = cfg.resolve()?;
            init_logging(&cfg.log_level);
            let (_, summary) = cli::ablate(&cfg, seeds)?;
            for row in &summary {
                println!("{:<12} {:.4} ± {:.4}", row.variant, row.mean(), row.std());
            }
        }
        Command::Sweep { cfg, param, values, seeds } => {
            let cfg = cfg.resolve()?;
            init_logging(&cfg.log_level);
            let param: cli::SweepParam = param.parse()?;
            for row in cli::sweep(&cfg, param, &values, seeds)? {
                println!("{param}={} {:.4}", row.value, cli::mean(&row.accs));
            }
        }
        Command::Diagnose { checkpoint, dataset, config, anchors, dump_graph } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            init_logging("warn");
            let report = cli::diagnose(&checkpoint, &dataset, &cfg, anchors.as_deref(), dump_graph.as_deref())?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| SageError::Parse(e.to_string()))?;
            println!("{json}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error: usage: {first}");
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", cli::error_line(&e));
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
