use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uacp::gradcheck::GradcheckOptions;
use uacp_cli::commands::{format_gradcheck, format_history, gradcheck_verdict, sweep_means};
use uacp_cli::{
    cmd_ablate, cmd_evaluate, cmd_generate, cmd_gradcheck, cmd_sweep_unknowns, cmd_train, CliError,
    ExperimentConfig, RunContext,
};

#[derive(Parser)]
#[command(
    name = "uacp",
    version,
    about = "Universal domain adaptation on synthetic data"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "uacp-out")]
    out: PathBuf,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic source and target datasets.
    Generate,
    /// Train and write checkpoint, loss log, per-epoch metrics and predictions.
    Train {
        /// Resume from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score the target set with a trained checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every loss ablation and print HOS / Acc_kn / Acc_unk per row.
    Ablate,
    /// Vary the number of target-private classes and record HOS.
    SweepUnknowns,
    /// Compare analytic loss gradients with finite differences.
    Gradcheck {
        /// Draws per loss.
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Multiplies analytic gradients before comparison (negative control).
        #[arg(long, default_value_t = 1.0, hide = true)]
        perturb_analytic: f64,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    ExperimentConfig::load(path)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let context = |cfg: &ExperimentConfig| RunContext {
        seed: cli.seed.unwrap_or(cfg.seed),
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Generate => {
            let cfg = load_config(cli)?;
            let s = cmd_generate(&cfg, &context(&cfg))?;
            println!(
                "split (shared / source-private / target-private): {} {} {}",
                s.n_shared, s.n_source_private, s.n_target_private
            );
            println!(
                "samples: {} source, {} target",
                s.source_samples, s.target_samples
            );
        }
        Command::Train { checkpoint } => {
            let cfg = load_config(cli)?;
            let out = cmd_train(&cfg, &context(&cfg), checkpoint.as_deref())?;
            print!("{}", format_history(&out.history));
        }
        Command::Evaluate { checkpoint } => {
            let cfg = load_config(cli)?;
            let m = cmd_evaluate(&cfg, &context(&cfg), checkpoint)?;
            print!("{}", format_history(std::slice::from_ref(&m)));
        }
        Command::Ablate => {
            let cfg = load_config(cli)?;
            let rows = cmd_ablate(&cfg, &context(&cfg))?;
            println!(
                "{:<24} {:>6} {:>7} {:>8}",
                "configuration", "HOS", "Acc_kn", "Acc_unk"
            );
            for r in rows {
                println!(
                    "{:<24} {:>6.1} {:>7.1} {:>8.1}",
                    r.configuration, r.hos, r.acc_kn, r.acc_unk
                );
            }
        }
        Command::SweepUnknowns => {
            let cfg = load_config(cli)?;
            let rows = cmd_sweep_unknowns(&cfg, &context(&cfg))?;
            println!("{:<12} {:>15} {:>6}", "method", "target_private", "HOS");
            for (method, tp, h) in sweep_means(&rows) {
                println!("{method:<12} {tp:>15} {h:>6.1}");
            }
        }
        Command::Gradcheck {
            draws,
            perturb_analytic,
        } => {
            let report = cmd_gradcheck(&GradcheckOptions {
                draws: *draws,
                seed: cli.seed.unwrap_or(0),
                analytic_scale: *perturb_analytic,
                ..GradcheckOptions::default()
            })?;
            print!("{}", format_gradcheck(&report));
            gradcheck_verdict(&report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
