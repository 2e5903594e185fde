use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use claimfreq::experiment::{parse_rows, AttributeRequest, Experiment, ExperimentConfig, Selection};
use claimfreq::models::ModelKind;
use claimfreq::training::report::loss_table;
use claimfreq::Error;

/// Claim-frequency experiments: GLMs, neural nets and transformer hybrids.
///
/// Exit status: 0 on success, 2 for input or configuration errors, 3 for
/// numerical failures.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict neural fits to this model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel fits.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and split the data, write data artifacts.
    Prepare,
    /// Fit (model, seed) pairs.
    Fit {
        #[arg(long = "model")]
        models: Vec<ModelKind>,
    },
    /// Raw and rebalanced metrics of fitted models.
    Evaluate {
        #[arg(long = "model")]
        models: Vec<ModelKind>,
    },
    /// Metrics of disjoint seed ensembles.
    Ensemble {
        #[arg(long = "model")]
        models: Vec<ModelKind>,
    },
    /// Per-row local GLM attributions on test rows.
    Attribute {
        #[arg(long = "model")]
        model: ModelKind,
        /// Model file to use instead of the experiment's own.
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Test-set positions, e.g. `0-99,250`.
        #[arg(long)]
        rows: Option<String>,
    },
    /// Markdown report from the evaluation results.
    Report,
    /// Every step from `prepare` to `report`.
    Run {
        #[arg(long = "model")]
        models: Vec<ModelKind>,
    },
}

fn selection(cli_seed: Option<u64>, models: Vec<ModelKind>) -> Selection {
    Selection {
        kinds: models,
        seeds: cli_seed.map(|s| vec![s]),
    }
}

fn run(cli: Cli) -> claimfreq::Result<()> {
    let mut exp = match &cli.config {
        Some(path) => Experiment::from_file(path)?,
        None => Experiment::new(ExperimentConfig::default(), ".")?,
    }
    .with_jobs(cli.jobs);
    if let Some(out) = cli.out {
        exp = exp.with_out(out);
    }
    match cli.command {
        Command::Prepare => {
            let s = exp.prepare()?;
            println!("raw_rows={}", s.raw_rows);
            println!("rows={}", s.rows);
            println!("train_rows={}", s.train_rows);
            println!("test_rows={}", s.test_rows);
            println!("portfolio_frequency={:.4}", s.portfolio_frequency);
        }
        Command::Fit { models } => {
            for r in exp.fit(&selection(cli.seed, models))? {
                println!(
                    "fitted {} {} parameters={} epochs={} rebalance={:.6}",
                    r.kind,
                    r.run,
                    r.parameters,
                    r.epochs.map_or("-".into(), |e| e.to_string()),
                    r.rebalance
                );
            }
        }
        Command::Evaluate { models } => {
            let e = exp.evaluate(&selection(cli.seed, models))?;
            print!("{}", loss_table(&e.rebalanced.aggregate()));
        }
        Command::Ensemble { models } => {
            let r = exp.ensemble(&selection(cli.seed, models))?;
            print!("{}", loss_table(&r.aggregate()));
        }
        Command::Attribute {
            model,
            model_file,
            rows,
        } => {
            let rows = rows.as_deref().map(parse_rows).transpose()?;
            let s = exp.attribute(&AttributeRequest {
                kind: model,
                seed: cli.seed,
                model_file,
                rows,
            })?;
            println!(
                "wrote {} rows={} max_reconstruction_error={:e}",
                s.path.display(),
                s.rows,
                s.max_reconstruction_error
            );
        }
        Command::Report => println!("wrote {}", exp.report()?.display()),
        Command::Run { models } => {
            let path = exp.run_all(&selection(cli.seed, models))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_numerical() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}
