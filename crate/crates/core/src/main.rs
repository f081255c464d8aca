use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coma_core::harness::{
    describe_scenario, format_table, oracle_check, run_ablation_suite, run_experiment, write_oracle_report,
    ExperimentConfig, Scenario,
};
use coma_core::Error;

#[derive(Parser)]
#[command(name = "coma", version, about = "Multi-agent actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm variant over all trials.
    Run(RunArgs),
    /// Train every listed variant and tabulate them with the heuristic.
    Ablate(RunArgs),
    /// Print the structure of a scenario file.
    Describe {
        scenario: PathBuf,
    },
    /// Exact advantage and baseline checks on an enumerable scenario.
    OracleCheck {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the advantage report CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(short, long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// `key=value` settings applied after the config file.
    overrides: Vec<String>,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(Failure::Config)?;
    cfg.apply_overrides(&args.overrides).map_err(Failure::Config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(Failure::Config)?;
    Scenario::load(&cfg.scenario).map_err(Failure::Config)?;
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let outcome = run_experiment(&cfg)?;
            print!("{}", format_table(std::slice::from_ref(&outcome.summary)));
            println!("metrics: {}", outcome.metrics_path.display());
        }
        Command::Ablate(args) => {
            let cfg = load_config(&args)?;
            let outcome = run_ablation_suite(&cfg)?;
            print!("{}", format_table(&outcome.table));
            println!("table: {}", outcome.table_path.display());
        }
        Command::Describe { scenario } => {
            print!("{}", describe_scenario(&scenario).map_err(Failure::Config)?);
        }
        Command::OracleCheck { scenario, gamma, seed, output } => {
            if !(0.0..1.0).contains(&gamma) {
                return Err(Failure::Config(Error::Config(format!("gamma {gamma} must lie in [0, 1)"))));
            }
            Scenario::load(&scenario).map_err(Failure::Config)?;
            let check = oracle_check(&scenario, gamma, seed)?;
            println!("rows: {}", check.report.rows.len());
            println!("argmax agreement: {:.6}", check.report.argmax_agreement);
            println!("max |baseline contribution|: {:.3e}", check.max_baseline_contribution);
            match output {
                Some(path) => {
                    write_oracle_report(&check, &path)?;
                    println!("report: {}", path.display());
                }
                None => check.report.write_csv(std::io::stdout())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
