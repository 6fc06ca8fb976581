use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ncm_cli::runner::apply_overrides;
use ncm_cli::{run, scenarios, RunOptions};

#[derive(Parser)]
#[command(name = "ncm", version, about = "Energetics of a dispersively measured, driven qubit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Root directory for run artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads for sweep points (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override the integration step (ns).
    #[arg(long, global = true)]
    dt_ns: Option<f64>,

    /// Override the correlator sampling step (ns).
    #[arg(long, global = true)]
    dtc_ns: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario name.
    Run { scenario: String },
    /// Check a scenario without simulating.
    Validate { scenario: String },
    /// List built-in scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let opts = RunOptions {
        out_dir: cli.out_dir,
        dt_ns: cli.dt_ns,
        dtc_ns: cli.dtc_ns,
    };
    match cli.command {
        Command::ListScenarios => {
            for (name, _) in scenarios::BUILTIN {
                let c = scenarios::builtin(name).expect("built-in scenarios parse");
                println!("{name:<12} {}", c.scenario.description);
            }
            ExitCode::SUCCESS
        }
        Command::Validate { scenario } => match scenarios::resolve(&scenario) {
            Ok(mut cfg) => {
                apply_overrides(&mut cfg, &opts);
                let report = cfg.validate();
                print!("{}", report.render(&cfg.scenario.name));
                if report.is_ok() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Run { scenario } => {
            let result = scenarios::resolve(&scenario).and_then(|cfg| run(&cfg, &opts));
            match result {
                Ok(summary) => {
                    println!(
                        "{}: {} points, {} ledger rows, {} files in {}",
                        summary.name,
                        summary.points.len(),
                        summary.ledgers.len(),
                        summary.files.len() + 1,
                        summary.dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
