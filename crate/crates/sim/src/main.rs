use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use panelchain::ledger::ChainExport;
use panelchain_sim::{audit_export, load_scenario, read_report, run, write_run, ScenarioError};

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_FINDINGS: u8 = 3;

#[derive(Parser)]
#[command(name = "panelchain", version, about = "Solar panel recycling ledger simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write chain.json and report.json.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Audit an exported chain.
    Audit {
        chain: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Print the report of a finished run.
    Report {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

fn scenario_exit(e: &ScenarioError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        ScenarioError::Io { .. } => ExitCode::from(EXIT_USAGE),
        _ => ExitCode::from(EXIT_INVALID),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let mut sc = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return scenario_exit(&e),
            };
            if let Some(seed) = seed {
                sc.seed = seed;
            }
            let output = match run(&sc) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INVALID);
                }
            };
            if let Err(e) = write_run(&output, &out) {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_USAGE);
            }
            let r = &output.report;
            println!(
                "{}: {} blocks, {} transactions, head {}",
                r.name, r.blocks, r.transactions, r.head
            );
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Command::Audit { chain, format } => {
            let export = match ChainExport::read(&chain) {
                Ok(x) => x,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INVALID);
                }
            };
            let report = audit_export(&export);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("serializes")),
                _ => print!("{}", report.to_table()),
            }
            if report.is_clean() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FINDINGS)
            }
        }
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                println!(
                    "ok: {} ({} actors, {} agreements, {} ticks)",
                    s.name,
                    s.actors.len(),
                    s.agreements.len(),
                    s.duration_ticks
                );
                ExitCode::SUCCESS
            }
            Err(e) => scenario_exit(&e),
        },
        Command::Report { run_dir, format } => {
            let report = match read_report(&run_dir) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            match format {
                Format::Table => print!("{}", report.to_table()),
                Format::Json => println!("{}", report.to_json()),
                Format::Csv => match report.to_csv() {
                    Ok(s) => print!("{s}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_USAGE);
                    }
                },
            }
            ExitCode::SUCCESS
        }
    }
}
