use std::process::ExitCode;

use clap::Parser;
use rskel_bench::{run, summary, write_outputs, BenchError, Command, RunConfig};

/// Desk-scale benchmarks of the strong recursive skeletonization solver.
#[derive(Parser, Debug)]
#[command(name = "rskel", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[command(flatten)]
    config: RunConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli.command, &cli.config)
        .and_then(|reports| write_outputs(cli.command, &cli.config, &reports).map(|out| (reports, out)));
    match result {
        Ok((reports, out)) => {
            for r in &reports {
                println!("{}", summary(r));
            }
            println!("wrote {} and {}", out.csv.display(), out.json.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, BenchError::Config(_)) { 2 } else { 1 })
        }
    }
}
