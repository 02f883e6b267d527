use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pluripot::scenario::{exit_code, run_scenario, Scenario};

#[derive(Parser)]
#[command(name = "pluripot", version, about = "Run pluripotential-theory scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its report bundle.
    Run {
        scenario: PathBuf,
        /// Output directory; without it only the manifest is printed.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario resolution.
        #[arg(long)]
        resolution: Option<usize>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write the CSV projections of the reports.
        #[arg(long)]
        csv: bool,
    },
    /// Parse and validate a scenario without running it.
    Check { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check { scenario } => match Scenario::load(&scenario) {
            Ok(_) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&Err(e))
            }
        },
        Command::Run { scenario, out, resolution, threads, csv } => {
            let sc = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit_code(&Err(e)) as u8);
                }
            };
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(t) = threads {
                builder = builder.num_threads(t.max(1));
            }
            let pool = match builder.build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot start worker pool: {e}");
                    return ExitCode::from(1);
                }
            };
            let outcome = pool.install(|| run_scenario(&sc, resolution));
            match &outcome {
                Ok(bundle) => {
                    if let Some(dir) = &out {
                        if let Err(e) = bundle.write_to(dir, csv) {
                            eprintln!("error: {e}");
                            return ExitCode::from(1);
                        }
                    }
                    print!("{}", bundle.manifest_json());
                }
                Err(e) => eprintln!("error: {e}"),
            }
            exit_code(&outcome)
        }
    };
    ExitCode::from(code as u8)
}
