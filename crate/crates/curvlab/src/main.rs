use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curvlab::run::{run_file, RunOptions};
use curvlab::suite::run_suite;

#[derive(Parser)]
#[command(
    name = "curvlab",
    version,
    about = "Mollified Ricci bounds and optimal transport experiments on the 2-torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        /// Exit with status 1 when the verdict differs from the expected one.
        #[arg(long)]
        assert: bool,
        /// Output directory (default: the scenario's output_dir, else out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every scenario file in a directory.
    Suite {
        dir: PathBuf,
        /// Root for per-scenario outputs and suite_summary.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    curvlab::configure_threads();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, assert, out } => match run_file(&scenario, &RunOptions { out, assert }) {
            Ok(report) => {
                println!("{}", report.summary_line());
                if report.manifest.error.is_some() {
                    eprintln!("manifest: {}", report.out_dir.join("manifest.json").display());
                }
                report.exit_code
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Suite { dir, out } => match run_suite(&dir, &out) {
            Ok(report) => {
                for r in &report.rows {
                    let mark = if r.passed { "PASS" } else { "FAIL" };
                    println!(
                        "{mark} {} ({}): verdict {} expected {} {}",
                        r.name, r.file, r.verdict, r.expected, r.message
                    );
                }
                println!(
                    "{} of {} scenarios passed; summary in {}",
                    report.rows.iter().filter(|r| r.passed).count(),
                    report.rows.len(),
                    report.summary_path.display()
                );
                report.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
