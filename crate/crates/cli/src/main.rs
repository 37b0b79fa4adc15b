use clap::{Parser, Subcommand};
use quiver_wp_cli::run::{run_file, summary};
use quiver_wp_cli::suites::{run_check, CheckOptions};
use quiver_wp::scenario::{parse_backend_override, BackendSpec};
use quiver_wp_cli::{exit_code_for, EXIT_INPUT, EXIT_OK, EXIT_VIOLATION};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "quiver-wp", version, about = "Quiver vortex moduli: deformation complexes and the L2 metric")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the stages requested by a scenario file and write report.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `point` or `torus:N[:area]`.
        #[arg(long)]
        backend_override: Option<String>,
        /// Also write tensors as CSV tables.
        #[arg(long)]
        csv: bool,
    },
    /// Run invariant suites and print one line per check.
    Check {
        /// adjointness, hodge, harmonicity, wepr, boxr, torus-crosscheck or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Grid modes for the complex-level torus checks.
        #[arg(long, default_value_t = 4)]
        modes: usize,
        /// Grid modes for the fiber-integral cross-check.
        #[arg(long, default_value_t = 16)]
        crosscheck_modes: usize,
        /// `torus:N` sets the grid modes of the complex-level checks.
        #[arg(long)]
        backend_override: Option<String>,
        /// Also write the summary as check.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { scenario, out, seed, backend_override, csv } => {
            let (code, report) = run_file(&scenario, &out, seed, backend_override.as_deref(), csv);
            if let Some(r) = report {
                println!("{}", summary(&r));
            }
            code
        }
        Cmd::Check { suite, seed, mut modes, crosscheck_modes, backend_override, out } => {
            if let Some(o) = backend_override {
                match parse_backend_override(&o, &BackendSpec::Point) {
                    Ok(BackendSpec::Torus { modes: m, .. }) => modes = m,
                    Ok(BackendSpec::Point) => {
                        eprintln!("error: check always covers the point backend; the override takes `torus:N`");
                        return ExitCode::from(EXIT_INPUT as u8);
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_INPUT as u8);
                    }
                }
            }
            match run_check(&suite, seed, &CheckOptions { modes, crosscheck_modes }) {
                Ok(sum) => {
                    print!("{}", sum.to_text());
                    if let Some(dir) = out {
                        let text = serde_json::to_string_pretty(&sum).expect("summary serializes") + "\n";
                        if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("check.json"), text)) {
                            eprintln!("error: cannot write check.json: {e}");
                            return ExitCode::from(EXIT_INPUT as u8);
                        }
                    }
                    if sum.passed() {
                        EXIT_OK
                    } else {
                        EXIT_VIOLATION
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code_for(&e)
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
