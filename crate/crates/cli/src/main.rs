use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ifp_dispatch_cli::commands::{self, SweepParam};
use ifp_dispatch_cli::{exit, scenario, CliError};

#[derive(Parser)]
#[command(name = "ifp-dispatch", version, about = "Distributed resource allocation over switching digraphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print gain and sampling bounds and the per-node certificate margins.
    Design { scenario: PathBuf },
    /// Simulate and write trajectory, event and summary files.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate and check conservation, passivity and invariance properties.
    Verify { scenario: PathBuf },
    /// Run the scenario once per parameter value and tabulate terminal metrics.
    Sweep {
        scenario: PathBuf,
        /// beta, ts or c
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match cli.command {
        Command::Design { scenario } => {
            let cfg = scenario::load(&scenario)?;
            let report = commands::design(&cfg)?;
            for line in &report.lines {
                writeln!(out, "{line}").map_err(io)?;
            }
            Ok(if report.valid { exit::OK } else { exit::INVALID_CERTIFICATE })
        }
        Command::Run { scenario, out: dir } => {
            let cfg = scenario::load(&scenario)?;
            let traj = commands::run(&cfg, &dir)?;
            let s = traj.summary();
            writeln!(out, "wrote {}", dir.display()).map_err(io)?;
            writeln!(out, "max_dist_to_lstar={:e}", s.max_dist_to_lstar).map_err(io)?;
            match &traj.abort {
                Some(e) => {
                    eprintln!("run aborted: {e}");
                    Ok(exit::ABORT)
                }
                None => Ok(exit::OK),
            }
        }
        Command::Verify { scenario } => {
            let cfg = scenario::load(&scenario)?;
            let report = commands::verify(&cfg)?;
            for check in &report.checks {
                writeln!(out, "{check}").map_err(io)?;
            }
            Ok(if report.passed() { exit::OK } else { exit::PROPERTY_FAILURE })
        }
        Command::Sweep {
            scenario,
            param,
            values,
            workers,
            out: table,
        } => {
            let cfg = scenario::load(&scenario)?;
            let param = SweepParam::parse(&param)?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Usage("--values needs a list of finite numbers".into()));
            }
            let rows = commands::sweep(&cfg, param, &values, workers)?;
            match table {
                Some(path) => {
                    let file = std::fs::File::create(&path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    commands::write_sweep(std::io::BufWriter::new(file), param, &rows).map_err(io)?;
                }
                None => commands::write_sweep(&mut out, param, &rows).map_err(io)?,
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
