use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hodgewave::config::RunConfig;
use hodgewave::run::Simulation;
use hodgewave::studies::{self, MsclReport};
use hodgewave::{output, CliError};

#[derive(Debug, Parser)]
#[command(name = "hodgewave", version, about = "LDG-H solvers for the 2D semilinear Hodge wave equation")]
struct Cli {
    /// Directory for output files (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write timeseries.csv (plus snapshots if enabled).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Certify the shipped Butcher tableaux and Yoshida weights.
    CheckTableaux,
    /// Convergence study under uniform refinement.
    Converge {
        #[arg(long)]
        config: PathBuf,
        /// Number of refinements after the base level.
        #[arg(long, default_value_t = 2)]
        levels: usize,
    },
    /// Multisymplectic conservation law check (or the mixed-method witness).
    MsclCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let dir = &cli.out_dir;
    std::fs::create_dir_all(dir)?;
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let mut sim = Simulation::new(cfg.clone())?;
            if cfg.vtk {
                write(dir, "field_initial.vtk", &output::vtk(&sim.space, &sim.state, "t = 0"))?;
            }
            let rows = sim.run()?;
            write(dir, "timeseries.csv", &output::timeseries_csv(&rows))?;
            if cfg.vtk {
                write(dir, "field_final.vtk", &output::vtk(&sim.space, &sim.state, &format!("t = {}", sim.state.t)))?;
            }
            if cfg.cross_section {
                let y0 = cfg.cross_section_y.unwrap_or_else(|| {
                    let ys = sim.space.mesh().vertices().iter().map(|v| v[1]);
                    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
                    0.5 * (lo + hi)
                });
                let csv = output::cross_section_csv(&sim.space, &sim.state, sim.exact.as_ref(), y0, cfg.cross_section_points);
                write(dir, "cross_section.csv", &csv)?;
            }
            let last = rows.last().expect("at least the initial row");
            println!("{} steps to t = {:.6}, H_global = {:.12e}", sim.steps_taken(), last.t, last.h_global);
        }
        Command::CheckTableaux => {
            let checks = studies::check_tableaux()?;
            let mut report = String::new();
            for c in &checks {
                println!("{}", c.line());
                report.push_str(&c.line());
                report.push('\n');
            }
            write(dir, "tableaux.txt", &report)?;
            let unexpected = checks.iter().filter(|c| !c.as_expected()).count();
            println!("{} checks, {unexpected} unexpected", checks.len());
        }
        Command::Converge { config, levels } => {
            let cfg = load(&config)?;
            let table = studies::converge(&cfg, levels)?;
            let csv = studies::converge_csv(&table);
            print!("{csv}");
            write(dir, "converge.csv", &csv)?;
        }
        Command::MsclCheck { config } => {
            let cfg = load(&config)?;
            let report = studies::mscl_check(&cfg)?;
            match &report {
                MsclReport::Multisymplectic { stated, reversed, global } => {
                    println!("max element residual (stated pairing):   {:.3e}", MsclReport::max(stated));
                    println!("max element residual (reversed pairing): {:.3e}", MsclReport::max(reversed));
                    println!("max global residual:                     {:.3e}", MsclReport::max(global));
                }
                MsclReport::Mixed { bracket } => {
                    println!("max |flux-difference bracket| over elements: {:.3e}", MsclReport::max(bracket));
                }
            }
            write(dir, "mscl.csv", &studies::mscl_csv(&report))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
