use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stochprod_core::commands::{cmd_simulate, cmd_solve, cmd_sweep, cmd_verify, CommandError, SweepParam};
use stochprod_core::config::RunConfig;

#[derive(Parser)]
#[command(name = "stochprod", version, about = "Optimal production control for multi-product inventories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the radial equation and write the solution table and figures.
    Solve(Common),
    /// Simulate controlled inventory paths and estimate the expected cost.
    Simulate(Common),
    /// Run the invariant checks and write report.txt.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Check this radial_solution.csv instead of solving.
        #[arg(long, hide = true)]
        solution: Option<PathBuf>,
    },
    /// Re-solve for each value of one parameter and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of sigma, alpha, radius, n_goods, cost.c.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        /// Also estimate the expected cost by simulation for each value.
        #[arg(long)]
        simulate: bool,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CommandError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    Ok((cfg, out))
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<u8, CommandError> {
    match cli.command {
        Command::Solve(common) => {
            let (cfg, out) = load(&common)?;
            let (solved, written) = cmd_solve(&cfg, &out)?;
            println!("Z0 = z(R) = {}", solved.value.z0_boundary);
            if let Some(a) = solved.agreement {
                println!(
                    "picard vs rk: u {:.3e}, u' {:.3e} ({})",
                    a.u_discrepancy,
                    a.u_prime_discrepancy,
                    if a.pass { "agree" } else { "DISAGREE" }
                );
            }
            report_written(&written);
            Ok(0)
        }
        Command::Simulate(common) => {
            let (cfg, out) = load(&common)?;
            let run = cmd_simulate(&cfg, &out)?;
            let s = run.summary;
            println!(
                "mean cost {} +/- {} over {} paths, stopped {:.4}",
                s.estimate.mean_cost, s.estimate.std_error, s.estimate.n_paths, s.estimate.fraction_stopped
            );
            println!("z(y0) - Z0 = {}, gap {}", s.z_at_y0 - s.z0_boundary, s.consistency_gap);
            report_written(&run.written);
            Ok(0)
        }
        Command::Verify { common, solution } => {
            let (cfg, out) = load(&common)?;
            let (report, path) = cmd_verify(&cfg, &out, solution.as_deref())?;
            report_written(&[path]);
            if report.overall_pass {
                println!("all checks passed");
                Ok(0)
            } else {
                for name in report.failures() {
                    eprintln!("FAILED: {name}");
                }
                Ok(1)
            }
        }
        Command::Sweep {
            common,
            param,
            values,
            simulate,
        } => {
            let param = SweepParam::parse(&param)?;
            let (cfg, out) = load(&common)?;
            let (_, path) = cmd_sweep(&cfg, param, &values, simulate, &out)?;
            report_written(&[path]);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
