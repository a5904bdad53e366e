use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mpode::harness::config::{parse_format, ExperimentConfig};
use mpode::harness::sgd_demo::{run_sgd_demo, SgdConfig};
use mpode::harness::sweep::{run_sweep, write_sweep_csv, SweepConfig, SweepField};
use mpode::harness::table::{run_table, write_table_csv, TableConfig};
use mpode::{ExecMode, Scheme, ScalingPolicy};

#[derive(Parser)]
#[command(name = "mpode", version, about = "Mixed-precision ODE solves and discrete adjoints")]
struct Cli {
    /// Run independent cells one after another instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Poly,
    Mlp,
}

#[derive(Subcommand)]
enum Command {
    /// Relative errors of the polynomial-decay test problem for each format and policy.
    Table {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        #[arg(long, default_value = "rk4", value_parser = parse_scheme)]
        scheme: Scheme,
    },
    /// Errors against the float64 same-scheme reference over a list of step counts.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048,4096")]
        n: Vec<usize>,
        #[arg(long, default_value = "rk4", value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long, default_value = "float16")]
        fmt: String,
        #[arg(long, default_value = "dynamic", value_parser = parse_policy)]
        policy: ScalingPolicy,
        #[arg(long, value_enum, default_value = "poly")]
        field: FieldArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains an MLP field on a linear teacher and logs the loss-scale trace.
    SgdDemo {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value = "float16")]
        fmt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward and backward pass described by a TOML file.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    Scheme::from_name(s).ok_or_else(|| format!("unknown scheme {s:?}; expected euler or rk4"))
}

fn parse_policy(s: &str) -> Result<ScalingPolicy, String> {
    ScalingPolicy::from_name(s).ok_or_else(|| format!("unknown policy {s:?}; expected none, safe or dynamic"))
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let mode = if cli.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    match cli.command {
        Command::Table { out, steps, scheme } => {
            let config = TableConfig {
                steps,
                scheme,
                ..TableConfig::default()
            };
            let rows = run_table(&config, mode)?;
            let mut w = create(&out)?;
            write_table_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Sweep {
            n,
            scheme,
            fmt,
            policy,
            field,
            seed,
            out,
        } => {
            let field = match field {
                FieldArg::Poly => SweepField::mild_poly(),
                FieldArg::Mlp => match SweepField::default_mlp() {
                    SweepField::Mlp { widths, x, .. } => SweepField::Mlp { widths, seed, x },
                    other => other,
                },
            };
            let config = SweepConfig {
                field,
                schemes: vec![scheme],
                formats: vec![parse_format(&fmt)?],
                policy,
                steps: n,
                ..SweepConfig::default()
            };
            let rows = run_sweep(&config, mode)?;
            let mut w = create(&out)?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::SgdDemo { steps, fmt, seed, out } => {
            let config = SgdConfig {
                steps,
                seed,
                ..SgdConfig::for_format(parse_format(&fmt)?)
            };
            let result = run_sgd_demo(&config, mode)?;
            let mut w = create(&out)?;
            result.write_csv(&mut w)?;
            w.flush()?;
            eprintln!("final held-out loss {:e}", result.final_loss);
        }
        Command::Solve { config } => {
            let config = ExperimentConfig::load(&config)?;
            let (traj, grads) = config.solve()?;
            let mut w = create(&config.output)?;
            grads.write_csv(&mut w)?;
            w.flush()?;
            if let Some(path) = &config.trajectory {
                let mut w = create(path)?;
                traj.write_csv(&mut w)?;
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
