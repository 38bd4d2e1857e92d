use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use laycon::cli::{cmd_certify, cmd_run, cmd_sweep, Scenario};

#[derive(Parser)]
#[command(name = "laycon", version, about = "Layered MPC / reference-governor / ISS certificates and HESS simulation")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute offline certificates and write certificate.json
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Simulate one seed and write trajectory, monitor and summary files
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run seeds 0..n in parallel and write aggregate.json
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let code = match args.cmd {
        Cmd::Certify { config, out } => cmd_certify(&config, &out),
        Cmd::Run {
            scenario,
            config,
            seed,
            out,
        } => match scenario.parse::<Scenario>() {
            Ok(s) => cmd_run(s, config.as_deref(), seed, &out),
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Cmd::Sweep { config, seeds, out } => cmd_sweep(&config, seeds, &out),
    };
    ExitCode::from(code as u8)
}
