//! `quadcap` command-line tool.
//!
//! Exit codes: 0 success, 2 analysis failure, 3 state not capturable,
//! 4 invalid configuration or arguments, 1 anything else (I/O).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quadcap::lip::GaitName;

#[derive(Debug, Parser)]
#[command(name = "quadcap", version, about = "Capturability analysis and push-recovery planning for quadrupeds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Run configuration (JSON); defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for every sampled quantity.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_parser = parse_gait)]
    gait: Option<GaitName>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute balance and capturable tubes and write the tube archive.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Plan a recovery from one state.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Tube archive produced by `analyze`.
        #[arg(long)]
        archive: Option<PathBuf>,
        /// CoM state `c_x,v_x,c_y,v_y`.
        #[arg(long, allow_hyphen_values = true)]
        state: String,
        /// Gait phase of the state.
        #[arg(long, default_value_t = 0)]
        phase: usize,
    },
    /// Simulate one push.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
        /// Push timing 1-4.
        #[arg(long, default_value_t = 1)]
        timing: usize,
        /// Velocity change `dv_x,dv_y` in m/s.
        #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
        dv: String,
    },
    /// Sweep push velocities on a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        timing: usize,
        /// `x0:x1:dx,y0:y1:dy`.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Pretty-print an archive.
    Show {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
    },
}

fn parse_gait(s: &str) -> Result<GaitName, String> {
    match s {
        "trot" => Ok(GaitName::Trot),
        "bound" => Ok(GaitName::Bound),
        "pace" => Ok(GaitName::Pace),
        other => Err(format!("unknown gait `{other}` (expected trot, bound or pace)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
