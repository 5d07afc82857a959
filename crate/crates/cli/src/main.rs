use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use twistlab_cli::output::to_json;
use twistlab_cli::{execute, threads_from_env, Command, Invocation};

/// Run a twistlab experiment from a cfg/1 config.
///
/// Exit status: 0 on success, 2 when a verification check fails (outputs are
/// still written), 1 on configuration or runtime errors. The worker count
/// is taken from RTL_THREADS.
#[derive(Parser, Debug)]
#[command(name = "twistlab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Path to the JSON config.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides output_dir).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Master seed (overrides seed).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprint!("{}", String::from_utf8_lossy(&to_json(&e.report())));
            return ExitCode::from(1);
        }
    };
    let inv = Invocation { command: Some(cli.command), config: cli.config, out: cli.out, seed: cli.seed, threads };
    let result = execute(&inv);
    if let Some(err) = &result.error {
        eprint!("{}", String::from_utf8_lossy(&to_json(err)));
    }
    if let Some(m) = &result.manifest {
        for c in m.checks.iter().filter(|c| !c.pass) {
            eprintln!("check failed: {} = {:e}", c.name, c.value);
        }
        if let Some(dir) = &result.output_dir {
            println!("{}", dir.join("manifest.json").display());
        }
    }
    ExitCode::from(result.exit_code as u8)
}
