use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use optomech_cli::config::{parse_config, validate, Format};
use optomech_cli::output::Writer;
use optomech_cli::{scenarios, CliError};

/// Optomechanical quantum Otto engine simulator.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Output format (overrides `output.format`).
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads for parameter sweeps.
    #[arg(long)]
    threads: Option<usize>,
    /// Treat validation warnings as errors.
    #[arg(long)]
    strict: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut config = parse_config(&args.config)?;
    if let Some(dir) = args.output {
        config.output.dir = dir;
    }
    if let Some(format) = args.format {
        config.output.format = format;
    }
    let validated = validate(config, args.strict)?;
    for w in &validated.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    let mut writer = Writer::new(&validated.config.output.dir, &validated.config)?;
    let summary = scenarios::run(&validated, &mut writer)?;
    for line in summary {
        println!("{line}");
    }
    for path in writer.written() {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
