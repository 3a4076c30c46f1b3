use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fishgame_cli::{parse_with_overrides, run, CliError, Command, Invocation};

/// Fish-school migration game: simulation, HJB solves, path-integral
/// estimates and closed-form strategies.
#[derive(Parser)]
#[command(name = "fishgame", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "fishgame-out")]
    out: PathBuf,

    /// Mode override such as `strategy=paper-verbatim`; repeatable.
    #[arg(long = "mode", global = true, value_name = "KEY=VALUE")]
    modes: Vec<String>,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse_with_overrides(&text, cli.seed, &cli.modes)?;
    let invocation = Invocation { config_path: path.clone(), seed_override: cli.seed, mode_overrides: cli.modes.clone() };
    run(cli.command, &config, &cli.out, &invocation)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FISHGAME_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fishgame: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
