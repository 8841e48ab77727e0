use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hierctl::error::EXIT_OK;
use hierctl::{
    load_config, load_preset, run_scenario, summary, validate_config, HarnessError, RunOptions,
    PRESETS,
};

#[derive(Parser)]
#[command(
    name = "hierctl",
    version,
    about = "Hierarchical null-control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV tables and record.json.
    Run(RunArgs),
    /// Check a scenario file and list every offending field.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
    /// Print a preset as TOML.
    Preset { name: String },
    /// List the presets.
    List,
}

#[derive(Args)]
struct RunArgs {
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "preset",
        required_unless_present = "preset"
    )]
    config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory; defaults to runs/<scenario name>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Omit wall-clock timings from the record.
    #[arg(long)]
    deterministic: bool,
}

fn run(args: RunArgs) -> Result<i32, HarnessError> {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => load_preset(name)?,
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    let options = RunOptions {
        seed: args.seed,
        threads: args.threads.max(1),
        deterministic: args.deterministic,
    };
    let result = run_scenario(&cfg, options)?;
    let name = if cfg.name.is_empty() {
        cfg.kind.as_str()
    } else {
        &cfg.name
    };
    let dir = args.out.unwrap_or_else(|| PathBuf::from("runs").join(name));
    let record = result.write(&dir)?;
    // a closed pipe is not an error for a summary
    let _ = writeln!(
        io::stdout(),
        "{}output: {}",
        summary(&record),
        dir.display()
    );
    Ok(record.status.exit_code())
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let report = validate_config(&cfg);
            if report.is_ok() {
                println!("{}: ok", config.display());
                Ok(EXIT_OK)
            } else {
                Err(HarnessError::Config(report.issues))
            }
        }
        Command::Preset { name } => {
            print!("{}", load_preset(&name)?.to_toml());
            Ok(EXIT_OK)
        }
        Command::List => {
            for (name, about) in PRESETS {
                println!("{name:<24} {about}");
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = dispatch(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
