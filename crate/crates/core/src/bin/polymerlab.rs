use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polymerlab::config::{parse_config, parse_vector, Command, Flags};
use polymerlab::run::run;

#[derive(Parser)]
#[command(
    name = "polymerlab",
    version,
    about = "Directed polymers in random environments under an external field"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON config file; its keys override the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Field as comma-separated components, e.g. `0.5,0,0`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    h: Option<String>,
    #[arg(long, global = true)]
    n: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; without it only the summary is printed.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    Gpl,
    P2p,
    PhaseGrid,
    Table1,
    Classify,
    CltCheck,
    Monotonicity,
    Localize,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Gpl => Command::Gpl,
            Cmd::P2p => Command::P2p,
            Cmd::PhaseGrid => Command::PhaseGrid,
            Cmd::Table1 => Command::Table1,
            Cmd::Classify => Command::Classify,
            Cmd::CltCheck => Command::CltCheck,
            Cmd::Monotonicity => Command::Monotonicity,
            Cmd::Localize => Command::Localize,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let h = match cli.h.as_deref().map(parse_vector).transpose() {
        Ok(h) => h,
        Err(e) => {
            eprintln!("polymerlab: ConfigError: --h {e}");
            return ExitCode::from(2);
        }
    };
    let flags = Flags {
        beta: cli.beta,
        h,
        n: cli.n,
        samples: cli.samples,
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out,
    };
    let result = parse_config(cli.command.into(), &flags, cli.config.as_deref())
        .map_err(polymerlab::run::RunError::from)
        .and_then(|cfg| run(&cfg));
    match result {
        Ok(out) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&out.summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("polymerlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
