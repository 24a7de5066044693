use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vidtome_cli::bench::{self, BenchConfig};
use vidtome_cli::run::{self, RunOverrides};
use vidtome_cli::{flowmap, CliError};

const LOG_ENV: &str = "VIDTOME_LOG";

#[derive(Parser)]
#[command(name = "vidtome", version, about = "Cross-frame token merging for video diffusion attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Invert a video to noise and regenerate it with merged attention.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output latent file; the report goes next to it unless configured.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attention cost of per-frame, extended and merged attention over a grid.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Render the token matching between two frames as a PPM flow map.
    Flowmap {
        #[arg(long = "in")]
        input: PathBuf,
        /// Source and destination frame, e.g. `0,1`.
        #[arg(long, value_parser = parse_pair)]
        frames: (usize, usize),
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected <i>,<j>, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn init_logging() -> Result<(), CliError> {
    let level = std::env::var(LOG_ENV).unwrap_or_else(|_| "error".into());
    if !matches!(level.as_str(), "error" | "info" | "debug") {
        return Err(CliError::Usage(format!("{LOG_ENV} must be error, info or debug, got {level:?}")));
    }
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, seed, out } => {
            let report = run::execute_file(&config, &RunOverrides { seed, out })?;
            println!(
                "{}: {} frames, temporal variance {} -> {}, {} score entries, {:.2}s",
                report.mode,
                report.frames,
                fmt_opt(report.temporal_variance_input),
                fmt_opt(report.temporal_variance_output),
                report.cost.generation.score_entries,
                report.wall_time_seconds
            );
        }
        Command::Bench { config, csv } => {
            let table = bench::execute(&BenchConfig::load(&config)?, &csv)?;
            print!("{table}");
        }
        Command::Flowmap {
            input,
            frames,
            ratio,
            out,
        } => {
            let field = flowmap::execute(&input, frames, ratio, &out)?;
            println!(
                "{} of {} tokens matched, max displacement {}",
                field.matched(),
                field.vectors.len(),
                field.max_displacement()
            );
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_logging().and_then(|()| dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vidtome: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
