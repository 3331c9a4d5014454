use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ibrag_cli::{cmd_eval, cmd_mine, cmd_prefs, cmd_score, cmd_select, CliError, CliResult, Paths, RunConfig};

#[derive(Parser)]
#[command(name = "ibrag", version, about = "Information-bottleneck context filtering pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine extractive candidate compressions from the corpus.
    Mine(Common),
    /// Score candidates and write silver SFT examples.
    Select(Resumable),
    /// Score candidates and write IB-labelled preference pairs.
    Prefs(Resumable),
    /// Score a single compression and print the IB score as JSON.
    Score(ScoreArgs),
    /// Compute EM/F1/flip rates/IB over a predictions file.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Resumable {
    #[command(flatten)]
    common: Common,
    /// Keep records already completed by a previous run's manifest.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: Common,
    /// Record id in the corpus; without it a JSON record is read from stdin.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    compression: Option<String>,
}

fn setup(c: &Common) -> CliResult<(RunConfig, Paths)> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok((
        cfg,
        Paths {
            input: c.input.clone(),
            output: c.out.clone(),
        },
    ))
}

fn run(cli: Cli) -> CliResult<()> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Mine(c) => {
            let (cfg, paths) = setup(&c)?;
            cmd_mine(&cfg, &paths, &mut stdout).map(drop)
        }
        Command::Select(r) => {
            let (cfg, paths) = setup(&r.common)?;
            cmd_select(&cfg, &paths, r.resume, &mut stdout).map(drop)
        }
        Command::Prefs(r) => {
            let (cfg, paths) = setup(&r.common)?;
            cmd_prefs(&cfg, &paths, r.resume, &mut stdout).map(drop)
        }
        Command::Score(s) => {
            let (cfg, paths) = setup(&s.common)?;
            let mut stdin = io::stdin().lock();
            cmd_score(&cfg, &paths, s.id.as_deref(), s.compression.as_deref(), &mut stdin, &mut stdout).map(drop)
        }
        Command::Eval(c) => {
            let (cfg, paths) = setup(&c)?;
            cmd_eval(&cfg, &paths, &mut stdout).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CliError::CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
