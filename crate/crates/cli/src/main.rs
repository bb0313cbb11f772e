use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lps_core::Mode;

mod commands;
mod config;
mod output;

use commands::Ctx;
use output::Outputs;

#[derive(Debug)]
pub enum Failure {
    /// bad config, missing file, unwritable output
    Config(String),
    NonFinite(String),
    Runtime(String),
}

impl From<lps_core::Error> for Failure {
    fn from(e: lps_core::Error) -> Self {
        use lps_core::Error::*;
        match e {
            NonFinite { op } => Failure::NonFinite(op.to_string()),
            e @ (InvalidParameter { .. } | DimensionMismatch { .. } | LengthMismatch { .. } | Precondition(_)) => {
                Failure::Config(e.to_string())
            }
            e => Failure::Runtime(e.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    Eval,
    Lusin,
    GridSample,
    Goodness,
    BadProb,
    Martingale,
    Whitney,
    Czdecomp,
    VerifyLemma,
    TestingCondition,
    GoodLambda,
    BigPiece,
}

/// Square functions over atomic measures: evaluation, dyadic tools and
/// lemma checks driven by a JSON config.
#[derive(Parser, Debug)]
#[command(name = "lps", version)]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// output directory
    #[arg(long)]
    out: PathBuf,
    /// overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// naive unpruned evaluation everywhere
    #[arg(long)]
    oracle: bool,
    /// lemma id for verify-lemma: U, T, decay or beta
    #[arg(long)]
    lemma: Option<String>,
}

fn run(args: &Args) -> Result<Outputs, Failure> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let mut cfg = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
    let resolved = config::resolve(cfg, &base, args.oracle)?;
    let ctx = Ctx {
        r: &resolved,
        mode: if args.oracle { Mode::Naive } else { Mode::Fast },
        seed: resolved.config.seed,
        lemma: args.lemma.clone(),
    };
    let mut out = Outputs::default();
    match args.command {
        Command::Eval => commands::eval(&ctx, &mut out)?,
        Command::Lusin => commands::lusin(&ctx, &mut out)?,
        Command::GridSample => commands::grid_sample(&ctx, &mut out)?,
        Command::Goodness => commands::goodness(&ctx, &mut out)?,
        Command::BadProb => commands::bad_prob(&ctx, &mut out)?,
        Command::Martingale => commands::martingale(&ctx, &mut out)?,
        Command::Whitney => commands::whitney_cmd(&ctx, &mut out)?,
        Command::Czdecomp => commands::czdecomp(&ctx, &mut out)?,
        Command::VerifyLemma => commands::verify_lemma(&ctx, &mut out)?,
        Command::TestingCondition => commands::testing_condition(&ctx, &mut out)?,
        Command::GoodLambda => commands::good_lambda(&ctx, &mut out)?,
        Command::BigPiece => commands::big_piece_cmd(&ctx, &mut out)?,
    }
    out.json("config.resolved.json", &resolved.config);
    output::write_all(&args.out, &out.files)?;
    Ok(out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(out) => {
            for line in &out.summary {
                println!("{line}");
            }
            match out.failed {
                Some(why) => {
                    eprintln!("criterion failed: {why}");
                    ExitCode::from(3)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NonFinite(op)) => {
            eprintln!("non-finite value in {op}");
            ExitCode::from(4)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
