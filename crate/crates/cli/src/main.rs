mod commands;
mod gamefile;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

/// Exit statuses shared by every subcommand.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const UNSTABLE: u8 = 3;
    pub const PARTIAL: u8 = 4;
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure { code: exit::INPUT, message: message.into() }
    }
}

impl From<celab::Error> for Failure {
    fn from(e: celab::Error) -> Self {
        use celab::Error::*;
        let code = match e {
            InvalidArgument(_) | Precondition(_) | UnknownPayoff(_) | Format(_) | Json(_) => exit::INPUT,
            Numeric { .. } => exit::UNSTABLE,
            Internal(_) | Io(_) => exit::FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: exit::FAILURE, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "celab", version, about = "Equilibrium learning and payoff inference for finite games")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads for the parallel paths (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nash equilibria, the welfare-maximizing correlated equilibrium and
    /// hull-membership checks for a two-player slice.
    Solve(SolveArgs),
    /// Train two agents on a slice until their averaged state settles.
    Train(TrainArgs),
    /// Infer the opponent's payoffs from a settled distribution.
    Estimate(EstimateArgs),
    /// Grow the main player's payoff knowledge over every player pair.
    Pipeline(PipelineArgs),
}

#[derive(Args, Clone)]
pub struct OutputArgs {
    /// Directory for artifacts.
    #[arg(long, env = "CELAB_OUT_DIR", default_value = "celab-out")]
    pub out_dir: PathBuf,
    /// Overwrite existing artifacts.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Clone)]
pub struct SliceArgs {
    /// The two players of the slice (defaults to the first two).
    #[arg(long, value_name = "A,B")]
    pub pair: Option<String>,
    /// Hold another player at one decision, e.g. `--fix p3=C`.
    #[arg(long = "fix", value_name = "PLAYER=DECISION")]
    pub fix: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LossArg {
    TwoSided,
    Reinforce,
}

#[derive(Args, Clone)]
pub struct TrainingArgs {
    /// Base settings; individual flags override them.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rounds per epoch.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// States per round; must be at least ceil(1/theta).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs inspected by the stop rule.
    #[arg(long)]
    pub window: Option<usize>,
    /// Allowed spread over the window (default 2*theta).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub analyzer_width: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Run rounds one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveMode {
    All,
    Ne,
    Ce,
    Hull,
}

#[derive(Args)]
pub struct SolveArgs {
    pub game: PathBuf,
    #[command(flatten)]
    pub slice: SliceArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub mode: SolveMode,
    /// Extra payoff pair to test against the Nash hull, e.g. `0.3,0.35`.
    #[arg(long = "point", value_name = "U1,U2")]
    pub points: Vec<String>,
    /// Also write `solve.json` here.
    #[arg(long, env = "CELAB_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    pub game: PathBuf,
    #[command(flatten)]
    pub slice: SliceArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args)]
pub struct EstimateArgs {
    pub game: PathBuf,
    /// Player whose payoffs are taken as known.
    #[arg(long)]
    pub known: String,
    /// Settled distribution: a JSON array or an object with `distribution`.
    #[arg(long)]
    pub distribution: PathBuf,
    #[command(flatten)]
    pub slice: SliceArgs,
    /// Shift the opponent's sorted unknowns by one position.
    #[arg(long)]
    pub rotated: bool,
    /// Values closer than this count as ties when picking row senses.
    #[arg(long)]
    pub tie_tol: Option<f64>,
    /// Skip re-solving the correlated equilibrium under the estimate.
    #[arg(long)]
    pub no_round_trip: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Learned,
    Oracle,
}

#[derive(Args)]
pub struct PipelineArgs {
    pub game: PathBuf,
    /// The player whose payoffs seed the knowledge base.
    #[arg(long)]
    pub main: String,
    /// Further players whose payoffs are known up front.
    #[arg(long, value_delimiter = ',')]
    pub given: Vec<String>,
    /// Where interaction distributions come from.
    #[arg(long, value_enum, default_value = "learned")]
    pub source: SourceArg,
    #[arg(long)]
    pub rotated: bool,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(exit::INPUT);
        }
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::FAILURE);
        }
    }

    let result = match cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Train(a) => commands::train(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Pipeline(a) => commands::pipeline(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
