use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mtl_affect::data::Task;
use mtl_affect::gradcheck::{DEFAULT_STEP, DEFAULT_TOL};
use mtl_affect::metrics::DEFAULT_THRESHOLD;
use mtl_affect_cli::commands::{self, EvalArgs, GradcheckArgs, ScoreArgs, SynthArgs, TrainArgs};
use mtl_affect_cli::{CliResult, EXIT_OK, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "mtl-affect", version, about = "Multi-task facial affect heads: AU graph, expression and valence/arousal")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Au,
    Ex,
    Va,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Au => Task::Au,
            TaskArg::Ex => Task::Ex,
            TaskArg::Va => Task::Va,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compare analytic gradients of every module against central differences.
    Gradcheck {
        /// Finite-difference step.
        #[arg(long, default_value_t = DEFAULT_STEP)]
        eps: f64,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded synthetic dataset (features.csv, labels.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one stage (au, then ex; va independently) and write a checkpoint.
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from; required for ex.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Predict on a dataset and write predictions plus a metric report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Write the facial graph of the first sample in DOT format.
        #[arg(long, value_name = "DOT")]
        dump_graph: Option<PathBuf>,
    },
    /// Score a predictions file against labels.
    Score {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
}

fn run(command: Command) -> CliResult<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Gradcheck { eps, tol, seed } => commands::gradcheck(&GradcheckArgs { eps, tol, seed }, &mut out),
        Command::Synth { out: dir, n, d, seed, noise } => commands::synth(
            &SynthArgs {
                out: dir,
                n,
                d,
                seed,
                noise,
            },
            &mut out,
        ),
        Command::Train {
            task,
            data,
            config,
            out: ckpt,
            init,
        } => commands::train(
            &TrainArgs {
                task: task.into(),
                data,
                config,
                out: ckpt,
                init,
            },
            &mut out,
        ),
        Command::Eval {
            data,
            ckpt,
            out: preds,
            report,
            dump_graph,
        } => commands::eval(
            &EvalArgs {
                data,
                ckpt,
                out: preds,
                report,
                dump_graph,
            },
            &mut out,
        ),
        Command::Score {
            preds,
            labels,
            threshold,
        } => commands::score(
            &ScoreArgs {
                preds,
                labels,
                threshold,
            },
            &mut out,
        )
        .map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
