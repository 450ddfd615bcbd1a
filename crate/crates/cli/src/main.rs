mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsr_core::metrics::Direction;
use rsr_core::simulation::MixtureMode;

use config::{Overrides, RunConfig, SimulationOverrides};

/// Bad user input: missing files, malformed config, unusable flags.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(name = "rsr", version, about = "Rank-surprisal ratio scoring, selection and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check token-statistics files against the schema.
    Validate(Common),
    /// Score every trajectory and dataset with one or more metrics.
    Score(Common),
    /// Pick one trajectory per problem from a multi-teacher pool.
    SelectTraj(Common),
    /// Rank teachers by a dataset-level score.
    SelectTeacher(Common),
    /// Run the synthetic vocabulary experiment.
    Simulate(Common),
    /// Correlate dataset-level metrics with post-training performance.
    Correlate(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Token-statistics file (JSONL); repeatable.
    #[arg(long = "input", short = 'i')]
    inputs: Vec<PathBuf>,
    /// Directory for output files; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metric name; repeatable.
    #[arg(long = "metric", short = 'm')]
    metrics: Vec<String>,
    #[arg(long)]
    direction: Option<Direction>,
    #[arg(long)]
    r_max: Option<u32>,
    /// Percentage of highest-surprisal tokens kept by the filtered metric.
    #[arg(long)]
    filter_h: Option<f64>,
    #[arg(long)]
    p_rank: Option<f64>,
    #[arg(long)]
    p_surp: Option<f64>,
    /// Trajectories sampled per teacher for ranking.
    #[arg(long)]
    n_sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// TOML file; its entries take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only consider trajectories labelled correct.
    #[arg(long)]
    filter_correct: bool,
    #[arg(long)]
    student: Option<String>,
    /// Restrict to these teachers (comma separated).
    #[arg(long, value_delimiter = ',')]
    teachers: Vec<String>,
    /// Dataset-level score table (CSV).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Post-training performance table (CSV).
    #[arg(long)]
    performance: Option<PathBuf>,
    /// Number of consecutive seeds to sweep.
    #[arg(long)]
    sweep: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    m_a: Option<u64>,
    #[arg(long)]
    m_b: Option<u64>,
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    mixture: Option<MixtureMode>,
}

fn non_empty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            inputs: non_empty(&self.inputs),
            out: self.out.clone(),
            metrics: non_empty(&self.metrics),
            direction: self.direction,
            r_max: self.r_max,
            filter_h: self.filter_h,
            p_rank: self.p_rank,
            p_surp: self.p_surp,
            n_sample: self.n_sample,
            seed: self.seed,
            threads: self.threads,
            correctness_filter: self.filter_correct.then_some(true),
            teachers: non_empty(&self.teachers),
            student: self.student.clone(),
            scores: self.scores.clone(),
            performance: self.performance.clone(),
            sweep: self.sweep,
            simulation: Some(SimulationOverrides {
                alpha: self.alpha,
                vocab_size: self.vocab_size,
                m_a: self.m_a,
                m_b: self.m_b,
                tokens_per_trajectory: self.tokens,
                mixture_mode: self.mixture,
                collapse_modes: None,
            }),
            rule_weights: None,
        }
    }

    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply(self.overrides());
        if let Some(path) = &self.config {
            cfg.apply(RunConfig::load_file(path)?);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (common, cmd): (&Common, fn(&RunConfig) -> anyhow::Result<bool>) = match &cli.command {
        Command::Validate(c) => (c, commands::validate),
        Command::Score(c) => (c, |cfg| commands::score(cfg).map(|_| true)),
        Command::SelectTraj(c) => (c, |cfg| commands::select_traj(cfg).map(|_| true)),
        Command::SelectTeacher(c) => (c, |cfg| commands::select_teacher(cfg).map(|_| true)),
        Command::Simulate(c) => (c, |cfg| commands::simulate(cfg).map(|_| true)),
        Command::Correlate(c) => (c, |cfg| commands::correlate(cfg).map(|_| true)),
    };
    let cfg = common.resolve()?;
    commands::configure_threads(&cfg);
    cmd(&cfg)
}

fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<InputError>()
            || e.downcast_ref::<rsr_core::Error>()
                .is_some_and(rsr_core::Error::is_input_error)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_input_error(&err) { 2 } else { 1 })
        }
    }
}
