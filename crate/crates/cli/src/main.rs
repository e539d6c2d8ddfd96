//! `coloc`: colocation-aware batch scheduling from the command line.

mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coloc_core::model::MaxFeatures;
use coloc_core::profiles::FeatureSet;
use coloc_core::scheduler::Strategy;

use crate::config::{PolicyList, PredictorKind, QueueKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "coloc", version, about = "Predict colocation slowdowns and pair batch jobs onto shared servers")]
struct Cli {
    /// Flat TOML run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for training and simulation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Master random seed (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic application universe: profiles, true slowdowns and a sample queue.
    Synth(SynthArgs),
    /// Join profiles with colocation measurements into a training dataset.
    Dataset(DatasetArgs),
    /// Train the slowdown model, reporting k-fold and holdout R^2.
    Train(TrainArgs),
    /// Random search over forest hyperparameters, scored by k-fold R^2.
    Tune(TuneArgs),
    /// Score a model on a dataset and time its predictions.
    Eval(EvalArgs),
    /// Predict the slowdown of one application next to another.
    Predict(PredictArgs),
    /// Pair the jobs of a queue and write the resulting schedule.
    Schedule(ScheduleArgs),
    /// Run scheduling policies on simulated queues against the true slowdowns.
    Simulate(SimulateArgs),
    /// Merge simulation reports into a per-policy summary table.
    Compare(CompareArgs),
    /// Print the effective configuration (file plus global flags) as TOML.
    Config,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of applications to generate.
    #[arg(long)]
    apps: Option<usize>,
    /// Jobs in the sample queue.json (default: servers x jobs per server).
    #[arg(long)]
    queue_size: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Profiles CSV (app_id, t_alone_s, counter, statistics).
    #[arg(long, value_name = "FILE")]
    profiles: Option<PathBuf>,
    /// Colocation CSV (primary_id, interfering_id, t_coloc_s).
    #[arg(long, value_name = "FILE")]
    colocations: Option<PathBuf>,
    /// Counter subset and statistics: generic+mean, generic+full, all+mean or all+full.
    #[arg(long)]
    feature_set: Option<FeatureSet>,
    /// Output dataset CSV (default: OUT_DIR/dataset.csv).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "DIR", hide = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct ForestArgs {
    /// Trees in the forest.
    #[arg(long)]
    n_estimators: Option<usize>,
    /// Features tried per split: auto, sqrt or a fraction in (0, 1].
    #[arg(long)]
    max_features: Option<MaxFeatures>,
    /// Minimum samples required to split a node.
    #[arg(long)]
    min_samples_split: Option<usize>,
    /// Draw a bootstrap sample per tree (true or false).
    #[arg(long)]
    bootstrap: Option<bool>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset CSV written by `coloc dataset`.
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Fraction of samples held out for validation, in [0, 1) (default 0.3).
    #[arg(long)]
    holdout: Option<f64>,
    /// Cross-validation folds on the training part; 0 disables (default 5).
    #[arg(long, visible_alias = "k")]
    folds: Option<usize>,
    #[command(flatten)]
    forest: ForestArgs,
    /// Output model JSON (default: OUT_DIR/model.json).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "DIR", hide = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    /// Dataset CSV written by `coloc dataset`.
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Number of sampled configurations (default 30).
    #[arg(long)]
    budget: Option<usize>,
    /// Cross-validation folds per configuration (default 5).
    #[arg(long, visible_alias = "k")]
    folds: Option<usize>,
    /// Also train the best configuration on the full dataset and write it here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model JSON.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Dataset CSV to score against.
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Comma-separated tree counts to time, using the first N trees of the model (e.g. 6,22).
    #[arg(long, value_delimiter = ',', value_name = "N,N")]
    compare_estimators: Vec<usize>,
    /// Timing repetitions; the fastest run counts.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model JSON.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Profiles CSV.
    #[arg(long, value_name = "FILE")]
    profiles: Option<PathBuf>,
    /// Application whose slowdown is predicted.
    #[arg(long)]
    primary: String,
    /// Application running next to it.
    #[arg(long)]
    interfering: String,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// Queue JSON ({"jobs": [app ids]}).
    #[arg(long, value_name = "FILE")]
    queue: Option<PathBuf>,
    /// Model JSON (predictor = model).
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// True slowdown CSV (predictor = oracle).
    #[arg(long, value_name = "FILE")]
    oracle: Option<PathBuf>,
    /// Profiles CSV.
    #[arg(long, value_name = "FILE")]
    profiles: Option<PathBuf>,
    /// Where slowdowns come from: model or oracle.
    #[arg(long)]
    predictor: Option<PredictorKind>,
    /// Pairing strategy: blossom, greedy or di.
    #[arg(long, default_value = "blossom")]
    strategy: Strategy,
    /// Output schedule JSON (default: OUT_DIR/schedule.json).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "DIR", hide = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Profiles CSV.
    #[arg(long, value_name = "FILE")]
    profiles: Option<PathBuf>,
    /// True slowdown CSV used to run the simulation.
    #[arg(long, value_name = "FILE")]
    oracle: Option<PathBuf>,
    /// Model JSON (predictor = model).
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Where scheduling decisions get their slowdowns: model or oracle.
    #[arg(long)]
    predictor: Option<PredictorKind>,
    /// Comma-separated policies: fifo, fifo_shared, di, blossom, greedy.
    #[arg(long)]
    policies: Option<PolicyList>,
    /// Simulate exactly this queue JSON instead of generating queues.
    #[arg(long, value_name = "FILE")]
    queue: Option<PathBuf>,
    /// Number of generated queues (default 20).
    #[arg(long)]
    queues: Option<usize>,
    /// Jobs per generated queue (default: servers x jobs per server).
    #[arg(long)]
    queue_size: Option<usize>,
    /// Generated queue kind: random, low, medium or high.
    #[arg(long)]
    queue_kind: Option<QueueKind>,
    /// Servers in the simulated cluster (default 1).
    #[arg(long)]
    servers: Option<usize>,
    /// Random queue length per server (default 50).
    #[arg(long)]
    jobs_per_server: Option<usize>,
    /// Record wall-clock predict and solve times in seconds (queues then run sequentially).
    #[arg(long)]
    timing: bool,
    /// Output directory for report.csv and timeline.json.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Report CSV files written by `coloc simulate`.
    #[arg(required = true, value_name = "REPORT")]
    reports: Vec<PathBuf>,
    /// Also write the summary as CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

impl ForestArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.n_estimators, self.n_estimators);
        set(&mut cfg.max_features, self.max_features);
        set(&mut cfg.min_samples_split, self.min_samples_split);
        set(&mut cfg.bootstrap, self.bootstrap);
    }
}

fn run(cli: Cli) -> coloc_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(coloc_core::Error::InvalidParameter("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| coloc_core::Error::InvalidParameter(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Synth(a) => {
            set(&mut cfg.apps, a.apps);
            set(&mut cfg.queue_size, a.queue_size.map(Some));
            set_path(&mut cfg.out_dir, &a.out_dir);
            commands::synth(&cfg)
        }
        Command::Dataset(a) => {
            set_path(&mut cfg.profiles, &a.profiles);
            set_path(&mut cfg.colocations, &a.colocations);
            set(&mut cfg.feature_set, a.feature_set);
            set_path(&mut cfg.out_dir, &a.out_dir);
            commands::dataset(&cfg, a.out)
        }
        Command::Train(a) => {
            set_path(&mut cfg.dataset, &a.dataset);
            set(&mut cfg.holdout, a.holdout);
            set(&mut cfg.folds, a.folds);
            a.forest.apply(&mut cfg);
            set_path(&mut cfg.out_dir, &a.out_dir);
            commands::train(&cfg, a.out)
        }
        Command::Tune(a) => {
            set_path(&mut cfg.dataset, &a.dataset);
            set(&mut cfg.budget, a.budget);
            set(&mut cfg.folds, a.folds);
            commands::tune(&cfg, a.out)
        }
        Command::Eval(a) => {
            set_path(&mut cfg.model, &a.model);
            set_path(&mut cfg.dataset, &a.dataset);
            commands::eval(&cfg, &a.compare_estimators, a.repeats)
        }
        Command::Predict(a) => {
            set_path(&mut cfg.model, &a.model);
            set_path(&mut cfg.profiles, &a.profiles);
            commands::predict(&cfg, &a.primary, &a.interfering)
        }
        Command::Schedule(a) => {
            set_path(&mut cfg.queue, &a.queue);
            set_path(&mut cfg.model, &a.model);
            set_path(&mut cfg.oracle, &a.oracle);
            set_path(&mut cfg.profiles, &a.profiles);
            set(&mut cfg.predictor, a.predictor);
            set_path(&mut cfg.out_dir, &a.out_dir);
            commands::schedule(&cfg, a.strategy, a.out)
        }
        Command::Simulate(a) => {
            set_path(&mut cfg.profiles, &a.profiles);
            set_path(&mut cfg.oracle, &a.oracle);
            set_path(&mut cfg.model, &a.model);
            set(&mut cfg.predictor, a.predictor);
            set(&mut cfg.policies, a.policies);
            set_path(&mut cfg.queue, &a.queue);
            set(&mut cfg.queues, a.queues);
            set(&mut cfg.queue_size, a.queue_size.map(Some));
            set(&mut cfg.queue_kind, a.queue_kind);
            set(&mut cfg.n_servers, a.servers);
            set(&mut cfg.jobs_per_server_scale, a.jobs_per_server);
            set_path(&mut cfg.out_dir, &a.out_dir);
            commands::simulate(&cfg, a.timing)
        }
        Command::Compare(a) => commands::compare(&a.reports, a.out),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("usage_error: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("{}: {message}", e.code());
            ExitCode::FAILURE
        }
    }
}
