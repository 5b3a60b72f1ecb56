mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{GenerateConfig, LearnConfig};
use error::{CliError, CliResult};
use resunit::eval::{Experiment, Method, RunOptions, TrialGrid};
use resunit::layer2::PointSelection;
use resunit::model::InputDistribution;

#[derive(Parser)]
#[command(
    name = "resunit",
    version,
    about = "Learn two-layer residual units with convex programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a teacher and a dataset.
    Generate(GenerateArgs),
    /// Fit a dataset with one method; evaluate against a teacher if given.
    Learn(LearnArgs),
    /// Run one of the preset studies.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Selection {
    Extreme,
    Central,
    Vertex,
}

impl From<Selection> for PointSelection {
    fn from(s: Selection) -> PointSelection {
        match s {
            Selection::Extreme => PointSelection::Extreme,
            Selection::Central => PointSelection::Central,
            Selection::Vertex => PointSelection::Vertex,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Input {
    Mixture,
    Gaussian,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Input distribution (`gaussian` is standard normal).
    #[arg(long, value_enum)]
    input: Option<Input>,
    /// Output directory for teacher.json and samples.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// teacher.json from `generate`; enables the error report.
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Seeds the test set and SGD.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps_tol: Option<f64>,
    #[arg(long, value_enum)]
    selection: Option<Selection>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// heatmap, weight_robustness, noise_robustness or vanilla_lr_rates
    name: Experiment,
    /// JSON trial grid; replaces the preset, flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    /// Output dimension; needs a single `--d`.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    noise_sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps_tol: Option<f64>,
    #[arg(long, value_enum)]
    selection: Option<Selection>,
    #[arg(long)]
    teachers: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Per-cell result cache; defaults to `<out>/cache`.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "cache_dir")]
    no_cache: bool,
    #[arg(long)]
    out: PathBuf,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run_generate(a: GenerateArgs) -> CliResult<()> {
    let mut cfg: GenerateConfig = commands::load_config(a.config.as_deref())?;
    set(&mut cfg.d, a.d);
    if a.m.is_some() {
        cfg.m = a.m;
    }
    set(&mut cfg.n, a.n);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.noise_sigma, a.noise_sigma);
    match a.input {
        Some(Input::Mixture) => cfg.input = InputDistribution::mixture(1).kind,
        Some(Input::Gaussian) => cfg.input = InputDistribution::gaussian(1, 0.0, 1.0).kind,
        None => {}
    }
    commands::generate(cfg, &a.out)
}

fn run_learn(a: LearnArgs) -> CliResult<()> {
    let mut cfg: LearnConfig = commands::load_config(a.config.as_deref())?;
    if a.data.is_some() {
        cfg.data = a.data;
    }
    if a.teacher.is_some() {
        cfg.teacher = a.teacher;
    }
    set(&mut cfg.method, a.method);
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        cfg.sgd.seed = seed;
    }
    set(&mut cfg.pipeline.layer2.rescale.eps_tol, a.eps_tol);
    if let Some(s) = a.selection {
        cfg.pipeline.layer2.selection = s.into();
        cfg.pipeline.layer1.selection = s.into();
    }
    set(&mut cfg.test_set_size, a.test_size);
    set(&mut cfg.sgd.epochs, a.epochs);
    commands::learn(cfg, &a.out)
}

fn run_experiment(a: ExperimentArgs) -> CliResult<()> {
    let mut grid: TrialGrid = match &a.config {
        Some(_) => commands::load_config(a.config.as_deref())?,
        None => a.name.default_grid(),
    };
    if !a.d.is_empty() {
        grid.dims = a.d;
    }
    if let Some(m) = a.m {
        let [d] = grid.dims[..] else {
            return Err(CliError::Config("--m needs exactly one --d".into()));
        };
        grid.extra_outputs = m
            .checked_sub(d)
            .ok_or_else(|| CliError::Config(format!("m = {m} must be at least d = {d}")))?;
    }
    if !a.n.is_empty() {
        grid.sample_sizes = a.n;
    }
    if !a.noise_sigma.is_empty() {
        grid.noise_sigmas = a.noise_sigma;
    }
    if !a.method.is_empty() {
        grid.methods = a.method;
    }
    set(&mut grid.base_seed, a.seed);
    set(&mut grid.pipeline.layer2.rescale.eps_tol, a.eps_tol);
    if let Some(s) = a.selection {
        grid.pipeline.layer2.selection = s.into();
        grid.pipeline.layer1.selection = s.into();
    }
    set(&mut grid.teachers_per_cell, a.teachers);
    set(&mut grid.trials_per_cell, a.trials);
    set(&mut grid.test_set_size, a.test_size);
    set(&mut grid.sgd.epochs, a.epochs);
    if a.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let opts = RunOptions {
        jobs: a.jobs,
        cache_dir: if a.no_cache {
            None
        } else {
            Some(a.cache_dir.unwrap_or_else(|| a.out.join("cache")))
        },
    };
    commands::experiment(a.name, grid, &a.out, opts)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Learn(a) => run_learn(a),
        Command::Experiment(a) => run_experiment(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
