use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use cemv::config::Config;
use cemv::experiments::{self, TrajectoryPolicy};
use cemv::output::{sig6, Csv};
use choquet_emv::market::Dynamics;
use choquet_emv::rl::CriticForm;
use choquet_emv::{BuiltinDistortion, RegularizerMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cemv", version, about = "Choquet-regularized exploratory mean-variance experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form multiplier, values, costs and initial policy per cell
    Solve(RunArgs),
    /// Monte Carlo objective and terminal mean under the optimal policy
    Simulate(RunArgs),
    /// Train the actor-critic on a single cell and write the episode log
    Train(RunArgs),
    /// Train every cell and write trailing-window mean, variance and Sharpe ratio
    Table(RunArgs),
    /// Block means of terminal wealth per cell, plus a lambda sweep
    Figures(RunArgs),
    /// One sampled action path per distortion
    Trajectory {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "optimal")]
        policy: TrajectoryPolicy,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags override its values
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Directory for output CSVs (default: config `output_dir`, else `results`)
    #[arg(long, env = "CEMV_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Output file; defaults to `<output-dir>/<command>.csv`
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads for grid cells (0 = all cores)
    #[arg(long, short, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum DynamicsArg {
    Exploratory,
    Sampled,
}

#[derive(Args, Default)]
struct Overrides {
    /// Base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Annualized return(s), comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Option<Vec<f64>>,
    /// Annualized volatility(ies), comma separated
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Risk-free rate
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    /// Exploration weight for every mode
    #[arg(long)]
    lambda: Option<f64>,
    /// Regularizer mode(s): plain, log
    #[arg(long, value_delimiter = ',')]
    mode: Option<Vec<RegularizerMode>>,
    /// Distortion(s): entropy_like, gaussian_score, gini
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<BuiltinDistortion>>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    x0: Option<f64>,
    /// Target terminal mean z
    #[arg(long)]
    target: Option<f64>,
    /// Training episodes K
    #[arg(long)]
    episodes: Option<usize>,
    /// Episodes per multiplier update
    #[arg(long)]
    m: Option<usize>,
    /// Critic and actor learning rate
    #[arg(long)]
    alpha: Option<f64>,
    /// Multiplier learning rate
    #[arg(long)]
    alpha_w: Option<f64>,
    /// Learning-rate decay exponent
    #[arg(long)]
    decay: Option<f64>,
    /// Critic parameterization: exponential, corrected
    #[arg(long)]
    critic_form: Option<CriticForm>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Trailing episodes summarized
    #[arg(long)]
    window: Option<usize>,
    /// Monte Carlo paths
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, value_enum)]
    dynamics: Option<DynamicsArg>,
    /// Episodes per block mean
    #[arg(long)]
    block: Option<usize>,
    /// Lambda values for the sweep, comma separated
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
}

impl Overrides {
    fn apply(self, cfg: &mut Config) {
        fn set<T>(slot: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *slot = v;
            }
        }
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.market.mu, self.mu);
        set(&mut cfg.market.sigma, self.sigma);
        set(&mut cfg.market.r, self.r);
        if self.lambda.is_some() {
            cfg.problem.lambda = self.lambda;
        }
        set(&mut cfg.problem.modes, self.mode);
        set(&mut cfg.problem.distortions, self.h);
        set(&mut cfg.problem.horizon, self.horizon);
        set(&mut cfg.problem.dt, self.dt);
        set(&mut cfg.problem.x0, self.x0);
        set(&mut cfg.problem.target, self.target);
        set(&mut cfg.training.episodes, self.episodes);
        set(&mut cfg.training.m, self.m);
        set(&mut cfg.training.alpha, self.alpha);
        if self.alpha_w.is_some() {
            cfg.training.alpha_w = self.alpha_w;
        }
        set(&mut cfg.training.decay, self.decay);
        set(&mut cfg.training.critic_form, self.critic_form);
        if self.grad_clip.is_some() {
            cfg.training.grad_clip = self.grad_clip;
        }
        set(&mut cfg.training.window, self.window);
        set(&mut cfg.simulation.paths, self.paths);
        set(
            &mut cfg.simulation.dynamics,
            self.dynamics.map(|d| match d {
                DynamicsArg::Exploratory => Dynamics::Exploratory,
                DynamicsArg::Sampled => Dynamics::SampledActions,
            }),
        );
        set(&mut cfg.figures.block, self.block);
        set(&mut cfg.figures.lambdas, self.lambdas);
    }
}

impl RunArgs {
    fn resolve(self, command: &str) -> Result<(Config, PathBuf, usize)> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir.clone();
        }
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        let out = self.out.unwrap_or_else(|| {
            cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("results")).join(format!("{command}.csv"))
        });
        Ok((cfg, out, self.jobs))
    }
}

fn emit(csv: &Csv, out: &Path) -> Result<()> {
    csv.write(out)?;
    eprintln!("wrote {} rows to {}", csv.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (name, run, policy) = match cli.command {
        Command::Solve(r) => ("solve", r, None),
        Command::Simulate(r) => ("simulate", r, None),
        Command::Train(r) => ("train", r, None),
        Command::Table(r) => ("table", r, None),
        Command::Figures(r) => ("figures", r, None),
        Command::Trajectory { run, policy } => ("trajectory", run, Some(policy)),
    };
    let (cfg, out, jobs) = run.resolve(name)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("building worker pool")?;
    let started = Instant::now();

    pool.install(|| -> Result<()> {
        match name {
            "solve" => emit(&experiments::solve(&cfg)?, &out),
            "simulate" => emit(&experiments::simulate(&cfg)?, &out),
            "train" => {
                let (csv, s) = experiments::train_single(&cfg)?;
                emit(&csv, &out)?;
                println!(
                    "last {} episodes: mean {} variance {} sharpe {}",
                    s.n,
                    sig6(s.mean),
                    sig6(s.variance),
                    sig6(s.sharpe)
                );
                Ok(())
            }
            "table" => {
                let csv = experiments::table(&cfg)?;
                let failed = csv.render().matches(",failed: ").count();
                emit(&csv, &out)?;
                if failed > 0 {
                    eprintln!("{failed} cell(s) failed; see the status columns");
                }
                Ok(())
            }
            "figures" => emit(&experiments::figures(&cfg)?, &out),
            "trajectory" => emit(&experiments::trajectory(&cfg, policy.unwrap_or(TrajectoryPolicy::Optimal))?, &out),
            _ => unreachable!(),
        }
    })?;
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
