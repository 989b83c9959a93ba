use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use seqassign::assignment::{solve, Method, Objective};
use seqassign::bench::{
    self, default_arms, run_arm, run_braess_study, run_table3, run_table4, Arm,
};
use seqassign::checkpoint::Checkpoint;
use seqassign::dqn::TargetKind;
use seqassign::env::MarginalEval;
use seqassign::network::{io, DemandTable, Network};
use seqassign::paths::k_shortest_paths;
use seqassign::trainer::{
    evaluate, Baselines, EpsilonSchedule, Exploration, GuideCosts, RewardBaseline, TrainMode,
    TrainerConfig,
};
use seqassign::{data, Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "seqassign",
    version,
    about = "Sequential route recommendation and classical traffic assignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classical UE/SO assignment.
    Solve(SolveArgs),
    /// Train a route-recommendation policy.
    Train(TrainArgs),
    /// Greedy rollout of a checkpoint, printed as JSON.
    Eval(EvalArgs),
    /// K shortest free-flow routes between two nodes.
    Ksp(KspArgs),
    /// UE/SO × MSA/FW baseline table as CSV.
    Table3(Table3Args),
    /// Train and compare the four RL arms.
    Table4(Table4Args),
    /// Train on the Braess network and report route counts.
    Braess(BraessArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Link file.
    #[arg(long, requires = "trips", conflicts_with = "network")]
    net: Option<PathBuf>,
    /// Trip table file.
    #[arg(long, requires = "net")]
    trips: Option<PathBuf>,
    /// Bundled network instead of files (braess|ow).
    #[arg(long)]
    network: Option<String>,
}

impl DataArgs {
    fn load(&self) -> Result<(Network, DemandTable)> {
        match (&self.net, &self.trips, &self.network) {
            (Some(n), Some(t), _) => io::load_network(n, t),
            (_, _, Some(name)) => data::bundled(name).unwrap_or_else(|| {
                Err(Error::Config(format!("no bundled network named {name:?}")))
            }),
            _ => Err(Error::Config("give --net and --trips, or --network".into())),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "msa")]
    method: String,
    #[arg(long, default_value = "ue")]
    objective: String,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    gap_tol: f64,
    /// Result JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct LearnArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `vanilla` or `double`.
    #[arg(long, default_value = "double")]
    target: String,
    /// `post` or `pre`.
    #[arg(long, default_value = "post")]
    marginal_eval: String,
    /// `so` or `ue`.
    #[arg(long, default_value = "so")]
    guide_costs: String,
    /// `guided` or `uniform`; defaults to guided for msa-guided, uniform otherwise.
    #[arg(long)]
    exploration: Option<String>,
    #[arg(long, default_value_t = seqassign::env::DEFAULT_K_MAX)]
    k_max: usize,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 100_000)]
    buffer_capacity: usize,
    #[arg(long, default_value_t = 1000)]
    target_sync: usize,
    #[arg(long, default_value_t = 2000)]
    warmup: usize,
    /// Environment steps per gradient step.
    #[arg(long, default_value_t = 1)]
    train_every: usize,
    /// Comma-separated hidden layer widths.
    #[arg(long, default_value = "512,256", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    epsilon_start: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon_end: f64,
    #[arg(long, default_value_t = 0.6)]
    epsilon_decay: f64,
    /// Greedy evaluation period in episodes (0 disables).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    /// Subtracted from rewards before learning: `none`, `mean` or minutes.
    #[arg(long, default_value = "mean")]
    reward_baseline: String,
}

impl LearnArgs {
    fn config(&self, mode: TrainMode, episodes: usize) -> Result<TrainerConfig> {
        let mut c = TrainerConfig::for_mode(mode);
        c.episodes = episodes;
        c.seed = self.seed;
        c.k_max = self.k_max;
        c.marginal_eval = self.marginal_eval.parse::<MarginalEval>()?;
        c.guide_costs = self.guide_costs.parse::<GuideCosts>()?;
        if let Some(e) = &self.exploration {
            c.exploration = e.parse::<Exploration>()?;
        }
        c.eval_every = self.eval_every;
        c.reward_baseline = self.reward_baseline.parse::<RewardBaseline>()?;
        c.epsilon = EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_fraction: self.epsilon_decay,
        };
        let d = &mut c.dqn;
        d.target = self.target.parse::<TargetKind>()?;
        d.gamma = self.gamma;
        d.batch_size = self.batch_size;
        d.learning_rate = self.learning_rate;
        d.buffer_capacity = self.buffer_capacity;
        d.target_sync = self.target_sync;
        d.warmup = self.warmup;
        d.train_every = self.train_every;
        d.hidden = self.hidden.clone();
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `msa-guided`, `ksp:K` or `so-routes`.
    #[arg(long, default_value = "msa-guided")]
    mode: String,
    #[arg(long, default_value_t = 3000)]
    episodes: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    learn: LearnArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct KspArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    origin: String,
    #[arg(long)]
    destination: String,
    #[arg(long, short, default_value_t = 3)]
    k: usize,
}

#[derive(Args)]
struct Table3Args {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    gap_tol: f64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Table4Args {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 3000)]
    episodes: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    learn: LearnArgs,
}

#[derive(Args)]
struct BraessArgs {
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    learn: LearnArgs,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_or_print(out: Option<&Path>, bytes: Vec<u8>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(a) => {
            let (net, demand) = a.data.load()?;
            let method: Method = a.method.parse()?;
            let obj: Objective = a.objective.parse()?;
            let result = solve(&net, &demand, obj, method, a.max_iters, a.gap_tol)?;
            write_or_print(a.out.as_deref(), serde_json::to_vec_pretty(&result)?)
        }
        Command::Train(a) => {
            let (net, demand) = a.data.load()?;
            let mode: TrainMode = a.mode.parse()?;
            let config = a.learn.config(mode, a.episodes)?;
            let baselines = Baselines::compute(&net, &demand)?;
            let arm = Arm::new(mode.to_string(), mode, config);
            let (_, rep) = run_arm(&net, &demand, &arm, Some(baselines), Some(&a.out))?;
            print_json(&rep)
        }
        Command::Eval(a) => {
            let (net, demand) = a.data.load()?;
            let ck = Checkpoint::load(&a.checkpoint)?;
            print_json(&evaluate(&ck, &net, &demand)?)
        }
        Command::Ksp(a) => {
            let (net, _) = a.data.load()?;
            let node = |n: &str| {
                net.node_id(n)
                    .ok_or_else(|| Error::Config(format!("unknown node {n:?}")))
            };
            let (o, d) = (node(&a.origin)?, node(&a.destination)?);
            let costs = net.free_flow_times();
            for r in k_shortest_paths(&net, &costs, o, d, a.k)? {
                let nodes: Vec<&str> = r
                    .nodes(&net)
                    .into_iter()
                    .map(|n| net.node_name(n))
                    .collect();
                println!("{}\t{}", nodes.join(" "), r.cost(&costs));
            }
            Ok(())
        }
        Command::Table3(a) => {
            let (net, demand) = a.data.load()?;
            let rows = run_table3(&net, &demand, a.max_iters, a.gap_tol)?;
            let mut buf = Vec::new();
            bench::write_csv(&mut buf, &rows)?;
            write_or_print(a.out.as_deref(), buf)
        }
        Command::Table4(a) => {
            let (net, demand) = a.data.load()?;
            let arms = default_arms(a.episodes, a.learn.seed)
                .into_iter()
                .map(|arm| {
                    Ok(Arm {
                        config: a.learn.config(arm.mode, a.episodes)?,
                        ..arm
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let out = run_table4(&net, &demand, &arms, Some(&a.out))?;
            let mut buf = Vec::new();
            bench::write_csv(&mut buf, &out.rows)?;
            write_or_print(None, buf)
        }
        Command::Braess(a) => {
            let (net, demand) = data::braess()?;
            let config = a.learn.config(TrainMode::Ksp(3), a.episodes)?;
            let study = run_braess_study(&net, &demand, &config, a.out.as_deref())?;
            print_json(&study)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            })
        }
    }
}
