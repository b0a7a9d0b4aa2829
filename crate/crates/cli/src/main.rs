use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use plr_core::chooser::{self, collect_data, select_and_train, ChooserError, ChooserModel, CollectConfig, Dataset};
use plr_core::executor::{home_config, spec_for_command, ExecutorConfig};
use plr_core::generator::GeneratorParams;
use plr_core::harness::{
    build_library, compare, run_episode, Assets, ExperimentConfig, HarnessError, LibraryConfig, Method, DEFAULT_BUDGET_S,
};
use plr_core::motion::{self, PlanQuery, RobotModel};
use plr_core::sim::SimParams;
use plr_core::strategy::{hardcoded_decision, load_library, save_library, Decision, LibraryError};
use plr_core::world::{generate_environment, perceive, EnvSpec, WorldError};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Chooser(#[from] ChooserError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, CliError>;

/// Truck-unloading planning, strategy generation and evaluation.
#[derive(Debug, Parser)]
#[command(name = "plr", version)]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a truck and write its ground-truth state as JSON.
    GenEnv {
        #[arg(long)]
        env: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan motion queries: from a query file, or for the expert's next
    /// action on an environment.
    Plan {
        #[arg(long, conflicts_with = "env")]
        query: Option<PathBuf>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a strategy library on training environments.
    Generate {
        #[arg(long, required = true)]
        env: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BUDGET_S)]
        budget_s: f64,
        #[arg(long)]
        max_expansions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect chooser training data by probing library and expert.
    Collect {
        #[arg(long, required = true)]
        env: Vec<String>,
        #[arg(long)]
        library: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BUDGET_S)]
        budget_s: f64,
        /// Dataset CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write a model selected on the collected data.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the chooser on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Kernel width; selected by held-out accuracy when omitted.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        c_reg: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one episode and write its action log as CSV.
    Run {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "hardcoded")]
        method: String,
        #[command(flatten)]
        common: EpisodeArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare methods over seeds; writes curves.csv and summary.json.
    Eval {
        #[arg(long, required = true)]
        env: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "hardcoded")]
        method: Vec<String>,
        #[command(flatten)]
        common: EpisodeArgs,
        /// Seeds to run; a single value `n` with `--seeds-count` is
        /// expanded to n..n+count.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seed: Vec<u64>,
        #[arg(long)]
        seeds_count: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct EpisodeArgs {
    #[arg(long, default_value_t = DEFAULT_BUDGET_S)]
    budget_s: f64,
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

/// `wall:3`, `pile:7`, or a path to an environment JSON file.
fn parse_env(s: &str) -> Result<EnvSpec> {
    if let Some((family, seed)) = s.split_once(':') {
        let seed: u64 = seed.parse().map_err(|_| CliError::Usage(format!("bad environment seed in {s:?}")))?;
        match family {
            "wall" => return Ok(EnvSpec::wall(seed)),
            "pile" => return Ok(EnvSpec::pile(seed)),
            _ => {}
        }
    }
    let text = std::fs::read_to_string(s)
        .map_err(|e| CliError::Usage(format!("{s:?} is neither wall:<seed>, pile:<seed> nor a readable file ({e})")))?;
    let spec: EnvSpec = read_json(s, &text)?;
    spec.validate()?;
    Ok(spec)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Json { path: path.into(), message: e.to_string() })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

fn load_assets(a: &EpisodeArgs) -> Result<Assets> {
    let library = a.library.as_deref().map(load_library).transpose()?;
    let model = a.model.as_deref().map(ChooserModel::load).transpose()?;
    Ok(Assets::new(library, model)?)
}

#[derive(Serialize)]
struct PlanRow {
    mode: String,
    ok: bool,
    cost: f64,
    bound: f64,
    expansions: usize,
    planning_time_s: f64,
    error: Option<String>,
}

fn plan_rows(queries: &[PlanQuery]) -> Vec<PlanRow> {
    let m = RobotModel::default();
    queries
        .iter()
        .map(|q| match motion::plan(&m, q) {
            Ok(t) => PlanRow {
                mode: format!("{:?}", q.mode),
                ok: true,
                cost: t.cost,
                bound: t.suboptimality_bound,
                expansions: t.expansions,
                planning_time_s: t.planning_time,
                error: None,
            },
            Err(e) => PlanRow {
                mode: format!("{:?}", q.mode),
                ok: false,
                cost: f64::NAN,
                bound: f64::NAN,
                expansions: 0,
                planning_time_s: 0.0,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let sim = SimParams::default();
    match cli.cmd {
        Cmd::GenEnv { env, out } => {
            let spec = parse_env(&env)?;
            let state = generate_environment(&spec)?;
            emit(out.as_deref(), &to_json(&state))
        }
        Cmd::Plan { query, env, out } => {
            let queries = match (query, env) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)?;
                    let q = PlanQuery::from_json_str(&text)
                        .map_err(|e| CliError::Json { path: path.display().to_string(), message: e.to_string() })?;
                    vec![q]
                }
                (None, Some(env)) => {
                    let w = perceive(&generate_environment(&parse_env(&env)?)?);
                    let cfg = ExecutorConfig::for_sim(&sim);
                    match hardcoded_decision(&w, &cfg.hardcoded, &cfg.action) {
                        Decision::Act { action, command } => {
                            spec_for_command(action, command, &w, &cfg).queries(&w, &home_config(), &cfg)
                        }
                        Decision::Done => Vec::new(),
                    }
                }
                (None, None) => return Err(CliError::Usage("plan needs --query or --env".into())),
            };
            emit(out.as_deref(), &to_json(&plan_rows(&queries)))
        }
        Cmd::Generate { env, seed, budget_s, max_expansions, out } => {
            let envs = env.iter().map(|e| parse_env(e)).collect::<Result<Vec<_>>>()?;
            let mut generator = GeneratorParams { seed, ..GeneratorParams::default() };
            if let Some(n) = max_expansions {
                generator.max_expansions = n;
            }
            let cfg = LibraryConfig { generator, budget_s, ..LibraryConfig::default() };
            let lib = build_library(&envs, &sim, &cfg)?;
            save_library(&lib, &out)?;
            eprintln!("{} strategies, {} nodes", lib.entries.len(), lib.node_count());
            Ok(())
        }
        Cmd::Collect { env, library, iters, seed, budget_s, out, model } => {
            let envs = env.iter().map(|e| parse_env(e)).collect::<Result<Vec<_>>>()?;
            let lib = load_library(&library)?;
            let cfg = CollectConfig { iters, seed, budget_s, ..CollectConfig::default() };
            let (data, _) = collect_data(&envs, &lib, &ExecutorConfig::for_sim(&sim), &sim, &cfg)?;
            data.save(&out)?;
            if let Some(path) = model {
                select_and_train(&data, &chooser::default_grid())?.save(&path)?;
            }
            Ok(())
        }
        Cmd::Train { data, gamma, c_reg, out } => {
            let d = Dataset::load(&data)?;
            let model = match (gamma, c_reg) {
                (None, None) => select_and_train(&d, &chooser::default_grid())?,
                (g, c) => chooser::train(&d, g.unwrap_or_else(chooser::default_gamma), c.unwrap_or(chooser::DEFAULT_C_REG))?,
            };
            model.save(&out)?;
            Ok(())
        }
        Cmd::Run { env, method, common, seed, out } => {
            let method: Method = method.parse()?;
            let log = run_episode(method, &parse_env(&env)?, seed, common.budget_s, &sim, &load_assets(&common)?)?;
            let mut buf = Vec::new();
            log.write_csv(&mut buf).map_err(|e| std::io::Error::other(e.to_string()))?;
            emit(out.as_deref(), String::from_utf8_lossy(&buf).trim_end())
        }
        Cmd::Eval { env, method, common, seed, seeds_count, out } => {
            let envs = env.iter().map(|e| parse_env(e)).collect::<Result<Vec<_>>>()?;
            let methods = method.iter().map(|m| m.parse()).collect::<std::result::Result<Vec<Method>, _>>()?;
            let seeds = match (seeds_count, seed.as_slice()) {
                (Some(n), [start]) => (*start..start + n).collect(),
                (Some(_), _) => return Err(CliError::Usage("--seeds-count takes a single starting --seed".into())),
                (None, _) => seed,
            };
            let cfg = ExperimentConfig { envs, methods, seeds, budget_s: common.budget_s, sim };
            let report = compare(&cfg, &load_assets(&common)?)?;
            report.write_to(&out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("plr: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("plr: {e}");
            ExitCode::from(1)
        }
    }
}
