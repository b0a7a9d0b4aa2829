//! Experiment runner: episodes per method, library building and the
//! boxes-over-time comparison.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chooser::{extract_features, ChooserError, ChooserModel, LibraryPolicy, NNIndex, Selector};
use crate::executor::{
    ActionSource, EndReason, EpisodeLog, Executor, ExecutorConfig, HardcodedSource, KindSummary, SourceStep, TreeSource,
};
use crate::generator::{generate_strategy, sample_initial_belief, GeneratorContext, GeneratorError, GeneratorParams};
use crate::sim::{SimError, SimHandle, SimParams};
use crate::strategy::{LibraryEntry, LibraryError, Observation, StrategyLibrary, StrategyNode};
use crate::world::{generate_environment, perceive, EnvSpec, Family, TrueWorldState, WorldError, WorldState};

pub const GRID_STEP_S: f64 = 10.0;
pub const DEFAULT_BUDGET_S: f64 = 1600.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Chooser(#[from] ChooserError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hardcoded,
    NearestNeighbor,
    PlrChooser,
    OpenLoopOffline,
    ExpectedOffline,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Hardcoded, Method::NearestNeighbor, Method::PlrChooser, Method::OpenLoopOffline, Method::ExpectedOffline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hardcoded => "hardcoded",
            Method::NearestNeighbor => "nearest-neighbor",
            Method::PlrChooser => "plr-chooser",
            Method::OpenLoopOffline => "open-loop-offline",
            Method::ExpectedOffline => "expected-offline",
        }
    }

    /// Replays stored strategies, so only environments the library was
    /// built on qualify.
    pub fn training_only(self) -> bool {
        matches!(self, Method::OpenLoopOffline | Method::ExpectedOffline)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}")))
    }
}

pub fn env_label(env: &EnvSpec) -> String {
    let family = match env.family {
        Family::WallStacked => "wall",
        Family::PileUnstructured => "pile",
    };
    format!("{family}-{}", env.seed)
}

/// Library and model shared by every episode of an experiment.
#[derive(Debug, Clone, Default)]
pub struct Assets {
    pub library: Option<StrategyLibrary>,
    pub model: Option<ChooserModel>,
    index: Option<NNIndex>,
}

impl Assets {
    pub fn new(library: Option<StrategyLibrary>, model: Option<ChooserModel>) -> Result<Self, HarnessError> {
        if let Some(lib) = &library {
            lib.validate()?;
        }
        if let Some(m) = &model {
            m.validate()?;
        }
        let index = match &library {
            Some(lib) if !lib.entries.is_empty() => Some(NNIndex::from_library(lib)?),
            _ => None,
        };
        Ok(Self { library, model, index })
    }

    fn index(&self, method: Method) -> Result<&NNIndex, HarnessError> {
        self.index.as_ref().ok_or_else(|| HarnessError::Config(format!("{method} needs a non-empty strategy library")))
    }

    /// Stored strategies generated on `env`, in episode order.
    pub fn entries_for(&self, env: &EnvSpec) -> Vec<&LibraryEntry> {
        let mut out: Vec<&LibraryEntry> =
            self.library.iter().flat_map(|l| l.entries.iter()).filter(|e| e.env_spec == *env).collect();
        out.sort_by_key(|e| e.seq);
        out
    }
}

/// Runs trees one after another without touching the world in between.
struct Chain {
    trees: Vec<StrategyNode>,
    next: usize,
    current: Option<TreeSource>,
}

impl ActionSource for Chain {
    fn next_action(&mut self, w: &WorldState, z: Observation) -> SourceStep {
        loop {
            if let Some(src) = &mut self.current {
                if let step @ SourceStep::Act(_) = src.next_action(w, z) {
                    return step;
                }
            }
            let Some(tree) = self.trees.get(self.next) else { return SourceStep::Stop };
            self.current = Some(TreeSource::new(tree.clone()));
            self.next += 1;
        }
    }
}

fn reset_to(sim: &mut SimHandle, state: &TrueWorldState) -> Result<(), HarnessError> {
    let mut snap = sim.snapshot();
    snap.unloaded_total = snap
        .initial_count
        .checked_sub(state.box_count())
        .ok_or_else(|| HarnessError::Config("stored start state holds more boxes than the environment".into()))?;
    snap.state = state.clone();
    sim.restore(&snap)?;
    Ok(())
}

fn expected_offline(
    exec: &mut Executor,
    sim: &mut SimHandle,
    entries: &[&LibraryEntry],
    budget_s: f64,
) -> Result<EpisodeLog, HarnessError> {
    let starts = entries
        .iter()
        .map(|e| e.start_state.as_ref())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| HarnessError::Config("expected-offline needs start states in every stored strategy".into()))?;
    let mut log = EpisodeLog::new(sim.state().box_count());
    let mut t = 0.0;
    'entries: for (entry, start) in entries.iter().zip(starts) {
        reset_to(sim, start)?;
        let mut src = TreeSource::new(entry.tree.clone());
        loop {
            if t >= budget_s {
                log.end_reason = Some(EndReason::Budget);
                return Ok(log);
            }
            match exec.step(&mut src, sim, t) {
                Ok(rec) => {
                    t += rec.duration();
                    log.records.push(rec);
                }
                Err(EndReason::SourceExhausted | EndReason::TruckEmpty) => continue 'entries,
                Err(reason) => {
                    log.end_reason = Some(reason);
                    return Ok(log);
                }
            }
        }
    }
    log.end_reason = Some(if sim.state().is_empty() { EndReason::TruckEmpty } else { EndReason::SourceExhausted });
    Ok(log)
}

/// One episode of `method` on `env`; `seed` drives the simulator's noise.
pub fn run_episode(
    method: Method,
    env: &EnvSpec,
    seed: u64,
    budget_s: f64,
    sim: &SimParams,
    assets: &Assets,
) -> Result<EpisodeLog, HarnessError> {
    if !(budget_s.is_finite() && budget_s > 0.0) {
        return Err(HarnessError::Config("budget must be positive".into()));
    }
    let mut handle = SimHandle::new(generate_environment(env)?, sim.with_seed(seed))?;
    let cfg = ExecutorConfig::for_sim(sim);
    let expert = HardcodedSource { params: cfg.hardcoded, ctx: cfg.action };
    let mut exec = Executor::new(cfg);
    let entries = if method.training_only() {
        let e = assets.entries_for(env);
        if e.is_empty() {
            return Err(HarnessError::Config(format!("{method} runs only on training environments; {} has no stored strategies", env_label(env))));
        }
        e
    } else {
        Vec::new()
    };
    let log = match method {
        Method::Hardcoded => exec.execute_strategy(&mut expert.clone(), &mut handle, budget_s),
        Method::NearestNeighbor => {
            let mut p = LibraryPolicy::new(assets.index(method)?.clone(), Selector::NearestOnly, expert);
            exec.execute_strategy(&mut p, &mut handle, budget_s)
        }
        Method::PlrChooser => {
            let model = assets.model.clone().ok_or_else(|| HarnessError::Config("plr-chooser needs a trained model".into()))?;
            let mut p = LibraryPolicy::new(assets.index(method)?.clone(), Selector::Learned(model), expert);
            exec.execute_strategy(&mut p, &mut handle, budget_s)
        }
        Method::OpenLoopOffline => {
            let mut chain = Chain { trees: entries.iter().map(|e| e.tree.clone()).collect(), next: 0, current: None };
            exec.execute_strategy(&mut chain, &mut handle, budget_s)
        }
        Method::ExpectedOffline => expected_offline(&mut exec, &mut handle, &entries, budget_s)?,
    };
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub generator: GeneratorParams,
    /// Simulated seconds of each generating episode.
    pub budget_s: f64,
    pub max_entries_per_env: usize,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self { generator: GeneratorParams::default(), budget_s: DEFAULT_BUDGET_S, max_entries_per_env: 64 }
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates a strategy at the current state, executes it until it runs
/// out, and repeats until the truck is empty or the episode budget is
/// spent. The generator sees the true geometry but not the masses.
pub fn build_env_library(env: &EnvSpec, sim: &SimParams, cfg: &LibraryConfig) -> Result<Vec<LibraryEntry>, HarnessError> {
    let gen_ctx = GeneratorContext::for_sim(sim);
    let mut handle = SimHandle::new(generate_environment(env)?, sim.with_seed(mix(cfg.generator.seed, env.seed)))?;
    let mut exec = Executor::new(ExecutorConfig::for_sim(sim));
    let mut entries = Vec::new();
    let mut t = 0.0;
    while t < cfg.budget_s && !handle.state().is_empty() && entries.len() < cfg.max_entries_per_env {
        let seq = entries.len() as u32;
        let seed = mix(mix(cfg.generator.seed, env.seed), u64::from(seq) + 1);
        let belief = sample_initial_belief(handle.state().world(), &env.mass_dist, cfg.generator.n_particles, seed)?;
        let params = GeneratorParams { seed, ..cfg.generator };
        let (tree, _) = generate_strategy(&belief, &params, &gen_ctx)?;
        if tree.action.is_none() {
            break;
        }
        entries.push(LibraryEntry {
            anchor: extract_features(&perceive(handle.state())),
            tree: tree.clone(),
            env_spec: env.clone(),
            seq,
            start_state: Some(handle.state().clone()),
        });
        let mut src = TreeSource::new(tree);
        loop {
            if t >= cfg.budget_s {
                break;
            }
            match exec.step(&mut src, &mut handle, t) {
                Ok(rec) => t += rec.duration(),
                Err(EndReason::SourceExhausted) => break,
                Err(_) => return Ok(entries),
            }
        }
    }
    Ok(entries)
}

/// Libraries for several environments, built in parallel and concatenated
/// in input order.
pub fn build_library(envs: &[EnvSpec], sim: &SimParams, cfg: &LibraryConfig) -> Result<StrategyLibrary, HarnessError> {
    let parts: Vec<Result<Vec<LibraryEntry>, HarnessError>> =
        envs.par_iter().map(|e| build_env_library(e, sim, cfg)).collect();
    let mut lib = StrategyLibrary::default();
    for p in parts {
        lib.entries.extend(p?);
    }
    Ok(lib)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub envs: Vec<EnvSpec>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub budget_s: f64,
    pub sim: SimParams,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.envs.is_empty() || self.methods.is_empty() {
            return bad("at least one environment and one method are required");
        }
        if !(self.budget_s.is_finite() && self.budget_s > 0.0) {
            return bad("budget must be positive");
        }
        for e in &self.envs {
            e.validate()?;
        }
        self.sim.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = (self.budget_s / GRID_STEP_S).ceil() as usize;
        (0..=n).map(|k| k as f64 * GRID_STEP_S).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub env: String,
    pub method: Method,
    pub seed: u64,
    pub result: Result<EpisodeLog, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub env: String,
    pub method: Method,
    pub runs: usize,
    /// `seed: message` for every episode that could not run.
    pub failures: Vec<String>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub final_mean: f64,
    pub final_se: f64,
    pub pick: KindSummary,
    pub sweep: KindSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub grid_s: Vec<f64>,
    pub cells: Vec<Cell>,
    #[serde(skip)]
    pub runs: Vec<Run>,
}

/// Mean and standard error; a single sample has zero error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates finished runs into per-(env, method) cells sorted by key.
pub fn summarize(grid: &[f64], runs: Vec<Run>) -> Report {
    let mut keys: Vec<(String, Method)> = runs.iter().map(|r| (r.env.clone(), r.method)).collect();
    keys.sort();
    keys.dedup();
    let cells = keys
        .into_iter()
        .map(|(env, method)| {
            let mine: Vec<&Run> = runs.iter().filter(|r| r.env == env && r.method == method).collect();
            let logs: Vec<&EpisodeLog> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let failures = mine.iter().filter_map(|r| r.result.as_ref().err().map(|e| format!("{}: {e}", r.seed))).collect();
            let (mut mean, mut se) = (Vec::new(), Vec::new());
            for &t in grid {
                let xs: Vec<f64> = logs.iter().map(|l| l.boxes_at(t) as f64).collect();
                let (m, s) = mean_se(&xs);
                mean.push(m);
                se.push(s);
            }
            let finals: Vec<f64> = logs.iter().map(|l| l.boxes_unloaded() as f64).collect();
            let (final_mean, final_se) = mean_se(&finals);
            let mut merged = EpisodeLog::new(0);
            merged.records = logs.iter().flat_map(|l| l.records.iter().cloned()).collect();
            let s = merged.summary();
            Cell { env, method, runs: logs.len(), failures, mean, se, final_mean, final_se, pick: s.pick, sweep: s.sweep }
        })
        .collect();
    Report { grid_s: grid.to_vec(), cells, runs }
}

/// Runs every (env, method, seed) episode in parallel. Episodes that cannot
/// run are recorded in their cell instead of failing the report.
pub fn compare(cfg: &ExperimentConfig, assets: &Assets) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for env in &cfg.envs {
        for &method in &cfg.methods {
            for &seed in &cfg.seeds {
                jobs.push((env, method, seed));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(env, method, seed)| Run {
            env: env_label(env),
            method,
            seed,
            result: run_episode(method, env, seed, cfg.budget_s, &cfg.sim, assets).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(summarize(&cfg.grid(), runs))
}

impl Report {
    /// Long format: one row per run and grid time.
    pub fn write_curves<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| HarnessError::Io(std::io::Error::other(e));
        w.write_record(["env", "method", "seed", "t_s", "boxes"]).map_err(io)?;
        let mut runs: Vec<&Run> = self.runs.iter().collect();
        runs.sort_by(|a, b| (&a.env, a.method, a.seed).cmp(&(&b.env, b.method, b.seed)));
        for r in runs {
            let Ok(log) = &r.result else { continue };
            for &t in &self.grid_s {
                w.write_record([r.env.clone(), r.method.to_string(), r.seed.to_string(), format!("{t}"), log.boxes_at(t).to_string()])
                    .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `curves.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        self.write_curves(std::fs::File::create(dir.join("curves.csv"))?)?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }

    pub fn cell(&self, env: &str, method: Method) -> Option<&Cell> {
        self.cells.iter().find(|c| c.env == env && c.method == method)
    }
}
