//! Strategy generation in belief space.
//!
//! A belief is a handful of weighted particles that share geometry and
//! differ in box masses. The search grows a tree of beliefs by trials: each
//! trial walks down from the root along the guided best action, follows the
//! observation branch with the widest weighted bound gap, expands unexpanded
//! beliefs on the way and backs values up the walked path.
//!
//! Every node carries three values over the objective "seconds spent plus
//! `REMAINING_BOX_COST_S` per box still in the truck when the plan stops":
//! an upper bound `u` (some policy achieves it), a lower bound `l`, and one
//! guidance value per heuristic. Only `u` decides the extracted strategy;
//! guidance only orders the search, and the bounds tell when it is done.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimCommand, SimError, SimHandle, SimParams};
use crate::strategy::{
    instantiate_or_fallback, observe, AbstractAction, ActionContext, HardcodedParams, Observation, StrategyNode,
};
use crate::world::{perceive, MassDistribution, TrueWorldState, WorldError, WorldState};

pub const DEFAULT_PARTICLES: usize = 5;
pub const DEFAULT_HORIZON: usize = 6;
pub const DEFAULT_EPSILON: f64 = 10.0;
pub const DEFAULT_BRANCHING: usize = 6;
/// Cost of each box left behind, and the value of the "boxes remain"
/// heuristic.
pub const REMAINING_BOX_COST_S: f64 = 600.0;
/// Converts the box-count heuristic into seconds.
pub const SECONDS_PER_BOX: f64 = 15.0;
/// Converts the stack-height heuristic into seconds.
pub const SECONDS_PER_LAYER: f64 = 40.0;
const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error("invalid belief: {0}")]
    Belief(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub state: TrueWorldState,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub particles: Vec<Particle>,
}

impl Belief {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn expect(&self, f: impl Fn(&TrueWorldState) -> f64) -> f64 {
        self.particles.iter().map(|p| p.weight * f(&p.state)).sum()
    }

    pub fn expected_count(&self) -> f64 {
        self.expect(|s| s.box_count() as f64)
    }

    /// True when every particle's truck is empty.
    pub fn is_empty(&self) -> bool {
        self.particles.iter().all(|p| p.state.is_empty())
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::Belief(m));
        if self.particles.is_empty() {
            return bad("no particles".into());
        }
        if let Some(p) = self.particles.iter().find(|p| !(p.weight.is_finite() && p.weight > 0.0)) {
            return bad(format!("particle weight {} is not positive", p.weight));
        }
        let total = self.total_weight();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return bad(format!("weights sum to {total}"));
        }
        Ok(())
    }
}

/// `n` particles over `w`'s geometry with i.i.d. masses from `prior`.
pub fn sample_initial_belief(
    w: &WorldState,
    prior: &MassDistribution,
    n: usize,
    seed: u64,
) -> Result<Belief, GeneratorError> {
    if n == 0 {
        return Err(GeneratorError::Belief("at least one particle is required".into()));
    }
    prior.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let particles = (0..n)
        .map(|_| {
            let masses = w.boxes().iter().map(|b| (b.id, prior.sample(&mut rng))).collect();
            Ok(Particle { state: TrueWorldState::new(w.clone(), masses)?, weight: 1.0 / n as f64 })
        })
        .collect::<Result<_, WorldError>>()?;
    Ok(Belief { particles })
}

/// The three heuristic ensemble members, in their native units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heuristics {
    /// `REMAINING_BOX_COST_S` times the probability that boxes remain.
    pub h1: f64,
    /// Expected box count.
    pub h2: f64,
    /// Expected tallest column, in cells.
    pub h3: f64,
}

impl Heuristics {
    /// Guidance keys in seconds; index 0 is the anchor.
    fn keys(&self) -> [f64; 3] {
        [self.h2 * SECONDS_PER_BOX, self.h1, self.h3 * SECONDS_PER_LAYER]
    }
}

pub fn heuristics(b: &Belief) -> Heuristics {
    let max_height = |s: &TrueWorldState| {
        s.world().column_heights().iter().flatten().copied().max().unwrap_or(0) as f64
    };
    Heuristics {
        h1: b.expect(|s| if s.is_empty() { 0.0 } else { REMAINING_BOX_COST_S }),
        h2: b.expected_count(),
        h3: b.expect(max_height),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Inflation applied to heuristic guidance.
    pub epsilon1: f64,
    /// A non-anchor heuristic guides a step only while its best key is
    /// within this factor of the anchor's.
    pub epsilon2: f64,
    pub horizon: usize,
    pub n_particles: usize,
    /// Most observation branches kept per action, by probability mass.
    pub branching: usize,
    pub max_expansions: usize,
    /// Trials without a root improvement before the search stops.
    pub patience: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            epsilon1: DEFAULT_EPSILON,
            epsilon2: DEFAULT_EPSILON,
            horizon: DEFAULT_HORIZON,
            n_particles: DEFAULT_PARTICLES,
            branching: DEFAULT_BRANCHING,
            max_expansions: 200,
            patience: 24,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: &str| Err(GeneratorError::Params(m.into()));
        if !(self.epsilon1.is_finite() && self.epsilon1 >= 1.0) || !(self.epsilon2.is_finite() && self.epsilon2 >= 1.0) {
            return bad("epsilons must be finite and at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.n_particles == 0 || self.branching == 0 || self.max_expansions == 0 {
            return bad("particles, branching and expansion budget must be positive");
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return bad("tolerance must be finite and non-negative");
        }
        Ok(())
    }
}

/// What the generator needs to simulate abstract actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorContext {
    pub sim: SimParams,
    pub action: ActionContext,
    pub hardcoded: HardcodedParams,
}

impl GeneratorContext {
    pub fn for_sim(p: &SimParams) -> Self {
        let hardcoded = HardcodedParams::default();
        Self { sim: *p, action: ActionContext::for_sim(p, &hardcoded), hardcoded }
    }

    /// Shortest duration any action can take.
    fn min_action_cost(&self) -> f64 {
        let d = self.sim.durations;
        d.pick_base_s.min(d.sweep_base_s + d.per_cell_s)
    }
}

/// Outcome group of one action applied to a belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub observation: Observation,
    pub belief: Belief,
    pub prob: f64,
    /// Weight-averaged duration over all particles of the parent.
    pub cost: f64,
    /// Weight-averaged boxes unloaded over all particles of the parent.
    pub boxes: f64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream(parent: u64, k: u64) -> u64 {
    splitmix(parent ^ splitmix(k))
}

fn commands(b: &Belief, a: &AbstractAction, ctx: &GeneratorContext) -> Vec<Option<SimCommand>> {
    b.particles
        .iter()
        .map(|p| instantiate_or_fallback(a, &perceive(&p.state), &ctx.action, &ctx.hardcoded).map(|(_, c)| c))
        .collect()
}

/// Applies `a` to every particle (particle `i` uses rng stream
/// `stream(seed, i)`) and groups the results by what the robot would see.
/// At most `branching` groups are kept, heaviest first, and renormalised.
pub fn propagate(
    b: &Belief,
    a: &AbstractAction,
    ctx: &GeneratorContext,
    seed: u64,
    branching: usize,
) -> Result<Vec<Branch>, GeneratorError> {
    let cmds = commands(b, a, ctx);
    let mut groups: Vec<(Observation, Vec<Particle>, f64)> = Vec::new();
    let (mut cost, mut boxes) = (0.0, 0.0);
    for (i, (p, cmd)) in b.particles.iter().zip(cmds).enumerate() {
        let (state, duration, unloaded) = match cmd {
            Some(cmd) => {
                let mut sim = SimHandle::new(p.state.clone(), ctx.sim.with_seed(stream(seed, i as u64)))?;
                let out = sim.apply(&cmd)?;
                (sim.state().clone(), out.duration, out.boxes_unloaded)
            }
            None => (p.state.clone(), 0.0, 0),
        };
        cost += p.weight * duration;
        boxes += p.weight * unloaded as f64;
        let z = observe(&perceive(&state), &ctx.action.thresholds(state.world().dims()));
        let particle = Particle { state, weight: p.weight };
        match groups.iter_mut().find(|g| g.0 == z) {
            Some(g) => {
                g.2 += p.weight;
                g.1.push(particle);
            }
            None => groups.push((z, vec![particle], p.weight)),
        }
    }
    groups.sort_by(|x, y| y.2.total_cmp(&x.2).then_with(|| x.0.to_string().cmp(&y.0.to_string())));
    groups.truncate(branching.max(1));
    let kept: f64 = groups.iter().map(|g| g.2).sum();
    Ok(groups
        .into_iter()
        .map(|(observation, mut particles, mass)| {
            for p in &mut particles {
                p.weight /= mass;
            }
            Branch { observation, belief: Belief { particles }, prob: mass / kept, cost, boxes }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationStats {
    pub expansions: usize,
    pub trials: usize,
    pub nodes: usize,
    /// Upper bound on the objective at the root after each trial.
    pub root_history: Vec<f64>,
    pub root_value: f64,
    pub root_lower: f64,
    /// Bounds met at the root: the strategy is optimal for the horizon.
    pub proved: bool,
    /// Some trial ended on a terminal or settled node rather than on the
    /// expansion budget.
    pub complete: bool,
}

struct Edge {
    action: AbstractAction,
    cost: f64,
    children: Vec<(Observation, f64, usize)>,
}

struct Node {
    belief: Belief,
    depth: usize,
    seed: u64,
    stop: f64,
    terminal: bool,
    u: f64,
    l: f64,
    g: [f64; 3],
    edges: Option<Vec<Edge>>,
}

struct Search<'a> {
    p: &'a GeneratorParams,
    ctx: &'a GeneratorContext,
    nodes: Vec<Node>,
}

impl Search<'_> {
    fn add(&mut self, belief: Belief, depth: usize, seed: u64) -> usize {
        let stop = REMAINING_BOX_COST_S * belief.expected_count();
        let terminal = depth >= self.p.horizon || belief.is_empty();
        let (l, g) = if terminal {
            (stop, [stop; 3])
        } else {
            let c_min = self.ctx.min_action_cost();
            let l = belief.expect(|s| {
                let n = s.box_count() as f64;
                if n > 0.0 { (REMAINING_BOX_COST_S * n).min(c_min) } else { 0.0 }
            });
            let keys = heuristics(&belief).keys();
            (l, keys.map(|k| (self.p.epsilon1 * k).min(stop)))
        };
        self.nodes.push(Node { belief, depth, seed, stop, terminal, u: stop, l, g, edges: None });
        self.nodes.len() - 1
    }

    fn gap(&self, i: usize) -> f64 {
        self.nodes[i].u - self.nodes[i].l
    }

    fn expand(&mut self, i: usize) -> Result<(), GeneratorError> {
        let node = &self.nodes[i];
        let mut seen: Vec<Vec<Option<SimCommand>>> = Vec::new();
        let mut actions = Vec::new();
        for (k, a) in AbstractAction::all().into_iter().enumerate() {
            let cmds = commands(&node.belief, &a, self.ctx);
            if !seen.contains(&cmds) {
                seen.push(cmds);
                actions.push((k as u64, a));
            }
        }
        let (belief, seed, branching) = (&node.belief, node.seed, self.p.branching);
        let results: Vec<(u64, AbstractAction, Vec<Branch>)> = actions
            .par_iter()
            .map(|&(k, a)| propagate(belief, &a, self.ctx, stream(seed, k), branching).map(|b| (k, a, b)))
            .collect::<Result<_, _>>()?;
        let depth = self.nodes[i].depth + 1;
        let mut edges = Vec::with_capacity(results.len());
        for (k, action, branches) in results {
            let cost = branches.first().map_or(0.0, |b| b.cost);
            let children = branches
                .into_iter()
                .enumerate()
                .map(|(j, br)| {
                    let child = self.add(br.belief, depth, stream(stream(seed, k), j as u64));
                    (br.observation, br.prob, child)
                })
                .collect();
            edges.push(Edge { action, cost, children });
        }
        self.nodes[i].edges = Some(edges);
        Ok(())
    }

    fn q(&self, e: &Edge, f: impl Fn(&Node) -> f64) -> f64 {
        e.cost + e.children.iter().map(|&(_, p, c)| p * f(&self.nodes[c])).sum::<f64>()
    }

    fn backup(&mut self, i: usize) {
        let Some(edges) = &self.nodes[i].edges else { return };
        let n = &self.nodes[i];
        let (mut u, mut l, mut g) = (n.stop, n.stop, [n.stop; 3]);
        for e in edges {
            u = u.min(self.q(e, |c| c.u));
            l = l.min(self.q(e, |c| c.l));
            for (h, gh) in g.iter_mut().enumerate() {
                *gh = gh.min(self.q(e, |c| c.g[h]));
            }
        }
        let n = &mut self.nodes[i];
        n.u = u.min(n.u);
        n.l = l.max(n.l).min(n.u);
        n.g = g;
    }

    /// Action to descend through: the guided best among those whose lower
    /// bound could still beat the node's upper bound.
    fn choose(&self, i: usize, h: usize) -> Option<&Edge> {
        let n = &self.nodes[i];
        let open: Vec<&Edge> =
            n.edges.as_ref()?.iter().filter(|e| self.q(e, |c| c.l) < n.u - self.p.tol).collect();
        let best = |h: usize| {
            open.iter()
                .map(|e| (self.q(e, |c| c.g[h]), *e))
                .min_by(|a, b| a.0.total_cmp(&b.0))
        };
        let anchor = best(0)?;
        if h == 0 {
            return Some(anchor.1);
        }
        match best(h) {
            Some((key, e)) if key <= self.p.epsilon2 * anchor.0 => Some(e),
            _ => Some(anchor.1),
        }
    }

    /// Runs one trial; returns whether it ran out of open nodes (rather than
    /// out of budget), and whether it expanded anything.
    fn trial(&mut self, heuristic: usize, expansions: &mut usize) -> Result<(bool, bool), GeneratorError> {
        let mut path = vec![0];
        let (mut reached, mut expanded) = (true, false);
        loop {
            let i = *path.last().expect("path starts at the root");
            if self.nodes[i].terminal {
                break;
            }
            if self.gap(i) <= self.p.tol {
                break;
            }
            if self.nodes[i].edges.is_none() {
                if *expansions >= self.p.max_expansions {
                    reached = false;
                    break;
                }
                self.expand(i)?;
                *expansions += 1;
                expanded = true;
                self.backup(i);
            }
            let Some(edge) = self.choose(i, heuristic) else { break };
            let next = edge
                .children
                .iter()
                .filter(|&&(_, _, c)| self.gap(c) > self.p.tol)
                .max_by(|a, b| (a.1 * self.gap(a.2)).total_cmp(&(b.1 * self.gap(b.2))).then(b.2.cmp(&a.2)))
                .map(|&(_, _, c)| c);
            match next {
                Some(c) => path.push(c),
                None => break,
            }
        }
        for &i in path.iter().rev() {
            self.backup(i);
        }
        Ok((reached, expanded))
    }

    fn extract(&self, i: usize) -> StrategyNode {
        let n = &self.nodes[i];
        let Some(edges) = n.edges.as_ref().filter(|_| !n.terminal) else {
            return StrategyNode::default();
        };
        let best = edges
            .iter()
            .map(|e| (self.q(e, |c| c.u), e))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .filter(|(q, _)| *q < n.stop - self.p.tol);
        let Some((_, e)) = best else {
            return StrategyNode::default();
        };
        let mut node = StrategyNode::leaf(e.action);
        for &(z, _, c) in &e.children {
            if let Observation::Seen(z) = z {
                let sub = self.extract(c);
                if sub.action.is_some() {
                    node.children.insert(z, sub);
                }
            }
        }
        node
    }
}

/// Searches for the strategy minimising expected seconds plus
/// `REMAINING_BOX_COST_S` per box left after at most `horizon` actions.
pub fn generate_strategy(
    b0: &Belief,
    p: &GeneratorParams,
    ctx: &GeneratorContext,
) -> Result<(StrategyNode, GenerationStats), GeneratorError> {
    p.validate()?;
    ctx.sim.validate()?;
    b0.validate()?;
    let mut search = Search { p, ctx, nodes: Vec::new() };
    search.add(b0.clone(), 0, p.seed);
    let mut stats = GenerationStats::default();
    let mut stall = 0;
    while search.gap(0) > p.tol {
        let before = search.nodes[0].u;
        let (reached, expanded) = search.trial(stats.trials % 3, &mut stats.expansions)?;
        stats.trials += 1;
        stats.complete |= reached;
        let after = search.nodes[0].u;
        stats.root_history.push(after);
        stall = if after < before - p.tol { 0 } else { stall + 1 };
        if stall >= p.patience || (!expanded && stats.expansions >= p.max_expansions) {
            break;
        }
    }
    let root = &search.nodes[0];
    stats.proved = search.gap(0) <= p.tol;
    stats.complete |= stats.proved;
    stats.root_value = root.u;
    stats.root_lower = root.l;
    stats.nodes = search.nodes.len();
    Ok((search.extract(0), stats))
}
