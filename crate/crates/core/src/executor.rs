//! Turns abstract actions into motion queries, runs them through the planner
//! and the simulator, and keeps the episode log.

use std::io;

use serde::{Deserialize, Serialize};

use crate::motion::{self, EePose, Goal, Link, Mode, PlanFailure, PlanQuery, RobotConfig, RobotModel, Trajectory};
use crate::sim::{SimCommand, SimHandle, SimParams};
use crate::strategy::{
    self, advance, face, hardcoded_decision, AbstractAction, ActionContext, ActionKind, Cursor, Decision,
    HardcodedParams, InstantiationFailure, Observation, Step, StrategyNode,
};
use crate::world::{perceive, WorldState};

pub const PICK_MODES: [Mode; 8] = [
    Mode::M5BaseCartesian,
    Mode::M3Nose,
    Mode::M2ArmBase,
    Mode::M4ArmCartesian,
    Mode::M4ArmCartesian,
    Mode::M1Arm,
    Mode::M3Nose,
    Mode::M5BaseCartesian,
];
pub const SWEEP_MODES: [Mode; 5] =
    [Mode::M5BaseCartesian, Mode::M3Nose, Mode::M5BaseCartesian, Mode::M5BaseCartesian, Mode::M3Nose];

/// Nose joint targets: (lift, extension, lip pitch).
pub const NOSE_TRAVEL: [f64; 3] = [0.0, 0.0, 0.0];
/// Reaches past the travel pose so raising the nose never moves it into
/// the face it was lowered against.
pub const NOSE_PICK: [f64; 3] = [-0.3, 0.1, 0.3];
pub const NOSE_SWEEP: [f64; 3] = [-0.2, 0.4, 0.2];

/// Base front distance kept from the nearest box before a Pick / Sweep.
pub const PICK_STANDOFF: f64 = 1.0;
pub const SWEEP_STANDOFF: f64 = 1.35;
pub const PREGRASP_GAP: f64 = 0.15;
/// The approach stops this short of the face; suction closes the gap.
pub const CONTACT_GAP: f64 = 0.01;
/// Lowest gripper centre height; keeps the plate above the lowered nose.
pub const PICK_MIN_Z: f64 = 0.65;
pub const BASE_RETREAT: f64 = 0.5;
/// Delivery pose above the base, relative to the base front.
pub const DROP_POSE: (f64, f64) = (0.4, 1.6);

pub fn home_config() -> RobotConfig {
    RobotConfig { base_x: -0.5, nose: NOSE_TRAVEL, arm: [0.0; 4] }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub robot: RobotModel,
    pub action: ActionContext,
    pub hardcoded: HardcodedParams,
    pub timeout_s: f64,
    /// Passed to every query; the default takes ARA*'s first solution.
    pub accept_bound: Option<f64>,
    /// Episode stops after this many failed actions in a row.
    pub max_failed_actions: usize,
}

impl ExecutorConfig {
    pub fn for_sim(p: &SimParams) -> Self {
        let hardcoded = HardcodedParams::default();
        Self {
            robot: RobotModel::default(),
            action: ActionContext::for_sim(p, &hardcoded),
            hardcoded,
            timeout_s: motion::DEFAULT_TIMEOUT_S,
            accept_bound: Some(5.0),
            max_failed_actions: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GoalRule {
    BaseTo(f64),
    BaseBy(f64),
    Nose([f64; 3]),
    Pose(EePose),
    /// Pose relative to the current base front.
    PoseFromBase { dx: f64, z: f64, pitch: f64 },
    ArmBy(f64),
}

impl GoalRule {
    pub fn resolve(&self, current: &RobotConfig) -> Goal {
        match *self {
            GoalRule::BaseTo(x) => Goal::Displacement(x - current.base_x),
            GoalRule::BaseBy(dx) | GoalRule::ArmBy(dx) => Goal::Displacement(dx),
            GoalRule::Nose(n) => Goal::Joints(RobotConfig { nose: n, ..*current }),
            GoalRule::Pose(p) => Goal::Pose(p),
            GoalRule::PoseFromBase { dx, z, pitch } => Goal::Pose(EePose { x: current.base_x + dx, z, pitch }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WorldView {
    Perceived,
    /// Boxes with depth index below `limit` removed.
    SweepCleared { limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subaction {
    pub mode: Mode,
    pub rule: GoalRule,
    pub view: WorldView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlanSpec {
    pub action: AbstractAction,
    pub command: SimCommand,
    pub subactions: Vec<Subaction>,
}

impl ActionPlanSpec {
    pub fn modes(&self) -> Vec<Mode> {
        self.subactions.iter().map(|s| s.mode).collect()
    }

    /// Concrete queries with starts chained through nominal end states.
    pub fn queries(&self, w: &WorldState, start: &RobotConfig, cfg: &ExecutorConfig) -> Vec<PlanQuery> {
        let mut cur = *start;
        self.subactions
            .iter()
            .map(|s| {
                let q = PlanQuery {
                    mode: s.mode,
                    start: cur,
                    goal: s.rule.resolve(&cur),
                    world: view(w, s.view),
                    timeout: cfg.timeout_s,
                    accept_bound: cfg.accept_bound,
                };
                cur = nominal_end(&cfg.robot, &q);
                q
            })
            .collect()
    }
}

fn nominal_end(m: &RobotModel, q: &PlanQuery) -> RobotConfig {
    let mut c = q.start;
    match q.goal {
        Goal::Displacement(dx) if q.mode == Mode::M5BaseCartesian => c.base_x += dx,
        Goal::Displacement(dx) => {
            let p = m.end_effector(&c);
            if let Some(n) = m.inverse_kinematics(&c, &EePose { x: p.x + dx, ..p }) {
                c = n;
            }
        }
        Goal::Joints(g) => c.nose = g.nose,
        Goal::Pose(p) => {
            if let Some(n) = m.inverse_kinematics(&c, &p) {
                c = n;
            }
        }
        Goal::NearestValid => {}
    }
    c
}

fn view(w: &WorldState, v: WorldView) -> WorldState {
    match v {
        WorldView::Perceived => w.clone(),
        WorldView::SweepCleared { limit } => {
            let ids: Vec<u32> = w.boxes().iter().filter(|b| b.pos.d < limit).map(|b| b.id).collect();
            let mut out = w.clone();
            out.remove_boxes(&ids);
            out
        }
    }
}

/// Subaction sequence for an already instantiated command.
pub fn spec_for_command(action: AbstractAction, command: SimCommand, w: &WorldState, cfg: &ExecutorConfig) -> ActionPlanSpec {
    let cs = w.cell_size();
    let front = w.front_depth().unwrap_or(0) as f64 * cs;
    let sub = |mode, rule| Subaction { mode, rule, view: WorldView::Perceived };
    let subactions = match command {
        SimCommand::Pick { grasp, footprint } => {
            let m = &cfg.robot;
            let top = w.dims().h as f64 * cs;
            let z = (((grasp.1 + 1) as f64 - footprint.1 as f64 / 2.0) * cs).clamp(PICK_MIN_Z, top - m.gripper_height / 2.0);
            let x_face = contact_face(w, m, z, grasp, footprint).unwrap_or(front);
            vec![
                sub(Mode::M5BaseCartesian, GoalRule::BaseTo(front - PICK_STANDOFF)),
                sub(Mode::M3Nose, GoalRule::Nose(NOSE_PICK)),
                sub(Mode::M2ArmBase, GoalRule::Pose(EePose { x: x_face - PREGRASP_GAP, z, pitch: 0.0 })),
                sub(Mode::M4ArmCartesian, GoalRule::ArmBy(PREGRASP_GAP - CONTACT_GAP)),
                sub(Mode::M4ArmCartesian, GoalRule::ArmBy(CONTACT_GAP - PREGRASP_GAP)),
                sub(Mode::M1Arm, GoalRule::PoseFromBase { dx: DROP_POSE.0, z: DROP_POSE.1, pitch: 0.0 }),
                sub(Mode::M3Nose, GoalRule::Nose(NOSE_TRAVEL)),
                sub(Mode::M5BaseCartesian, GoalRule::BaseBy(-BASE_RETREAT)),
            ]
        }
        SimCommand::Sweep { depth } => {
            let limit = w.front_depth().unwrap_or(0) + depth;
            let cleared = WorldView::SweepCleared { limit };
            // Stop the nose short of the front bulkhead.
            let room = w.dims().d as f64 * cs - CONTACT_GAP - (front - SWEEP_STANDOFF + nose_reach(&cfg.robot, NOSE_SWEEP));
            let dist = (depth as f64 * cs).min(room).max(0.0);
            vec![
                sub(Mode::M5BaseCartesian, GoalRule::BaseTo(front - SWEEP_STANDOFF)),
                sub(Mode::M3Nose, GoalRule::Nose(NOSE_SWEEP)),
                Subaction { mode: Mode::M5BaseCartesian, rule: GoalRule::BaseBy(dist), view: cleared },
                Subaction { mode: Mode::M5BaseCartesian, rule: GoalRule::BaseBy(-dist), view: cleared },
                sub(Mode::M3Nose, GoalRule::Nose(NOSE_TRAVEL)),
            ]
        }
    };
    ActionPlanSpec { action, command, subactions }
}

/// How far the nose reaches in front of the base for the given pose.
pub fn nose_reach(m: &RobotModel, nose: [f64; 3]) -> f64 {
    let c = RobotConfig { base_x: 0.0, nose, arm: [0.0; 4] };
    m.link_boxes(&c, 0.0)
        .iter()
        .filter(|(l, _)| matches!(l, Link::NosePlate | Link::NoseLip))
        .map(|(_, b)| b.max[0])
        .fold(0.0, f64::max)
}

/// Nearest box face the gripper meets at height `z`: over the cells its
/// plate covers and the cells the suction footprint grasps.
fn contact_face(
    w: &WorldState,
    m: &RobotModel,
    z: f64,
    grasp: (usize, usize),
    footprint: (usize, usize),
) -> Option<f64> {
    let cs = w.cell_size();
    let dims = w.dims();
    let yc = dims.w as f64 * cs / 2.0;
    let span = |lo: f64, hi: f64, n: usize| {
        let a = (lo / cs).floor().max(0.0) as usize;
        let b = ((hi / cs).ceil().max(0.0) as usize).min(n);
        a..b
    };
    let faces = face(w);
    let plate_w = span(yc - m.gripper_width / 2.0, yc + m.gripper_width / 2.0, dims.w);
    let plate_h = span(z - m.gripper_height / 2.0, z + m.gripper_height / 2.0, dims.h);
    let w0 = grasp.0.saturating_sub((footprint.0 - 1) / 2);
    let grip_w = w0..(w0 + footprint.0).min(dims.w);
    let grip_h = (grasp.1 + 1).saturating_sub(footprint.1)..grasp.1 + 1;
    let plate = plate_w.flat_map(|wi| plate_h.clone().map(move |h| (wi, h)));
    let grip = grip_w.flat_map(|wi| grip_h.clone().map(move |h| (wi, h)));
    plate.chain(grip).filter_map(|(wi, h)| faces[wi][h]).min().map(|d| d as f64 * cs)
}

/// The subaction plan for an abstract action against a perceived world.
pub fn instantiate(a: &AbstractAction, w: &WorldState, cfg: &ExecutorConfig) -> Result<ActionPlanSpec, InstantiationFailure> {
    let command = strategy::instantiate(a, w, &cfg.action)?;
    Ok(spec_for_command(*a, command, w, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceStep {
    Act(AbstractAction),
    Command { action: AbstractAction, command: SimCommand },
    Stop,
}

/// Anything that picks the next action: a strategy tree, the expert rule or
/// a learned chooser.
pub trait ActionSource {
    fn next_action(&mut self, perceived: &WorldState, z: Observation) -> SourceStep;
}

#[derive(Debug, Clone)]
pub struct TreeSource {
    pub tree: StrategyNode,
    pub cursor: Cursor,
}

impl TreeSource {
    pub fn new(tree: StrategyNode) -> Self {
        Self { tree, cursor: Cursor::Start }
    }
}

impl ActionSource for TreeSource {
    fn next_action(&mut self, _: &WorldState, z: Observation) -> SourceStep {
        let Observation::Seen(z) = z else { return SourceStep::Stop };
        let (step, cursor) = advance(&self.tree, &self.cursor, z);
        self.cursor = cursor;
        match step {
            Step::Act(a) => SourceStep::Act(a),
            Step::Exhausted => SourceStep::Stop,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HardcodedSource {
    pub params: HardcodedParams,
    pub ctx: ActionContext,
}

impl ActionSource for HardcodedSource {
    fn next_action(&mut self, w: &WorldState, _: Observation) -> SourceStep {
        match hardcoded_decision(w, &self.params, &self.ctx) {
            Decision::Act { action, command } => SourceStep::Command { action, command },
            Decision::Done => SourceStep::Stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t_start: f64,
    pub action: AbstractAction,
    pub kind: ActionKind,
    /// The requested action could not be carried out and the expert's
    /// choice was executed instead.
    pub fallback: bool,
    pub executed: bool,
    pub modes: Vec<Mode>,
    pub snaps: usize,
    pub plan_time: f64,
    pub exec_time: f64,
    pub motion_time: f64,
    pub boxes_unloaded: usize,
    pub boxes_dropped: usize,
    pub failures: usize,
}

impl ActionRecord {
    pub fn duration(&self) -> f64 {
        self.plan_time + self.exec_time
    }

    pub fn rate(&self) -> f64 {
        let d = self.duration();
        if d > 0.0 {
            self.boxes_unloaded as f64 / d
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndReason {
    TruckEmpty,
    Budget,
    SourceExhausted,
    Failures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub initial_boxes: usize,
    pub records: Vec<ActionRecord>,
    pub end_reason: Option<EndReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub executions: usize,
    pub plan_time_s: Stat,
    pub exec_time_s: Stat,
    pub rate_boxes_per_s: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub pick: KindSummary,
    pub sweep: KindSummary,
    pub boxes_unloaded: usize,
    pub initial_boxes: usize,
    pub elapsed_s: f64,
    pub failures: usize,
    pub fallbacks: usize,
    pub snaps: usize,
    pub end_reason: Option<EndReason>,
}

impl EpisodeLog {
    pub fn new(initial_boxes: usize) -> Self {
        Self { initial_boxes, records: Vec::new(), end_reason: None }
    }

    pub fn elapsed(&self) -> f64 {
        self.records.iter().map(ActionRecord::duration).sum()
    }

    pub fn boxes_unloaded(&self) -> usize {
        self.records.iter().map(|r| r.boxes_unloaded).sum()
    }

    /// `(end time, cumulative boxes)` after each action, starting at the origin.
    pub fn curve(&self) -> Vec<(f64, usize)> {
        let mut out = vec![(0.0, 0)];
        let (mut t, mut n) = (0.0, 0);
        for r in &self.records {
            t += r.duration();
            n += r.boxes_unloaded;
            out.push((t, n));
        }
        out
    }

    /// Boxes unloaded by time `t`; an action's boxes count once it ends.
    pub fn boxes_at(&self, t: f64) -> usize {
        self.curve().iter().take_while(|(ti, _)| *ti <= t).last().map_or(0, |(_, n)| *n)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "boxes_cum", "action", "plan_time_s", "exec_time_s", "failures"])?;
        let (mut t, mut n) = (0.0, 0);
        for r in &self.records {
            t += r.duration();
            n += r.boxes_unloaded;
            w.write_record([
                format!("{t:.3}"),
                n.to_string(),
                r.action.to_string(),
                format!("{:.3}", r.plan_time),
                format!("{:.3}", r.exec_time),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> EpisodeSummary {
        let kind = |k: ActionKind| {
            let rs: Vec<&ActionRecord> = self.records.iter().filter(|r| r.executed && r.kind == k).collect();
            let col = |f: fn(&ActionRecord) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            KindSummary {
                executions: rs.len(),
                plan_time_s: col(|r| r.plan_time),
                exec_time_s: col(|r| r.exec_time),
                rate_boxes_per_s: col(ActionRecord::rate),
            }
        };
        EpisodeSummary {
            pick: kind(ActionKind::Pick),
            sweep: kind(ActionKind::Sweep),
            boxes_unloaded: self.boxes_unloaded(),
            initial_boxes: self.initial_boxes,
            elapsed_s: self.elapsed(),
            failures: self.records.iter().map(|r| r.failures).sum(),
            fallbacks: self.records.iter().filter(|r| r.fallback).count(),
            snaps: self.records.iter().map(|r| r.snaps).sum(),
            end_reason: self.end_reason,
        }
    }
}

/// Drives one robot through actions. Cloning gives an independent copy,
/// which the data-collection loop uses to probe alternatives.
#[derive(Debug, Clone)]
pub struct Executor {
    pub cfg: ExecutorConfig,
    pub robot: RobotConfig,
    failed_in_row: usize,
}

struct Attempt {
    record: ActionRecord,
    robot: RobotConfig,
}

impl Executor {
    pub fn new(cfg: ExecutorConfig) -> Self {
        Self { cfg, robot: home_config(), failed_in_row: 0 }
    }

    fn plan_with_retry(&self, q: &PlanQuery, rec: &mut ActionRecord) -> Option<Trajectory> {
        match motion::plan(&self.cfg.robot, q) {
            Ok(t) => Some(t),
            Err(e) => {
                rec.failures += 1;
                rec.plan_time += e.planning_time();
                let retry = PlanQuery { timeout: q.timeout * 2.0, ..q.clone() };
                match motion::plan(&self.cfg.robot, &retry) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        rec.failures += 1;
                        rec.plan_time += e.planning_time();
                        None
                    }
                }
            }
        }
    }

    /// Plans and executes one action's subactions, then applies the command
    /// to the simulator if every subaction succeeded.
    fn attempt(&self, spec: &ActionPlanSpec, perceived: &WorldState, sim: &mut SimHandle, t_start: f64) -> Attempt {
        let mut rec = ActionRecord {
            t_start,
            action: spec.action,
            kind: spec.action.kind(),
            fallback: false,
            executed: false,
            modes: Vec::new(),
            snaps: 0,
            plan_time: 0.0,
            exec_time: 0.0,
            motion_time: 0.0,
            boxes_unloaded: 0,
            boxes_dropped: 0,
            failures: 0,
        };
        let mut cur = self.robot;
        let m = &self.cfg.robot;
        if m.collides(&cur, perceived) || !m.within_limits(&cur) {
            let q = PlanQuery {
                mode: Mode::M6SnapToValid,
                start: cur,
                goal: Goal::NearestValid,
                world: perceived.clone(),
                timeout: self.cfg.timeout_s,
                accept_bound: self.cfg.accept_bound,
            };
            rec.snaps += 1;
            match self.plan_with_retry(&q, &mut rec) {
                Some(t) => {
                    rec.plan_time += t.planning_time;
                    rec.motion_time += t.cost;
                    cur = t.end().copied().unwrap_or(cur);
                }
                None => {
                    rec.exec_time = rec.motion_time;
                    return Attempt { record: rec, robot: cur };
                }
            }
        }
        for s in &spec.subactions {
            let q = PlanQuery {
                mode: s.mode,
                start: cur,
                goal: s.rule.resolve(&cur),
                world: view(perceived, s.view),
                timeout: self.cfg.timeout_s,
                accept_bound: self.cfg.accept_bound,
            };
            match self.plan_with_retry(&q, &mut rec) {
                Some(t) => {
                    rec.plan_time += t.planning_time;
                    rec.motion_time += t.cost;
                    rec.modes.push(s.mode);
                    cur = t.end().copied().unwrap_or(cur);
                }
                None => {
                    rec.exec_time = rec.motion_time;
                    return Attempt { record: rec, robot: cur };
                }
            }
        }
        let out = sim.apply(&spec.command).expect("instantiated commands are in range");
        rec.executed = true;
        rec.exec_time = out.duration;
        rec.boxes_unloaded = out.boxes_unloaded;
        rec.boxes_dropped = out.boxes_dropped;
        Attempt { record: rec, robot: cur }
    }

    /// Runs one decision of `source`. `None` when the episode is over.
    pub fn step(&mut self, source: &mut dyn ActionSource, sim: &mut SimHandle, t: f64) -> Result<ActionRecord, EndReason> {
        if self.failed_in_row >= self.cfg.max_failed_actions {
            return Err(EndReason::Failures);
        }
        let perceived = perceive(sim.state());
        let z = strategy::observe(&perceived, &self.cfg.action.thresholds(perceived.dims()));
        if z == Observation::TruckEmpty {
            return Err(EndReason::TruckEmpty);
        }
        let expert = || match hardcoded_decision(&perceived, &self.cfg.hardcoded, &self.cfg.action) {
            Decision::Act { action, command } => Some(spec_for_command(action, command, &perceived, &self.cfg)),
            Decision::Done => None,
        };
        let (spec, mut fallback) = match source.next_action(&perceived, z) {
            SourceStep::Stop => return Err(EndReason::SourceExhausted),
            SourceStep::Command { action, command } => (spec_for_command(action, command, &perceived, &self.cfg), false),
            SourceStep::Act(a) => match instantiate(&a, &perceived, &self.cfg) {
                Ok(spec) => (spec, false),
                Err(_) => (expert().ok_or(EndReason::TruckEmpty)?, true),
            },
        };
        let mut at = self.attempt(&spec, &perceived, sim, t);
        if !at.record.executed && !fallback {
            if let Some(alt) = expert().filter(|alt| alt.command != spec.command) {
                let prev = at.record;
                self.robot = at.robot;
                at = self.attempt(&alt, &perceived, sim, t);
                at.record.plan_time += prev.plan_time;
                at.record.exec_time += prev.exec_time;
                at.record.motion_time += prev.motion_time;
                at.record.failures += prev.failures;
                at.record.snaps += prev.snaps;
                fallback = true;
            }
        }
        at.record.fallback = fallback;
        self.robot = at.robot;
        self.failed_in_row = if at.record.executed { 0 } else { self.failed_in_row + 1 };
        Ok(at.record)
    }

    /// Runs `source` until the truck is empty, the source stops, the budget
    /// is spent or too many actions fail in a row.
    pub fn execute_strategy(&mut self, source: &mut dyn ActionSource, sim: &mut SimHandle, budget_s: f64) -> EpisodeLog {
        let mut log = EpisodeLog::new(sim.state().box_count());
        let mut t = 0.0;
        loop {
            if t >= budget_s {
                log.end_reason = Some(EndReason::Budget);
                break;
            }
            match self.step(source, sim, t) {
                Ok(rec) => {
                    t += rec.duration();
                    log.records.push(rec);
                }
                Err(reason) => {
                    log.end_reason = Some(reason);
                    break;
                }
            }
        }
        log
    }
}

/// Plans a single query with the default robot; convenience for callers
/// outside an episode.
pub fn plan_query(q: &PlanQuery) -> Result<Trajectory, PlanFailure> {
    motion::plan(&RobotModel::default(), q)
}
