//! Motion planning for the six query modes: three lattice searches, two
//! straight-line interpolations and a snap to the nearest valid state.
//!
//! Planning time is reported on a simulated clock: one expansion (or one
//! interpolation check) costs `1 / EXPANSIONS_PER_SECOND` seconds, so a
//! timeout is an expansion budget and results never depend on the host.

mod robot;
pub mod search;

pub use robot::{
    Aabb, EePose, Link, RobotConfig, RobotFileError, RobotModel, ARM_EXTEND, BASE_X, DOF, GRIPPER, JOINT_NAMES,
    NOSE_EXTEND, NOSE_LIFT, NOSE_PITCH, SELF_COLLISION_PAIRS, SHOULDER, WRIST,
};

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::WorldState;
use search::{ara_star, default_schedule, Improvement, SearchOutcome, SearchSpace, SearchStatus};

pub const EXPANSIONS_PER_SECOND: f64 = 10_000.0;
pub const DEFAULT_TIMEOUT_S: f64 = 5.0;
/// Cartesian interpolation step for M4/M5.
pub const CARTESIAN_STEP: f64 = 0.05;
const MAX_LATTICE_DOF: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    M1Arm,
    M2ArmBase,
    M3Nose,
    M4ArmCartesian,
    M5BaseCartesian,
    M6SnapToValid,
}

impl Mode {
    pub fn dofs(self) -> &'static [usize] {
        match self {
            Mode::M1Arm => &[SHOULDER, ARM_EXTEND, WRIST, GRIPPER],
            Mode::M2ArmBase => &[BASE_X, SHOULDER, ARM_EXTEND, WRIST, GRIPPER],
            Mode::M3Nose => &[NOSE_LIFT, NOSE_EXTEND, NOSE_PITCH],
            Mode::M4ArmCartesian | Mode::M5BaseCartesian => &[BASE_X],
            Mode::M6SnapToValid => &[BASE_X, NOSE_LIFT, NOSE_EXTEND, NOSE_PITCH, SHOULDER, ARM_EXTEND],
        }
    }

    /// Degrees of freedom as counted per mode (Cartesian modes move one
    /// Cartesian axis).
    pub fn dof_count(self) -> usize {
        self.dofs().len()
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::M1Arm => "M1",
            Mode::M2ArmBase => "M2",
            Mode::M3Nose => "M3",
            Mode::M4ArmCartesian => "M4",
            Mode::M5BaseCartesian => "M5",
            Mode::M6SnapToValid => "M6",
        }
    }

    pub const ALL: [Mode; 6] =
        [Mode::M1Arm, Mode::M2ArmBase, Mode::M3Nose, Mode::M4ArmCartesian, Mode::M5BaseCartesian, Mode::M6SnapToValid];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Pose(EePose),
    Joints(RobotConfig),
    /// Metres along the depth axis.
    Displacement(f64),
    NearestValid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanQuery {
    pub mode: Mode,
    pub start: RobotConfig,
    pub goal: Goal,
    pub world: WorldState,
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    /// Return as soon as the plan is proven within this factor of optimal.
    /// Unset runs the whole schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept_bound: Option<f64>,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

impl PlanQuery {
    pub fn validate(&self) -> Result<(), PlanFailure> {
        let ok = matches!(
            (self.mode, &self.goal),
            (Mode::M1Arm | Mode::M2ArmBase, Goal::Pose(_))
                | (Mode::M3Nose, Goal::Joints(_))
                | (Mode::M4ArmCartesian | Mode::M5BaseCartesian, Goal::Displacement(_))
                | (Mode::M6SnapToValid, Goal::NearestValid)
        );
        if !ok {
            return Err(PlanFailure::InvalidQuery(format!("goal does not match mode {}", self.mode.label())));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(PlanFailure::InvalidQuery("timeout must be positive".into()));
        }
        if self.accept_bound.is_some_and(|b| b.is_nan() || b < 1.0) {
            return Err(PlanFailure::InvalidQuery("accept bound must be at least 1".into()));
        }
        let finite = |c: &RobotConfig| c.joints().iter().all(|v| v.is_finite());
        let goal_finite = match self.goal {
            Goal::Pose(p) => p.x.is_finite() && p.z.is_finite() && p.pitch.is_finite(),
            Goal::Joints(c) => finite(&c),
            Goal::Displacement(d) => d.is_finite(),
            Goal::NearestValid => true,
        };
        if !finite(&self.start) || !goal_finite {
            return Err(PlanFailure::InvalidQuery("non-finite values".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        let q: PlanQuery = serde_json::from_str(s)?;
        q.validate().map_err(serde::de::Error::custom)?;
        Ok(q)
    }

    pub fn budget(&self) -> usize {
        (self.timeout * EXPANSIONS_PER_SECOND).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnytimeStep {
    pub epsilon: f64,
    pub cost: f64,
    pub bound: f64,
    pub expansions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<RobotConfig>,
    pub cost: f64,
    pub suboptimality_bound: f64,
    pub planning_time: f64,
    pub expansions: usize,
    #[serde(default)]
    pub anytime: Vec<AnytimeStep>,
}

impl Trajectory {
    fn empty() -> Self {
        Self { waypoints: Vec::new(), cost: 0.0, suboptimality_bound: 1.0, planning_time: 0.0, expansions: 0, anytime: Vec::new() }
    }

    pub fn end(&self) -> Option<&RobotConfig> {
        self.waypoints.last()
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum PlanFailure {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("no solution within the budget ({expansions} expansions)")]
    Timeout { expansions: usize },
    #[error("goal unreachable ({expansions} expansions)")]
    Unreachable { expansions: usize },
    #[error("path blocked at step {step}")]
    Blocked { step: usize, expansions: usize },
}

impl PlanFailure {
    /// Simulated planning time spent before failing.
    pub fn planning_time(&self) -> f64 {
        match self {
            PlanFailure::Timeout { expansions }
            | PlanFailure::Unreachable { expansions }
            | PlanFailure::Blocked { expansions, .. } => *expansions as f64 / EXPANSIONS_PER_SECOND,
            _ => 0.0,
        }
    }
}

pub fn micros(seconds: f64) -> u64 {
    (seconds * 1e6 - 1e-3).ceil().max(0.0) as u64
}

/// Time to move between two configurations with all joints in parallel.
pub fn move_duration(m: &RobotModel, a: &RobotConfig, b: &RobotConfig) -> f64 {
    (0..DOF).map(|j| (a.get(j) - b.get(j)).abs() / m.speeds[j]).fold(0.0, f64::max)
}

pub fn collides(m: &RobotModel, c: &RobotConfig, w: &WorldState) -> bool {
    m.collides(c, w)
}

pub fn plan(m: &RobotModel, q: &PlanQuery) -> Result<Trajectory, PlanFailure> {
    q.validate()?;
    if q.mode != Mode::M6SnapToValid && (!m.within_limits(&q.start) || m.collides(&q.start, &q.world)) {
        return Err(PlanFailure::StartInCollision);
    }
    match q.goal {
        Goal::Displacement(dx) if q.mode == Mode::M5BaseCartesian => plan_base_line(m, q, dx),
        Goal::Displacement(dx) => plan_arm_line(m, q, dx),
        Goal::NearestValid => plan_snap(m, q),
        Goal::Pose(_) | Goal::Joints(_) => plan_lattice(m, q),
    }
}

/// Interpolates `from -> to` so that no joint moves more than one lattice
/// step between checks; true when every sample is in limits and free.
fn segment_clear(m: &RobotModel, w: &WorldState, from: &RobotConfig, to: &RobotConfig) -> bool {
    let steps = (0..DOF)
        .map(|j| ((from.get(j) - to.get(j)).abs() / m.resolution[j]).ceil() as usize)
        .max()
        .unwrap_or(0)
        .max(1);
    (1..=steps).all(|i| {
        let t = i as f64 / steps as f64;
        let q: [f64; DOF] = std::array::from_fn(|j| from.get(j) + t * (to.get(j) - from.get(j)));
        let c = RobotConfig::from_joints(q);
        m.within_limits(&c) && !m.collides(&c, w)
    })
}

fn plan_base_line(m: &RobotModel, q: &PlanQuery, dx: f64) -> Result<Trajectory, PlanFailure> {
    if dx == 0.0 {
        return Ok(Trajectory::empty());
    }
    let n = (dx.abs() / CARTESIAN_STEP).ceil() as usize;
    let mut end = q.start;
    end.base_x += dx;
    for i in 1..=n {
        let mut c = q.start;
        c.base_x += dx * i as f64 / n as f64;
        if !m.within_limits(&c) || m.collides(&c, &q.world) {
            return Err(PlanFailure::Blocked { step: i, expansions: i });
        }
    }
    Ok(Trajectory {
        waypoints: vec![q.start, end],
        cost: micros(dx.abs() / m.speeds[BASE_X]) as f64 / 1e6,
        suboptimality_bound: 1.0,
        planning_time: n as f64 / EXPANSIONS_PER_SECOND,
        expansions: n,
        anytime: Vec::new(),
    })
}

fn plan_arm_line(m: &RobotModel, q: &PlanQuery, dx: f64) -> Result<Trajectory, PlanFailure> {
    if dx == 0.0 {
        return Ok(Trajectory::empty());
    }
    let n = (dx.abs() / CARTESIAN_STEP).ceil() as usize;
    let p0 = m.end_effector(&q.start);
    let mut waypoints = vec![q.start];
    let mut cost = 0u64;
    let mut prev = q.start;
    for i in 1..=n {
        let target = EePose { x: p0.x + dx * i as f64 / n as f64, ..p0 };
        let c = match m.inverse_kinematics(&prev, &target) {
            Some(c) if !m.collides(&c, &q.world) => c,
            _ => return Err(PlanFailure::Blocked { step: i, expansions: i }),
        };
        cost += micros(move_duration(m, &prev, &c));
        waypoints.push(c);
        prev = c;
    }
    Ok(Trajectory {
        waypoints,
        cost: cost as f64 / 1e6,
        suboptimality_bound: 1.0,
        planning_time: n as f64 / EXPANSIONS_PER_SECOND,
        expansions: n,
        anytime: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatticeState {
    At([i32; MAX_LATTICE_DOF]),
    Goal,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Pose(EePose),
    Lattice([i32; MAX_LATTICE_DOF]),
    AnyValid,
}

/// A lattice of the active joints anchored at the start configuration,
/// with single-joint primitives of 1 and 4 steps.
pub struct Lattice<'a> {
    model: &'a RobotModel,
    world: &'a WorldState,
    start: RobotConfig,
    dofs: &'static [usize],
    target: Target,
    allow_collisions: bool,
    /// End-effector speed ceilings, m/s: one joint moving alone, and all
    /// active joints together (the final IK jump).
    v_single: f64,
    v_joint: f64,
    valid: RefCell<HashMap<[i32; MAX_LATTICE_DOF], bool>>,
}

pub const PRIMITIVE_STEPS: [i32; 4] = [1, -1, 4, -4];

impl<'a> Lattice<'a> {
    pub fn for_query(model: &'a RobotModel, q: &'a PlanQuery) -> Self {
        let dofs = q.mode.dofs();
        let lip = model.ee_lipschitz();
        let v = dofs.iter().map(|&j| lip[j] * model.speeds[j]);
        let v_single = v.clone().fold(0.0, f64::max);
        let v_joint = v.sum();
        let mut lat = Self {
            model,
            world: &q.world,
            start: q.start,
            dofs,
            target: Target::AnyValid,
            allow_collisions: q.mode == Mode::M6SnapToValid,
            v_single,
            v_joint,
            valid: RefCell::new(HashMap::new()),
        };
        lat.target = match q.goal {
            Goal::Pose(p) => Target::Pose(p),
            Goal::Joints(g) => Target::Lattice(lat.snap(&g)),
            _ => Target::AnyValid,
        };
        lat
    }

    pub fn start_state(&self) -> LatticeState {
        LatticeState::At([0; MAX_LATTICE_DOF])
    }

    /// Nearest lattice offsets to a configuration, clamped into limits.
    pub fn snap(&self, c: &RobotConfig) -> [i32; MAX_LATTICE_DOF] {
        let mut o = [0; MAX_LATTICE_DOF];
        for (i, &j) in self.dofs.iter().enumerate() {
            let res = self.model.resolution[j];
            let [lo, hi] = self.model.limits[j];
            let s = self.start.get(j);
            let k = ((c.get(j) - s) / res).round() as i32;
            let kmin = ((lo - s) / res - 1e-9).ceil() as i32;
            let kmax = ((hi - s) / res + 1e-9).floor() as i32;
            o[i] = k.clamp(kmin, kmax.max(kmin));
        }
        o
    }

    pub fn config(&self, o: &[i32; MAX_LATTICE_DOF]) -> RobotConfig {
        let mut c = self.start;
        for (i, &j) in self.dofs.iter().enumerate() {
            c.set(j, self.start.get(j) + o[i] as f64 * self.model.resolution[j]);
        }
        c
    }

    fn in_limits(&self, o: &[i32; MAX_LATTICE_DOF]) -> bool {
        self.model.within_limits(&self.config(o))
    }

    fn free(&self, o: &[i32; MAX_LATTICE_DOF]) -> bool {
        if let Some(v) = self.valid.borrow().get(o) {
            return *v;
        }
        let c = self.config(o);
        let v = self.model.within_limits(&c) && !self.model.collides(&c, self.world);
        self.valid.borrow_mut().insert(*o, v);
        v
    }

    fn passable(&self, o: &[i32; MAX_LATTICE_DOF]) -> bool {
        if self.allow_collisions {
            self.in_limits(o)
        } else {
            self.free(o)
        }
    }

    /// Analytic-IK jump to the pose goal, if close enough and clear.
    fn goal_jump(&self, from: &RobotConfig) -> Option<RobotConfig> {
        let Target::Pose(goal) = self.target else { return None };
        if self.model.end_effector(from).distance(&goal) > self.model.ik_threshold {
            return None;
        }
        let to = self.model.inverse_kinematics(from, &goal)?;
        segment_clear(self.model, self.world, from, &to).then_some(to)
    }

    fn primitive_cost(&self, j: usize, steps: i32) -> u64 {
        micros(steps.unsigned_abs() as f64 * self.model.resolution[j] / self.model.speeds[j])
    }

    /// Lattice path to waypoints, resolving the final IK jump.
    fn waypoints(&self, path: &[LatticeState]) -> Vec<RobotConfig> {
        let mut out: Vec<RobotConfig> = Vec::with_capacity(path.len());
        for s in path {
            match s {
                LatticeState::At(o) => out.push(self.config(o)),
                LatticeState::Goal => {
                    let prev = *out.last().expect("goal is never the start");
                    out.push(self.goal_jump(&prev).expect("jump was validated during search"));
                }
            }
        }
        out
    }
}

impl SearchSpace for Lattice<'_> {
    type State = LatticeState;

    fn successors(&self, s: &LatticeState, out: &mut Vec<(LatticeState, u64)>) {
        let LatticeState::At(o) = s else { return };
        for (i, &j) in self.dofs.iter().enumerate() {
            for step in PRIMITIVE_STEPS {
                let unit = step.signum();
                let mut ok = true;
                let mut cur = *o;
                for _ in 0..step.abs() {
                    cur[i] += unit;
                    if !self.passable(&cur) {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    out.push((LatticeState::At(cur), self.primitive_cost(j, step)));
                }
            }
        }
        if matches!(self.target, Target::Pose(_)) {
            let from = self.config(o);
            if let Some(to) = self.goal_jump(&from) {
                out.push((LatticeState::Goal, micros(move_duration(self.model, &from, &to)).max(1)));
            }
        }
    }

    fn heuristic(&self, s: &LatticeState) -> u64 {
        let LatticeState::At(o) = s else { return 0 };
        match self.target {
            Target::Pose(goal) => {
                // Primitives move one joint at a time; only the last
                // `ik_threshold` of distance can be covered jointly.
                let d = self.model.end_effector(&self.config(o)).distance(&goal);
                let jump = d.min(self.model.ik_threshold);
                (((d - jump) / self.v_single + jump / self.v_joint) * 1e6).floor() as u64
            }
            Target::Lattice(g) => {
                let t: f64 = self
                    .dofs
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| (o[i] - g[i]).unsigned_abs() as f64 * self.model.resolution[j] / self.model.speeds[j])
                    .sum();
                // Floor then step back one unit so per-primitive rounding up
                // in `micros` never makes this exceed the true cost.
                ((t * 1e6).floor() as u64).saturating_sub(self.dofs.len() as u64)
            }
            Target::AnyValid => 0,
        }
    }

    fn is_goal(&self, s: &LatticeState) -> bool {
        match (s, self.target) {
            (LatticeState::Goal, _) => true,
            (LatticeState::At(o), Target::Lattice(g)) => *o == g,
            (LatticeState::At(o), Target::AnyValid) => self.free(o),
            (LatticeState::At(_), Target::Pose(_)) => false,
        }
    }
}

fn to_trajectory(lat: &Lattice, out: SearchOutcome<LatticeState>) -> Result<(Trajectory, Vec<Improvement>), PlanFailure> {
    let expansions = out.expansions;
    let (Some(path), Some(cost)) = (out.path, out.cost) else {
        return Err(match out.status {
            SearchStatus::BudgetExhausted => PlanFailure::Timeout { expansions },
            _ => PlanFailure::Unreachable { expansions },
        });
    };
    let anytime = out
        .history
        .iter()
        .map(|h| AnytimeStep { epsilon: h.epsilon, cost: h.cost as f64 / 1e6, bound: h.bound, expansions: h.expansions })
        .collect();
    let traj = Trajectory {
        waypoints: lat.waypoints(&path),
        cost: cost as f64 / 1e6,
        suboptimality_bound: if out.bound.is_finite() { out.bound } else { 5.0 },
        planning_time: expansions as f64 / EXPANSIONS_PER_SECOND,
        expansions,
        anytime,
    };
    Ok((traj, out.history))
}

fn plan_lattice(m: &RobotModel, q: &PlanQuery) -> Result<Trajectory, PlanFailure> {
    let lat = Lattice::for_query(m, q);
    if let Goal::Pose(p) = q.goal {
        let ee = m.end_effector(&q.start);
        if ee.distance(&p) < 1e-9 && (ee.pitch - p.pitch).abs() < 1e-9 {
            return Ok(Trajectory::empty());
        }
    }
    if let Goal::Joints(g) = q.goal {
        if q.mode.dofs().iter().all(|&j| (q.start.get(j) - g.get(j)).abs() < 1e-12) {
            return Ok(Trajectory::empty());
        }
    }
    let out = ara_star(&lat, lat.start_state(), &default_schedule(), q.budget(), q.accept_bound.unwrap_or(1.0));
    let (mut traj, _) = to_trajectory(&lat, out)?;
    if let Goal::Joints(g) = q.goal {
        // Final adjustment from the snapped lattice goal to the exact one.
        let mut exact = *traj.end().expect("non-empty path");
        for &j in q.mode.dofs() {
            exact.set(j, g.get(j));
        }
        let last = *traj.end().expect("non-empty path");
        if exact != last {
            if !segment_clear(m, &q.world, &last, &exact) {
                return Err(PlanFailure::Blocked { step: traj.waypoints.len(), expansions: traj.expansions });
            }
            traj.cost += micros(move_duration(m, &last, &exact)) as f64 / 1e6;
            traj.waypoints.push(exact);
        }
    }
    if traj.waypoints.len() == 1 {
        traj.waypoints.clear();
    }
    Ok(traj)
}

fn plan_snap(m: &RobotModel, q: &PlanQuery) -> Result<Trajectory, PlanFailure> {
    if m.within_limits(&q.start) && !m.collides(&q.start, &q.world) {
        return Ok(Trajectory::empty());
    }
    // Anchor at the start clamped into limits so the lattice is usable.
    let mut anchored = q.clone();
    for j in 0..DOF {
        let [lo, hi] = m.limits[j];
        anchored.start.set(j, q.start.get(j).clamp(lo, hi));
    }
    let lat = Lattice::for_query(m, &anchored);
    let out = ara_star(&lat, lat.start_state(), &[2], q.budget(), 1.0);
    let mut traj = match to_trajectory(&lat, out) {
        Ok((t, _)) => t,
        Err(PlanFailure::Timeout { expansions }) => snap_along_base(m, &anchored, expansions)?,
        Err(e) => return Err(e),
    };
    if anchored.start != q.start {
        traj.waypoints.insert(0, q.start);
        traj.cost += micros(move_duration(m, &q.start, &anchored.start)) as f64 / 1e6;
    }
    Ok(traj)
}

/// Fallback when the lattice is too large to search exhaustively, as when
/// fallen boxes lie under the nose: the nearest free base position with
/// the other joints held, closest first, backing out of the truck on ties.
fn snap_along_base(m: &RobotModel, q: &PlanQuery, spent: usize) -> Result<Trajectory, PlanFailure> {
    let [lo, hi] = m.limits[BASE_X];
    let step = m.resolution[BASE_X];
    let reach = ((hi - lo) / step).ceil() as usize;
    for k in 1..=reach {
        for dir in [-1.0, 1.0] {
            let mut c = q.start;
            c.base_x += dir * k as f64 * step;
            if m.within_limits(&c) && !m.collides(&c, &q.world) {
                let expansions = spent + 2 * k;
                return Ok(Trajectory {
                    waypoints: vec![q.start, c],
                    cost: micros(move_duration(m, &q.start, &c)) as f64 / 1e6,
                    suboptimality_bound: 5.0,
                    planning_time: expansions as f64 / EXPANSIONS_PER_SECOND,
                    expansions,
                    anytime: Vec::new(),
                });
            }
        }
    }
    Err(PlanFailure::Unreachable { expansions: spent + 2 * reach })
}
