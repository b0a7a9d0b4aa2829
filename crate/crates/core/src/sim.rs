//! Box-level stochastic dynamics for Pick and Sweep, with exact
//! snapshot/restore so callers can rewind the world.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Cell, TrueWorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("sweep depth {depth} outside 1..={max}")]
    SweepDepth { depth: usize, max: usize },
    #[error("invalid sim params: {0}")]
    InvalidParams(String),
    #[error("snapshot was taken with different sim params")]
    ParamsMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Durations {
    pub pick_base_s: f64,
    pub per_box_s: f64,
    pub sweep_base_s: f64,
    pub per_cell_s: f64,
}

impl Default for Durations {
    fn default() -> Self {
        Self { pick_base_s: 30.0, per_box_s: 2.0, sweep_base_s: 40.0, per_cell_s: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub suction_capacity: f64,
    /// Suction footprint as (width, height) cells.
    pub grasp_footprint: (usize, usize),
    /// Boxes up to this many cells behind the nearest grasped face are
    /// still held by the suction cups.
    pub grasp_reach: usize,
    pub drop_prob_per_kg_over: f64,
    pub topple_prob: f64,
    pub sweep_capture_depth_max: usize,
    pub rng_seed: u64,
    pub durations: Durations,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            suction_capacity: 40.0,
            grasp_footprint: (4, 4),
            grasp_reach: 1,
            drop_prob_per_kg_over: 0.04,
            topple_prob: 0.5,
            sweep_capture_depth_max: 8,
            rng_seed: 0,
            durations: Durations::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.into()));
        if !(self.suction_capacity.is_finite() && self.suction_capacity > 0.0) {
            return bad("suction capacity must be positive");
        }
        if !(0.0..=1.0).contains(&self.topple_prob) {
            return bad("topple probability must lie in [0, 1]");
        }
        if !(self.drop_prob_per_kg_over.is_finite() && self.drop_prob_per_kg_over >= 0.0) {
            return bad("drop probability rate must be non-negative");
        }
        if self.grasp_footprint.0 == 0 || self.grasp_footprint.1 == 0 {
            return bad("grasp footprint must be non-empty");
        }
        if self.sweep_capture_depth_max == 0 {
            return bad("sweep capture depth must be positive");
        }
        let d = self.durations;
        if [d.pick_base_s, d.per_box_s, d.sweep_base_s, d.per_cell_s].iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || d.pick_base_s <= 0.0
            || d.sweep_base_s <= 0.0
        {
            return bad("durations must be non-negative with positive base times");
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON encoding.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("params serialize");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub boxes_unloaded: usize,
    pub boxes_dropped: usize,
    pub boxes_moved: usize,
    pub duration: f64,
}

/// A box-level command produced by instantiating an abstract action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimCommand {
    /// Grasp cell `(w, h)` is the top-centre of the suction footprint.
    Pick { grasp: (usize, usize), footprint: (usize, usize) },
    Sweep { depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: TrueWorldState,
    pub rng: ChaCha8Rng,
    pub tick: f64,
    pub unloaded_total: usize,
    pub initial_count: usize,
    pub params_hash: u64,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        let snap: Snapshot = serde_json::from_str(s)?;
        if snap.unloaded_total.checked_add(snap.state.box_count()) != Some(snap.initial_count) {
            return Err(serde::de::Error::custom("snapshot box counts are inconsistent"));
        }
        Ok(snap)
    }
}

#[derive(Debug, Clone)]
pub struct SimHandle {
    state: TrueWorldState,
    params: SimParams,
    rng: ChaCha8Rng,
    tick: f64,
    initial_count: usize,
    unloaded_total: usize,
}

impl SimHandle {
    pub fn new(state: TrueWorldState, params: SimParams) -> Result<Self, SimError> {
        params.validate()?;
        let initial_count = state.box_count();
        Ok(Self {
            state,
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            params,
            tick: 0.0,
            initial_count,
            unloaded_total: 0,
        })
    }

    pub fn state(&self) -> &TrueWorldState {
        &self.state
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn tick(&self) -> f64 {
        self.tick
    }

    pub fn initial_count(&self) -> usize {
        self.initial_count
    }

    pub fn unloaded_total(&self) -> usize {
        self.unloaded_total
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            state: self.state.clone(),
            rng: self.rng.clone(),
            tick: self.tick,
            unloaded_total: self.unloaded_total,
            initial_count: self.initial_count,
            params_hash: self.params.fingerprint(),
        }
    }

    pub fn restore(&mut self, snap: &Snapshot) -> Result<(), SimError> {
        if snap.params_hash != self.params.fingerprint() {
            return Err(SimError::ParamsMismatch);
        }
        self.state = snap.state.clone();
        self.rng = snap.rng.clone();
        self.tick = snap.tick;
        self.unloaded_total = snap.unloaded_total;
        self.initial_count = snap.initial_count;
        Ok(())
    }

    pub fn apply(&mut self, cmd: &SimCommand) -> Result<ActionOutcome, SimError> {
        match *cmd {
            SimCommand::Pick { grasp, footprint } => Ok(self.apply_pick(grasp, footprint)),
            SimCommand::Sweep { depth } => self.apply_sweep(depth),
        }
    }

    /// Grasps the boxes whose front faces lie under the suction footprint.
    /// Over capacity, each grasped box independently slips with probability
    /// `min(1, rate * overage)` and falls in front of the wall.
    pub fn apply_pick(&mut self, grasp: (usize, usize), footprint: (usize, usize)) -> ActionOutcome {
        let dur = self.params.durations;
        let world = self.state.world();
        let dims = world.dims();
        let owner = world.owner_map();
        let first_hit = |w: usize, h: usize| {
            (0..dims.d).find_map(|d| world.owner_index(&owner, Cell::new(d, w, h)).map(|i| (d, i)))
        };
        let (gw, gh) = grasp;
        if gw >= dims.w || gh >= dims.h || first_hit(gw, gh).is_none() {
            return self.finish(ActionOutcome { boxes_unloaded: 0, boxes_dropped: 0, boxes_moved: 0, duration: dur.pick_base_s });
        }
        let (fw, fh) = (footprint.0.max(1), footprint.1.max(1));
        let w0 = gw.saturating_sub((fw - 1) / 2);
        let w1 = (w0 + fw).min(dims.w);
        let h0 = (gh + 1).saturating_sub(fh);
        let hits: Vec<(usize, usize)> =
            (w0..w1).flat_map(|w| (h0..=gh).filter_map(move |h| first_hit(w, h))).collect();
        let nearest = hits.iter().map(|(d, _)| *d).min().unwrap_or(0);
        let mut grasped: Vec<u32> = hits
            .iter()
            .filter(|(d, _)| *d <= nearest + self.params.grasp_reach)
            .map(|(_, i)| world.boxes()[*i].id)
            .collect();
        grasped.sort_unstable();
        grasped.dedup();

        let total: f64 = grasped.iter().map(|id| self.state.mass(*id).unwrap_or(0.0)).sum();
        let mut dropped = Vec::new();
        let mut unloaded = Vec::new();
        if total <= self.params.suction_capacity {
            unloaded = grasped.clone();
        } else {
            let p = (self.params.drop_prob_per_kg_over * (total - self.params.suction_capacity)).min(1.0);
            for id in &grasped {
                if self.rng.gen_bool(p) {
                    dropped.push(*id);
                } else {
                    unloaded.push(*id);
                }
            }
        }

        let before = positions(&self.state);
        self.state.remove_boxes(&unloaded);
        // Dropped boxes tumble off the wall face, lowest first.
        let mut order: Vec<usize> = dropped
            .iter()
            .filter_map(|id| self.state.world().boxes().iter().position(|b| b.id == *id))
            .collect();
        order.sort_by_key(|i| (self.state.world().boxes()[*i].pos.h, self.state.world().boxes()[*i].id));
        for i in order {
            tumble(&mut self.state, i);
        }
        settle(&mut self.state);
        let moved = count_moved(&before, &self.state);
        self.finish(ActionOutcome {
            boxes_unloaded: unloaded.len(),
            boxes_dropped: dropped.len(),
            boxes_moved: moved,
            duration: dur.pick_base_s + dur.per_box_s * grasped.len() as f64,
        })
    }

    /// Scoops every floor box whose front lies within `depth` cells of the
    /// front-most box. Columns left hanging collapse forward with
    /// `topple_prob`, otherwise they drop in place.
    pub fn apply_sweep(&mut self, depth: usize) -> Result<ActionOutcome, SimError> {
        let max = self.params.sweep_capture_depth_max;
        if depth == 0 || depth > max {
            return Err(SimError::SweepDepth { depth, max });
        }
        let dur = self.params.durations;
        let duration = dur.sweep_base_s + dur.per_cell_s * depth as f64;
        let Some(front) = self.state.world().front_depth() else {
            return Ok(self.finish(ActionOutcome { boxes_unloaded: 0, boxes_dropped: 0, boxes_moved: 0, duration }));
        };
        let limit = front + depth;
        let captured: Vec<u32> = self
            .state
            .world()
            .boxes()
            .iter()
            .filter(|b| b.pos.h == 0 && b.pos.d < limit)
            .map(|b| b.id)
            .collect();
        let before = positions(&self.state);
        self.state.remove_boxes(&captured);

        // Boxes that would fall, grouped by their left width cell.
        let falling = falling_boxes(&self.state);
        let mut columns: Vec<usize> = falling.iter().map(|i| self.state.world().boxes()[*i].pos.w).collect();
        columns.sort_unstable();
        columns.dedup();
        for col in columns {
            if !self.rng.gen_bool(self.params.topple_prob) {
                continue;
            }
            let mut members: Vec<usize> = falling
                .iter()
                .copied()
                .filter(|i| self.state.world().boxes()[*i].pos.w == col)
                .collect();
            members.sort_by_key(|i| {
                let b = self.state.world().boxes()[*i];
                (b.pos.h, b.pos.d, b.id)
            });
            // Boxes are laid forward from the column: the swept gap fills
            // first, then the floor in front of the old face.
            let mut cursor = members.iter().map(|i| self.state.world().boxes()[*i].pos.d).min().unwrap_or(front);
            for i in members {
                let b = self.state.world().boxes()[i];
                if cursor < b.dims.d {
                    break;
                }
                let target = Cell::new(cursor - b.dims.d, b.pos.w, 0);
                if self.state.world().fits(target, b.dims, Some(b.id)) {
                    self.state.world_mut().move_box(i, target);
                    cursor = target.d;
                }
            }
        }
        settle(&mut self.state);
        let moved = count_moved(&before, &self.state);
        Ok(self.finish(ActionOutcome { boxes_unloaded: captured.len(), boxes_dropped: 0, boxes_moved: moved, duration }))
    }

    fn finish(&mut self, out: ActionOutcome) -> ActionOutcome {
        self.unloaded_total += out.boxes_unloaded;
        self.tick += out.duration;
        debug_assert_eq!(self.unloaded_total + self.state.box_count(), self.initial_count);
        debug_assert!(self.state.world().unsupported().is_empty());
        out
    }
}

fn positions(state: &TrueWorldState) -> Vec<(u32, Cell)> {
    state.world().boxes().iter().map(|b| (b.id, b.pos)).collect()
}

fn count_moved(before: &[(u32, Cell)], after: &TrueWorldState) -> usize {
    after
        .world()
        .boxes()
        .iter()
        .filter(|b| before.iter().any(|(id, p)| *id == b.id && *p != b.pos))
        .count()
}

/// Falls straight down, then edges toward the opening while the path is
/// clear, falling again whenever possible.
fn tumble(state: &mut TrueWorldState, idx: usize) {
    loop {
        let b = state.world().boxes()[idx];
        let mut pos = b.pos;
        while pos.h > 0 && state.world().fits(Cell::new(pos.d, pos.w, pos.h - 1), b.dims, Some(b.id)) {
            pos.h -= 1;
        }
        if pos != b.pos {
            state.world_mut().move_box(idx, pos);
        }
        if pos.h == 0 || pos.d == 0 {
            return;
        }
        let ahead = Cell::new(pos.d - 1, pos.w, pos.h);
        if !state.world().fits(ahead, b.dims, Some(b.id)) {
            return;
        }
        state.world_mut().move_box(idx, ahead);
    }
}

/// Gravity pass: every box ends up supported.
pub(crate) fn settle(state: &mut TrueWorldState) {
    loop {
        let mut order: Vec<usize> = (0..state.world().box_count()).collect();
        order.sort_by_key(|i| {
            let b = state.world().boxes()[*i];
            (b.pos.h, b.id)
        });
        let mut changed = false;
        for i in order {
            let mut b = state.world().boxes()[i];
            while !state.world().is_supported(&b) {
                let to = Cell::new(b.pos.d, b.pos.w, b.pos.h - 1);
                state.world_mut().move_box(i, to);
                b = state.world().boxes()[i];
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

/// Indices of boxes that gravity would move, found on a scratch copy.
fn falling_boxes(state: &TrueWorldState) -> Vec<usize> {
    let mut scratch = state.clone();
    settle(&mut scratch);
    state
        .world()
        .boxes()
        .iter()
        .zip(scratch.world().boxes())
        .enumerate()
        .filter(|(_, (a, b))| a.pos != b.pos)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::world::{BoxInstance, Extent, WorldState, DEFAULT_CELL_SIZE};

    fn truth(dims: Extent, boxes: &[([usize; 3], [usize; 3], f64)]) -> TrueWorldState {
        let bs: Vec<BoxInstance> = boxes
            .iter()
            .enumerate()
            .map(|(i, (p, e, _))| BoxInstance::new(i as u32, Cell::new(p[0], p[1], p[2]), Extent::new(e[0], e[1], e[2])))
            .collect();
        let masses: BTreeMap<u32, f64> = boxes.iter().enumerate().map(|(i, (_, _, m))| (i as u32, *m)).collect();
        TrueWorldState::new(WorldState::new(dims, DEFAULT_CELL_SIZE, bs).unwrap(), masses).unwrap()
    }

    fn params() -> SimParams {
        SimParams { suction_capacity: 10.0, drop_prob_per_kg_over: 0.0, topple_prob: 0.0, ..SimParams::default() }
    }

    #[test]
    fn light_pick_unloads_everything_grasped() {
        let t = truth(Extent::new(6, 4, 4), &[([3, 1, 0], [1, 1, 1], 1.0), ([3, 1, 1], [1, 1, 1], 1.0)]);
        let mut sim = SimHandle::new(t, params()).unwrap();
        let out = sim.apply_pick((1, 1), (1, 2));
        assert_eq!((out.boxes_unloaded, out.boxes_dropped), (2, 0));
        assert_eq!(out.duration, 30.0 + 2.0 * 2.0);
        assert!(sim.state().is_empty());
    }

    #[test]
    fn empty_grasp_cell_is_a_noop() {
        let t = truth(Extent::new(6, 4, 4), &[([3, 1, 0], [1, 1, 1], 1.0)]);
        let mut sim = SimHandle::new(t, params()).unwrap();
        let out = sim.apply_pick((3, 3), (1, 1));
        assert_eq!(out.boxes_unloaded, 0);
        assert_eq!(out.duration, 30.0);
        assert_eq!(sim.state().box_count(), 1);
    }

    #[test]
    fn certain_overload_drops_everything() {
        let t = truth(
            Extent::new(6, 4, 4),
            &[([3, 1, 0], [1, 1, 1], 5.0), ([3, 1, 1], [1, 1, 1], 7.0), ([3, 1, 2], [1, 1, 1], 8.0)],
        );
        let p = SimParams { drop_prob_per_kg_over: 1.0, ..params() };
        let mut sim = SimHandle::new(t, p).unwrap();
        let out = sim.apply_pick((1, 2), (1, 3));
        assert_eq!((out.boxes_unloaded, out.boxes_dropped), (0, 3));
        assert_eq!(sim.state().box_count(), 3);
        // The dropped boxes end up on the floor in front of where they were.
        assert!(sim.state().world().boxes().iter().all(|b| b.pos.h == 0 || b.pos.d < 3));
    }

    #[test]
    fn partial_overload_matches_bernoulli_expectation() {
        // Three boxes, 20 kg total against 10 kg capacity: p = 0.03 * 10.
        let t = truth(
            Extent::new(6, 4, 4),
            &[([3, 1, 0], [1, 1, 1], 5.0), ([3, 1, 1], [1, 1, 1], 7.0), ([3, 1, 2], [1, 1, 1], 8.0)],
        );
        let p = SimParams { drop_prob_per_kg_over: 0.03, ..params() };
        let trials = 1000;
        let mut total = 0usize;
        for seed in 0..trials {
            let mut sim = SimHandle::new(t.clone(), p.with_seed(seed)).unwrap();
            total += sim.apply_pick((1, 2), (1, 3)).boxes_unloaded;
        }
        let q = 1.0 - 0.3;
        let mean = 3.0 * q;
        let sigma = (3.0 * q * (1.0 - q) / trials as f64).sqrt();
        let got = total as f64 / trials as f64;
        assert!((got - mean).abs() <= 3.0 * sigma, "mean {got} vs {mean} ± {}", 3.0 * sigma);
    }

    #[test]
    fn sweep_captures_floor_pile() {
        let boxes: Vec<_> = (0..5).map(|w| ([2usize, w, 0usize], [1usize, 1, 1], 1.0)).collect();
        let t = truth(Extent::new(6, 5, 4), &boxes);
        let mut sim = SimHandle::new(t, params()).unwrap();
        let out = sim.apply_sweep(2).unwrap();
        assert_eq!(out.boxes_unloaded, 5);
        assert_eq!(out.duration, 40.0 + 2.0 * 2.0);
    }

    #[test]
    fn sweep_depth_is_validated() {
        let t = truth(Extent::new(6, 5, 4), &[([2, 0, 0], [1, 1, 1], 1.0)]);
        let mut sim = SimHandle::new(t, params()).unwrap();
        assert!(matches!(sim.apply_sweep(0), Err(SimError::SweepDepth { .. })));
        assert!(matches!(sim.apply_sweep(9), Err(SimError::SweepDepth { .. })));
        assert_eq!(sim.state().box_count(), 1);
    }

    #[test]
    fn toppled_column_lands_in_front() {
        let t = truth(
            Extent::new(6, 3, 4),
            &[([3, 1, 0], [1, 1, 1], 1.0), ([3, 1, 1], [1, 1, 1], 1.0), ([3, 1, 2], [1, 1, 1], 1.0)],
        );
        let p = SimParams { topple_prob: 1.0, ..params() };
        let mut sim = SimHandle::new(t, p).unwrap();
        let out = sim.apply_sweep(1).unwrap();
        assert_eq!((out.boxes_unloaded, out.boxes_moved), (1, 2));
        let floor: Vec<_> = sim.state().world().boxes().iter().map(|b| (b.pos.d, b.pos.h)).collect();
        assert_eq!(floor, vec![(2, 0), (1, 0)]);
    }

    #[test]
    fn toppled_column_fills_swept_gap_first() {
        let t = truth(
            Extent::new(8, 3, 4),
            &[
                ([2, 1, 0], [2, 1, 1], 1.0),
                ([4, 1, 0], [1, 1, 1], 1.0),
                ([4, 1, 1], [1, 1, 1], 1.0),
                ([4, 1, 2], [1, 1, 1], 1.0),
            ],
        );
        let p = SimParams { topple_prob: 1.0, ..params() };
        let mut sim = SimHandle::new(t, p).unwrap();
        let out = sim.apply_sweep(3).unwrap();
        assert_eq!((out.boxes_unloaded, out.boxes_moved), (2, 2));
        let floor: Vec<_> = sim.state().world().boxes().iter().map(|b| (b.pos.d, b.pos.h)).collect();
        assert_eq!(floor, vec![(3, 0), (2, 0)]);
    }

    #[test]
    fn untoppled_column_drops_in_place() {
        let t = truth(Extent::new(6, 3, 4), &[([3, 1, 0], [1, 1, 1], 1.0), ([3, 1, 1], [1, 1, 1], 1.0)]);
        let mut sim = SimHandle::new(t, params()).unwrap();
        let out = sim.apply_sweep(1).unwrap();
        assert_eq!((out.boxes_unloaded, out.boxes_moved), (1, 1));
        assert_eq!(sim.state().world().boxes()[0].pos, Cell::new(3, 1, 0));
    }

    #[test]
    fn snapshot_restore_is_exact_and_idempotent() {
        let t = crate::world::generate_environment(&crate::world::EnvSpec::wall(2)).unwrap();
        let mut sim = SimHandle::new(t, SimParams::default().with_seed(9)).unwrap();
        let snap = sim.snapshot();
        sim.apply_pick((3, 9), (4, 4));
        sim.restore(&snap).unwrap();
        assert_eq!(sim.snapshot(), snap);
        sim.restore(&snap).unwrap();
        sim.restore(&snap).unwrap();
        assert_eq!(sim.snapshot().to_json(), snap.to_json());
    }

    #[test]
    fn replays_from_one_snapshot_agree() {
        let t = crate::world::generate_environment(&crate::world::EnvSpec::pile(4)).unwrap();
        let mut a = SimHandle::new(t.clone(), SimParams::default().with_seed(1)).unwrap();
        a.apply_sweep(3).unwrap();
        let snap = a.snapshot();
        let mut b = SimHandle::new(t, SimParams::default().with_seed(1)).unwrap();
        b.restore(&snap).unwrap();
        let oa = a.apply_sweep(4).unwrap();
        let ob = b.apply_sweep(4).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn foreign_snapshot_is_rejected() {
        let t = crate::world::generate_environment(&crate::world::EnvSpec::wall(2)).unwrap();
        let a = SimHandle::new(t.clone(), SimParams::default()).unwrap();
        let mut b = SimHandle::new(t, SimParams { topple_prob: 0.9, ..SimParams::default() }).unwrap();
        assert_eq!(b.restore(&a.snapshot()), Err(SimError::ParamsMismatch));
    }

    #[test]
    fn snapshot_json_round_trip() {
        let t = crate::world::generate_environment(&crate::world::EnvSpec::pile(1)).unwrap();
        let mut sim = SimHandle::new(t, SimParams::default().with_seed(3)).unwrap();
        sim.apply_sweep(2).unwrap();
        let snap = sim.snapshot();
        assert_eq!(Snapshot::from_json_str(&snap.to_json()).unwrap(), snap);
    }
}
