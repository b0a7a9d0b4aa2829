//! Abstract actions, semantic observations and the hand-written expert.

mod library;

pub use library::{
    advance, load_library, save_library, Cursor, LibraryEntry, LibraryError, Step, StrategyLibrary, StrategyNode,
    FEATURE_DIM, LIBRARY_VERSION,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimCommand, SimParams};
use crate::world::{Extent, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Height {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Structure {
    Pile,
    Wall,
}

pub const HEIGHTS: [Height; 3] = [Height::Low, Height::Mid, Height::High];
pub const SIDES: [Side; 3] = [Side::Left, Side::Center, Side::Right];
pub const STRUCTURES: [Structure; 2] = [Structure::Pile, Structure::Wall];

impl Height {
    fn name(self) -> &'static str {
        match self {
            Height::Low => "Low",
            Height::Mid => "Mid",
            Height::High => "High",
        }
    }
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Left => "Left",
            Side::Center => "Center",
            Side::Right => "Right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Pick,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbstractAction {
    Pick { height: Height, side: Side },
    Sweep { height: Height },
}

impl AbstractAction {
    pub fn all() -> Vec<AbstractAction> {
        let picks = HEIGHTS.iter().flat_map(|&height| SIDES.iter().map(move |&side| AbstractAction::Pick { height, side }));
        picks.chain(HEIGHTS.iter().map(|&height| AbstractAction::Sweep { height })).collect()
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            AbstractAction::Pick { .. } => ActionKind::Pick,
            AbstractAction::Sweep { .. } => ActionKind::Sweep,
        }
    }

    pub fn height(&self) -> Height {
        match *self {
            AbstractAction::Pick { height, .. } | AbstractAction::Sweep { height } => height,
        }
    }
}

impl fmt::Display for AbstractAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractAction::Pick { height, side } => write!(f, "Pick{}{}", height.name(), side.name()),
            AbstractAction::Sweep { height } => write!(f, "Sweep{}", height.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label `{0}`")]
pub struct LabelError(pub String);

impl FromStr for AbstractAction {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AbstractAction::all().into_iter().find(|a| a.to_string() == s).ok_or_else(|| LabelError(s.to_string()))
    }
}

/// Semantic summary of the boxes in front of the robot, e.g. `BoxPileLowLeft`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SemanticObservation {
    pub structure: Structure,
    pub height: Height,
    pub side: Side,
}

impl SemanticObservation {
    pub fn all() -> Vec<SemanticObservation> {
        let mut out = Vec::with_capacity(18);
        for &structure in &STRUCTURES {
            for &height in &HEIGHTS {
                for &side in &SIDES {
                    out.push(SemanticObservation { structure, height, side });
                }
            }
        }
        out
    }
}

impl fmt::Display for SemanticObservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.structure {
            Structure::Pile => "Pile",
            Structure::Wall => "Wall",
        };
        write!(f, "Box{}{}{}", s, self.height.name(), self.side.name())
    }
}

impl FromStr for SemanticObservation {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SemanticObservation::all().into_iter().find(|o| o.to_string() == s).ok_or_else(|| LabelError(s.to_string()))
    }
}

macro_rules! label_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

label_serde!(AbstractAction);
label_serde!(SemanticObservation);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    Seen(SemanticObservation),
    TruckEmpty,
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Seen(o) => o.fmt(f),
            Observation::TruckEmpty => f.write_str("TruckEmpty"),
        }
    }
}

impl FromStr for Observation {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "TruckEmpty" {
            Ok(Observation::TruckEmpty)
        } else {
            s.parse().map(Observation::Seen)
        }
    }
}

/// Height cuts are box-top heights in cells: `top <= cuts.0` is Low,
/// `top <= cuts.1` is Mid, anything taller is High.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserveThresholds {
    pub h_pile: usize,
    pub height_cuts: (usize, usize),
    pub width: usize,
}

impl ObserveThresholds {
    pub fn for_dims(dims: Extent, h_pile: usize) -> Self {
        Self { h_pile, height_cuts: (dims.h / 3, 2 * dims.h / 3), width: dims.w }
    }

    pub fn height_of_top(&self, top: usize) -> Height {
        if top <= self.height_cuts.0 {
            Height::Low
        } else if top <= self.height_cuts.1 {
            Height::Mid
        } else {
            Height::High
        }
    }

    /// Side of a lateral position given in cells, measured at cell centres.
    pub fn side_of(&self, w_center: f64) -> Side {
        let third = self.width as f64 / 3.0;
        if w_center < third {
            Side::Left
        } else if w_center > 2.0 * third {
            Side::Right
        } else {
            Side::Center
        }
    }

    fn side_range(&self, side: Side) -> (usize, usize) {
        let w = self.width;
        let a = (w as f64 / 3.0).round() as usize;
        let b = (2.0 * w as f64 / 3.0).round() as usize;
        match side {
            Side::Left => (0, a.max(1).min(w)),
            Side::Center => (a.min(w), b.max(a + 1).min(w)),
            Side::Right => (b.min(w.saturating_sub(1)), w),
        }
    }

    /// Grasp-cell heights (cell indices) belonging to a class.
    fn height_range(&self, height: Height, dims_h: usize) -> (usize, usize) {
        match height {
            Height::Low => (0, self.height_cuts.0),
            Height::Mid => (self.height_cuts.0, self.height_cuts.1),
            Height::High => (self.height_cuts.1, dims_h),
        }
    }
}

/// Height of the first occupied column in each width cell, scanning from
/// the opening. Zero for lanes with no boxes.
pub fn front_profile(w: &WorldState) -> Vec<usize> {
    let hts = w.column_heights();
    (0..w.dims().w).map(|wi| hts.iter().map(|row| row[wi]).find(|&h| h > 0).unwrap_or(0)).collect()
}

pub fn observe(w: &WorldState, t: &ObserveThresholds) -> Observation {
    if w.is_empty() {
        return Observation::TruckEmpty;
    }
    let profile = front_profile(w);
    let top = profile.iter().copied().max().unwrap_or(0);
    let tops: Vec<usize> = (0..profile.len()).filter(|&i| profile[i] == top).collect();
    let center = tops.iter().map(|&i| i as f64 + 0.5).sum::<f64>() / tops.len() as f64;
    Observation::Seen(SemanticObservation {
        structure: if top < t.h_pile { Structure::Pile } else { Structure::Wall },
        height: t.height_of_top(top),
        side: t.side_of(center),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardcodedParams {
    pub h_pile: usize,
    pub h_min: usize,
    pub d_min: usize,
}

impl Default for HardcodedParams {
    fn default() -> Self {
        Self { h_pile: 3, h_min: 4, d_min: 3 }
    }
}

/// Geometry needed to turn an abstract action into a box-level command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionContext {
    pub h_pile: usize,
    pub footprint: (usize, usize),
    pub sweep_depth_max: usize,
    /// Picks only consider faces at most this many cells behind the front.
    #[serde(default = "default_pick_reach")]
    pub pick_reach: usize,
}

pub const DEFAULT_PICK_REACH: usize = 3;

fn default_pick_reach() -> usize {
    DEFAULT_PICK_REACH
}

impl ActionContext {
    pub fn for_sim(p: &SimParams, hardcoded: &HardcodedParams) -> Self {
        Self {
            h_pile: hardcoded.h_pile,
            footprint: p.grasp_footprint,
            sweep_depth_max: p.sweep_capture_depth_max,
            pick_reach: DEFAULT_PICK_REACH,
        }
    }

    pub fn thresholds(&self, dims: Extent) -> ObserveThresholds {
        ObserveThresholds::for_dims(dims, self.h_pile)
    }
}

/// Depth layout of the boxes nearest the opening.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PileProfile {
    pub d_front: usize,
    /// First depth slice holding a column at least `h_pile` tall.
    pub d_wall: Option<usize>,
    pub d_pile: usize,
    pub h_wall: usize,
}

fn slice_max(w: &WorldState) -> Vec<usize> {
    w.column_heights().iter().map(|row| row.iter().copied().max().unwrap_or(0)).collect()
}

pub fn pile_profile(w: &WorldState, h_pile: usize) -> Option<PileProfile> {
    let d_front = w.front_depth()?;
    let slices = slice_max(w);
    let d_wall = (d_front..slices.len()).find(|&d| slices[d] >= h_pile);
    let d_pile = d_wall.unwrap_or(slices.len()) - d_front;
    let h_wall = d_wall.map_or(0, |d| slices[d]);
    Some(PileProfile { d_front, d_wall, d_pile, h_wall })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Act { action: AbstractAction, command: SimCommand },
    Done,
}

/// The expert rule: sweep deep piles, pick tall walls, otherwise sweep
/// the base of the first wall.
pub fn hardcoded_decision(w: &WorldState, p: &HardcodedParams, ctx: &ActionContext) -> Decision {
    let Some(prof) = pile_profile(w, p.h_pile) else {
        return Decision::Done;
    };
    let t = ObserveThresholds::for_dims(w.dims(), p.h_pile);
    if prof.d_pile > p.d_min {
        return sweep_decision(w, prof.d_pile, &t, ctx);
    }
    if prof.h_wall > p.h_min {
        let (gw, gh) = highest_nearest(w, None, ctx.pick_reach).expect("non-empty world has a visible face");
        let action = AbstractAction::Pick { height: t.height_of_top(gh + 1), side: t.side_of(gw as f64 + 0.5) };
        return Decision::Act { action, command: pick_command(w, (gw, gh), ctx) };
    }
    // Too short to pick: sweep through the first wall's base row.
    let base = prof.d_wall.map_or(1, |dw| {
        w.boxes().iter().filter(|b| b.pos.h == 0 && b.pos.d == dw).map(|b| b.dims.d).min().unwrap_or(1)
    });
    sweep_decision(w, prof.d_pile + base, &t, ctx)
}

/// Shortest sweep depth that captures at least one floor box.
fn min_capture_depth(w: &WorldState) -> usize {
    let front = w.front_depth().unwrap_or(0);
    w.boxes().iter().filter(|b| b.pos.h == 0).map(|b| b.pos.d + 1 - front).min().unwrap_or(1)
}

fn sweep_decision(w: &WorldState, depth: usize, t: &ObserveThresholds, ctx: &ActionContext) -> Decision {
    let depth = depth.max(min_capture_depth(w)).clamp(1, ctx.sweep_depth_max);
    let d_front = w.front_depth().unwrap_or(0);
    let slices = slice_max(w);
    let tallest = slices.iter().skip(d_front).take(depth).copied().max().unwrap_or(0);
    let height = if tallest <= t.h_pile {
        Height::Low
    } else if tallest <= t.height_cuts.1 {
        Height::Mid
    } else {
        Height::High
    };
    Decision::Act { action: AbstractAction::Sweep { height }, command: SimCommand::Sweep { depth } }
}

/// First-hit depth for every `(w, h)` ray from the opening.
pub(crate) fn face(w: &WorldState) -> Vec<Vec<Option<usize>>> {
    let dims = w.dims();
    let owner = w.owner_map();
    (0..dims.w)
        .map(|wi| {
            (0..dims.h)
                .map(|h| (0..dims.d).find(|&d| w.owner_index(&owner, crate::world::Cell::new(d, wi, h)).is_some()))
                .collect()
        })
        .collect()
}

/// Highest visible face cell, nearest first, then closest to the middle of
/// the allowed width range.
fn highest_nearest(
    w: &WorldState,
    region: Option<((usize, usize), (usize, usize))>,
    reach: usize,
) -> Option<(usize, usize)> {
    let dims = w.dims();
    let faces = face(w);
    let limit = w.front_depth()? + reach;
    let ((w0, w1), (h0, h1)) = region.unwrap_or(((0, dims.w), (0, dims.h)));
    let mid2 = (w0 + w1) as i64 - 1;
    let mut best: Option<((std::cmp::Reverse<usize>, usize, i64, usize), (usize, usize))> = None;
    for (wi, col) in faces.iter().enumerate().take(w1).skip(w0) {
        for (h, hit) in col.iter().enumerate().take(h1).skip(h0) {
            if let Some(d) = hit.filter(|&d| d <= limit) {
                let key = (std::cmp::Reverse(h), d, (2 * wi as i64 - mid2).abs(), wi);
                if best.as_ref().is_none_or(|(k, _)| key < *k) {
                    best = Some((key, (wi, h)));
                }
            }
        }
    }
    best.map(|(_, c)| c)
}

/// Shifts the footprint inside the truck when possible, but never onto a
/// grasp cell with no face behind it.
fn pick_command(w: &WorldState, grasp: (usize, usize), ctx: &ActionContext) -> SimCommand {
    let fw = ctx.footprint.0.max(1);
    let half = (fw - 1) / 2;
    let max_center = w.dims().w.saturating_sub(fw - half);
    let (lo, hi) = (half.min(max_center), max_center.max(half));
    let target = grasp.0.clamp(lo, hi);
    let faces = face(w);
    let covers = |c: usize| c + fw > grasp.0 + half && c <= grasp.0 + half;
    let gw = (lo..=hi)
        .filter(|&c| c < faces.len() && covers(c) && faces[c][grasp.1].is_some())
        .min_by_key(|&c| c.abs_diff(target))
        .unwrap_or(grasp.0);
    SimCommand::Pick { grasp: (gw, grasp.1), footprint: ctx.footprint }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no visible boxes in the region of {0}")]
pub struct InstantiationFailure(pub AbstractAction);

/// Box-level command for an abstract action against a perceived world.
/// Picks grasp the highest, then nearest, visible face cell inside the
/// action's (height, side) region; Sweeps take the front-contiguous slices
/// no taller than the class bound.
pub fn instantiate(a: &AbstractAction, w: &WorldState, ctx: &ActionContext) -> Result<SimCommand, InstantiationFailure> {
    if w.is_empty() {
        return Err(InstantiationFailure(*a));
    }
    let dims = w.dims();
    let t = ctx.thresholds(dims);
    match *a {
        AbstractAction::Pick { height, side } => {
            let region = (t.side_range(side), t.height_range(height, dims.h));
            let grasp = highest_nearest(w, Some(region), ctx.pick_reach).ok_or(InstantiationFailure(*a))?;
            Ok(pick_command(w, grasp, ctx))
        }
        AbstractAction::Sweep { height } => {
            let bound = match height {
                Height::Low => t.h_pile,
                Height::Mid => t.height_cuts.1,
                Height::High => dims.h,
            };
            let d_front = w.front_depth().unwrap_or(0);
            let slices = slice_max(w);
            let run = slices.iter().skip(d_front).take_while(|&&m| m > 0 && m <= bound).count();
            Ok(SimCommand::Sweep { depth: run.max(min_capture_depth(w)).clamp(1, ctx.sweep_depth_max) })
        }
    }
}

/// Instantiates `a`, substituting the expert's choice when the region is
/// empty. `None` only for an empty truck.
pub fn instantiate_or_fallback(
    a: &AbstractAction,
    w: &WorldState,
    ctx: &ActionContext,
    p: &HardcodedParams,
) -> Option<(AbstractAction, SimCommand)> {
    match instantiate(a, w, ctx) {
        Ok(c) => Some((*a, c)),
        Err(_) => match hardcoded_decision(w, p, ctx) {
            Decision::Act { action, command } => Some((action, command)),
            Decision::Done => None,
        },
    }
}
