//! Truck contents: boxes on a voxel grid, the perceived vs. ground-truth
//! world, height fields, and seeded environment generation.
//!
//! Grid axes are `(d, w, h)`: depth grows away from the rear opening where
//! the robot stands, width runs left to right as seen from the opening, and
//! height grows up from the trailer floor. Everything outside the interior
//! except the open rear (`d < 0`) counts as trailer structure.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CELL_SIZE: f64 = 0.25;
pub const DEFAULT_TRUCK_DIMS: Extent = Extent { d: 24, w: 8, h: 10 };
/// Upper bound on any truck axis accepted from external input.
pub const MAX_AXIS_CELLS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible environment: {0}")]
    Infeasible(String),
    #[error("box {id} is outside the truck bounds")]
    OutOfBounds { id: u32 },
    #[error("box {id} has an empty extent")]
    EmptyBox { id: u32 },
    #[error("boxes {a} and {b} overlap")]
    Overlap { a: u32, b: u32 },
    #[error("duplicate box id {0}")]
    DuplicateId(u32),
    #[error("box {0} is not supported")]
    Unsupported(u32),
    #[error("box {0} has no valid mass")]
    BadMass(u32),
    #[error("mass given for unknown box {0}")]
    OrphanMass(u32),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Integer cell coordinate or extent along `(depth, width, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Extent {
    pub d: usize,
    pub w: usize,
    pub h: usize,
}

pub type Cell = Extent;

impl Extent {
    pub const fn new(d: usize, w: usize, h: usize) -> Self {
        Self { d, w, h }
    }

    pub fn volume(&self) -> usize {
        self.d * self.w * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxInstance {
    pub id: u32,
    pub pos: Cell,
    pub dims: Extent,
}

impl BoxInstance {
    pub fn new(id: u32, pos: Cell, dims: Extent) -> Self {
        Self { id, pos, dims }
    }

    /// Exclusive top height.
    pub fn top(&self) -> usize {
        self.pos.h + self.dims.h
    }

    pub fn depth_end(&self) -> usize {
        self.pos.d + self.dims.d
    }

    pub fn width_end(&self) -> usize {
        self.pos.w + self.dims.w
    }

    pub fn contains(&self, c: Cell) -> bool {
        (self.pos.d..self.depth_end()).contains(&c.d)
            && (self.pos.w..self.width_end()).contains(&c.w)
            && (self.pos.h..self.top()).contains(&c.h)
    }

    pub fn overlaps(&self, o: &BoxInstance) -> bool {
        self.pos.d < o.depth_end()
            && o.pos.d < self.depth_end()
            && self.pos.w < o.width_end()
            && o.pos.w < self.width_end()
            && self.pos.h < o.top()
            && o.pos.h < self.top()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.pos.d..self.depth_end()).flat_map(move |d| {
            (self.pos.w..self.width_end())
                .flat_map(move |w| (self.pos.h..self.top()).map(move |h| Cell::new(d, w, h)))
        })
    }

    fn fits_in(&self, dims: Extent) -> bool {
        self.depth_end() <= dims.d && self.width_end() <= dims.w && self.top() <= dims.h
    }
}

/// Boolean voxel occupancy of the trailer interior. Walls, floor, ceiling and
/// the front bulkhead are implicit and always occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    dims: Extent,
    cell_size: f64,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(dims: Extent, cell_size: f64) -> Self {
        Self { dims, cell_size, cells: vec![false; dims.volume()] }
    }

    pub fn dims(&self) -> Extent {
        self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn index(&self, c: Cell) -> usize {
        (c.d * self.dims.w + c.w) * self.dims.h + c.h
    }

    pub fn interior(&self, c: Cell) -> bool {
        self.cells[self.index(c)]
    }

    /// Occupancy including trailer structure. Negative depth is the open
    /// rear of the trailer and is always free.
    pub fn is_occupied(&self, d: i64, w: i64, h: i64) -> bool {
        if d < 0 {
            return false;
        }
        if w < 0 || h < 0 || d >= self.dims.d as i64 || w >= self.dims.w as i64 || h >= self.dims.h as i64 {
            return true;
        }
        self.interior(Cell::new(d as usize, w as usize, h as usize))
    }

    fn set(&mut self, c: Cell, v: bool) {
        let i = self.index(c);
        self.cells[i] = v;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

#[derive(Serialize, Deserialize)]
struct WorldRepr {
    dims: Extent,
    cell_size: f64,
    boxes: Vec<BoxInstance>,
}

/// Perceived world: trailer geometry and the boxes currently known, without
/// masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldRepr", into = "WorldRepr")]
pub struct WorldState {
    grid: OccupancyGrid,
    boxes: Vec<BoxInstance>,
}

impl TryFrom<WorldRepr> for WorldState {
    type Error = WorldError;
    fn try_from(r: WorldRepr) -> Result<Self, WorldError> {
        WorldState::new(r.dims, r.cell_size, r.boxes)
    }
}

impl From<WorldState> for WorldRepr {
    fn from(w: WorldState) -> Self {
        WorldRepr { dims: w.grid.dims, cell_size: w.grid.cell_size, boxes: w.boxes }
    }
}

impl WorldState {
    /// Builds a consistent world; boxes are stored sorted by id.
    pub fn new(dims: Extent, cell_size: f64, mut boxes: Vec<BoxInstance>) -> Result<Self, WorldError> {
        if dims.d == 0 || dims.w == 0 || dims.h == 0 {
            return Err(WorldError::InvalidGrid("zero-sized truck".into()));
        }
        if dims.d > MAX_AXIS_CELLS || dims.w > MAX_AXIS_CELLS || dims.h > MAX_AXIS_CELLS {
            return Err(WorldError::InvalidGrid(format!("axis exceeds {MAX_AXIS_CELLS} cells")));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(WorldError::InvalidGrid("cell size must be positive".into()));
        }
        boxes.sort_by_key(|b| b.id);
        for pair in boxes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(WorldError::DuplicateId(pair[0].id));
            }
        }
        let mut grid = OccupancyGrid::empty(dims, cell_size);
        let mut owner: Vec<Option<u32>> = vec![None; dims.volume()];
        for b in &boxes {
            if b.dims.d == 0 || b.dims.w == 0 || b.dims.h == 0 {
                return Err(WorldError::EmptyBox { id: b.id });
            }
            if !b.fits_in(dims) {
                return Err(WorldError::OutOfBounds { id: b.id });
            }
            for c in b.cells() {
                let i = grid.index(c);
                if let Some(other) = owner[i] {
                    return Err(WorldError::Overlap { a: other, b: b.id });
                }
                owner[i] = Some(b.id);
                grid.set(c, true);
            }
        }
        Ok(Self { grid, boxes })
    }

    pub fn empty(dims: Extent, cell_size: f64) -> Self {
        Self { grid: OccupancyGrid::empty(dims, cell_size), boxes: Vec::new() }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn dims(&self) -> Extent {
        self.grid.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.grid.cell_size
    }

    pub fn boxes(&self) -> &[BoxInstance] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn box_count(&self) -> usize {
        self.boxes.len()
    }

    pub fn get(&self, id: u32) -> Option<&BoxInstance> {
        self.boxes.binary_search_by_key(&id, |b| b.id).ok().map(|i| &self.boxes[i])
    }

    /// Index into `boxes()` of the box covering each interior cell.
    pub fn owner_map(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.grid.dims.volume()];
        for (i, b) in self.boxes.iter().enumerate() {
            for c in b.cells() {
                owner[self.grid.index(c)] = Some(i);
            }
        }
        owner
    }

    pub fn owner_index(&self, owner: &[Option<usize>], c: Cell) -> Option<usize> {
        owner[self.grid.index(c)]
    }

    /// Removes the listed boxes; unknown ids are ignored.
    pub fn remove_boxes(&mut self, ids: &[u32]) {
        for b in self.boxes.iter().filter(|b| ids.contains(&b.id)) {
            for c in b.cells() {
                self.grid.set(c, false);
            }
        }
        self.boxes.retain(|b| !ids.contains(&b.id));
    }

    /// Moves one box. The caller guarantees the destination is free.
    pub(crate) fn move_box(&mut self, idx: usize, to: Cell) {
        let b = self.boxes[idx];
        for c in b.cells() {
            self.grid.set(c, false);
        }
        self.boxes[idx].pos = to;
        let nb = self.boxes[idx];
        for c in nb.cells() {
            self.grid.set(c, true);
        }
    }

    /// Whether a box of `dims` placed at `pos` stays inside the truck and
    /// only overlaps cells owned by `ignore`.
    pub fn fits(&self, pos: Cell, dims: Extent, ignore: Option<u32>) -> bool {
        let probe = BoxInstance::new(u32::MAX, pos, dims);
        if !probe.fits_in(self.grid.dims) {
            return false;
        }
        match ignore.and_then(|id| self.get(id)) {
            None => probe.cells().all(|c| !self.grid.interior(c)),
            Some(me) => probe.cells().all(|c| !self.grid.interior(c) || me.contains(c)),
        }
    }

    /// A box is supported when it sits on the floor or any cell right below
    /// its footprint is occupied.
    pub fn is_supported(&self, b: &BoxInstance) -> bool {
        if b.pos.h == 0 {
            return true;
        }
        let h = b.pos.h - 1;
        (b.pos.d..b.depth_end())
            .any(|d| (b.pos.w..b.width_end()).any(|w| self.grid.interior(Cell::new(d, w, h))))
    }

    pub fn unsupported(&self) -> Vec<u32> {
        self.boxes.iter().filter(|b| !self.is_supported(b)).map(|b| b.id).collect()
    }

    /// Smallest depth occupied by any box.
    pub fn front_depth(&self) -> Option<usize> {
        self.boxes.iter().map(|b| b.pos.d).min()
    }

    /// Full-resolution column tops, indexed `[d][w]`.
    pub fn column_heights(&self) -> Vec<Vec<usize>> {
        let dims = self.grid.dims;
        let mut hts = vec![vec![0usize; dims.w]; dims.d];
        for b in &self.boxes {
            for row in hts.iter_mut().take(b.depth_end()).skip(b.pos.d) {
                for cell in row.iter_mut().take(b.width_end()).skip(b.pos.w) {
                    *cell = (*cell).max(b.top());
                }
            }
        }
        hts
    }
}

#[derive(Serialize, Deserialize)]
struct TrueRepr {
    world: WorldState,
    masses: BTreeMap<u32, f64>,
}

/// Ground-truth world: every box in the trailer together with its mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrueRepr", into = "TrueRepr")]
pub struct TrueWorldState {
    world: WorldState,
    masses: BTreeMap<u32, f64>,
}

impl TryFrom<TrueRepr> for TrueWorldState {
    type Error = WorldError;
    fn try_from(r: TrueRepr) -> Result<Self, WorldError> {
        TrueWorldState::new(r.world, r.masses)
    }
}

impl From<TrueWorldState> for TrueRepr {
    fn from(t: TrueWorldState) -> Self {
        TrueRepr { world: t.world, masses: t.masses }
    }
}

impl TrueWorldState {
    pub fn new(world: WorldState, masses: BTreeMap<u32, f64>) -> Result<Self, WorldError> {
        for b in world.boxes() {
            match masses.get(&b.id) {
                Some(m) if m.is_finite() && *m > 0.0 => {}
                _ => return Err(WorldError::BadMass(b.id)),
            }
        }
        if let Some(id) = masses.keys().find(|id| world.get(**id).is_none()) {
            return Err(WorldError::OrphanMass(*id));
        }
        if let Some(id) = world.unsupported().first() {
            return Err(WorldError::Unsupported(*id));
        }
        Ok(Self { world, masses })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn mass(&self, id: u32) -> Option<f64> {
        self.masses.get(&id).copied()
    }

    pub fn masses(&self) -> &BTreeMap<u32, f64> {
        &self.masses
    }

    pub fn box_count(&self) -> usize {
        self.world.box_count()
    }

    pub fn is_empty(&self) -> bool {
        self.world.is_empty()
    }

    /// Same geometry with new masses; used to build belief particles.
    pub fn with_masses(&self, masses: BTreeMap<u32, f64>) -> Result<Self, WorldError> {
        Self::new(self.world.clone(), masses)
    }

    pub(crate) fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }

    pub(crate) fn remove_boxes(&mut self, ids: &[u32]) {
        self.world.remove_boxes(ids);
        for id in ids {
            self.masses.remove(id);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world state serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    WallStacked,
    PileUnstructured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MassDistribution {
    Uniform { lo: f64, hi: f64 },
    /// Two mass modes, each jittered uniformly by ±10 %.
    Bimodal { light: f64, heavy: f64, p_heavy: f64 },
}

const BIMODAL_JITTER: f64 = 0.1;

impl MassDistribution {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::InvalidSpec(m.into()));
        match *self {
            MassDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                    return bad("uniform masses need 0 < lo < hi");
                }
            }
            MassDistribution::Bimodal { light, heavy, p_heavy } => {
                if !(light.is_finite() && heavy.is_finite() && light > 0.0 && heavy > 0.0) {
                    return bad("bimodal modes must be positive");
                }
                if !(0.0..=1.0).contains(&p_heavy) {
                    return bad("p_heavy must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MassDistribution::Uniform { lo, hi } => rng.gen_range(lo..hi),
            MassDistribution::Bimodal { light, heavy, p_heavy } => {
                let mode = if rng.gen_bool(p_heavy) { heavy } else { light };
                mode * (1.0 + rng.gen_range(-BIMODAL_JITTER..BIMODAL_JITTER))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MassDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            MassDistribution::Bimodal { light, heavy, p_heavy } => (1.0 - p_heavy) * light + p_heavy * heavy,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            MassDistribution::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            MassDistribution::Bimodal { light, heavy, p_heavy } => {
                // Mixture of two scaled uniforms.
                let j2 = BIMODAL_JITTER * BIMODAL_JITTER / 3.0;
                let second = (1.0 - p_heavy) * light * light * (1.0 + j2) + p_heavy * heavy * heavy * (1.0 + j2);
                second - self.mean().powi(2)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSizeRange {
    pub min: Extent,
    pub max: Extent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub family: Family,
    pub dims: Extent,
    pub box_size: BoxSizeRange,
    pub mass_dist: MassDistribution,
    pub fill: f64,
    pub seed: u64,
}

impl EnvSpec {
    pub fn wall(seed: u64) -> Self {
        Self {
            family: Family::WallStacked,
            dims: DEFAULT_TRUCK_DIMS,
            box_size: BoxSizeRange { min: Extent::new(2, 2, 2), max: Extent::new(3, 3, 3) },
            mass_dist: MassDistribution::Uniform { lo: 2.0, hi: 14.0 },
            fill: 0.55,
            seed,
        }
    }

    pub fn pile(seed: u64) -> Self {
        Self {
            family: Family::PileUnstructured,
            dims: DEFAULT_TRUCK_DIMS,
            box_size: BoxSizeRange { min: Extent::new(1, 1, 1), max: Extent::new(2, 2, 2) },
            mass_dist: MassDistribution::Bimodal { light: 4.0, heavy: 18.0, p_heavy: 0.4 },
            fill: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let d = self.dims;
        if d.d == 0 || d.w == 0 || d.h == 0 {
            return Err(WorldError::InvalidSpec("truck dims must be positive".into()));
        }
        if d.d > MAX_AXIS_CELLS || d.w > MAX_AXIS_CELLS || d.h > MAX_AXIS_CELLS {
            return Err(WorldError::InvalidSpec(format!("truck axis exceeds {MAX_AXIS_CELLS} cells")));
        }
        let (lo, hi) = (self.box_size.min, self.box_size.max);
        if lo.d == 0 || lo.w == 0 || lo.h == 0 {
            return Err(WorldError::InvalidSpec("box sizes must be at least one cell".into()));
        }
        if lo.d > hi.d || lo.w > hi.w || lo.h > hi.h {
            return Err(WorldError::InvalidSpec("box size min exceeds max".into()));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return Err(WorldError::InvalidSpec("fill must lie in [0, 1]".into()));
        }
        self.mass_dist.validate()?;
        if lo.d > d.d || lo.w > d.w || lo.h > d.h {
            return Err(WorldError::Infeasible("smallest box does not fit in the truck".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, EnvSpecParseError> {
        let spec: EnvSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("env spec serializes")
    }
}

#[derive(Debug, Error)]
pub enum EnvSpecParseError {
    #[error("malformed env spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] WorldError),
}

/// Builds the ground-truth truck for a spec. Pure in the spec.
pub fn generate_environment(spec: &EnvSpec) -> Result<TrueWorldState, WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target = (spec.fill * spec.dims.volume() as f64).round() as usize;
    let boxes = match spec.family {
        Family::WallStacked => stack_walls(spec, target, &mut rng),
        Family::PileUnstructured => heap_pile(spec, target, &mut rng),
    };
    let mut masses = BTreeMap::new();
    for b in &boxes {
        masses.insert(b.id, spec.mass_dist.sample(&mut rng));
    }
    let world = WorldState::new(spec.dims, DEFAULT_CELL_SIZE, boxes)?;
    TrueWorldState::new(world, masses)
}

fn pick_len(rng: &mut ChaCha8Rng, lo: usize, hi: usize, room: usize) -> usize {
    rng.gen_range(lo..=hi).min(room)
}

/// Full-width rows stacked into slabs, starting at the front bulkhead.
fn stack_walls(spec: &EnvSpec, target: usize, rng: &mut ChaCha8Rng) -> Vec<BoxInstance> {
    let dims = spec.dims;
    let (lo, hi) = (spec.box_size.min, spec.box_size.max);
    let mut boxes = Vec::new();
    let mut volume = 0;
    let mut d_end = dims.d;
    while volume < target && d_end > 0 {
        let sd = pick_len(rng, lo.d, hi.d, d_end);
        let d0 = d_end - sd;
        let mut h = 0;
        while h < dims.h && volume < target {
            let rh = pick_len(rng, lo.h, hi.h, dims.h - h);
            let mut w = 0;
            while w < dims.w && volume < target {
                let bw = pick_len(rng, lo.w, hi.w, dims.w - w);
                let b = BoxInstance::new(boxes.len() as u32, Cell::new(d0, w, h), Extent::new(sd, bw, rh));
                volume += b.dims.volume();
                boxes.push(b);
                w += bw;
            }
            h += rh;
        }
        d_end = d0;
    }
    boxes
}

/// Boxes dropped one by one and slid toward the opening until they settle
/// under a height cap that slopes down toward the robot.
fn heap_pile(spec: &EnvSpec, target: usize, rng: &mut ChaCha8Rng) -> Vec<BoxInstance> {
    let dims = spec.dims;
    let (lo, hi) = (spec.box_size.min, spec.box_size.max);
    let mut heights = vec![vec![0usize; dims.w]; dims.d];
    let mut boxes = Vec::new();
    let mut volume = 0;
    let mut misses = 0;
    while volume < target && misses < 64 {
        let ext = Extent::new(
            pick_len(rng, lo.d, hi.d, dims.d),
            pick_len(rng, lo.w, hi.w, dims.w),
            pick_len(rng, lo.h, hi.h, dims.h),
        );
        let w0 = rng.gen_range(0..=dims.w - ext.w);
        let slope = rng.gen_range(0.25..0.6);
        let mut placed = None;
        for d0 in (0..=dims.d - ext.d).rev() {
            let rest = (d0..d0 + ext.d)
                .flat_map(|d| heights[d][w0..w0 + ext.w].iter().copied())
                .max()
                .unwrap_or(0);
            let cap = ((dims.h as f64 * slope * (d0 + ext.d) as f64 / dims.d as f64).ceil() as usize).max(ext.h);
            if rest + ext.h <= dims.h && rest + ext.h <= cap {
                placed = Some(Cell::new(d0, w0, rest));
                break;
            }
        }
        match placed {
            Some(pos) => {
                misses = 0;
                let b = BoxInstance::new(boxes.len() as u32, pos, ext);
                for row in heights.iter_mut().take(b.depth_end()).skip(pos.d) {
                    for c in row.iter_mut().take(b.width_end()).skip(pos.w) {
                        *c = b.top();
                    }
                }
                volume += ext.volume();
                boxes.push(b);
            }
            None => misses += 1,
        }
    }
    boxes
}

/// Strips masses and drops boxes that no depth ray from the rear opening
/// reaches first.
pub fn perceive(t: &TrueWorldState) -> WorldState {
    let w = t.world();
    let dims = w.dims();
    let owner = w.owner_map();
    let mut seen = vec![false; w.box_count()];
    for wi in 0..dims.w {
        for h in 0..dims.h {
            if let Some(i) = (0..dims.d).find_map(|d| w.owner_index(&owner, Cell::new(d, wi, h))) {
                seen[i] = true;
            }
        }
    }
    let visible = w.boxes().iter().zip(seen).filter(|(_, s)| *s).map(|(b, _)| *b).collect();
    WorldState::new(dims, w.cell_size(), visible).expect("subset of a valid world is valid")
}

/// Maximum box top per `(depth lane, width lane)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeightField {
    pub lanes: (usize, usize),
    pub heights: Vec<Vec<usize>>,
}

impl HeightField {
    pub fn get(&self, d: usize, w: usize) -> usize {
        self.heights[d][w]
    }

    pub fn max(&self) -> usize {
        self.heights.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// Cell range of lane `i` out of `n` over an axis of `len` cells; the last
/// lane absorbs the remainder.
pub fn lane_bounds(len: usize, n: usize, i: usize) -> (usize, usize) {
    let size = len / n;
    let start = (i * size).min(len);
    let end = if i + 1 == n { len } else { ((i + 1) * size).min(len) };
    (start, end)
}

fn lane_of(len: usize, n: usize, x: usize) -> usize {
    let size = len / n;
    if size == 0 {
        n - 1
    } else {
        (x / size).min(n - 1)
    }
}

pub fn discretize(w: &WorldState, lanes: (usize, usize)) -> HeightField {
    let (nd, nw) = (lanes.0.max(1), lanes.1.max(1));
    let dims = w.dims();
    let mut heights = vec![vec![0usize; nw]; nd];
    for b in w.boxes() {
        let (d0, d1) = (lane_of(dims.d, nd, b.pos.d), lane_of(dims.d, nd, b.depth_end() - 1));
        let (w0, w1) = (lane_of(dims.w, nw, b.pos.w), lane_of(dims.w, nw, b.width_end() - 1));
        for row in heights.iter_mut().take(d1 + 1).skip(d0) {
            for c in row.iter_mut().take(w1 + 1).skip(w0) {
                *c = (*c).max(b.top());
            }
        }
    }
    HeightField { lanes: (nd, nw), heights }
}
