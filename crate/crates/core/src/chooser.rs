//! Picks between the expert rule and a stored strategy.
//!
//! World states are summarised by 85 height-map features. A 1-NN index maps
//! features to the closest library strategy, and an RBF-kernel SVM decides
//! whether that strategy or the expert should act. Training data comes from
//! probing both options from the same simulator snapshot.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ActionSource, Executor, ExecutorConfig, HardcodedSource, SourceStep, TreeSource};
use crate::sim::{SimError, SimHandle, SimParams};
use crate::strategy::{pile_profile, HardcodedParams, Observation, StrategyLibrary, StrategyNode, FEATURE_DIM};
use crate::world::{discretize, generate_environment, perceive, EnvSpec, Family, WorldError, WorldState};

pub const DEPTH_LANES: usize = 8;
pub const WIDTH_LANES: usize = 5;
const HEIGHTS_AT: usize = 0;
const DIFFS_AT: usize = DEPTH_LANES * WIDTH_LANES;
const AGGREGATES_AT: usize = DIFFS_AT + (DEPTH_LANES - 1) * WIDTH_LANES;
pub const DEFAULT_C_REG: f64 = 1.0;

pub fn default_gamma() -> f64 {
    1.0 / FEATURE_DIM as f64
}

/// `(gamma, C)` pairs tried by `select_and_train`, defaults first.
pub fn default_grid() -> Vec<(f64, f64)> {
    let g = default_gamma();
    let mut out = vec![(g, DEFAULT_C_REG)];
    for gamma in [g / 4.0, g, 4.0 * g] {
        for c in [0.1, 1.0, 10.0] {
            if (gamma, c) != (g, DEFAULT_C_REG) {
                out.push((gamma, c));
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum ChooserError {
    #[error("training data holds a single label; collect more data before training")]
    SingleClass,
    #[error("nearest-neighbour index is empty")]
    EmptyIndex,
    #[error("feature vector has {0} values, expected {FEATURE_DIM}")]
    FeatureLength(usize),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("dataset parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("model parse error at line {line}, column {column}: {message}")]
    ModelParse { line: usize, column: usize, message: String },
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// 40 lane heights (depth-major), 35 depth-adjacent differences (per width
/// lane), then d_pile, first-wall height, box count, mean and max lane
/// height, occupied-lane fraction, left/centre/right volume fractions and an
/// empty-truck flag.
pub fn extract_features(w: &WorldState) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_DIM];
    if w.is_empty() {
        f[FEATURE_DIM - 1] = 1.0;
        return f;
    }
    let hf = discretize(w, (DEPTH_LANES, WIDTH_LANES));
    for d in 0..DEPTH_LANES {
        for wl in 0..WIDTH_LANES {
            f[HEIGHTS_AT + d * WIDTH_LANES + wl] = hf.get(d, wl) as f64;
        }
    }
    for wl in 0..WIDTH_LANES {
        for d in 0..DEPTH_LANES - 1 {
            f[DIFFS_AT + wl * (DEPTH_LANES - 1) + d] = hf.get(d + 1, wl) as f64 - hf.get(d, wl) as f64;
        }
    }
    let lanes = &f[HEIGHTS_AT..DIFFS_AT];
    let mean = lanes.iter().sum::<f64>() / lanes.len() as f64;
    let occupied = lanes.iter().filter(|&&h| h > 0.0).count() as f64 / lanes.len() as f64;
    let prof = pile_profile(w, HardcodedParams::default().h_pile);
    let width = w.dims().w as f64;
    let mut sides = [0.0; 3];
    for b in w.boxes() {
        let centre = b.pos.w as f64 + b.dims.w as f64 / 2.0;
        let side = ((3.0 * centre / width) as usize).min(2);
        sides[side] += b.dims.volume() as f64;
    }
    let volume: f64 = sides.iter().sum();
    let a = &mut f[AGGREGATES_AT..];
    a[0] = prof.map_or(0, |p| p.d_pile) as f64;
    a[1] = prof.map_or(0, |p| p.h_wall) as f64;
    a[2] = w.box_count() as f64;
    a[3] = mean;
    a[4] = hf.max() as f64;
    a[5] = occupied;
    for (k, s) in sides.iter().enumerate() {
        a[6 + k] = s / volume;
    }
    f
}

fn check_len(f: &[f64]) -> Result<(), ChooserError> {
    if f.len() == FEATURE_DIM {
        Ok(())
    } else {
        Err(ChooserError::FeatureLength(f.len()))
    }
}

/// Per-dimension z-score. Constant dimensions get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(FEATURE_DIM, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for r in rows {
            for ((s, x), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        let scale = scale.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Library anchors standardised by their own spread.
#[derive(Debug, Clone, PartialEq)]
pub struct NNIndex {
    scaler: Scaler,
    anchors: Vec<Vec<f64>>,
    trees: Vec<StrategyNode>,
}

impl NNIndex {
    pub fn from_library(lib: &StrategyLibrary) -> Result<Self, ChooserError> {
        Self::new(lib.entries.iter().map(|e| (e.anchor.clone(), e.tree.clone())).collect())
    }

    pub fn new(entries: Vec<(Vec<f64>, StrategyNode)>) -> Result<Self, ChooserError> {
        if entries.is_empty() {
            return Err(ChooserError::EmptyIndex);
        }
        for (a, _) in &entries {
            check_len(a)?;
        }
        let raw: Vec<Vec<f64>> = entries.iter().map(|(a, _)| a.clone()).collect();
        let scaler = Scaler::fit(&raw);
        let anchors = raw.iter().map(|a| scaler.apply(a)).collect();
        let trees = entries.into_iter().map(|(_, t)| t).collect();
        Ok(Self { scaler, anchors, trees })
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn tree(&self, id: usize) -> &StrategyNode {
        &self.trees[id]
    }

    /// Anchor id and standardised distance of the closest anchor; ties go
    /// to the lowest id.
    pub fn nearest(&self, f: &[f64]) -> Result<(usize, f64), ChooserError> {
        check_len(f)?;
        let q = self.scaler.apply(f);
        let mut best = (0, f64::INFINITY);
        for (i, a) in self.anchors.iter().enumerate() {
            let d = sq_dist(&q, a);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok((best.0, best.1.sqrt()))
    }
}

pub fn nn_choose<'a>(f: &[f64], idx: &'a NNIndex) -> Result<&'a StrategyNode, ChooserError> {
    Ok(idx.tree(idx.nearest(f)?.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    UseLibrary,
    UseHardcoded,
}

impl Label {
    fn sign(self) -> f64 {
        match self {
            Label::UseLibrary => 1.0,
            Label::UseHardcoded => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: Family,
    pub env_seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub features: Vec<f64>,
    pub label: Label,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<Row>,
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::WallStacked => "WallStacked",
        Family::PileUnstructured => "PileUnstructured",
    }
}

impl Dataset {
    pub fn push(&mut self, row: Row) -> Result<(), ChooserError> {
        check_len(&row.features)?;
        if row.features.iter().any(|x| !x.is_finite()) {
            return Err(ChooserError::Dataset("non-finite feature".into()));
        }
        if self.rows.iter().any(|r| r.provenance == row.provenance) {
            let p = &row.provenance;
            return Err(ChooserError::Dataset(format!(
                "duplicate provenance {} seed {} step {}",
                family_name(p.family),
                p.env_seed,
                p.step
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn count(&self, label: Label) -> usize {
        self.rows.iter().filter(|r| r.label == label).count()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), ChooserError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..FEATURE_DIM).map(|i| format!("f{i}")).collect();
        header.extend(["label", "family", "env_seed", "step"].map(String::from));
        w.write_record(&header).map_err(csv_io)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.features.iter().map(|x| x.to_string()).collect();
            rec.push(format!("{:?}", r.label));
            rec.push(family_name(r.provenance.family).into());
            rec.push(r.provenance.env_seed.to_string());
            rec.push(r.provenance.step.to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, ChooserError> {
        let mut r = csv::Reader::from_reader(input);
        let width = FEATURE_DIM + 4;
        let headers = r.headers().map_err(|e| parse_err(1, e))?.clone();
        if headers.len() != width {
            return Err(ChooserError::Parse { line: 1, message: format!("expected {width} columns") });
        }
        let mut d = Dataset::default();
        for rec in r.records() {
            let rec = rec.map_err(|e| parse_err(0, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |m: String| ChooserError::Parse { line, message: m };
            if rec.len() != width {
                return Err(bad(format!("expected {width} columns, found {}", rec.len())));
            }
            let features = (0..FEATURE_DIM)
                .map(|i| rec[i].trim().parse::<f64>().map_err(|e| bad(format!("column f{i}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let label = match &rec[FEATURE_DIM] {
                "UseLibrary" => Label::UseLibrary,
                "UseHardcoded" => Label::UseHardcoded,
                other => return Err(bad(format!("unknown label {other:?}"))),
            };
            let family = match &rec[FEATURE_DIM + 1] {
                "WallStacked" => Family::WallStacked,
                "PileUnstructured" => Family::PileUnstructured,
                other => return Err(bad(format!("unknown family {other:?}"))),
            };
            let int = |k: usize| rec[k].trim().parse::<u64>().map_err(|e| bad(format!("column {k}: {e}")));
            let provenance = Provenance { family, env_seed: int(FEATURE_DIM + 2)?, step: int(FEATURE_DIM + 3)? };
            d.push(Row { features, label, provenance }).map_err(|e| bad(e.to_string()))?;
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), ChooserError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ChooserError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn csv_io(e: csv::Error) -> ChooserError {
    ChooserError::Io(io::Error::other(e))
}

fn parse_err(fallback: u64, e: csv::Error) -> ChooserError {
    let line = e.position().map_or(fallback, |p| p.line());
    ChooserError::Parse { line, message: e.to_string() }
}

/// RBF-kernel soft-margin classifier over standardised features. A model
/// without support vectors predicts the sign of `bias` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChooserModel {
    pub scaler: Scaler,
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c_reg: f64,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

impl ChooserModel {
    /// Predicts `label` for every input.
    pub fn constant(label: Label) -> Self {
        Self {
            scaler: Scaler { mean: vec![0.0; FEATURE_DIM], scale: vec![1.0; FEATURE_DIM] },
            support: Vec::new(),
            coef: Vec::new(),
            bias: label.sign(),
            gamma: default_gamma(),
            c_reg: DEFAULT_C_REG,
        }
    }

    pub fn decision(&self, f: &[f64]) -> Result<f64, ChooserError> {
        check_len(f)?;
        let x = self.scaler.apply(f);
        let s: f64 = self.support.iter().zip(&self.coef).map(|(sv, c)| c * rbf(self.gamma, sv, &x)).sum();
        Ok(s + self.bias)
    }

    pub fn predict(&self, f: &[f64]) -> Result<Label, ChooserError> {
        Ok(if self.decision(f)? >= 0.0 { Label::UseLibrary } else { Label::UseHardcoded })
    }

    pub fn validate(&self) -> Result<(), ChooserError> {
        let bad = |m: &str| Err(ChooserError::Model(m.into()));
        if self.scaler.mean.len() != FEATURE_DIM || self.scaler.scale.len() != FEATURE_DIM {
            return bad("scaler must have 85 dimensions");
        }
        if self.scaler.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.scaler.mean.iter().any(|m| !m.is_finite()) {
            return bad("scaler values must be finite with positive scales");
        }
        if self.support.len() != self.coef.len() {
            return bad("support vectors and coefficients differ in count");
        }
        if self.support.iter().any(|s| s.len() != FEATURE_DIM || s.iter().any(|x| !x.is_finite())) {
            return bad("support vectors must be finite 85-vectors");
        }
        if self.coef.iter().any(|c| !c.is_finite()) || !self.bias.is_finite() {
            return bad("coefficients and bias must be finite");
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) || !(self.c_reg.is_finite() && self.c_reg > 0.0) {
            return bad("gamma and C must be positive");
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, ChooserError> {
        let m: Self = serde_json::from_str(s)
            .map_err(|e| ChooserError::ModelParse { line: e.line(), column: e.column(), message: e.to_string() })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ChooserError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ChooserError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

const SMO_EPS: f64 = 1e-3;
const SMO_TAU: f64 = 1e-12;

/// Solves the soft-margin dual with second-order working-set selection.
/// Returns the multipliers and the bias.
fn smo(k: &[Vec<f64>], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = k[i][i] + k[t][t] - 2.0 * k[i][t];
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { SMO_TAU };
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < SMO_EPS || j == usize::MAX {
            break;
        }
        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (k[i][i] + k[j][j] + 2.0 * q(i, j)).max(SMO_TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[i][i] + k[j][j] - 2.0 * q(i, j)).max(SMO_TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    // Bias from free multipliers, or the middle of the feasible interval.
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    (alpha, -rho)
}

pub fn train(d: &Dataset, gamma: f64, c_reg: f64) -> Result<ChooserModel, ChooserError> {
    if !(gamma.is_finite() && gamma > 0.0) || !(c_reg.is_finite() && c_reg > 0.0) {
        return Err(ChooserError::Hyper("gamma and C must be positive".into()));
    }
    if d.count(Label::UseLibrary) == 0 || d.count(Label::UseHardcoded) == 0 {
        return Err(ChooserError::SingleClass);
    }
    let raw: Vec<Vec<f64>> = d.rows.iter().map(|r| r.features.clone()).collect();
    let scaler = Scaler::fit(&raw);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
    let y: Vec<f64> = d.rows.iter().map(|r| r.label.sign()).collect();
    let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| rbf(gamma, a, b)).collect()).collect();
    let (alpha, bias) = smo(&k, &y, c_reg);
    let (mut support, mut coef) = (Vec::new(), Vec::new());
    for ((a, yi), xi) in alpha.iter().zip(&y).zip(x) {
        if *a > 0.0 {
            support.push(xi);
            coef.push(a * yi);
        }
    }
    Ok(ChooserModel { scaler, support, coef, bias, gamma, c_reg })
}

/// Trains on every grid point using a fixed 3:1 split (every fourth row is
/// held out) and refits the best pair on all rows. Ties keep the earlier
/// grid point.
pub fn select_and_train(d: &Dataset, grid: &[(f64, f64)]) -> Result<ChooserModel, ChooserError> {
    let (mut fit, mut held) = (Dataset::default(), Vec::new());
    for (i, r) in d.rows.iter().enumerate() {
        if i % 4 == 3 {
            held.push(r);
        } else {
            fit.rows.push(r.clone());
        }
    }
    let mut best: Option<((f64, f64), f64)> = None;
    for &(g, c) in grid {
        let acc = match train(&fit, g, c) {
            Ok(m) if !held.is_empty() => {
                held.iter().filter(|r| m.predict(&r.features).ok() == Some(r.label)).count() as f64 / held.len() as f64
            }
            _ => continue,
        };
        if best.is_none_or(|(_, a)| acc > a) {
            best = Some(((g, c), acc));
        }
    }
    let (g, c) = best.map_or((default_gamma(), DEFAULT_C_REG), |(p, _)| p);
    train(d, g, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Hardcoded,
    Library(usize),
}

pub fn choose(f: &[f64], m: &ChooserModel, idx: &NNIndex) -> Result<Choice, ChooserError> {
    match m.predict(f)? {
        Label::UseLibrary => Ok(Choice::Library(idx.nearest(f)?.0)),
        Label::UseHardcoded => Ok(Choice::Hardcoded),
    }
}

/// How a `LibraryPolicy` decides between stored strategies and the expert.
#[derive(Debug, Clone)]
pub enum Selector {
    /// Always the nearest stored strategy.
    NearestOnly,
    Learned(ChooserModel),
}

/// Re-decides before every action. While the same stored strategy keeps
/// winning, its tree is followed down; a different winner starts from its
/// root, and an exhausted tree restarts. An expert decision covers a single
/// action, as does the expert stand-in for a tree without a root action.
#[derive(Debug, Clone)]
pub struct LibraryPolicy {
    pub index: NNIndex,
    pub selector: Selector,
    pub expert: HardcodedSource,
    current: Option<(usize, TreeSource)>,
    pub choices: Vec<Choice>,
}

impl LibraryPolicy {
    pub fn new(index: NNIndex, selector: Selector, expert: HardcodedSource) -> Self {
        Self { index, selector, expert, current: None, choices: Vec::new() }
    }

    fn decide(&self, w: &WorldState) -> Choice {
        let f = extract_features(w);
        let r = match &self.selector {
            Selector::NearestOnly => self.index.nearest(&f).map(|(i, _)| Choice::Library(i)),
            Selector::Learned(m) => choose(&f, m, &self.index),
        };
        r.expect("features always have 85 values and the index is non-empty")
    }
}

impl ActionSource for LibraryPolicy {
    fn next_action(&mut self, w: &WorldState, z: Observation) -> SourceStep {
        let choice = self.decide(w);
        self.choices.push(choice);
        let running = self.current.take();
        if let Choice::Library(i) = choice {
            if let Some((j, mut src)) = running {
                if j == i {
                    if let step @ SourceStep::Act(_) = src.next_action(w, z) {
                        self.current = Some((i, src));
                        return step;
                    }
                }
            }
            let mut src = TreeSource::new(self.index.tree(i).clone());
            if let step @ SourceStep::Act(_) = src.next_action(w, z) {
                self.current = Some((i, src));
                return step;
            }
        }
        self.expert.next_action(w, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub iters: usize,
    /// Simulated seconds per visit before moving to the next environment.
    pub budget_s: f64,
    pub gamma: f64,
    pub c_reg: f64,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { iters: 200, budget_s: 1600.0, gamma: default_gamma(), c_reg: DEFAULT_C_REG, seed: 0 }
    }
}

/// One probe: a single executor step from `source`, scored by boxes.
fn probe(exec: &Executor, source: &mut dyn ActionSource, sim: &mut SimHandle, t: f64) -> usize {
    let mut e = exec.clone();
    e.step(source, sim, t).map_or(0, |r| r.boxes_unloaded)
}

struct Visit {
    env: usize,
    sim: SimHandle,
    exec: Executor,
    t: f64,
}

/// DAgger-style loop. Each iteration probes the nearest library strategy and
/// the expert for one action from the same snapshot, labels the state with
/// the better one (ties go to the expert), retrains, then advances the world
/// with the current model's choice. Environments are visited round-robin.
pub fn collect_data(
    envs: &[EnvSpec],
    lib: &StrategyLibrary,
    exec_cfg: &ExecutorConfig,
    sim: &SimParams,
    cfg: &CollectConfig,
) -> Result<(Dataset, ChooserModel), ChooserError> {
    let mut data = Dataset::default();
    let mut model = ChooserModel::constant(Label::UseHardcoded);
    if cfg.iters == 0 || envs.is_empty() {
        return Ok((data, model));
    }
    let index = NNIndex::from_library(lib)?;
    let expert = HardcodedSource { params: exec_cfg.hardcoded, ctx: exec_cfg.action };
    let mut steps = vec![0u64; envs.len()];
    let mut visits = 0u64;
    let open = |env: usize, visits: &mut u64| -> Result<Visit, ChooserError> {
        let state = generate_environment(&envs[env])?;
        let params = sim.with_seed(sim.rng_seed ^ cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(*visits));
        *visits += 1;
        Ok(Visit { env, sim: SimHandle::new(state, params)?, exec: Executor::new(exec_cfg.clone()), t: 0.0 })
    };
    let mut v = open(0, &mut visits)?;
    for _ in 0..cfg.iters {
        let mut tries = 0;
        while v.sim.state().is_empty() || v.t >= cfg.budget_s {
            if tries > envs.len() {
                return Ok((data, model));
            }
            v = open((v.env + 1) % envs.len(), &mut visits)?;
            tries += 1;
        }
        let perceived = perceive(v.sim.state());
        let f = extract_features(&perceived);
        let snap = v.sim.snapshot();
        let (nearest, _) = index.nearest(&f)?;
        let lib_boxes = probe(&v.exec, &mut TreeSource::new(index.tree(nearest).clone()), &mut v.sim, v.t);
        v.sim.restore(&snap)?;
        let h_boxes = probe(&v.exec, &mut expert.clone(), &mut v.sim, v.t);
        v.sim.restore(&snap)?;
        assert_eq!(v.sim.snapshot().to_json(), snap.to_json(), "probe left the simulator changed");
        let label = if lib_boxes > h_boxes { Label::UseLibrary } else { Label::UseHardcoded };
        let spec = &envs[v.env];
        let provenance = Provenance { family: spec.family, env_seed: spec.seed, step: steps[v.env] };
        steps[v.env] += 1;
        data.push(Row { features: f.clone(), label, provenance })?;
        model = match train(&data, cfg.gamma, cfg.c_reg) {
            Ok(m) => m,
            Err(ChooserError::SingleClass) => ChooserModel::constant(label),
            Err(e) => return Err(e),
        };
        let mut policy = LibraryPolicy::new(index.clone(), Selector::Learned(model.clone()), expert.clone());
        match v.exec.step(&mut policy, &mut v.sim, v.t) {
            Ok(rec) => v.t += rec.duration(),
            Err(_) => v.t = f64::INFINITY,
        }
    }
    Ok((data, model))
}
