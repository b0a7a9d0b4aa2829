use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AbstractAction, SemanticObservation};
use crate::world::{EnvSpec, TrueWorldState};

pub const FEATURE_DIM: usize = 85;
pub const LIBRARY_VERSION: u32 = 1;

/// One decision point. A node without an action means "stop here" and has
/// no children.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<AbstractAction>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub children: BTreeMap<SemanticObservation, StrategyNode>,
}

impl StrategyNode {
    pub fn leaf(action: AbstractAction) -> Self {
        Self { action: Some(action), children: BTreeMap::new() }
    }

    /// Number of nodes carrying an action.
    pub fn node_count(&self) -> usize {
        usize::from(self.action.is_some()) + self.children.values().map(StrategyNode::node_count).sum::<usize>()
    }

    /// Number of actions on the longest path.
    pub fn depth(&self) -> usize {
        if self.action.is_none() {
            return 0;
        }
        1 + self.children.values().map(StrategyNode::depth).max().unwrap_or(0)
    }

    fn check(&self) -> Result<(), String> {
        if self.action.is_none() && !self.children.is_empty() {
            return Err("node without an action has children".into());
        }
        self.children.values().try_for_each(StrategyNode::check)
    }

    fn at(&self, path: &[SemanticObservation]) -> Option<&StrategyNode> {
        path.iter().try_fold(self, |n, z| n.children.get(z))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Cursor {
    #[default]
    Start,
    At(Vec<SemanticObservation>),
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Act(AbstractAction),
    Exhausted,
}

/// Walks one level down the tree. From `Start` the root action is returned
/// whatever `z` is; afterwards the edge labelled `z` is followed.
pub fn advance(tree: &StrategyNode, cursor: &Cursor, z: SemanticObservation) -> (Step, Cursor) {
    let (node, path) = match cursor {
        Cursor::Exhausted => return (Step::Exhausted, Cursor::Exhausted),
        Cursor::Start => (Some(tree), Vec::new()),
        Cursor::At(path) => {
            let mut next = path.clone();
            next.push(z);
            (tree.at(path).and_then(|n| n.children.get(&z)), next)
        }
    };
    match node.and_then(|n| n.action) {
        Some(a) => (Step::Act(a), Cursor::At(path)),
        None => (Step::Exhausted, Cursor::Exhausted),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryEntry {
    pub anchor: Vec<f64>,
    pub tree: StrategyNode,
    pub env_spec: EnvSpec,
    /// Position of this strategy within its training episode.
    #[serde(default)]
    pub seq: u32,
    /// Ground truth the strategy was generated from, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_state: Option<TrueWorldState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyLibrary {
    pub version: u32,
    pub entries: Vec<LibraryEntry>,
}

impl Default for StrategyLibrary {
    fn default() -> Self {
        Self { version: LIBRARY_VERSION, entries: Vec::new() }
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("cannot access library file: {0}")]
    Io(#[from] std::io::Error),
    #[error("library parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid library: {0}")]
    Invalid(String),
}

impl StrategyLibrary {
    pub fn validate(&self) -> Result<(), LibraryError> {
        if self.version != LIBRARY_VERSION {
            return Err(LibraryError::Invalid(format!("unsupported version {}", self.version)));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.anchor.len() != FEATURE_DIM {
                return Err(LibraryError::Invalid(format!("entry {i}: anchor has {} values", e.anchor.len())));
            }
            if e.anchor.iter().any(|x| !x.is_finite()) {
                return Err(LibraryError::Invalid(format!("entry {i}: non-finite anchor")));
            }
            e.tree.check().map_err(|m| LibraryError::Invalid(format!("entry {i}: {m}")))?;
            e.env_spec.validate().map_err(|err| LibraryError::Invalid(format!("entry {i}: {err}")))?;
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, LibraryError> {
        let lib: StrategyLibrary = serde_json::from_str(s)
            .map_err(|e| LibraryError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("library serializes")
    }

    pub fn node_count(&self) -> usize {
        self.entries.iter().map(|e| e.tree.node_count()).sum()
    }
}

pub fn save_library(lib: &StrategyLibrary, path: &Path) -> Result<(), LibraryError> {
    lib.validate()?;
    std::fs::write(path, lib.to_json())?;
    Ok(())
}

pub fn load_library(path: &Path) -> Result<StrategyLibrary, LibraryError> {
    StrategyLibrary::from_json_str(&std::fs::read_to_string(path)?)
}
