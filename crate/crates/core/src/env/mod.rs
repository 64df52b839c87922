//! Environments: shared grid vocabulary and the interface the loop drives.

pub mod craft;
pub mod cube;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::ActionConcept;
use crate::constraints::{ConstraintVerdict, Task};
use crate::kernel::{AgentId, EnvStep, TaskId};

pub use craft::{CraftAction, CraftEnv, CraftObservation, CoopConfig};
pub use cube::{CubeAction, CubeEnv, CubeObservation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Cube,
    Craftlite,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Cube => "cube",
            EnvKind::Craftlite => "craftlite",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cube" => Some(EnvKind::Cube),
            "craftlite" => Some(EnvKind::Craftlite),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
    Auto,
}

impl Difficulty {
    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
            Difficulty::Auto => "auto",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "easy" => Some(Difficulty::Easy),
            "hard" => Some(Difficulty::Hard),
            "auto" => Some(Difficulty::Auto),
            _ => None,
        }
    }
}

/// Grid coordinate `(row, col)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell(pub i32, pub i32);

impl Cell {
    pub fn row(self) -> i32 {
        self.0
    }

    pub fn col(self) -> i32 {
        self.1
    }

    pub fn step(self, dir: Direction) -> Cell {
        let (dr, dc) = dir.delta();
        Cell(self.0 + dr, self.1 + dc)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.0.abs_diff(other.0) + self.1.abs_diff(other.1)
    }

    pub fn in_bounds(self, k: i32) -> bool {
        self.0 >= 0 && self.1 >= 0 && self.0 < k && self.1 < k
    }

    /// Direction of a 4-neighbour, if `other` is one.
    pub fn direction_to(self, other: Cell) -> Option<Direction> {
        Direction::ALL.into_iter().find(|&d| self.step(d) == other)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// A primitive action of either environment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Primitive {
    Cube(CubeAction),
    Craft(CraftAction),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Observation {
    Cube(CubeObservation),
    Craft(CraftObservation),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Success,
    /// The primitive was legal but changed nothing (blocked move, unmet quorum).
    NoEffect,
    /// The primitive was rejected; the plan issuing it terminates with failure.
    Failure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub agent: AgentId,
    pub kind: OutcomeKind,
    pub detail: String,
}

impl ExecOutcome {
    pub fn new(agent: AgentId, kind: OutcomeKind, detail: impl Into<String>) -> Self {
        Self {
            agent,
            kind,
            detail: detail.into(),
        }
    }
}

/// Progress of the concept a plan cursor points at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SegmentProgress {
    /// Primitives emitted so far for this concept.
    pub steps: u32,
    /// Direction fixed when the concept started, where relevant.
    pub direction: Option<Direction>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Grounding {
    Emit(Primitive),
    Complete,
    Fail(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub outcomes: Vec<ExecOutcome>,
    /// Verdicts on `(s_t, a_t)` for every task still active after the step.
    pub verdicts: Vec<ConstraintVerdict>,
    pub completed_tasks: Vec<TaskId>,
    pub capability_gains: u32,
    pub reward: f64,
    pub success: bool,
}

/// The interface the interaction loop uses. Implementations are deterministic.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;
    fn n_agents(&self) -> usize;
    fn t(&self) -> EnvStep;
    fn snapshot(&self) -> Value;
    fn observe(&self, agent: AgentId) -> Observation;
    /// Next primitive of `concept` for `agent` given what has been emitted so far.
    /// On `Emit` the returned progress already counts the emitted primitive.
    fn ground(&self, agent: AgentId, concept: &ActionConcept, progress: &SegmentProgress) -> (Grounding, SegmentProgress);
    fn idle(&self) -> Primitive;
    fn step(&mut self, joint: &[Primitive]) -> StepReport;
    fn active_tasks(&self) -> Vec<Task>;
    /// Verdicts for the current state with every agent idle.
    fn current_verdicts(&self) -> Vec<ConstraintVerdict>;
    fn success(&self) -> bool;
    fn prompt(&self) -> &'static str;
}

/// Everything needed to build an environment instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub difficulty: Difficulty,
    pub n_agents: usize,
    pub seed: u64,
    pub coop: Option<CoopConfig>,
    pub scenario: Option<cube::Scenario>,
}

pub fn build_env(spec: &EnvSpec) -> Result<Box<dyn Environment>, EnvError> {
    match spec.kind {
        EnvKind::Cube => {
            let env = match &spec.scenario {
                Some(s) => CubeEnv::from_scenario(s)?,
                None => CubeEnv::generate(spec.n_agents, spec.difficulty, spec.seed)?,
            };
            if env.n_agents() != spec.n_agents {
                return Err(EnvError::Scenario(format!(
                    "scenario has {} agents, run asks for {}",
                    env.n_agents(),
                    spec.n_agents
                )));
            }
            Ok(Box::new(env))
        }
        EnvKind::Craftlite => {
            if spec.difficulty == Difficulty::Auto {
                return Err(EnvError::Unsupported("craftlite has no auto difficulty".into()));
            }
            let coop = spec.coop.clone().unwrap_or_else(|| CoopConfig::preset(spec.difficulty));
            Ok(Box::new(CraftEnv::generate(spec.n_agents, coop, spec.seed)?))
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("generation failed after {0} attempts")]
    GenerationFailed(u32),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}
