//! Cooperative constraints: per-agent predicates, quorum verdicts and feedback.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Cell;
use crate::kernel::{AgentId, EnvStep, EpisodeRecord, TaskId};

/// Constraint types. Symbols: spatial `Δℓ`, temporal `Δt`, participation `n`, dependency `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Spatial,
    Temporal,
    Participation,
    Dependency,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 4] = [
        ConstraintKind::Spatial,
        ConstraintKind::Temporal,
        ConstraintKind::Participation,
        ConstraintKind::Dependency,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            ConstraintKind::Spatial => "Δℓ",
            ConstraintKind::Temporal => "Δt",
            ConstraintKind::Participation => "n",
            ConstraintKind::Dependency => "d",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Spatial => "spatial",
            ConstraintKind::Temporal => "temporal",
            ConstraintKind::Participation => "participation",
            ConstraintKind::Dependency => "dependency",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolTier {
    #[default]
    None,
    WoodPickaxe,
    StonePickaxe,
    IronPickaxe,
}

impl ToolTier {
    pub fn name(self) -> &'static str {
        match self {
            ToolTier::None => "none",
            ToolTier::WoodPickaxe => "wood_pickaxe",
            ToolTier::StonePickaxe => "stone_pickaxe",
            ToolTier::IronPickaxe => "iron_pickaxe",
        }
    }

    /// Tiers strictly above `None` up to and including `self`.
    pub fn chain(self) -> Vec<ToolTier> {
        [ToolTier::WoodPickaxe, ToolTier::StonePickaxe, ToolTier::IronPickaxe]
            .into_iter()
            .filter(|&t| t <= self)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    InProgress,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dependency {
    /// Some teammate holds a tool of at least this tier.
    Tool { tier: ToolTier },
    Task { task: TaskId },
    /// Every destination cell of a push from this face is inside the grid and empty.
    DestinationClear,
}

impl Dependency {
    pub fn label(&self) -> String {
        match self {
            Dependency::Tool { tier } => tier.name().to_string(),
            Dependency::Task { task } => task.alias(),
            Dependency::DestinationClear => "destination_clear".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub kind: String,
    pub object_type: String,
    pub object_id: u32,
    /// Cells the proximity predicate measures distance to.
    pub anchor: Vec<Cell>,
    pub radius: u32,
    pub required_agents: u32,
    pub required_tool: ToolTier,
    pub dependencies: Vec<Dependency>,
    pub state: TaskState,
}

/// What the constraint engine needs to know about one agent at one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityState {
    pub agent: AgentId,
    pub position: Cell,
    pub tool_tier: ToolTier,
    /// The task the agent's issued primitive acts on, if any.
    pub engaged: Option<TaskId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPredicates {
    pub capability: bool,
    pub proximity: bool,
    pub engagement: bool,
}

impl AgentPredicates {
    pub fn qualifies(&self) -> bool {
        self.capability && self.proximity && self.engagement
    }
}

pub fn per_agent_predicates(task: &Task, cap: &CapabilityState) -> AgentPredicates {
    let distance = task
        .anchor
        .iter()
        .map(|c| c.manhattan(cap.position))
        .min()
        .unwrap_or(u32::MAX);
    AgentPredicates {
        capability: cap.tool_tier >= task.required_tool,
        proximity: distance <= task.radius,
        engagement: cap.engaged == Some(task.id),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyStatus {
    pub label: String,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub task: TaskId,
    pub step: EnvStep,
    pub spatial: bool,
    pub temporal: bool,
    pub participation: bool,
    pub dependency: bool,
    pub satisfied: Vec<ConstraintKind>,
    pub violated: Vec<ConstraintKind>,
    pub required: u32,
    pub proximate: u32,
    pub engaged: u32,
    pub participants: Vec<AgentId>,
    pub dependencies: Vec<DependencyStatus>,
}

impl ConstraintVerdict {
    pub fn cooperative(&self) -> bool {
        self.violated.is_empty()
    }

    pub fn holds(&self, kind: ConstraintKind) -> bool {
        match kind {
            ConstraintKind::Spatial => self.spatial,
            ConstraintKind::Temporal => self.temporal,
            ConstraintKind::Participation => self.participation,
            ConstraintKind::Dependency => self.dependency,
        }
    }

    pub fn qualifying(&self) -> u32 {
        self.participants.len() as u32
    }

    pub fn satisfied_dependencies(&self) -> u32 {
        self.dependencies.iter().filter(|d| d.done).count() as u32
    }
}

/// Evaluates the four constraint types of `task` at `step`.
///
/// Participation holds when at least `p(g)` agents are simultaneously capable,
/// proximate and engaged. Spatial holds when someone is engaged and every engaged
/// agent is proximate. Temporal holds when someone is engaged and no capable,
/// proximate agent is idle.
pub fn evaluate(
    task: &Task,
    caps: &[CapabilityState],
    step: EnvStep,
    dependency_holds: &dyn Fn(&Dependency) -> bool,
) -> ConstraintVerdict {
    let preds: Vec<(AgentId, AgentPredicates)> =
        caps.iter().map(|c| (c.agent, per_agent_predicates(task, c))).collect();
    let participants: Vec<AgentId> = preds.iter().filter(|(_, p)| p.qualifies()).map(|(a, _)| *a).collect();
    let proximate = preds.iter().filter(|(_, p)| p.proximity).count() as u32;
    let engaged = preds.iter().filter(|(_, p)| p.engagement).count() as u32;
    let participation = participants.len() as u32 >= task.required_agents;
    let spatial = engaged > 0 && preds.iter().all(|(_, p)| !p.engagement || p.proximity);
    let temporal = engaged > 0 && preds.iter().all(|(_, p)| !(p.capability && p.proximity) || p.engagement);
    let dependencies: Vec<DependencyStatus> = task
        .dependencies
        .iter()
        .map(|d| DependencyStatus {
            label: d.label(),
            done: dependency_holds(d),
        })
        .collect();
    let dependency = dependencies.iter().all(|d| d.done);
    let mut satisfied = Vec::new();
    let mut violated = Vec::new();
    for (kind, ok) in [
        (ConstraintKind::Spatial, spatial),
        (ConstraintKind::Temporal, temporal),
        (ConstraintKind::Participation, participation),
        (ConstraintKind::Dependency, dependency),
    ] {
        if ok {
            satisfied.push(kind);
        } else {
            violated.push(kind);
        }
    }
    ConstraintVerdict {
        task: task.id,
        step,
        spatial,
        temporal,
        participation,
        dependency,
        satisfied,
        violated,
        required: task.required_agents,
        proximate,
        engaged,
        participants,
        dependencies,
    }
}

/// What an agent is told about a task when feedback is on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSnapshot {
    pub task: TaskId,
    pub object_type: String,
    pub object_id: u32,
    /// Cells the task is anchored at.
    #[serde(default)]
    pub anchor: Vec<Cell>,
    pub required: u32,
    pub ratio: f64,
    pub participants: Vec<AgentId>,
    pub dependencies: Vec<DependencyStatus>,
    pub violated: Vec<ConstraintKind>,
}

pub fn feedback(task: &Task, verdict: &ConstraintVerdict, enabled: bool) -> Result<FeedbackSnapshot, ConstraintError> {
    if !enabled {
        return Err(ConstraintError::FeedbackDisabled);
    }
    Ok(FeedbackSnapshot {
        task: task.id,
        object_type: task.object_type.clone(),
        object_id: task.object_id,
        anchor: task.anchor.clone(),
        required: task.required_agents,
        ratio: verdict.qualifying() as f64 / task.required_agents as f64,
        participants: verdict.participants.clone(),
        dependencies: verdict.dependencies.clone(),
        violated: verdict.violated.clone(),
    })
}

/// `τ_f`: the termination step of an unsuccessful episode.
pub fn failure_time(record: &EpisodeRecord) -> Option<EnvStep> {
    if record.success() {
        None
    } else {
        Some(record.termination_step())
    }
}

/// The task a failure is attributed to: among the given verdicts, the one with the
/// most engaged, then most proximate agents, preferring tasks with violations and
/// breaking ties by lowest id.
pub fn focal_verdict(verdicts: &[ConstraintVerdict]) -> Option<&ConstraintVerdict> {
    verdicts.iter().min_by(|a, b| {
        let key = |v: &ConstraintVerdict| (v.violated.is_empty(), std::cmp::Reverse(v.engaged), std::cmp::Reverse(v.proximate));
        key(a).cmp(&key(b)).then(a.task.cmp(&b.task))
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("feedback is disabled for this run")]
    FeedbackDisabled,
}
