//! Stage machine of the multi-agent embodied interaction loop.
//!
//! Each agent cycles through reasoning (R), waiting at the barrier (W),
//! executing one primitive per environment step (X), and handling
//! interruptions (I). The episode driver lives in [`episode`]; trace
//! invariant checks live in [`audit`].

pub mod audit;
pub mod episode;

pub use episode::{run_episode_loop, LoopConfig, LoopError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ActionConcept, TaskSpecification};
use crate::comm::Message;
use crate::env::SegmentProgress;
use crate::kernel::{AgentId, CognitiveEvent, EnvStep};



#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageLabel {
    R,
    X,
    W,
    I,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptDecision {
    Resume,
    Replan,
}

/// Why a stage sample was emitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    /// Initial R sample at episode start.
    Init,
    PlanCommitted,
    BarrierReleased,
    /// The primitive of the last step finished and the plan has more to do.
    StepCompleted,
    ExecutionDone,
    ExecutionFailed,
    MessageArrived,
    InterruptResolved(InterruptDecision),
}

/// Successor stage for `(stage, cause)`, or an error for pairs outside the edge set.
pub fn transition(stage: StageLabel, cause: TransitionCause) -> Result<StageLabel, MaeilError> {
    use StageLabel::*;
    use TransitionCause::*;
    match (stage, cause) {
        (R, PlanCommitted) => Ok(W),
        (W, BarrierReleased) => Ok(X),
        (X, StepCompleted) => Ok(W),
        (X, ExecutionDone) | (X, ExecutionFailed) => Ok(R),
        (W, MessageArrived) | (X, MessageArrived) => Ok(I),
        (I, InterruptResolved(_)) => Ok(W),
        _ => Err(MaeilError::IllegalTransition { from: stage, cause }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Active,
    Interrupted,
    TerminatedSuccess,
    TerminatedFailure,
}

impl PlanStatus {
    pub fn is_terminated(self) -> bool {
        matches!(self, PlanStatus::TerminatedSuccess | PlanStatus::TerminatedFailure)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOrigin {
    New,
    Replanned,
    Resumed,
}

/// Plan lifecycle marker attached to the stage sample where it happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanEvent {
    Created,
    Interrupted,
    Resumed,
    Replanned,
    TerminatedSuccess,
    TerminatedFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub id: u64,
    pub task: TaskSpecification,
    pub concepts: Vec<ActionConcept>,
    pub cursor: usize,
    pub status: PlanStatus,
    pub created_event: CognitiveEvent,
    pub origin: PlanOrigin,
    #[serde(skip)]
    pub progress: SegmentProgress,
}

impl Plan {
    pub fn new(
        id: u64,
        task: TaskSpecification,
        concepts: Vec<ActionConcept>,
        created_event: CognitiveEvent,
        origin: PlanOrigin,
    ) -> Self {
        Self {
            id,
            task,
            concepts,
            cursor: 0,
            status: PlanStatus::Active,
            created_event,
            origin,
            progress: SegmentProgress::default(),
        }
    }

    pub fn current(&self) -> Option<&ActionConcept> {
        self.concepts.get(self.cursor)
    }

    pub fn exhausted(&self) -> bool {
        self.cursor >= self.concepts.len()
    }

    pub fn set_status(&mut self, status: PlanStatus) -> Result<(), MaeilError> {
        if self.status.is_terminated() {
            return Err(MaeilError::TerminatedPlan(self.id));
        }
        self.status = status;
        Ok(())
    }

    pub fn view(&self) -> PlanView {
        PlanView {
            id: self.id,
            task: self.task.clone(),
            cursor: self.cursor,
            len: self.concepts.len(),
            status: self.status,
            origin: self.origin,
            created_event: self.created_event,
            concept: self.current().cloned(),
        }
    }
}

/// Compact plan description stored in trace samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanView {
    pub id: u64,
    pub task: TaskSpecification,
    pub cursor: usize,
    pub len: usize,
    pub status: PlanStatus,
    pub origin: PlanOrigin,
    pub created_event: CognitiveEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<ActionConcept>,
}

/// One stage sample `Q_{i,t̂}` on the cognitive clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CognitiveSample {
    pub event: CognitiveEvent,
    pub agent: AgentId,
    pub stage: StageLabel,
    pub cause: TransitionCause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan_events: Vec<PlanEvent>,
    /// Policy decision time charged to this sample (seconds, or unit counts for scripted backends).
    #[serde(default)]
    pub decision_time: f64,
}

/// The agent's internal state at an event.
#[derive(Clone, Debug, PartialEq)]
pub struct CognitiveState {
    pub agent: AgentId,
    pub event: CognitiveEvent,
    pub stage: StageLabel,
    pub plan: Option<Plan>,
}

/// True iff the agent waits at the barrier with a pending concept.
pub fn ready(state: &CognitiveState) -> bool {
    state.stage == StageLabel::W
        && state
            .plan
            .as_ref()
            .is_some_and(|p| p.status == PlanStatus::Active && !p.exhausted())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryItem {
    Stage {
        event: CognitiveEvent,
        step: EnvStep,
        stage: StageLabel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<String>,
    },
    Received { message: Message },
    Outcome { step: EnvStep, detail: String },
}

/// Append-only record of what one agent has legitimately observed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CognitiveHistory {
    items: Vec<HistoryItem>,
}

impl CognitiveHistory {
    pub fn push(&mut self, item: HistoryItem) {
        self.items.push(item);
    }

    pub fn items(&self) -> &[HistoryItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn tail(&self, n: usize) -> &[HistoryItem] {
        &self.items[self.items.len().saturating_sub(n)..]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MaeilError {
    #[error("illegal transition from {from:?} on {cause:?}")]
    IllegalTransition { from: StageLabel, cause: TransitionCause },
    #[error("plan {0} is terminated")]
    TerminatedPlan(u64),
}
