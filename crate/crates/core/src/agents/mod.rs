//! Policies that drive agents: the trait the loop calls, scripted teams and a remote adapter.

pub mod planning;
pub mod remote;
pub mod schema;
pub mod scripted;

use std::fmt;

use thiserror::Error;

use crate::comm::{Message, Role};
use crate::constraints::FeedbackSnapshot;
use crate::env::{EnvKind, Observation};
use crate::kernel::{AgentId, EnvStep};
use crate::maeil::{CognitiveHistory, PlanView, StageLabel};

pub use remote::{RemoteConfig, RemotePolicy};
pub use schema::*;
pub use scripted::{ScriptedKind, ScriptedPolicy};

/// Everything a policy may look at when deciding.
pub struct PolicyContext<'a> {
    pub agent: AgentId,
    pub n_agents: usize,
    pub env: EnvKind,
    pub step: EnvStep,
    pub stage: StageLabel,
    pub role: Role,
    pub env_prompt: &'static str,
    pub observation: &'a Observation,
    pub history: &'a CognitiveHistory,
    /// Messages read in this phase, oldest first.
    pub inbox: &'a [Message],
    pub plan: Option<&'a PlanView>,
    /// Constraint feedback visible to this agent; empty when feedback is off.
    pub feedback: &'a [FeedbackSnapshot],
}

/// Why the loop asks for a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageIntent {
    /// Debate speaker or centralized leader addressing a fixed audience.
    Broadcast,
    /// Centralized follower answering the leader.
    Reply,
    /// Decentralized peer choosing whether and whom to message.
    Free,
}

/// A policy answer plus the time it took to produce.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision<T> {
    pub value: T,
    pub elapsed: f64,
    /// Set when the value is a fallback rather than the backend's own answer.
    pub fallback: Option<String>,
}

impl<T> Decision<T> {
    pub fn scripted(value: T) -> Self {
        Self {
            value,
            elapsed: 1.0,
            fallback: None,
        }
    }
}

pub trait Policy: Send {
    fn name(&self) -> String;
    fn decide_plan(&mut self, ctx: &PolicyContext) -> Decision<PlanResponse>;
    fn decide_interrupt(&mut self, ctx: &PolicyContext) -> Decision<InterruptResponse>;
    /// `allowed` lists the recipients the topology permits for this send.
    fn compose_message(&mut self, ctx: &PolicyContext, intent: MessageIntent, allowed: &[AgentId]) -> Decision<Option<MessageResponse>>;
    /// True once the agent has given up; checked after every environment step.
    fn resigned(&self, _step: EnvStep) -> bool {
        false
    }
}

/// Which policy family drives a run, as written in configs: `scripted:<name>` or `remote`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    Scripted(ScriptedKind),
    Remote,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Self, AgentError> {
        if s == "remote" {
            return Ok(Backend::Remote);
        }
        let name = s
            .strip_prefix("scripted:")
            .ok_or_else(|| AgentError::UnknownBackend(s.to_string()))?;
        ScriptedKind::parse(name)
            .map(Backend::Scripted)
            .ok_or_else(|| AgentError::UnknownBackend(s.to_string()))
    }

    pub fn uses_feedback(&self) -> bool {
        matches!(self, Backend::Remote | Backend::Scripted(ScriptedKind::FollowFeedback))
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Scripted(k) => write!(f, "scripted:{}", k.name()),
            Backend::Remote => write!(f, "remote"),
        }
    }
}

/// One policy per agent. Scripted policies derive their randomness from `seed`.
pub fn build_policies(backend: &Backend, n_agents: usize, env: EnvKind, seed: u64) -> Result<Vec<Box<dyn Policy>>, AgentError> {
    match backend {
        Backend::Scripted(kind) => Ok((0..n_agents)
            .map(|i| Box::new(ScriptedPolicy::new(kind.clone(), AgentId(i as u32), n_agents, env, seed)) as Box<dyn Policy>)
            .collect()),
        Backend::Remote => {
            let cfg = RemoteConfig::from_env()?;
            Ok((0..n_agents)
                .map(|i| Box::new(RemotePolicy::new(cfg.clone(), AgentId(i as u32))) as Box<dyn Policy>)
                .collect())
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("unknown backend {0:?}; expected scripted:<policy> or remote")]
    UnknownBackend(String),
    #[error("remote backend needs {0}")]
    MissingEnv(&'static str),
    #[error("request timed out")]
    Timeout,
    #[error("http error: {0}")]
    Http(String),
    #[error("reply violates schema {schema}: {detail}")]
    SchemaViolation { schema: &'static str, detail: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_strings_round_trip() {
        for s in ["scripted:idler", "scripted:oracle-coordinator", "scripted:quitter@5", "remote"] {
            assert_eq!(Backend::parse(s).unwrap().to_string(), s);
        }
        assert!(Backend::parse("scripted:nobody").is_err());
        assert!(Backend::parse("openai").is_err());
    }
}
