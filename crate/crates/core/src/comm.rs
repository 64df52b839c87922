//! Communication topologies, message buffers and send budgets.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::constraints::FeedbackSnapshot;
use crate::kernel::{AgentId, CognitiveEvent, EnvStep};

pub const MAX_PAYLOAD_BYTES: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Individual,
    Debate,
    Centralized,
    Decentralized,
}

impl TopologyKind {
    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Individual => "individual",
            TopologyKind::Debate => "debate",
            TopologyKind::Centralized => "centralized",
            TopologyKind::Decentralized => "decentralized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TopologyKind::Individual,
            TopologyKind::Debate,
            TopologyKind::Centralized,
            TopologyKind::Decentralized,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// User-facing topology parameters; missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<AgentId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u32>,
}

impl TopologyConfig {
    pub fn of(kind: TopologyKind) -> Self {
        Self {
            kind,
            leader: None,
            order: None,
            budget: None,
        }
    }
}

/// Resolved topology for a fixed team size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub n_agents: usize,
    pub leader: AgentId,
    pub order: Vec<AgentId>,
    pub budget: u32,
}

impl Topology {
    pub fn new(config: &TopologyConfig, n_agents: usize) -> Result<Self, CommError> {
        if n_agents == 0 {
            return Err(CommError::InvalidTopology("team is empty".into()));
        }
        let leader = config.leader.unwrap_or(AgentId(0));
        if leader.index() >= n_agents {
            return Err(CommError::InvalidTopology(format!("leader {leader} is not on the team")));
        }
        let order = match &config.order {
            Some(order) => {
                let mut sorted = order.clone();
                sorted.sort();
                let expected: Vec<AgentId> = (0..n_agents as u32).map(AgentId).collect();
                if sorted != expected {
                    return Err(CommError::InvalidTopology("speaker order is not a permutation".into()));
                }
                order.clone()
            }
            None => (0..n_agents as u32).map(AgentId).collect(),
        };
        let budget = config.budget.unwrap_or(n_agents as u32);
        if budget == 0 {
            return Err(CommError::InvalidTopology("budget must be positive".into()));
        }
        Ok(Self {
            kind: config.kind,
            n_agents,
            leader,
            order,
            budget,
        })
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> {
        (0..self.n_agents as u32).map(AgentId)
    }

    fn position(&self, agent: AgentId) -> usize {
        self.order.iter().position(|&a| a == agent).expect("agent in order")
    }

    pub fn has_edge(&self, from: AgentId, to: AgentId) -> bool {
        if from == to || from.index() >= self.n_agents || to.index() >= self.n_agents {
            return false;
        }
        match self.kind {
            TopologyKind::Individual => false,
            TopologyKind::Debate => self.position(from) < self.position(to),
            TopologyKind::Centralized => from == self.leader || to == self.leader,
            TopologyKind::Decentralized => true,
        }
    }

    pub fn edges(&self) -> Vec<(AgentId, AgentId)> {
        let mut out = Vec::new();
        for a in self.agents() {
            for b in self.agents() {
                if self.has_edge(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn followers(&self) -> Vec<AgentId> {
        self.agents().filter(|&a| a != self.leader).collect()
    }

    pub fn role(&self, agent: AgentId) -> Role {
        match self.kind {
            TopologyKind::Individual => Role::Independent,
            TopologyKind::Debate => Role::Speaker {
                position: self.position(agent),
                n_agents: self.n_agents,
            },
            TopologyKind::Centralized if agent == self.leader => Role::Leader,
            TopologyKind::Centralized => Role::Follower { leader: self.leader },
            TopologyKind::Decentralized => Role::Peer,
        }
    }

    /// The header representation, with every parameter resolved.
    pub fn describe(&self) -> Value {
        match self.kind {
            TopologyKind::Individual => json!({"kind": "individual"}),
            TopologyKind::Debate => json!({"kind": "debate", "order": self.order}),
            TopologyKind::Centralized => json!({"kind": "centralized", "leader": self.leader}),
            TopologyKind::Decentralized => json!({"kind": "decentralized", "budget": self.budget}),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Independent,
    Speaker { position: usize, n_agents: usize },
    Leader,
    Follower { leader: AgentId },
    Peer,
}

impl Role {
    pub fn prompt(&self) -> String {
        match *self {
            Role::Independent => include_str!("../prompts/individual.txt").to_string(),
            Role::Leader => include_str!("../prompts/centralized_leader.txt").to_string(),
            Role::Follower { .. } => include_str!("../prompts/centralized_follower.txt").to_string(),
            Role::Peer => include_str!("../prompts/decentralized.txt").to_string(),
            Role::Speaker { position: 0, .. } => include_str!("../prompts/debate_first.txt").to_string(),
            Role::Speaker { position, n_agents } if position + 1 == n_agents => {
                include_str!("../prompts/debate_final.txt").to_string()
            }
            Role::Speaker { position, n_agents } => include_str!("../prompts/debate_middle.txt")
                .replace("{position}", &(position + 1).to_string())
                .replace("{n_agents}", &n_agents.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub sender: AgentId,
    pub recipients: Vec<AgentId>,
    pub payload: String,
    pub send_event: CognitiveEvent,
    pub env_step: EnvStep,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feedback: Vec<FeedbackSnapshot>,
}

/// A message landing in one recipient's buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub message: u64,
    pub recipient: AgentId,
    pub event: CognitiveEvent,
    /// True when the delivery was postponed from an earlier step by the receive budget.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deferred: bool,
}

/// Cuts the payload to the byte limit on a character boundary.
pub fn truncate_payload(payload: &str) -> (String, bool) {
    if payload.len() <= MAX_PAYLOAD_BYTES {
        return (payload.to_string(), false);
    }
    let mut end = MAX_PAYLOAD_BYTES;
    while !payload.is_char_boundary(end) {
        end -= 1;
    }
    (payload[..end].to_string(), true)
}

/// Per-agent FIFO of delivered, unread messages.
#[derive(Clone, Debug, Default)]
pub struct MessageBuffers {
    buffers: Vec<VecDeque<Message>>,
}

impl MessageBuffers {
    pub fn new(n_agents: usize) -> Self {
        Self {
            buffers: vec![VecDeque::new(); n_agents],
        }
    }

    pub fn deliver(&mut self, recipient: AgentId, message: Message) {
        let buf = &mut self.buffers[recipient.index()];
        let pos = buf.partition_point(|m| m.send_event <= message.send_event);
        buf.insert(pos, message);
    }

    pub fn read_all(&mut self, agent: AgentId) -> Vec<Message> {
        self.buffers[agent.index()].drain(..).collect()
    }

    pub fn unread(&self, agent: AgentId) -> usize {
        self.buffers[agent.index()].len()
    }
}

/// Send and receive counters for the current environment step.
#[derive(Clone, Debug)]
pub struct BudgetLedger {
    sends: Vec<u32>,
    receives: Vec<u32>,
}

impl BudgetLedger {
    pub fn new(n_agents: usize) -> Self {
        Self {
            sends: vec![0; n_agents],
            receives: vec![0; n_agents],
        }
    }

    pub fn reset(&mut self) {
        self.sends.iter_mut().for_each(|c| *c = 0);
        self.receives.iter_mut().for_each(|c| *c = 0);
    }

    pub fn sends(&self, agent: AgentId) -> u32 {
        self.sends[agent.index()]
    }

    pub fn receives(&self, agent: AgentId) -> u32 {
        self.receives[agent.index()]
    }

    /// Counts one receive if the budget allows it.
    pub fn try_receive(&mut self, topology: &Topology, agent: AgentId) -> bool {
        if topology.kind == TopologyKind::Decentralized && self.receives[agent.index()] >= topology.budget {
            return false;
        }
        self.receives[agent.index()] += 1;
        true
    }
}

/// Checks edges and the send budget, then counts the send.
pub fn authorize_send(
    topology: &Topology,
    ledger: &mut BudgetLedger,
    sender: AgentId,
    recipients: &[AgentId],
) -> Result<(), CommError> {
    if recipients.is_empty() {
        return Err(CommError::NoRecipients);
    }
    for &r in recipients {
        if r == sender {
            return Err(CommError::SelfSend(sender));
        }
        if !topology.has_edge(sender, r) {
            return Err(CommError::NoEdge { from: sender, to: r });
        }
    }
    if topology.kind == TopologyKind::Decentralized && ledger.sends[sender.index()] >= topology.budget {
        return Err(CommError::BudgetExceeded {
            agent: sender,
            budget: topology.budget,
        });
    }
    ledger.sends[sender.index()] += 1;
    Ok(())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommError {
    #[error("no edge {from} -> {to}")]
    NoEdge { from: AgentId, to: AgentId },
    #[error("{agent} exceeded its budget of {budget} messages this step")]
    BudgetExceeded { agent: AgentId, budget: u32 },
    #[error("{0} cannot message itself")]
    SelfSend(AgentId),
    #[error("message has no recipients")]
    NoRecipients,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(kind: TopologyKind, n: usize) -> Topology {
        Topology::new(&TopologyConfig::of(kind), n).unwrap()
    }

    fn msg(id: u64, event: u64) -> Message {
        Message {
            id,
            sender: AgentId(1),
            recipients: vec![AgentId(0)],
            payload: format!("m{id}"),
            send_event: CognitiveEvent(event),
            env_step: EnvStep(0),
            feedback: vec![],
        }
    }

    #[test]
    fn individual_has_no_edges() {
        let t = topo(TopologyKind::Individual, 3);
        let mut ledger = BudgetLedger::new(3);
        assert_eq!(
            authorize_send(&t, &mut ledger, AgentId(0), &[AgentId(1)]),
            Err(CommError::NoEdge { from: AgentId(0), to: AgentId(1) })
        );
        assert!(t.edges().is_empty());
    }

    #[test]
    fn centralized_is_a_star() {
        let t = topo(TopologyKind::Centralized, 4);
        assert_eq!(t.edges().len(), 6);
        assert!(t.has_edge(AgentId(0), AgentId(3)));
        assert!(t.has_edge(AgentId(3), AgentId(0)));
        assert!(!t.has_edge(AgentId(1), AgentId(2)));
    }

    #[test]
    fn debate_edges_point_forward() {
        let cfg = TopologyConfig {
            kind: TopologyKind::Debate,
            leader: None,
            order: Some(vec![AgentId(2), AgentId(0), AgentId(1)]),
            budget: None,
        };
        let t = Topology::new(&cfg, 3).unwrap();
        assert!(t.has_edge(AgentId(2), AgentId(1)));
        assert!(!t.has_edge(AgentId(1), AgentId(2)));
        assert_eq!(t.edges().len(), 3);
    }

    #[test]
    fn decentralized_send_budget() {
        let t = topo(TopologyKind::Decentralized, 3);
        let mut ledger = BudgetLedger::new(3);
        for _ in 0..3 {
            authorize_send(&t, &mut ledger, AgentId(0), &[AgentId(1)]).unwrap();
        }
        assert_eq!(
            authorize_send(&t, &mut ledger, AgentId(0), &[AgentId(1)]),
            Err(CommError::BudgetExceeded { agent: AgentId(0), budget: 3 })
        );
        ledger.reset();
        assert!(authorize_send(&t, &mut ledger, AgentId(0), &[AgentId(1)]).is_ok());
    }

    #[test]
    fn self_send_rejected() {
        let t = topo(TopologyKind::Decentralized, 2);
        let mut ledger = BudgetLedger::new(2);
        assert_eq!(
            authorize_send(&t, &mut ledger, AgentId(1), &[AgentId(1)]),
            Err(CommError::SelfSend(AgentId(1)))
        );
    }

    #[test]
    fn buffers_are_fifo_and_cleared() {
        let mut b = MessageBuffers::new(2);
        assert!(b.read_all(AgentId(0)).is_empty());
        b.deliver(AgentId(0), msg(2, 9));
        b.deliver(AgentId(0), msg(1, 5));
        let got: Vec<u64> = b.read_all(AgentId(0)).iter().map(|m| m.send_event.0).collect();
        assert_eq!(got, vec![5, 9]);
        assert!(b.read_all(AgentId(0)).is_empty());
    }

    #[test]
    fn payload_truncated_on_char_boundary() {
        let long = "é".repeat(3000);
        let (cut, truncated) = truncate_payload(&long);
        assert!(truncated);
        assert!(cut.len() <= MAX_PAYLOAD_BYTES);
        assert_eq!(cut.len() % 2, 0);
    }

    #[test]
    fn middle_speaker_prompt_is_numbered() {
        let p = Role::Speaker { position: 1, n_agents: 3 }.prompt();
        assert!(p.contains("SPEAKER 2 of 3"));
    }
}
