//! Structured plan, message and interrupt responses, plus per-environment validation.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{Direction, EnvKind};
use crate::kernel::AgentId;
use crate::maeil::InterruptDecision;

pub const PLAN_SCHEMA_ID: &str = "plan_response";
pub const MESSAGE_SCHEMA_ID: &str = "message_response";
pub const INTERRUPT_SCHEMA_ID: &str = "interrupt_response";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Wood,
    Stone,
    Coal,
    Iron,
    Diamond,
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Wood,
        Resource::Stone,
        Resource::Coal,
        Resource::Iron,
        Resource::Diamond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Wood => "wood",
            Resource::Stone => "stone",
            Resource::Coal => "coal",
            Resource::Iron => "iron",
            Resource::Diamond => "diamond",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Name of the node type that yields this resource.
    pub fn node_name(self) -> &'static str {
        match self {
            Resource::Wood => "tree",
            other => other.name(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CraftItem {
    WoodPickaxe,
    StonePickaxe,
    IronPickaxe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceItem {
    Table,
    Furnace,
}

fn one() -> u32 {
    1
}

fn default_timeout() -> u32 {
    30
}

/// Symbolic action concept, tagged by `action_type`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action_type", rename_all = "snake_case")]
pub enum ActionConcept {
    Move {
        direction: Direction,
        num_steps: u32,
    },
    Wait {
        num_steps: u32,
    },
    Push {
        block_id: u32,
        num_steps: u32,
    },
    Noop {
        #[serde(default = "one")]
        num_steps: u32,
    },
    Navigate {
        object_type: String,
        item_id: u32,
        #[serde(default = "default_timeout")]
        timeout: u32,
    },
    Collect {
        target: Resource,
    },
    Craft {
        item: CraftItem,
    },
    Place {
        item: PlaceItem,
    },
    Share {
        recipient_agent_id: String,
        resource_type: String,
        #[serde(default = "one")]
        quantity: u32,
    },
}

impl ActionConcept {
    /// Checks that the concept exists in `env` and its parameters are within bounds.
    pub fn validate(&self, env: EnvKind) -> Result<(), String> {
        fn bounded(name: &str, v: u32, lo: u32, hi: u32) -> Result<(), String> {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be in {lo}..={hi}, got {v}"))
            }
        }
        match (env, self) {
            (EnvKind::Cube, ActionConcept::Move { num_steps, .. }) => bounded("num_steps", *num_steps, 1, 10),
            (EnvKind::Cube, ActionConcept::Wait { num_steps }) => bounded("num_steps", *num_steps, 1, 10),
            (EnvKind::Cube, ActionConcept::Push { num_steps, .. }) => bounded("num_steps", *num_steps, 1, 10),
            (EnvKind::Craftlite, ActionConcept::Move { num_steps, .. }) => bounded("num_steps", *num_steps, 1, 5),
            (EnvKind::Craftlite, ActionConcept::Noop { num_steps }) => bounded("num_steps", *num_steps, 1, 100),
            (EnvKind::Craftlite, ActionConcept::Navigate { timeout, .. }) => bounded("timeout", *timeout, 1, 100),
            (EnvKind::Craftlite, ActionConcept::Collect { .. })
            | (EnvKind::Craftlite, ActionConcept::Craft { .. })
            | (EnvKind::Craftlite, ActionConcept::Place { .. }) => Ok(()),
            (
                EnvKind::Craftlite,
                ActionConcept::Share {
                    recipient_agent_id,
                    resource_type,
                    quantity,
                },
            ) => {
                if AgentId::parse_alias(recipient_agent_id).is_none() {
                    return Err(format!("unknown recipient {recipient_agent_id:?}"));
                }
                if Resource::parse(resource_type).is_none() {
                    return Err(format!("{resource_type:?} cannot be shared"));
                }
                bounded("quantity", *quantity, 1, 9)
            }
            (env, concept) => Err(format!("{} is not available in {}", concept.name(), env.name())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActionConcept::Move { .. } => "move",
            ActionConcept::Wait { .. } => "wait",
            ActionConcept::Push { .. } => "push",
            ActionConcept::Noop { .. } => "noop",
            ActionConcept::Navigate { .. } => "navigate",
            ActionConcept::Collect { .. } => "collect",
            ActionConcept::Craft { .. } => "craft",
            ActionConcept::Place { .. } => "place",
            ActionConcept::Share { .. } => "share",
        }
    }

    /// The idle concept of an environment.
    pub fn idle(env: EnvKind) -> Self {
        match env {
            EnvKind::Cube => ActionConcept::Wait { num_steps: 1 },
            EnvKind::Craftlite => ActionConcept::Noop { num_steps: 1 },
        }
    }
}

const CRAFT_TASKS: &[&str] = &[
    "collect_wood",
    "collect_stone",
    "collect_coal",
    "collect_iron",
    "collect_diamond",
    "collect_drink",
    "collect_sapling",
    "make_wood_pickaxe",
    "make_stone_pickaxe",
    "make_iron_pickaxe",
    "make_wood_sword",
    "make_stone_sword",
    "make_iron_sword",
    "place_table",
    "place_furnace",
    "place_plant",
    "place_stone",
];

const CUBE_TASKS: &[&str] = &["push_block", "reposition", "wait"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskSpecification {
    pub task: String,
    pub object_type: String,
    pub object_id: i64,
}

impl TaskSpecification {
    pub fn new(task: &str, object_type: &str, object_id: i64) -> Self {
        Self {
            task: task.into(),
            object_type: object_type.into(),
            object_id,
        }
    }

    pub fn validate(&self, env: EnvKind) -> Result<(), String> {
        let allowed = match env {
            EnvKind::Cube => CUBE_TASKS,
            EnvKind::Craftlite => CRAFT_TASKS,
        };
        if allowed.contains(&self.task.as_str()) {
            Ok(())
        } else {
            Err(format!("unknown task kind {:?}", self.task))
        }
    }
}

impl fmt::Display for TaskSpecification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}#{})", self.task, self.object_type, self.object_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub task: TaskSpecification,
    pub actions: Vec<ActionConcept>,
    #[serde(default)]
    pub reasoning: String,
}

impl PlanResponse {
    pub fn new(task: TaskSpecification, actions: Vec<ActionConcept>, reasoning: &str) -> Self {
        Self {
            task,
            actions,
            reasoning: reasoning.into(),
        }
    }

    pub fn validate(&self, env: EnvKind) -> Result<(), String> {
        if self.actions.is_empty() {
            return Err("plan has no actions".into());
        }
        self.task.validate(env)?;
        for (i, a) in self.actions.iter().enumerate() {
            a.validate(env).map_err(|e| format!("action {i}: {e}"))?;
        }
        Ok(())
    }

    /// Fallback plan used when a backend cannot produce a valid one.
    pub fn idle(env: EnvKind, reason: &str) -> Self {
        let task = match env {
            EnvKind::Cube => TaskSpecification::new("wait", "none", -1),
            EnvKind::Craftlite => TaskSpecification::new("collect_wood", "none", -1),
        };
        Self::new(task, vec![ActionConcept::idle(env)], reason)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub recipients: Vec<String>,
    pub content: String,
    #[serde(default)]
    pub reasoning: String,
}

impl MessageResponse {
    /// Resolves aliases, rejecting unknown agents and the sender itself.
    pub fn resolve(&self, sender: AgentId, n_agents: usize) -> Result<Vec<AgentId>, String> {
        if self.recipients.is_empty() {
            return Err("message has no recipients".into());
        }
        let mut out = Vec::new();
        for alias in &self.recipients {
            let id = AgentId::parse_alias(alias).ok_or_else(|| format!("bad recipient {alias:?}"))?;
            if id.index() >= n_agents {
                return Err(format!("no such agent {alias}"));
            }
            if id == sender {
                return Err("recipients include the sender".into());
            }
            if !out.contains(&id) {
                out.push(id);
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterruptResponse {
    pub decision: InterruptDecision,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_plan: Option<PlanResponse>,
}

impl InterruptResponse {
    pub fn resume(reason: &str) -> Self {
        Self {
            decision: InterruptDecision::Resume,
            reasoning: reason.into(),
            new_plan: None,
        }
    }

    pub fn replan(plan: PlanResponse, reason: &str) -> Self {
        Self {
            decision: InterruptDecision::Replan,
            reasoning: reason.into(),
            new_plan: Some(plan),
        }
    }

    pub fn validate(&self, env: EnvKind) -> Result<(), String> {
        match (&self.decision, &self.new_plan) {
            (InterruptDecision::Replan, None) => Err("replan decision without new_plan".into()),
            (_, Some(plan)) => plan.validate(env),
            (InterruptDecision::Resume, None) => Ok(()),
        }
    }
}

/// Parses a plan from raw JSON and validates it for `env`.
pub fn parse_plan(value: &Value, env: EnvKind) -> Result<PlanResponse, String> {
    let plan: PlanResponse = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    plan.validate(env)?;
    Ok(plan)
}

pub fn parse_message(value: &Value) -> Result<MessageResponse, String> {
    serde_json::from_value(value.clone()).map_err(|e| e.to_string())
}

pub fn parse_interrupt(value: &Value, env: EnvKind) -> Result<InterruptResponse, String> {
    let r: InterruptResponse = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    r.validate(env)?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn task_renders_kind_type_id() {
        let t = TaskSpecification::new("collect_wood", "tree", 4);
        assert_eq!(t.to_string(), "collect_wood(tree#4)");
    }

    #[test]
    fn empty_actions_rejected() {
        let v = json!({"task": {"task": "collect_wood", "object_type": "tree", "object_id": 1}, "actions": [], "reasoning": ""});
        assert!(parse_plan(&v, EnvKind::Craftlite).is_err());
    }

    #[test]
    fn craft_defaults_applied() {
        let v = json!({
            "task": {"task": "collect_wood", "object_type": "tree", "object_id": 1},
            "actions": [{"action_type": "navigate", "object_type": "tree", "item_id": 1}, {"action_type": "noop"}],
            "reasoning": "go"
        });
        let plan = parse_plan(&v, EnvKind::Craftlite).unwrap();
        assert_eq!(
            plan.actions,
            vec![
                ActionConcept::Navigate { object_type: "tree".into(), item_id: 1, timeout: 30 },
                ActionConcept::Noop { num_steps: 1 }
            ]
        );
    }

    #[test]
    fn move_bounds_differ_by_env() {
        let m = ActionConcept::Move { direction: Direction::Up, num_steps: 7 };
        assert!(m.validate(EnvKind::Cube).is_ok());
        assert!(m.validate(EnvKind::Craftlite).is_err());
    }

    #[test]
    fn push_unknown_in_craftlite() {
        let p = ActionConcept::Push { block_id: 0, num_steps: 1 };
        assert!(p.validate(EnvKind::Craftlite).is_err());
    }

    #[test]
    fn sleep_is_not_a_concept() {
        let v = json!({"action_type": "sleep"});
        assert!(serde_json::from_value::<ActionConcept>(v).is_err());
    }

    #[test]
    fn resume_without_plan_is_valid() {
        let v = json!({"decision": "resume", "reasoning": "fine"});
        assert!(parse_interrupt(&v, EnvKind::Cube).is_ok());
    }

    #[test]
    fn replan_without_plan_rejected() {
        let v = json!({"decision": "replan", "reasoning": "change"});
        assert!(parse_interrupt(&v, EnvKind::Cube).is_err());
    }

    #[test]
    fn message_recipients_exclude_self() {
        let m = MessageResponse {
            recipients: vec!["agent_1".into(), "agent_0".into()],
            content: "hi".into(),
            reasoning: String::new(),
        };
        assert!(m.resolve(AgentId(0), 3).is_err());
        assert_eq!(m.resolve(AgentId(2), 3).unwrap(), vec![AgentId(0), AgentId(1)]);
    }
}
