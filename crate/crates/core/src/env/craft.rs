//! A compact crafting world with cooperative resource collection.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Cell, Difficulty, Direction, EnvError, EnvKind, Environment, ExecOutcome, Grounding, Observation, OutcomeKind, Primitive, SegmentProgress, StepReport};
use crate::agents::{ActionConcept, CraftItem, PlaceItem, Resource};
use crate::constraints::{self, CapabilityState, ConstraintVerdict, Dependency, Task, TaskState, ToolTier};
use crate::kernel::{AgentId, EnvStep, TaskId};

pub const GRID: i32 = 32;
pub const BAG_CAPACITY: u32 = 9;
pub const VIEW_RADIUS: i32 = 7;
const MAX_GENERATION_ATTEMPTS: u32 = 10_000;
const STEP_COST: f64 = -0.01;
const DIAMOND_REWARD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CraftAction {
    Noop,
    Move(Direction),
    Collect(Resource),
    Craft(CraftItem),
    Place(PlaceItem),
    Share { to: AgentId, resource: Resource, quantity: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Tree,
    Stone,
    Coal,
    Iron,
    Diamond,
    Table,
    Furnace,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Tree => "tree",
            NodeKind::Stone => "stone",
            NodeKind::Coal => "coal",
            NodeKind::Iron => "iron",
            NodeKind::Diamond => "diamond",
            NodeKind::Table => "table",
            NodeKind::Furnace => "furnace",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            NodeKind::Tree,
            NodeKind::Stone,
            NodeKind::Coal,
            NodeKind::Iron,
            NodeKind::Diamond,
            NodeKind::Table,
            NodeKind::Furnace,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn resource(self) -> Option<Resource> {
        match self {
            NodeKind::Tree => Some(Resource::Wood),
            NodeKind::Stone => Some(Resource::Stone),
            NodeKind::Coal => Some(Resource::Coal),
            NodeKind::Iron => Some(Resource::Iron),
            NodeKind::Diamond => Some(Resource::Diamond),
            _ => None,
        }
    }

    pub fn of_resource(r: Resource) -> Self {
        match r {
            Resource::Wood => NodeKind::Tree,
            Resource::Stone => NodeKind::Stone,
            Resource::Coal => NodeKind::Coal,
            Resource::Iron => NodeKind::Iron,
            Resource::Diamond => NodeKind::Diamond,
        }
    }
}

pub fn tool_tier(item: CraftItem) -> ToolTier {
    match item {
        CraftItem::WoodPickaxe => ToolTier::WoodPickaxe,
        CraftItem::StonePickaxe => ToolTier::StonePickaxe,
        CraftItem::IronPickaxe => ToolTier::IronPickaxe,
    }
}

pub fn tool_item(tier: ToolTier) -> Option<CraftItem> {
    match tier {
        ToolTier::None => None,
        ToolTier::WoodPickaxe => Some(CraftItem::WoodPickaxe),
        ToolTier::StonePickaxe => Some(CraftItem::StonePickaxe),
        ToolTier::IronPickaxe => Some(CraftItem::IronPickaxe),
    }
}

/// Station and inputs of a tool recipe.
pub fn recipe(item: CraftItem) -> (NodeKind, &'static [(Resource, u32)]) {
    match item {
        CraftItem::WoodPickaxe => (NodeKind::Table, &[(Resource::Wood, 1)]),
        CraftItem::StonePickaxe => (NodeKind::Table, &[(Resource::Stone, 1), (Resource::Wood, 1)]),
        CraftItem::IronPickaxe => (NodeKind::Furnace, &[(Resource::Iron, 1), (Resource::Coal, 1), (Resource::Wood, 1)]),
    }
}

pub fn placement_cost(item: PlaceItem) -> (Resource, u32) {
    match item {
        PlaceItem::Table => (Resource::Wood, 2),
        PlaceItem::Furnace => (Resource::Stone, 4),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRule {
    pub required_agents: u32,
    pub required_tool: Option<CraftItem>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoopCollection {
    pub enabled: bool,
    pub distance_threshold: u32,
    pub resources: BTreeMap<String, ResourceRule>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CraftingRule {
    pub required_agents: u32,
}

/// Cooperative collection configuration, in the same YAML layout as the shipped presets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoopConfig {
    pub cooperative_collection: CoopCollection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crafting: Option<CraftingRule>,
}

pub const EASY_YAML: &str = include_str!("../../configs/craftlite_easy.yaml");
pub const HARD_YAML: &str = include_str!("../../configs/craftlite_hard.yaml");

impl CoopConfig {
    pub fn from_yaml(text: &str) -> Result<Self, EnvError> {
        let cfg: CoopConfig = serde_yaml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(difficulty: Difficulty) -> Self {
        let text = match difficulty {
            Difficulty::Hard => HARD_YAML,
            _ => EASY_YAML,
        };
        Self::from_yaml(text).expect("shipped presets are valid")
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for r in Resource::ALL {
            let rule = self
                .cooperative_collection
                .resources
                .get(r.node_name())
                .ok_or_else(|| EnvError::Config(format!("missing rule for {}", r.node_name())))?;
            if rule.required_agents == 0 {
                return Err(EnvError::Config(format!("{} needs at least one agent", r.node_name())));
            }
        }
        if self.crafting.as_ref().is_some_and(|c| c.required_agents == 0) {
            return Err(EnvError::Config("crafting needs at least one agent".into()));
        }
        Ok(())
    }

    /// `(p, tool)` for a resource; quorums collapse to 1 when cooperation is disabled.
    pub fn rule(&self, r: Resource) -> (u32, ToolTier) {
        let rule = &self.cooperative_collection.resources[r.node_name()];
        let p = if self.cooperative_collection.enabled { rule.required_agents } else { 1 };
        (p, rule.required_tool.map(tool_tier).unwrap_or_default())
    }

    pub fn distance(&self) -> u32 {
        self.cooperative_collection.distance_threshold
    }

    pub fn crafting_quorum(&self) -> u32 {
        self.crafting.as_ref().map_or(1, |c| c.required_agents)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    pub kind: NodeKind,
    pub pos: Cell,
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CraftAgent {
    pub pos: Cell,
    pub facing: Direction,
    pub inventory: BTreeMap<Resource, u32>,
    pub tools: BTreeSet<CraftItem>,
}

impl CraftAgent {
    pub fn load(&self) -> u32 {
        self.inventory.values().sum()
    }

    pub fn count(&self, r: Resource) -> u32 {
        self.inventory.get(&r).copied().unwrap_or(0)
    }

    pub fn tier(&self) -> ToolTier {
        self.tools.iter().map(|&t| tool_tier(t)).max().unwrap_or_default()
    }

    fn take(&mut self, r: Resource, n: u32) {
        let e = self.inventory.entry(r).or_default();
        *e -= n;
        if *e == 0 {
            self.inventory.remove(&r);
        }
    }

    fn give(&mut self, r: Resource, n: u32) {
        *self.inventory.entry(r).or_default() += n;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CraftState {
    pub k: i32,
    pub agents: Vec<CraftAgent>,
    pub nodes: Vec<Node>,
    pub t: u64,
}

impl CraftState {
    pub fn node_at(&self, c: Cell) -> Option<&Node> {
        self.nodes.iter().find(|n| n.alive && n.pos == c)
    }

    /// A depleted resource cell; not grass, so a table cannot go there.
    pub fn is_cleared(&self, c: Cell) -> bool {
        self.nodes.iter().any(|n| !n.alive && n.pos == c)
    }

    pub fn walkable(&self, c: Cell) -> bool {
        c.in_bounds(self.k) && self.node_at(c).is_none()
    }

    pub fn agent_at(&self, c: Cell) -> Option<usize> {
        self.agents.iter().position(|a| a.pos == c)
    }

    pub fn faced(&self, agent: usize) -> Cell {
        let a = &self.agents[agent];
        a.pos.step(a.facing)
    }

    pub fn team_tier(&self) -> ToolTier {
        self.agents.iter().map(|a| a.tier()).max().unwrap_or_default()
    }

    pub fn success(&self) -> bool {
        self.agents.iter().any(|a| a.count(Resource::Diamond) > 0)
    }

    /// The node a collect of `r` by `agent` acts on: the faced node if it yields `r`,
    /// else the nearest such node within `d`, ties by id.
    pub fn collect_target(&self, agent: usize, r: Resource, d: u32) -> Option<usize> {
        let kind = NodeKind::of_resource(r);
        let faced = self.faced(agent);
        if let Some(i) = self.nodes.iter().position(|n| n.alive && n.pos == faced && n.kind == kind) {
            if faced.manhattan(self.agents[agent].pos) <= d {
                return Some(i);
            }
        }
        let pos = self.agents[agent].pos;
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive && n.kind == kind && n.pos.manhattan(pos) <= d)
            .min_by_key(|(_, n)| (n.pos.manhattan(pos), n.id))
            .map(|(i, _)| i)
    }
}

/// Units handed out and spent, per resource, since the episode began.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLedger {
    pub granted: BTreeMap<Resource, u32>,
    pub consumed: BTreeMap<Resource, u32>,
    pub depleted: BTreeMap<Resource, u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeView {
    pub id: u32,
    pub kind: NodeKind,
    pub row: i32,
    pub col: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TeammateView {
    pub id: AgentId,
    pub row: i32,
    pub col: i32,
    pub facing: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CraftObservation {
    pub agent: AgentId,
    pub step: u64,
    pub grid_size: i32,
    pub position: Cell,
    pub facing: Direction,
    pub facing_cell: String,
    pub inventory: BTreeMap<Resource, u32>,
    pub tools: BTreeSet<CraftItem>,
    pub nodes: Vec<NodeView>,
    /// Depleted cells in view; walkable but not grass.
    pub cleared: Vec<Cell>,
    pub teammates: Vec<TeammateView>,
    pub config: CoopConfig,
}

pub struct CraftEnv {
    state: CraftState,
    config: CoopConfig,
    ledger: ResourceLedger,
}

/// Breadth-first search from `start` to any cell satisfying `goal`, moving through
/// cells accepted by `open`. Returns the path excluding `start`.
pub fn bfs_path(k: i32, start: Cell, open: &dyn Fn(Cell) -> bool, goal: &dyn Fn(Cell) -> bool) -> Option<Vec<Cell>> {
    if goal(start) {
        return Some(vec![]);
    }
    let idx = |c: Cell| (c.0 * k + c.1) as usize;
    let mut prev: Vec<Option<Cell>> = vec![None; (k * k) as usize];
    let mut seen = vec![false; (k * k) as usize];
    seen[idx(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for d in Direction::ALL {
            let n = c.step(d);
            if !n.in_bounds(k) || seen[idx(n)] || !open(n) {
                continue;
            }
            seen[idx(n)] = true;
            prev[idx(n)] = Some(c);
            if goal(n) {
                let mut path = vec![n];
                let mut cur = n;
                while let Some(p) = prev[idx(cur)] {
                    if p == start {
                        break;
                    }
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(n);
        }
    }
    None
}

impl CraftEnv {
    pub fn new(state: CraftState, config: CoopConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let mut seen = BTreeSet::new();
        for a in &state.agents {
            if !a.pos.in_bounds(state.k) || !seen.insert(a.pos) || state.node_at(a.pos).is_some() {
                return Err(EnvError::Scenario(format!("bad agent position {}", a.pos)));
            }
        }
        Ok(Self {
            state,
            config,
            ledger: ResourceLedger::default(),
        })
    }

    pub fn generate(n: usize, config: CoopConfig, seed: u64) -> Result<Self, EnvError> {
        let state = generate(n, seed)?;
        Self::new(state, config)
    }

    pub fn state(&self) -> &CraftState {
        &self.state
    }

    pub fn config(&self) -> &CoopConfig {
        &self.config
    }

    pub fn ledger(&self) -> &ResourceLedger {
        &self.ledger
    }

    fn task_for(&self, node: &Node) -> Option<Task> {
        let r = node.kind.resource()?;
        let (p, tool) = self.config.rule(r);
        Some(Task {
            id: TaskId(node.id),
            kind: format!("collect_{}", r.name()),
            object_type: node.kind.name().into(),
            object_id: node.id,
            anchor: vec![node.pos],
            radius: self.config.distance(),
            required_agents: p,
            required_tool: tool,
            dependencies: tool.chain().into_iter().map(|tier| Dependency::Tool { tier }).collect(),
            state: TaskState::Pending,
        })
    }

    fn caps(&self, joint: &[CraftAction]) -> Vec<CapabilityState> {
        let d = self.config.distance();
        self.state
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| CapabilityState {
                agent: AgentId(i as u32),
                position: a.pos,
                tool_tier: a.tier(),
                engaged: match &joint[i] {
                    CraftAction::Collect(r) => self.state.collect_target(i, *r, d).map(|n| TaskId(self.state.nodes[n].id)),
                    _ => None,
                },
            })
            .collect()
    }

    fn verdicts(&self, joint: &[CraftAction], alive_after: &dyn Fn(u32) -> bool) -> Vec<ConstraintVerdict> {
        let caps = self.caps(joint);
        let team = self.state.team_tier();
        self.state
            .nodes
            .iter()
            .filter(|n| n.alive && alive_after(n.id))
            .filter_map(|n| self.task_for(n))
            .map(|task| {
                constraints::evaluate(&task, &caps, EnvStep(self.state.t), &|dep| match dep {
                    Dependency::Tool { tier } => team >= *tier,
                    _ => true,
                })
            })
            .collect()
    }

    fn compile_single(&self, agent: AgentId, concept: &ActionConcept) -> Result<CraftAction, String> {
        Ok(match concept {
            ActionConcept::Collect { target } => CraftAction::Collect(*target),
            ActionConcept::Craft { item } => CraftAction::Craft(*item),
            ActionConcept::Place { item } => CraftAction::Place(*item),
            ActionConcept::Share {
                recipient_agent_id,
                resource_type,
                quantity,
            } => {
                let to = AgentId::parse_alias(recipient_agent_id).ok_or_else(|| format!("unknown recipient {recipient_agent_id}"))?;
                if to == agent {
                    return Err("cannot share with yourself".into());
                }
                if to.index() >= self.state.agents.len() {
                    return Err(format!("no such agent {recipient_agent_id}"));
                }
                let resource = Resource::parse(resource_type).ok_or_else(|| format!("cannot share {resource_type}"))?;
                CraftAction::Share {
                    to,
                    resource,
                    quantity: *quantity,
                }
            }
            other => return Err(format!("{} is not a single-step action", other.name())),
        })
    }

    fn navigate(&self, agent: usize, object_type: &str, item_id: u32, timeout: u32, progress: &SegmentProgress) -> (Grounding, SegmentProgress) {
        let Some(kind) = NodeKind::parse(object_type) else {
            return (Grounding::Fail(format!("unknown object type {object_type:?}")), *progress);
        };
        let Some(node) = self.state.nodes.iter().find(|n| n.id == item_id) else {
            return (Grounding::Fail(format!("unknown object {object_type}#{item_id}")), *progress);
        };
        if node.kind != kind {
            return (Grounding::Fail(format!("object {item_id} is a {}, not a {object_type}", node.kind.name())), *progress);
        }
        if !node.alive {
            return (Grounding::Fail(format!("{object_type}#{item_id} no longer exists")), *progress);
        }
        let me = &self.state.agents[agent];
        let target = node.pos;
        if me.pos.manhattan(target) == 1 && me.pos.step(me.facing) == target {
            return (Grounding::Complete, *progress);
        }
        if progress.steps >= timeout {
            return (Grounding::Fail(format!("navigation to {object_type}#{item_id} timed out")), *progress);
        }
        let emit = |d: Direction| {
            (
                Grounding::Emit(Primitive::Craft(CraftAction::Move(d))),
                SegmentProgress {
                    steps: progress.steps + 1,
                    direction: Some(d),
                },
            )
        };
        if let Some(d) = me.pos.direction_to(target) {
            return emit(d);
        }
        let k = self.state.k;
        let goal = |c: Cell| c.manhattan(target) == 1;
        let clear = |c: Cell| self.state.walkable(c) && self.state.agent_at(c).is_none();
        let path = bfs_path(k, me.pos, &clear, &goal).or_else(|| bfs_path(k, me.pos, &|c| self.state.walkable(c), &goal));
        match path {
            Some(p) if !p.is_empty() => emit(me.pos.direction_to(p[0]).expect("path is 4-connected")),
            _ => (Grounding::Fail(format!("no path to {object_type}#{item_id}")), *progress),
        }
    }
}

impl Environment for CraftEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Craftlite
    }

    fn n_agents(&self) -> usize {
        self.state.agents.len()
    }

    fn t(&self) -> EnvStep {
        EnvStep(self.state.t)
    }

    fn snapshot(&self) -> Value {
        serde_json::to_value(&self.state).expect("state serializes")
    }

    fn observe(&self, agent: AgentId) -> Observation {
        let me = &self.state.agents[agent.index()];
        let in_view = |c: Cell| (c.0 - me.pos.0).abs() <= VIEW_RADIUS && (c.1 - me.pos.1).abs() <= VIEW_RADIUS;
        let faced = me.pos.step(me.facing);
        let facing_cell = if !faced.in_bounds(self.state.k) {
            "edge".to_string()
        } else if let Some(n) = self.state.node_at(faced) {
            format!("{}#{}", n.kind.name(), n.id)
        } else if let Some(i) = self.state.agent_at(faced) {
            AgentId(i as u32).alias()
        } else if self.state.is_cleared(faced) {
            "cleared".to_string()
        } else {
            "grass".to_string()
        };
        Observation::Craft(CraftObservation {
            agent,
            step: self.state.t,
            grid_size: self.state.k,
            position: me.pos,
            facing: me.facing,
            facing_cell,
            inventory: me.inventory.clone(),
            tools: me.tools.clone(),
            nodes: self
                .state
                .nodes
                .iter()
                .filter(|n| n.alive && in_view(n.pos))
                .map(|n| NodeView {
                    id: n.id,
                    kind: n.kind,
                    row: n.pos.0,
                    col: n.pos.1,
                })
                .collect(),
            cleared: self.state.nodes.iter().filter(|n| !n.alive && in_view(n.pos)).map(|n| n.pos).collect(),
            teammates: self
                .state
                .agents
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != agent.index())
                .map(|(i, a)| TeammateView {
                    id: AgentId(i as u32),
                    row: a.pos.0,
                    col: a.pos.1,
                    facing: a.facing,
                })
                .collect(),
            config: self.config.clone(),
        })
    }

    fn ground(&self, agent: AgentId, concept: &ActionConcept, progress: &SegmentProgress) -> (Grounding, SegmentProgress) {
        if let Err(e) = concept.validate(EnvKind::Craftlite) {
            return (Grounding::Fail(e), *progress);
        }
        let emit = |a: CraftAction| {
            (
                Grounding::Emit(Primitive::Craft(a)),
                SegmentProgress {
                    steps: progress.steps + 1,
                    direction: progress.direction,
                },
            )
        };
        match concept {
            ActionConcept::Noop { num_steps } => {
                if progress.steps >= *num_steps {
                    (Grounding::Complete, *progress)
                } else {
                    emit(CraftAction::Noop)
                }
            }
            ActionConcept::Move { direction, num_steps } => {
                if progress.steps >= *num_steps {
                    (Grounding::Complete, *progress)
                } else {
                    emit(CraftAction::Move(*direction))
                }
            }
            ActionConcept::Navigate { object_type, item_id, timeout } => self.navigate(agent.index(), object_type, *item_id, *timeout, progress),
            single => {
                if progress.steps >= 1 {
                    return (Grounding::Complete, *progress);
                }
                match self.compile_single(agent, single) {
                    Ok(a) => emit(a),
                    Err(e) => (Grounding::Fail(e), *progress),
                }
            }
        }
    }

    fn idle(&self) -> Primitive {
        Primitive::Craft(CraftAction::Noop)
    }

    fn step(&mut self, joint: &[Primitive]) -> StepReport {
        assert_eq!(joint.len(), self.state.agents.len(), "joint action must cover every agent");
        let n = self.state.agents.len();
        let mut outcomes: Vec<Option<ExecOutcome>> = vec![None; n];
        let actions: Vec<CraftAction> = joint
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                Primitive::Craft(a) => a.clone(),
                other => {
                    outcomes[i] = Some(ExecOutcome::new(AgentId(i as u32), OutcomeKind::Failure, format!("{other:?} is not a craftlite primitive")));
                    CraftAction::Noop
                }
            })
            .collect();
        let before = self.state.clone();
        let d = self.config.distance();
        let mut gains = 0u32;
        let mut reward = STEP_COST;
        let mut completed = Vec::new();
        let fail = |i: usize, msg: String| Some(ExecOutcome::new(AgentId(i as u32), OutcomeKind::Failure, msg));
        let ok = |i: usize, kind: OutcomeKind, msg: String| Some(ExecOutcome::new(AgentId(i as u32), kind, msg));

        // Collection, judged on the state before the step.
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            if let CraftAction::Collect(r) = actions[i] {
                match before.collect_target(i, r, d) {
                    None => outcomes[i] = fail(i, format!("no {} within reach", r.node_name())),
                    Some(node) => {
                        let (_, tool) = self.config.rule(r);
                        if before.agents[i].tier() < tool {
                            outcomes[i] = fail(i, format!("collecting {} requires {}", r.name(), tool.name()));
                        } else {
                            groups.entry(node).or_default().push(i);
                        }
                    }
                }
            }
        }
        let mut verdict_alive: BTreeSet<u32> = before.nodes.iter().filter(|n| n.alive).map(|n| n.id).collect();
        for (&node, members) in &groups {
            let kind = before.nodes[node].kind;
            let r = kind.resource().expect("collect targets resource nodes");
            let (p, _) = self.config.rule(r);
            let id = before.nodes[node].id;
            if (members.len() as u32) < p {
                for &i in members {
                    outcomes[i] = ok(i, OutcomeKind::NoEffect, format!("{}#{id} needs {p} collectors, had {}", kind.name(), members.len()));
                }
                continue;
            }
            self.state.nodes[node].alive = false;
            verdict_alive.remove(&id);
            completed.push(TaskId(id));
            *self.ledger.depleted.entry(r).or_default() += 1;
            for &i in members {
                if self.state.agents[i].load() + 1 > BAG_CAPACITY {
                    outcomes[i] = fail(i, "bag is full".into());
                    continue;
                }
                self.state.agents[i].give(r, 1);
                *self.ledger.granted.entry(r).or_default() += 1;
                gains += 1;
                if r == Resource::Diamond {
                    reward += DIAMOND_REWARD;
                }
                outcomes[i] = ok(i, OutcomeKind::Success, format!("collected {} from {}#{id}", r.name(), kind.name()));
            }
        }

        // Crafting at the faced station.
        let quorum = self.config.crafting_quorum();
        for i in 0..n {
            let CraftAction::Craft(item) = actions[i] else { continue };
            let (station, inputs) = recipe(item);
            let faced = before.faced(i);
            let Some(st) = before.node_at(faced).filter(|s| s.kind == station) else {
                outcomes[i] = fail(i, format!("{item:?} needs to face a {}", station.name()).to_lowercase());
                continue;
            };
            if quorum > 1 {
                let helpers = (0..n)
                    .filter(|&j| actions[j] == CraftAction::Craft(item) && before.agents[j].pos.manhattan(st.pos) <= d)
                    .count() as u32;
                if helpers < quorum {
                    outcomes[i] = ok(i, OutcomeKind::NoEffect, format!("crafting needs {quorum} agents near the {}", station.name()));
                    continue;
                }
            }
            let me = &self.state.agents[i];
            if let Some((r, c)) = inputs.iter().find(|(r, c)| me.count(*r) < *c) {
                outcomes[i] = fail(i, format!("missing {c} {}", r.name()));
                continue;
            }
            let me = &mut self.state.agents[i];
            for &(r, c) in inputs {
                me.take(r, c);
                *self.ledger.consumed.entry(r).or_default() += c;
            }
            let fresh = me.tools.insert(item);
            if fresh {
                gains += 1;
            }
            outcomes[i] = ok(i, OutcomeKind::Success, format!("crafted {item:?}").to_lowercase());
        }

        // Placement on the faced cell; the lowest index wins a contested cell.
        let mut placed_cells = BTreeSet::new();
        for i in 0..n {
            let CraftAction::Place(item) = actions[i] else { continue };
            let faced = before.faced(i);
            let (r, c) = placement_cost(item);
            let free = faced.in_bounds(before.k)
                && before.node_at(faced).is_none()
                && self.state.node_at(faced).is_none()
                && before.agent_at(faced).is_none()
                && !placed_cells.contains(&faced);
            if !free {
                outcomes[i] = fail(i, format!("cannot place {item:?} on {faced}").to_lowercase());
                continue;
            }
            if item == PlaceItem::Table && before.is_cleared(faced) {
                outcomes[i] = fail(i, "a table must be placed on grass".into());
                continue;
            }
            if self.state.agents[i].count(r) < c {
                outcomes[i] = fail(i, format!("placing {item:?} needs {c} {}", r.name()).to_lowercase());
                continue;
            }
            self.state.agents[i].take(r, c);
            *self.ledger.consumed.entry(r).or_default() += c;
            let kind = match item {
                PlaceItem::Table => NodeKind::Table,
                PlaceItem::Furnace => NodeKind::Furnace,
            };
            let id = self.state.nodes.len() as u32;
            self.state.nodes.push(Node { id, kind, pos: faced, alive: true });
            placed_cells.insert(faced);
            outcomes[i] = ok(i, OutcomeKind::Success, format!("placed {}#{id}", kind.name()));
        }

        // Sharing, in agent order.
        for i in 0..n {
            let CraftAction::Share { to, resource, quantity } = actions[i] else { continue };
            if to.index() == i || to.index() >= n {
                outcomes[i] = fail(i, "invalid share recipient".into());
                continue;
            }
            if self.state.agents[i].count(resource) < quantity {
                outcomes[i] = fail(i, format!("holds fewer than {quantity} {}", resource.name()));
                continue;
            }
            if self.state.agents[to.index()].load() + quantity > BAG_CAPACITY {
                outcomes[i] = fail(i, format!("{to} has no room"));
                continue;
            }
            self.state.agents[i].take(resource, quantity);
            self.state.agents[to.index()].give(resource, quantity);
            outcomes[i] = ok(i, OutcomeKind::Success, format!("gave {quantity} {} to {to}", resource.name()));
        }

        // Movement: the target must be walkable before and after, and empty before.
        let mut claims: BTreeMap<Cell, usize> = BTreeMap::new();
        for i in 0..n {
            let CraftAction::Move(dir) = actions[i] else { continue };
            self.state.agents[i].facing = dir;
            let target = before.agents[i].pos.step(dir);
            if before.walkable(target) && self.state.walkable(target) && before.agent_at(target).is_none() {
                claims.entry(target).or_insert(i);
            }
            outcomes[i] = ok(i, OutcomeKind::NoEffect, "blocked".into());
        }
        for (&cell, &i) in &claims {
            self.state.agents[i].pos = cell;
            outcomes[i] = ok(i, OutcomeKind::Success, "moved".into());
        }

        let outcomes: Vec<ExecOutcome> = outcomes
            .into_iter()
            .enumerate()
            .map(|(i, o)| o.unwrap_or_else(|| ExecOutcome::new(AgentId(i as u32), OutcomeKind::Success, "noop")))
            .collect();

        // Verdicts describe (s_t, a_t), so evaluate against the pre-step state.
        let after = std::mem::replace(&mut self.state, before);
        let verdicts = self.verdicts(&actions, &|id| verdict_alive.contains(&id));
        self.state = after;
        self.state.t += 1;
        StepReport {
            outcomes,
            verdicts,
            completed_tasks: completed,
            capability_gains: gains,
            reward,
            success: self.state.success(),
        }
    }

    fn active_tasks(&self) -> Vec<Task> {
        self.state.nodes.iter().filter(|n| n.alive).filter_map(|n| self.task_for(n)).collect()
    }

    fn current_verdicts(&self) -> Vec<ConstraintVerdict> {
        let idle = vec![CraftAction::Noop; self.state.agents.len()];
        self.verdicts(&idle, &|_| true)
    }

    fn success(&self) -> bool {
        self.state.success()
    }

    fn prompt(&self) -> &'static str {
        include_str!("../../prompts/env_craftlite.txt")
    }
}

/// Node counts and Manhattan distance bands from the map centre.
const LAYOUT: [(NodeKind, usize, u32, u32); 5] = [
    (NodeKind::Tree, 12, 3, 12),
    (NodeKind::Stone, 8, 6, 16),
    (NodeKind::Coal, 4, 6, 16),
    (NodeKind::Iron, 3, 10, 20),
    (NodeKind::Diamond, 1, 14, 24),
];

pub fn generate(n: usize, seed: u64) -> Result<CraftState, EnvError> {
    if n == 0 {
        return Err(EnvError::Config("at least one agent is required".into()));
    }
    if n > 25 {
        return Err(EnvError::Config("at most 25 agents fit in the start area".into()));
    }
    let k = GRID;
    let centre = Cell(k / 2, k / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0u32;
    let mut bump = || {
        attempts += 1;
        if attempts > MAX_GENERATION_ATTEMPTS {
            Err(EnvError::GenerationFailed(MAX_GENERATION_ATTEMPTS))
        } else {
            Ok(())
        }
    };

    let mut agents: Vec<CraftAgent> = Vec::new();
    while agents.len() < n {
        bump()?;
        let c = Cell(centre.0 + rng.gen_range(-2..=2), centre.1 + rng.gen_range(-2..=2));
        if agents.iter().all(|a| a.pos != c) {
            agents.push(CraftAgent {
                pos: c,
                facing: Direction::Down,
                inventory: BTreeMap::new(),
                tools: BTreeSet::new(),
            });
        }
    }

    let mut nodes: Vec<Node> = Vec::new();
    for (kind, count, lo, hi) in LAYOUT {
        let mut placed = 0;
        while placed < count {
            bump()?;
            let c = Cell(rng.gen_range(1..k - 1), rng.gen_range(1..k - 1));
            let dist = c.manhattan(centre);
            if dist < lo || dist > hi {
                continue;
            }
            // Keep every node's four neighbours free so any quorum up to four can gather.
            let crowded = nodes.iter().any(|o| (o.pos.0 - c.0).abs() <= 1 && (o.pos.1 - c.1).abs() <= 1)
                || nodes.iter().any(|o| o.pos.manhattan(c) == 2)
                || agents.iter().any(|a| a.pos.manhattan(c) <= 1);
            if crowded {
                continue;
            }
            nodes.push(Node {
                id: nodes.len() as u32,
                kind,
                pos: c,
                alive: true,
            });
            placed += 1;
        }
    }
    Ok(CraftState { k, agents, nodes, t: 0 })
}
