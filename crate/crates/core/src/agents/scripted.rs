//! Deterministic scripted policies used for tests, acceptance runs and baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::planning::{
    approach, gather_task, pack_goal, place_here, team_positions, walk_to, CraftKnowledge, CubeBoard, CubeMove, PackGoal, WAYPOINTS,
};
use super::{
    ActionConcept, CraftItem, Decision, InterruptResponse, MessageIntent, MessageResponse, PlaceItem, PlanResponse, Policy, PolicyContext,
    Resource, TaskSpecification,
};
use crate::comm::Role;
use crate::constraints::{FeedbackSnapshot, ToolTier};
use crate::env::craft::{recipe, tool_tier, NodeKind};
use crate::env::{Cell, CraftObservation, Direction, EnvKind, Observation};
use crate::kernel::{AgentId, EnvStep};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptedKind {
    Idler,
    RandomWalker,
    GreedyCollector,
    OracleCoordinator,
    FollowFeedback,
    /// Idles, then resigns once the given step is reached.
    Quitter(u64),
}

impl ScriptedKind {
    pub fn name(&self) -> String {
        match self {
            ScriptedKind::Idler => "idler".into(),
            ScriptedKind::RandomWalker => "random-walker".into(),
            ScriptedKind::GreedyCollector => "greedy-collector".into(),
            ScriptedKind::OracleCoordinator => "oracle-coordinator".into(),
            ScriptedKind::FollowFeedback => "follow-feedback".into(),
            ScriptedKind::Quitter(n) => format!("quitter@{n}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "idler" => ScriptedKind::Idler,
            "random-walker" => ScriptedKind::RandomWalker,
            "greedy-collector" => ScriptedKind::GreedyCollector,
            "oracle-coordinator" => ScriptedKind::OracleCoordinator,
            "follow-feedback" => ScriptedKind::FollowFeedback,
            other => ScriptedKind::Quitter(other.strip_prefix("quitter@")?.parse().ok()?),
        })
    }
}

pub struct ScriptedPolicy {
    kind: ScriptedKind,
    agent: AgentId,
    n: usize,
    env: EnvKind,
    rng: ChaCha8Rng,
    know: CraftKnowledge,
    target: Option<u32>,
    waypoint: usize,
    /// Latest leader directive and the step it was issued for.
    directive: Option<(u64, Value)>,
    feedback: Vec<FeedbackSnapshot>,
}

fn plan(task: TaskSpecification, actions: Vec<ActionConcept>, why: &str) -> PlanResponse {
    PlanResponse::new(task, actions, why)
}

fn resource_of(kind: NodeKind) -> Option<Resource> {
    kind.resource()
}

impl ScriptedPolicy {
    pub fn new(kind: ScriptedKind, agent: AgentId, n_agents: usize, env: EnvKind, seed: u64) -> Self {
        let stream = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (agent.0 as u64 + 1);
        Self {
            kind,
            agent,
            n: n_agents,
            env,
            rng: ChaCha8Rng::seed_from_u64(stream),
            know: CraftKnowledge::default(),
            target: None,
            waypoint: 0,
            directive: None,
            feedback: Vec::new(),
        }
    }

    /// Folds the observation and any messages just read into memory.
    fn absorb(&mut self, ctx: &PolicyContext) {
        if let Observation::Craft(o) = ctx.observation {
            self.know.observe(o);
        }
        if !ctx.feedback.is_empty() {
            self.feedback = ctx.feedback.to_vec();
        }
        for m in ctx.inbox {
            if !m.feedback.is_empty() {
                self.feedback = m.feedback.clone();
            }
            let Ok(v) = serde_json::from_str::<Value>(&m.payload) else { continue };
            if let Some(list) = v.get("sightings").and_then(Value::as_array) {
                for s in list {
                    let (Some(id), Some(kind), Some(row), Some(col)) = (
                        s.get("id").and_then(Value::as_u64),
                        s.get("kind").and_then(Value::as_str).and_then(NodeKind::parse),
                        s.get("row").and_then(Value::as_i64),
                        s.get("col").and_then(Value::as_i64),
                    ) else {
                        continue;
                    };
                    self.know.add(id as u32, kind, Cell(row as i32, col as i32));
                }
            }
            let from_leader = matches!(ctx.role, Role::Follower { leader } if leader == m.sender);
            if from_leader || v.get("directive").is_some() {
                if let Some(step) = v.get("step").and_then(Value::as_u64) {
                    self.directive = Some((step, v));
                }
            }
        }
    }

    fn current_directive(&self, step: EnvStep) -> Option<&Value> {
        self.directive.as_ref().filter(|(s, _)| *s == step.0).map(|(_, v)| v)
    }

    fn idle(&self) -> PlanResponse {
        PlanResponse::idle(self.env, "idle")
    }

    fn random_plan(&mut self) -> PlanResponse {
        match self.env {
            EnvKind::Cube => {
                let pick = self.rng.gen_range(0..5);
                match Direction::ALL.get(pick) {
                    Some(&d) => plan(TaskSpecification::new("reposition", "none", -1), vec![ActionConcept::Move { direction: d, num_steps: 1 }], "random step"),
                    None => plan(TaskSpecification::new("wait", "none", -1), vec![ActionConcept::Wait { num_steps: 1 }], "random wait"),
                }
            }
            EnvKind::Craftlite => {
                let pick = self.rng.gen_range(0..8);
                let (task, a) = match pick {
                    0..=3 => (
                        "collect_wood",
                        ActionConcept::Move {
                            direction: Direction::ALL[pick],
                            num_steps: 1,
                        },
                    ),
                    4 => ("collect_wood", ActionConcept::Noop { num_steps: 1 }),
                    5 => ("collect_wood", ActionConcept::Collect { target: Resource::Wood }),
                    6 => ("collect_stone", ActionConcept::Collect { target: Resource::Stone }),
                    _ => ("collect_coal", ActionConcept::Collect { target: Resource::Coal }),
                };
                plan(TaskSpecification::new(task, "none", -1), vec![a], "random")
            }
        }
    }

    fn cube_board(ctx: &PolicyContext) -> Option<CubeBoard> {
        match ctx.observation {
            Observation::Cube(o) => Some(CubeBoard::from_observation(o)),
            _ => None,
        }
    }

    fn cube_solo(&self, ctx: &PolicyContext) -> PlanResponse {
        let Some(board) = Self::cube_board(ctx) else { return self.idle() };
        let (target, mv) = board.solo_move(self.agent.index());
        let task = match target {
            Some(id) => TaskSpecification::new("push_block", "block", id as i64),
            None => TaskSpecification::new("wait", "none", -1),
        };
        plan(task, vec![mv.concept()], "nearest block")
    }

    fn cube_oracle(&self, ctx: &PolicyContext) -> PlanResponse {
        let Some(board) = Self::cube_board(ctx) else { return self.idle() };
        let joint = board.joint_plan();
        let me = self.agent.index();
        let mut mv = joint.moves[me];
        if let Some(d) = self.current_directive(ctx.step) {
            if let Some(s) = d.get("moves").and_then(|m| m.get(me)).and_then(Value::as_str) {
                if let Some(parsed) = parse_cube_move(s) {
                    mv = parsed;
                }
            }
        }
        plan(joint.task(me), vec![mv.concept()], "joint delivery plan")
    }

    fn cube_directive(&self, ctx: &PolicyContext) -> Option<Value> {
        let board = Self::cube_board(ctx)?;
        let joint = board.joint_plan();
        let moves: Vec<String> = joint.moves.iter().map(|m| render_cube_move(*m)).collect();
        Some(json!({"directive": "cube", "step": ctx.step.0, "target_block": joint.target, "moves": moves}))
    }

    fn my_tier(o: &CraftObservation) -> ToolTier {
        o.tools.iter().map(|&t| tool_tier(t)).max().unwrap_or_default()
    }

    fn can_collect(o: &CraftObservation, kind: NodeKind) -> bool {
        let Some(r) = resource_of(kind) else { return false };
        let load: u32 = o.inventory.values().sum();
        load < crate::env::craft::BAG_CAPACITY && Self::my_tier(o) >= o.config.rule(r).1
    }

    fn explore(&mut self, o: &CraftObservation, positions: &[Cell]) -> ActionConcept {
        if o.position.manhattan(WAYPOINTS[self.waypoint]) <= 2 {
            self.waypoint = (self.waypoint + 1) % WAYPOINTS.len();
        }
        walk_to(o, &self.know, positions, WAYPOINTS[self.waypoint])
    }

    fn collect_plan(kind: NodeKind, id: u32) -> PlanResponse {
        let r = resource_of(kind).expect("resource node");
        plan(
            gather_task(r, Some(id)),
            vec![
                ActionConcept::Navigate {
                    object_type: kind.name().into(),
                    item_id: id,
                    timeout: 30,
                },
                ActionConcept::Collect { target: r },
            ],
            "collect",
        )
    }

    fn greedy_craft(&mut self, o: &CraftObservation) -> PlanResponse {
        let best = self
            .know
            .nodes
            .iter()
            .filter(|(_, (k, _))| Self::can_collect(o, *k))
            .min_by_key(|(id, (_, c))| (c.manhattan(o.position), **id))
            .map(|(id, (k, _))| (*id, *k));
        match best {
            Some((id, kind)) => Self::collect_plan(kind, id),
            None => {
                let positions = team_positions(o, self.n);
                let step = self.explore(o, &positions);
                plan(gather_task(Resource::Wood, None), vec![step], "explore")
            }
        }
    }

    /// Rally target from feedback: most complete quorum, then least total team travel.
    fn rally_target(&self, o: &CraftObservation) -> Option<(u32, NodeKind)> {
        let positions = team_positions(o, self.n);
        let candidates: Vec<(&FeedbackSnapshot, NodeKind, Cell)> = self
            .feedback
            .iter()
            .filter(|s| s.required as usize <= self.n && s.dependencies.iter().all(|d| d.done))
            .filter_map(|s| {
                let kind = NodeKind::parse(&s.object_type)?;
                let at = s.anchor.first().copied().or_else(|| self.know.get(s.object_id).map(|(_, c)| c))?;
                Self::can_collect(o, kind).then_some((s, kind, at))
            })
            .collect();
        let travel = |c: Cell| positions.iter().map(|p| p.manhattan(c)).sum::<u32>();
        let best_ratio = candidates.iter().map(|(s, _, _)| s.ratio).fold(0.0f64, f64::max);
        if let Some(t) = self.target {
            if let Some((s, kind, _)) = candidates.iter().find(|(s, _, _)| s.object_id == t) {
                if s.ratio >= best_ratio {
                    return Some((t, *kind));
                }
            }
        }
        candidates
            .iter()
            .min_by(|a, b| {
                b.0.ratio
                    .partial_cmp(&a.0.ratio)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(travel(a.2).cmp(&travel(b.2)))
                    .then(a.0.object_id.cmp(&b.0.object_id))
            })
            .map(|(s, kind, _)| (s.object_id, *kind))
    }

    fn feedback_craft(&mut self, o: &CraftObservation) -> PlanResponse {
        if self.feedback.is_empty() {
            return self.greedy_craft(o);
        }
        match self.rally_target(o) {
            Some((id, kind)) => {
                self.target = Some(id);
                Self::collect_plan(kind, id)
            }
            None => self.greedy_craft(o),
        }
    }

    fn pack_gather_target(&self, step: EnvStep, kind: NodeKind, positions: &[Cell]) -> Option<u32> {
        if let Some(d) = self.current_directive(step) {
            if let Some(id) = d.get("target").and_then(Value::as_u64) {
                if self.know.get(id as u32).is_some_and(|(k, _)| k == kind) {
                    return Some(id as u32);
                }
            }
        }
        if let Some(t) = self.target {
            if self.know.get(t).is_some_and(|(k, _)| k == kind) {
                return Some(t);
            }
        }
        self.know.nearest(kind, positions)
    }

    fn pack_plan(&mut self, step: EnvStep, o: &CraftObservation) -> PlanResponse {
        let positions = team_positions(o, self.n);
        let me = o.position;
        let goal = pack_goal(o, &self.know);
        let (task, action) = match goal {
            PackGoal::Gather(r) => {
                let kind = NodeKind::of_resource(r);
                match self.pack_gather_target(step, kind, &positions) {
                    None => (gather_task(r, None), self.explore(o, &positions)),
                    Some(id) => {
                        self.target = Some(id);
                        let (_, at) = self.know.get(id).expect("target is known");
                        let need = self.n.min(4);
                        let around = positions.iter().filter(|p| p.manhattan(at) == 1).count();
                        let a = if me.manhattan(at) == 1 && around >= need {
                            ActionConcept::Collect { target: r }
                        } else {
                            approach(o, &self.know, &positions, at)
                        };
                        (gather_task(r, Some(id)), a)
                    }
                }
            }
            PackGoal::PlaceTable | PackGoal::PlaceFurnace => {
                let item = if goal == PackGoal::PlaceTable { PlaceItem::Table } else { PlaceItem::Furnace };
                let task = if item == PlaceItem::Table { "place_table" } else { "place_furnace" };
                let a = if self.agent.index() == 0 {
                    place_here(o, &self.know, &positions, item)
                } else {
                    ActionConcept::Noop { num_steps: 1 }
                };
                (TaskSpecification::new(task, if item == PlaceItem::Table { "table" } else { "furnace" }, -1), a)
            }
            PackGoal::Craft(item) => {
                let (station, _) = recipe(item);
                let task_kind = match item {
                    CraftItem::WoodPickaxe => "make_wood_pickaxe",
                    CraftItem::StonePickaxe => "make_stone_pickaxe",
                    CraftItem::IronPickaxe => "make_iron_pickaxe",
                };
                match self.know.nearest(station, &[me]) {
                    None => (TaskSpecification::new(task_kind, station.name(), -1), self.explore(o, &positions)),
                    Some(id) => {
                        let (_, at) = self.know.get(id).expect("station is known");
                        let a = if me.manhattan(at) == 1 && me.step(o.facing) == at {
                            ActionConcept::Craft { item }
                        } else {
                            approach(o, &self.know, &positions, at)
                        };
                        (TaskSpecification::new(task_kind, station.name(), id as i64), a)
                    }
                }
            }
        };
        plan(task, vec![action], "pack step")
    }

    fn sightings(o: &CraftObservation) -> Value {
        Value::Array(
            o.nodes
                .iter()
                .map(|n| json!({"id": n.id, "kind": n.kind.name(), "row": n.row, "col": n.col}))
                .collect(),
        )
    }

    fn pack_directive(&self, step: EnvStep, o: &CraftObservation) -> Value {
        let positions = team_positions(o, self.n);
        let goal = pack_goal(o, &self.know);
        let target = match goal {
            PackGoal::Gather(r) => self.pack_gather_target(step, NodeKind::of_resource(r), &positions),
            _ => None,
        };
        json!({"directive": "craft", "step": step.0, "goal": format!("{goal:?}"), "target": target, "sightings": Self::sightings(o)})
    }

    fn message(recipients: &[AgentId], content: String) -> Option<MessageResponse> {
        (!recipients.is_empty()).then(|| MessageResponse {
            recipients: recipients.iter().map(|a| a.alias()).collect(),
            content,
            reasoning: String::new(),
        })
    }
}

fn render_cube_move(m: CubeMove) -> String {
    match m {
        CubeMove::Step(d) => d.name().to_string(),
        CubeMove::Push(id) => format!("push:{id}"),
        CubeMove::Wait => "wait".to_string(),
    }
}

fn parse_cube_move(s: &str) -> Option<CubeMove> {
    if s == "wait" {
        return Some(CubeMove::Wait);
    }
    if let Some(id) = s.strip_prefix("push:") {
        return id.parse().ok().map(CubeMove::Push);
    }
    Direction::ALL.into_iter().find(|d| d.name() == s).map(CubeMove::Step)
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> String {
        format!("scripted:{}", self.kind.name())
    }

    fn decide_plan(&mut self, ctx: &PolicyContext) -> Decision<PlanResponse> {
        self.absorb(ctx);
        let p = match (&self.kind, ctx.observation) {
            (ScriptedKind::Idler | ScriptedKind::Quitter(_), _) => self.idle(),
            (ScriptedKind::RandomWalker, _) => self.random_plan(),
            (ScriptedKind::GreedyCollector | ScriptedKind::FollowFeedback, Observation::Cube(_)) => self.cube_solo(ctx),
            (ScriptedKind::OracleCoordinator, Observation::Cube(_)) => self.cube_oracle(ctx),
            (ScriptedKind::GreedyCollector, Observation::Craft(o)) => self.greedy_craft(o),
            (ScriptedKind::FollowFeedback, Observation::Craft(o)) => self.feedback_craft(o),
            (ScriptedKind::OracleCoordinator, Observation::Craft(o)) => self.pack_plan(ctx.step, o),
        };
        debug_assert!(p.validate(self.env).is_ok(), "scripted plan invalid: {p:?}");
        Decision::scripted(p)
    }

    fn decide_interrupt(&mut self, ctx: &PolicyContext) -> Decision<InterruptResponse> {
        self.absorb(ctx);
        let current = ctx.plan.map(|p| p.task.clone());
        let response = match (&self.kind, ctx.observation) {
            (ScriptedKind::OracleCoordinator, Observation::Cube(_)) if self.current_directive(ctx.step).is_some() => {
                let p = self.cube_oracle(ctx);
                if ctx.plan.and_then(|v| v.concept.as_ref()) == p.actions.first() {
                    InterruptResponse::resume("directive matches current plan")
                } else {
                    InterruptResponse::replan(p, "following leader directive")
                }
            }
            (ScriptedKind::OracleCoordinator, Observation::Craft(o)) if self.current_directive(ctx.step).is_some() => {
                let p = self.pack_plan(ctx.step, o);
                if current.as_ref() == Some(&p.task) && ctx.plan.and_then(|v| v.concept.as_ref()) == p.actions.first() {
                    InterruptResponse::resume("directive matches current plan")
                } else {
                    InterruptResponse::replan(p, "rendezvous at the named target")
                }
            }
            (ScriptedKind::FollowFeedback, Observation::Craft(o)) if !self.feedback.is_empty() => {
                let p = self.feedback_craft(o);
                if current.as_ref() == Some(&p.task) {
                    InterruptResponse::resume("still the best rally point")
                } else {
                    InterruptResponse::replan(p, "feedback names a better rally point")
                }
            }
            _ => InterruptResponse::resume("nothing actionable"),
        };
        Decision::scripted(response)
    }

    fn compose_message(&mut self, ctx: &PolicyContext, intent: MessageIntent, allowed: &[AgentId]) -> Decision<Option<MessageResponse>> {
        self.absorb(ctx);
        let content = match (&self.kind, ctx.observation, intent) {
            (ScriptedKind::OracleCoordinator, Observation::Cube(_), MessageIntent::Broadcast) => self.cube_directive(ctx).map(|v| v.to_string()),
            (ScriptedKind::OracleCoordinator, Observation::Craft(o), MessageIntent::Broadcast) => Some(self.pack_directive(ctx.step, o).to_string()),
            (ScriptedKind::OracleCoordinator, Observation::Craft(o), MessageIntent::Reply | MessageIntent::Free) => {
                Some(json!({"sightings": Self::sightings(o), "position": [o.position.0, o.position.1]}).to_string())
            }
            (ScriptedKind::FollowFeedback, Observation::Craft(o), MessageIntent::Broadcast) => self
                .rally_target(o)
                .map(|(id, kind)| json!({"rally": {"kind": kind.name(), "id": id}, "sightings": Self::sightings(o)}).to_string()),
            _ => None,
        };
        Decision::scripted(content.and_then(|c| Self::message(allowed, c)))
    }

    fn resigned(&self, step: EnvStep) -> bool {
        matches!(self.kind, ScriptedKind::Quitter(n) if step.0 >= n)
    }
}
