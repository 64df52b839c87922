//! Cooperative block pushing on a square grid.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Cell, Difficulty, Direction, EnvError, EnvKind, Environment, ExecOutcome, Grounding, Observation, OutcomeKind, Primitive, SegmentProgress, StepReport};
use crate::agents::ActionConcept;
use crate::constraints::{self, CapabilityState, ConstraintVerdict, Dependency, Task, TaskState, ToolTier};
use crate::kernel::{AgentId, BlockId, EnvStep, TaskId};

pub const MAX_GENERATION_ATTEMPTS: u32 = 10_000;
/// Tries per block before the whole layout is restarted.
const PLACEMENT_TRIES: u32 = 64;
const STEP_COST: f64 = -0.01;
const DELIVERY_REWARD: f64 = 1.0;
const BLOCK_HISTORY: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CubeAction {
    Stay,
    Up,
    Down,
    Left,
    Right,
}

impl CubeAction {
    pub const ALL: [CubeAction; 5] = [CubeAction::Stay, CubeAction::Up, CubeAction::Down, CubeAction::Left, CubeAction::Right];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            CubeAction::Stay => None,
            CubeAction::Up => Some(Direction::Up),
            CubeAction::Down => Some(Direction::Down),
            CubeAction::Left => Some(Direction::Left),
            CubeAction::Right => Some(Direction::Right),
        }
    }

    pub fn from_direction(d: Direction) -> Self {
        match d {
            Direction::Up => CubeAction::Up,
            Direction::Down => CubeAction::Down,
            Direction::Left => CubeAction::Left,
            Direction::Right => CubeAction::Right,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub weight: u32,
    /// Top-left cell.
    pub pos: Cell,
    pub delivered: bool,
}

impl Block {
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.weight as i32;
        (0..w).flat_map(move |dr| (0..w).map(move |dc| Cell(self.pos.0 + dr, self.pos.1 + dc)))
    }

    pub fn contains(&self, c: Cell) -> bool {
        let w = self.weight as i32;
        c.0 >= self.pos.0 && c.0 < self.pos.0 + w && c.1 >= self.pos.1 && c.1 < self.pos.1 + w
    }

    /// Cells an agent must stand on to push the block in direction `d`.
    pub fn push_cells(&self, d: Direction) -> Vec<Cell> {
        let w = self.weight as i32;
        let (r, c) = (self.pos.0, self.pos.1);
        (0..w)
            .map(|j| match d {
                Direction::Right => Cell(r + j, c - 1),
                Direction::Left => Cell(r + j, c + w),
                Direction::Down => Cell(r - 1, c + j),
                Direction::Up => Cell(r + w, c + j),
            })
            .collect()
    }

    /// The block's own boundary cells on the side agents push from.
    pub fn face_cells(&self, d: Direction) -> Vec<Cell> {
        self.push_cells(d).into_iter().map(|c| c.step(d)).collect()
    }

    /// Cells the block would newly occupy after moving one cell in `d`.
    pub fn leading_cells(&self, d: Direction) -> Vec<Cell> {
        self.push_cells(d.opposite())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeState {
    pub k: i32,
    pub agents: Vec<Cell>,
    pub blocks: Vec<Block>,
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Occ {
    Empty,
    Agent(usize),
    Block(usize),
}

impl CubeState {
    fn occupancy(&self) -> Vec<Occ> {
        let k = self.k as usize;
        let mut grid = vec![Occ::Empty; k * k];
        for (i, a) in self.agents.iter().enumerate() {
            grid[a.0 as usize * k + a.1 as usize] = Occ::Agent(i);
        }
        for (bi, b) in self.blocks.iter().enumerate().filter(|(_, b)| !b.delivered) {
            for c in b.cells() {
                grid[c.0 as usize * k + c.1 as usize] = Occ::Block(bi);
            }
        }
        grid
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn block_at(&self, c: Cell) -> Option<&Block> {
        self.blocks.iter().find(|b| !b.delivered && b.contains(c))
    }

    pub fn agent_at(&self, c: Cell) -> Option<usize> {
        self.agents.iter().position(|&a| a == c)
    }

    pub fn all_delivered(&self) -> bool {
        self.blocks.iter().all(|b| b.delivered)
    }

    /// Checks bounds, sizes and overlap.
    pub fn validate(&self) -> Result<(), String> {
        if self.k < 2 {
            return Err("grid must be at least 2x2".into());
        }
        let mut seen = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if !a.in_bounds(self.k) {
                return Err(format!("agent {i} out of bounds at {a}"));
            }
            if !seen.insert(*a) {
                return Err(format!("cell {a} occupied twice"));
            }
        }
        let mut ids = BTreeSet::new();
        for b in self.blocks.iter() {
            if b.weight == 0 {
                return Err(format!("block {} has zero weight", b.id.0));
            }
            if !ids.insert(b.id) {
                return Err(format!("duplicate block id {}", b.id.0));
            }
            if b.delivered {
                continue;
            }
            for c in b.cells() {
                if !c.in_bounds(self.k) {
                    return Err(format!("block {} out of bounds", b.id.0));
                }
                if !seen.insert(c) {
                    return Err(format!("cell {c} occupied twice"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveOutcome {
    Stayed,
    Moved,
    Pushed,
    Blocked,
    PushFailed,
    PushCanceled,
}

impl MoveOutcome {
    pub fn kind(self) -> OutcomeKind {
        match self {
            MoveOutcome::Stayed | MoveOutcome::Moved | MoveOutcome::Pushed => OutcomeKind::Success,
            _ => OutcomeKind::NoEffect,
        }
    }
}

/// For each agent, the block and direction its pushing chain acts on, if any.
pub fn chain_targets(state: &CubeState, joint: &[CubeAction]) -> Vec<Option<(usize, Direction)>> {
    let occ = state.occupancy();
    let k = state.k;
    let at = |c: Cell| if c.in_bounds(k) { occ[(c.0 * k + c.1) as usize] } else { Occ::Empty };
    state
        .agents
        .iter()
        .enumerate()
        .map(|(i, &pos)| {
            let d = joint[i].direction()?;
            let mut c = pos.step(d);
            loop {
                if !c.in_bounds(k) {
                    return None;
                }
                match at(c) {
                    Occ::Block(b) => return Some((b, d)),
                    Occ::Agent(j) if joint[j].direction() == Some(d) => c = c.step(d),
                    _ => return None,
                }
            }
        })
        .collect()
}

/// Blocks moved together when block `start` is pushed in `d` and the agents standing
/// in their destination cells, or `None` if some destination is outside the grid.
fn block_chain(state: &CubeState, occ: &[Occ], start: usize, d: Direction) -> Option<(BTreeSet<usize>, BTreeSet<usize>)> {
    let k = state.k;
    let mut chain = BTreeSet::from([start]);
    let mut blockers = BTreeSet::new();
    let mut frontier = vec![start];
    while let Some(b) = frontier.pop() {
        for c in state.blocks[b].leading_cells(d) {
            if !c.in_bounds(k) {
                return None;
            }
            match occ[(c.0 * k + c.1) as usize] {
                Occ::Agent(a) => {
                    blockers.insert(a);
                }
                Occ::Block(other) if other != b
                    && chain.insert(other) => {
                        frontier.push(other);
                    }
                _ => {}
            }
        }
    }
    Some((chain, blockers))
}

/// One synchronous transition. Returns the next state and per-agent outcomes.
pub fn resolve(state: &CubeState, joint: &[CubeAction]) -> (CubeState, Vec<MoveOutcome>) {
    assert_eq!(joint.len(), state.agents.len(), "joint action must cover every agent");
    let occ = state.occupancy();
    let k = state.k;
    let n = state.agents.len();
    let targets = chain_targets(state, joint);

    let mut force: BTreeMap<(usize, Direction), u32> = BTreeMap::new();
    for t in targets.iter().flatten() {
        *force.entry(*t).or_default() += 1;
    }

    // Candidate pushes: one per pushed (block, direction). Force counts every
    // agent chain acting along `d` on any block of the resulting block chain.
    struct Candidate {
        dir: Direction,
        blocks: BTreeSet<usize>,
        blockers: BTreeSet<usize>,
        quorum: bool,
        ok: bool,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for &(b, d) in force.keys() {
        let cand = match block_chain(state, &occ, b, d) {
            Some((blocks, blockers)) => {
                let weight: u32 = blocks.iter().map(|&x| state.blocks[x].weight).sum();
                let f: u32 = blocks.iter().map(|&x| force.get(&(x, d)).copied().unwrap_or(0)).sum();
                let quorum = f >= weight;
                Candidate {
                    dir: d,
                    ok: quorum && blockers.is_empty(),
                    blocks,
                    blockers,
                    quorum,
                }
            }
            None => Candidate {
                dir: d,
                blocks: BTreeSet::from([b]),
                blockers: BTreeSet::new(),
                quorum: false,
                ok: false,
            },
        };
        candidates.push(cand);
    }
    // A quorum push whose only obstacles are agents pushing the same chain back
    // with a quorum of their own counts as successful here and cancels below.
    let opposed: Vec<bool> = candidates
        .iter()
        .map(|c| {
            c.quorum
                && !c.blockers.is_empty()
                && c.blockers.iter().all(|&a| {
                    targets[a].is_some_and(|(b2, d2)| {
                        d2 == c.dir.opposite()
                            && candidates
                                .iter()
                                .any(|o| {
                                    o.dir == d2
                                        && o.quorum
                                        && o.blocks.contains(&b2)
                                        && !o.blocks.is_disjoint(&c.blocks)
                                        && o.blockers.iter().all(|&a2| targets[a2].is_some_and(|(b3, d3)| d3 == c.dir && c.blocks.contains(&b3)))
                                })
                    })
                })
        })
        .collect();
    for (c, o) in candidates.iter_mut().zip(opposed) {
        c.ok |= o;
    }

    // Cancel successful pushes that disagree on a block's direction or whose
    // blocks would land on the same cell.
    let mut canceled = vec![false; candidates.len()];
    loop {
        let mut by_block: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ci, cand) in candidates.iter().enumerate() {
            if cand.ok && !canceled[ci] {
                for &b in &cand.blocks {
                    by_block.entry(b).or_default().push(ci);
                }
            }
        }
        let mut doomed: BTreeSet<usize> = BTreeSet::new();
        for cis in by_block.values() {
            if cis.iter().any(|&ci| candidates[ci].dir != candidates[cis[0]].dir) {
                doomed.extend(cis.iter().copied());
            }
        }
        if doomed.is_empty() {
            let mut owner: BTreeMap<Cell, usize> = BTreeMap::new();
            for (&b, cis) in &by_block {
                let d = candidates[cis[0]].dir;
                let moved = Block {
                    pos: state.blocks[b].pos.step(d),
                    ..state.blocks[b].clone()
                };
                for c in moved.cells() {
                    match owner.get(&c) {
                        Some(&other) if other != b => {
                            doomed.extend(cis.iter().copied());
                            doomed.extend(by_block[&other].iter().copied());
                        }
                        _ => {
                            owner.insert(c, b);
                        }
                    }
                }
            }
        }
        if doomed.is_empty() {
            break;
        }
        for ci in doomed {
            canceled[ci] = true;
        }
    }

    let mut block_dir: BTreeMap<usize, Direction> = BTreeMap::new();
    for (ci, cand) in candidates.iter().enumerate() {
        if cand.ok && !canceled[ci] {
            for &b in &cand.blocks {
                block_dir.insert(b, cand.dir);
            }
        }
    }
    let canceled_pairs: BTreeSet<(usize, Direction)> = candidates
        .iter()
        .enumerate()
        .filter(|(ci, c)| c.ok && canceled[*ci])
        .flat_map(|(_, c)| c.blocks.iter().map(move |&b| (b, c.dir)))
        .collect();

    let mut next = state.clone();
    next.t += 1;
    let mut outcomes = vec![MoveOutcome::Stayed; n];
    for (&b, &d) in &block_dir {
        next.blocks[b].pos = state.blocks[b].pos.step(d);
    }
    for i in 0..n {
        if let Some((b, d)) = targets[i] {
            if block_dir.get(&b) == Some(&d) {
                next.agents[i] = state.agents[i].step(d);
                outcomes[i] = MoveOutcome::Pushed;
            } else if canceled_pairs.contains(&(b, d)) {
                outcomes[i] = MoveOutcome::PushCanceled;
            } else {
                outcomes[i] = MoveOutcome::PushFailed;
            }
        }
    }

    // Pure moves: the target must be empty before the step and free of blocks after it.
    let mut claims: BTreeMap<Cell, usize> = BTreeMap::new();
    for i in 0..n {
        if targets[i].is_some() {
            continue;
        }
        let Some(d) = joint[i].direction() else { continue };
        let target = state.agents[i].step(d);
        let free_before = target.in_bounds(k) && occ[(target.0 * k + target.1) as usize] == Occ::Empty;
        let free_after = free_before && !next.blocks.iter().any(|b| !b.delivered && b.contains(target));
        if free_after {
            claims.entry(target).or_insert(i);
        }
        outcomes[i] = MoveOutcome::Blocked;
    }
    for (&cell, &i) in &claims {
        next.agents[i] = cell;
        outcomes[i] = MoveOutcome::Moved;
    }

    for b in next.blocks.iter_mut() {
        if !b.delivered && b.cells().any(|c| c.1 == k - 1) {
            b.delivered = true;
        }
    }
    (next, outcomes)
}

/// Optional fixed layout replacing random generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub k: i32,
    pub agents: Vec<Cell>,
    pub blocks: Vec<ScenarioBlock>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioBlock {
    pub id: u32,
    pub weight: u32,
    pub row: i32,
    pub col: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentView {
    pub id: AgentId,
    pub row: i32,
    pub col: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockView {
    pub id: u32,
    pub weight: u32,
    pub row: i32,
    pub col: i32,
    pub distance_to_goal: i32,
    pub history: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeObservation {
    pub agent: AgentId,
    pub grid_size: i32,
    pub step: u64,
    pub agents: Vec<AgentView>,
    pub blocks: Vec<BlockView>,
    /// `k×k×5` tensor in row-major order, channel fastest.
    #[serde(skip)]
    pub channels: Vec<f32>,
}

impl CubeObservation {
    pub fn channel(&self, ch: usize, row: i32, col: i32) -> f32 {
        let k = self.grid_size as usize;
        self.channels[(row as usize * k + col as usize) * 5 + ch]
    }
}

pub struct CubeEnv {
    state: CubeState,
    block_history: BTreeMap<BlockId, Vec<String>>,
}

impl CubeEnv {
    pub fn new(state: CubeState) -> Result<Self, EnvError> {
        state.validate().map_err(EnvError::Scenario)?;
        Ok(Self {
            state,
            block_history: BTreeMap::new(),
        })
    }

    pub fn from_scenario(s: &Scenario) -> Result<Self, EnvError> {
        let state = CubeState {
            k: s.k,
            agents: s.agents.clone(),
            blocks: s
                .blocks
                .iter()
                .map(|b| Block {
                    id: BlockId(b.id),
                    weight: b.weight,
                    pos: Cell(b.row, b.col),
                    delivered: false,
                })
                .collect(),
            t: 0,
        };
        if state.blocks.iter().any(|b| b.cells().any(|c| c.1 == s.k - 1)) {
            return Err(EnvError::Scenario("block starts in the goal column".into()));
        }
        Self::new(state)
    }

    pub fn generate(n: usize, difficulty: Difficulty, seed: u64) -> Result<Self, EnvError> {
        Self::new(generate(n, difficulty, seed)?)
    }

    pub fn state(&self) -> &CubeState {
        &self.state
    }

    fn face_task_id(block: BlockId, d: Direction) -> TaskId {
        let side = match d {
            Direction::Up => 0,
            Direction::Down => 1,
            Direction::Left => 2,
            Direction::Right => 3,
        };
        TaskId(block.0 * 4 + side)
    }

    fn tasks_for(state: &CubeState) -> Vec<Task> {
        let mut out = Vec::new();
        for b in state.blocks.iter().filter(|b| !b.delivered) {
            for d in Direction::ALL {
                out.push(Task {
                    id: Self::face_task_id(b.id, d),
                    kind: "push_block".into(),
                    object_type: "block".into(),
                    object_id: b.id.0,
                    anchor: b.face_cells(d),
                    radius: 1,
                    required_agents: b.weight,
                    required_tool: ToolTier::None,
                    dependencies: vec![Dependency::DestinationClear],
                    state: TaskState::InProgress,
                });
            }
        }
        out
    }

    fn destination_clear(state: &CubeState, block: &Block, d: Direction) -> bool {
        block
            .leading_cells(d)
            .into_iter()
            .all(|c| c.in_bounds(state.k) && state.agent_at(c).is_none() && state.block_at(c).is_none())
    }

    fn verdicts(state: &CubeState, joint: &[CubeAction], active_after: &BTreeSet<BlockId>) -> Vec<ConstraintVerdict> {
        let targets = chain_targets(state, joint);
        let caps: Vec<CapabilityState> = state
            .agents
            .iter()
            .enumerate()
            .map(|(i, &pos)| CapabilityState {
                agent: AgentId(i as u32),
                position: pos,
                tool_tier: ToolTier::None,
                engaged: targets[i].map(|(b, d)| Self::face_task_id(state.blocks[b].id, d)),
            })
            .collect();
        Self::tasks_for(state)
            .into_iter()
            .filter(|t| active_after.contains(&BlockId(t.object_id)))
            .map(|task| {
                let block = state.block(BlockId(task.object_id)).expect("task block exists").clone();
                let d = Direction::ALL[(task.id.0 % 4) as usize];
                let clear = Self::destination_clear(state, &block, d);
                constraints::evaluate(&task, &caps, EnvStep(state.t), &|_| clear)
            })
            .collect()
    }

    fn to_actions(&self, joint: &[Primitive]) -> (Vec<CubeAction>, Vec<Option<String>>) {
        joint
            .iter()
            .map(|p| match p {
                Primitive::Cube(a) => (*a, None),
                other => (CubeAction::Stay, Some(format!("{other:?} is not a cube primitive"))),
            })
            .unzip()
    }
}

impl Environment for CubeEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Cube
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
        let k = self.state.k;
        let ku = k as usize;
        let mut channels = vec![0.0f32; ku * ku * 5];
        let mut set = |c: Cell, ch: usize, v: f32| channels[(c.0 as usize * ku + c.1 as usize) * 5 + ch] = v;
        for (i, &a) in self.state.agents.iter().enumerate() {
            set(a, 0, 1.0);
            set(a, 3, (i + 1) as f32);
        }
        for b in self.state.blocks.iter().filter(|b| !b.delivered) {
            for c in b.cells() {
                set(c, 1, b.weight as f32);
                set(c, 4, (b.id.0 + 1) as f32);
            }
        }
        for r in 0..k {
            set(Cell(r, k - 1), 2, 1.0);
        }
        Observation::Cube(CubeObservation {
            agent,
            grid_size: k,
            step: self.state.t,
            agents: self
                .state
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| AgentView {
                    id: AgentId(i as u32),
                    row: a.0,
                    col: a.1,
                })
                .collect(),
            blocks: self
                .state
                .blocks
                .iter()
                .filter(|b| !b.delivered)
                .map(|b| BlockView {
                    id: b.id.0,
                    weight: b.weight,
                    row: b.pos.0,
                    col: b.pos.1,
                    distance_to_goal: k - 1 - (b.pos.1 + b.weight as i32 - 1),
                    history: self.block_history.get(&b.id).cloned().unwrap_or_default(),
                })
                .collect(),
            channels,
        })
    }

    fn ground(&self, agent: AgentId, concept: &ActionConcept, progress: &SegmentProgress) -> (Grounding, SegmentProgress) {
        let emit = |a: CubeAction, dir: Option<Direction>| {
            (
                Grounding::Emit(Primitive::Cube(a)),
                SegmentProgress {
                    steps: progress.steps + 1,
                    direction: dir,
                },
            )
        };
        if let Err(e) = concept.validate(EnvKind::Cube) {
            return (Grounding::Fail(e), *progress);
        }
        match concept {
            ActionConcept::Move { direction, num_steps } => {
                if progress.steps >= *num_steps {
                    (Grounding::Complete, *progress)
                } else {
                    emit(CubeAction::from_direction(*direction), Some(*direction))
                }
            }
            ActionConcept::Wait { num_steps } => {
                if progress.steps >= *num_steps {
                    (Grounding::Complete, *progress)
                } else {
                    emit(CubeAction::Stay, None)
                }
            }
            ActionConcept::Push { block_id, num_steps } => {
                if progress.steps >= *num_steps {
                    return (Grounding::Complete, *progress);
                }
                let Some(block) = self.state.block(BlockId(*block_id)) else {
                    return (Grounding::Fail(format!("unknown block {block_id}")), *progress);
                };
                if block.delivered {
                    return (Grounding::Fail(format!("block {block_id} is delivered")), *progress);
                }
                let pos = self.state.agents[agent.index()];
                let dir = match progress.direction {
                    Some(d) if progress.steps > 0 => {
                        if !block.contains(pos.step(d)) {
                            return (Grounding::Fail(format!("lost contact with block {block_id}")), *progress);
                        }
                        d
                    }
                    _ => match Direction::ALL.into_iter().find(|&d| block.contains(pos.step(d))) {
                        Some(d) => d,
                        None => return (Grounding::Fail(format!("not adjacent to block {block_id}")), *progress),
                    },
                };
                emit(CubeAction::from_direction(dir), Some(dir))
            }
            other => (Grounding::Fail(format!("{} is not a cube action", other.name())), *progress),
        }
    }

    fn idle(&self) -> Primitive {
        Primitive::Cube(CubeAction::Stay)
    }

    fn step(&mut self, joint: &[Primitive]) -> StepReport {
        let (actions, errors) = self.to_actions(joint);
        let before = self.state.clone();
        let (next, moves) = resolve(&before, &actions);
        let active_after: BTreeSet<BlockId> = next.blocks.iter().filter(|b| !b.delivered).map(|b| b.id).collect();
        let verdicts = Self::verdicts(&before, &actions, &active_after);
        let mut completed_tasks = Vec::new();
        let mut reward = STEP_COST;
        for (old, new) in before.blocks.iter().zip(next.blocks.iter()) {
            if old.pos != new.pos {
                let d = old.pos.direction_to(new.pos).expect("blocks move one cell");
                let hist = self.block_history.entry(old.id).or_default();
                hist.push(format!("t{}:{}", before.t, d.name()));
                if hist.len() > BLOCK_HISTORY {
                    hist.remove(0);
                }
            }
            if !old.delivered && new.delivered {
                reward += DELIVERY_REWARD;
                for d in Direction::ALL {
                    completed_tasks.push(Self::face_task_id(old.id, d));
                }
            }
        }
        let outcomes = moves
            .iter()
            .zip(errors)
            .enumerate()
            .map(|(i, (m, err))| match err {
                Some(e) => ExecOutcome::new(AgentId(i as u32), OutcomeKind::Failure, e),
                None => ExecOutcome::new(AgentId(i as u32), m.kind(), format!("{m:?}").to_lowercase()),
            })
            .collect();
        self.state = next;
        StepReport {
            outcomes,
            verdicts,
            completed_tasks,
            capability_gains: 0,
            reward,
            success: self.state.all_delivered(),
        }
    }

    fn active_tasks(&self) -> Vec<Task> {
        Self::tasks_for(&self.state)
    }

    fn current_verdicts(&self) -> Vec<ConstraintVerdict> {
        let idle = vec![CubeAction::Stay; self.state.agents.len()];
        let active: BTreeSet<BlockId> = self.state.blocks.iter().filter(|b| !b.delivered).map(|b| b.id).collect();
        Self::verdicts(&self.state, &idle, &active)
    }

    fn success(&self) -> bool {
        self.state.all_delivered()
    }

    fn prompt(&self) -> &'static str {
        include_str!("../../prompts/env_cube.txt")
    }
}

/// Block placement rule shared by all difficulties: no cell on the border and an
/// empty ring (including diagonals) around every other block.
fn placement_ok(k: i32, blocks: &[Block], cand: &Block) -> bool {
    let w = cand.weight as i32;
    let (r, c) = (cand.pos.0, cand.pos.1);
    if r < 1 || c < 1 || r + w > k - 1 || c + w > k - 1 {
        return false;
    }
    blocks.iter().all(|b| {
        let bw = b.weight as i32;
        r > b.pos.0 + bw || b.pos.0 > r + w || c > b.pos.1 + bw || b.pos.1 > c + w
    })
}

pub fn generate(n: usize, difficulty: Difficulty, seed: u64) -> Result<CubeState, EnvError> {
    if n == 0 {
        return Err(EnvError::Config("at least one agent is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, weights): (i32, Vec<u32>) = match difficulty {
        Difficulty::Easy => (8, vec![1, 1, 1]),
        Difficulty::Hard => (8, vec![1, 2, 3]),
        Difficulty::Auto => {
            let k = 20.max(n as i32);
            let wmax = (n as u32) / 2 + 1;
            let mut ws = Vec::new();
            for w in (1..=wmax).rev() {
                for _ in 0..(wmax - w + 1) {
                    ws.push(w);
                }
            }
            (k, ws)
        }
    };
    if n as i32 > k {
        return Err(EnvError::Config(format!("{n} agents do not fit on the start wall of a {k}x{k} grid")));
    }
    let mut rows: Vec<i32> = (0..k).collect();
    rows.shuffle(&mut rng);
    let agents: Vec<Cell> = rows[..n].iter().map(|&r| Cell(r, 0)).collect();

    let budget = (k * k) as u32 / 2;
    let mut weights = weights;
    weights.sort_unstable_by(|a, b| b.cmp(a));
    let mut attempts = 0u32;
    'layout: loop {
        let mut area = 0u32;
        let mut blocks: Vec<Block> = Vec::new();
        for &w in &weights {
            if difficulty == Difficulty::Auto && area + w * w > budget {
                continue;
            }
            let span = k - 1 - w as i32;
            if span < 1 {
                return Err(EnvError::GenerationFailed(attempts));
            }
            let mut placed = false;
            for _ in 0..PLACEMENT_TRIES {
                attempts += 1;
                if attempts > MAX_GENERATION_ATTEMPTS {
                    return Err(EnvError::GenerationFailed(MAX_GENERATION_ATTEMPTS));
                }
                let cand = Block {
                    id: BlockId(blocks.len() as u32),
                    weight: w,
                    pos: Cell(rng.gen_range(1..=span), rng.gen_range(1..=span)),
                    delivered: false,
                };
                if placement_ok(k, &blocks, &cand) {
                    area += w * w;
                    blocks.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed && difficulty != Difficulty::Auto {
                continue 'layout;
            }
        }
        return Ok(CubeState { k, agents, blocks, t: 0 });
    }
}
