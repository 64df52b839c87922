//! Deterministic planners shared by the scripted policies.

use std::collections::{BTreeMap, BTreeSet};

use crate::env::craft::{bfs_path, NodeKind, VIEW_RADIUS};
use crate::env::cube::CubeObservation;
use crate::env::{Cell, CraftObservation, Direction};

use super::{ActionConcept, CraftItem, PlaceItem, Resource, TaskSpecification};

const UNREACHABLE: usize = 1_000_000;

/// First step and length of a shortest 4-connected path to any goal cell.
pub fn first_step(k: i32, start: Cell, open: &dyn Fn(Cell) -> bool, goal: &dyn Fn(Cell) -> bool) -> Option<(Direction, usize)> {
    let path = bfs_path(k, start, open, goal)?;
    let next = *path.first()?;
    Some((start.direction_to(next)?, path.len()))
}

fn distance(k: i32, start: Cell, open: &dyn Fn(Cell) -> bool, goal: Cell) -> usize {
    if start == goal {
        return 0;
    }
    bfs_path(k, start, open, &|c| c == goal).map_or(UNREACHABLE, |p| p.len())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoardBlock {
    pub id: u32,
    pub weight: u32,
    pub pos: Cell,
}

impl BoardBlock {
    pub fn contains(&self, c: Cell) -> bool {
        let w = self.weight as i32;
        c.0 >= self.pos.0 && c.0 < self.pos.0 + w && c.1 >= self.pos.1 && c.1 < self.pos.1 + w
    }

    /// Cells behind the block's left face, one per row.
    pub fn right_push_slots(&self) -> Vec<Cell> {
        (0..self.weight as i32).map(|j| Cell(self.pos.0 + j, self.pos.1 - 1)).collect()
    }

    fn rows(&self) -> std::ops::Range<i32> {
        self.pos.0..self.pos.0 + self.weight as i32
    }

    fn right_edge(&self) -> i32 {
        self.pos.1 + self.weight as i32 - 1
    }
}

/// Full CUBE layout as seen in an observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeBoard {
    pub k: i32,
    pub agents: Vec<Cell>,
    pub blocks: Vec<BoardBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeMove {
    Step(Direction),
    Push(u32),
    Wait,
}

impl CubeMove {
    pub fn concept(self) -> ActionConcept {
        match self {
            CubeMove::Step(direction) => ActionConcept::Move { direction, num_steps: 1 },
            CubeMove::Push(block_id) => ActionConcept::Push { block_id, num_steps: 1 },
            CubeMove::Wait => ActionConcept::Wait { num_steps: 1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeJointPlan {
    pub target: Option<u32>,
    pub assigned: Vec<bool>,
    pub moves: Vec<CubeMove>,
}

impl CubeJointPlan {
    pub fn task(&self, agent: usize) -> TaskSpecification {
        match (self.target, self.moves[agent]) {
            (Some(id), CubeMove::Wait) if !self.assigned[agent] => TaskSpecification::new("wait", "block", id as i64),
            (Some(id), _) if self.assigned[agent] => TaskSpecification::new("push_block", "block", id as i64),
            (Some(id), _) => TaskSpecification::new("reposition", "block", id as i64),
            (None, _) => TaskSpecification::new("wait", "none", -1),
        }
    }
}

impl CubeBoard {
    pub fn from_observation(o: &CubeObservation) -> Self {
        Self {
            k: o.grid_size,
            agents: o.agents.iter().map(|a| Cell(a.row, a.col)).collect(),
            blocks: o
                .blocks
                .iter()
                .map(|b| BoardBlock {
                    id: b.id,
                    weight: b.weight,
                    pos: Cell(b.row, b.col),
                })
                .collect(),
        }
    }

    pub fn block_cell(&self, c: Cell) -> bool {
        self.blocks.iter().any(|b| b.contains(c))
    }

    fn agent_at(&self, c: Cell) -> Option<usize> {
        self.agents.iter().position(|&a| a == c)
    }

    /// True when no other block sits between `b` and the goal column in its rows.
    pub fn clear_band(&self, b: &BoardBlock) -> bool {
        let rows = b.rows();
        let ahead = b.right_edge() + 1;
        self.blocks.iter().filter(|o| o.id != b.id).all(|o| {
            let overlap = o.pos.0 < rows.end && rows.start < o.pos.0 + o.weight as i32;
            !(overlap && o.right_edge() >= ahead)
        })
    }

    /// Next block to deliver and whether the team is large enough to move it.
    /// Prefers movable blocks nearest the goal; falls back to the lightest clear block.
    pub fn choose_target(&self) -> Option<(usize, bool)> {
        let n = self.agents.len() as u32;
        let pushable = |b: &BoardBlock| self.clear_band(b) && b.right_push_slots().iter().all(|s| s.in_bounds(self.k) && !self.block_cell(*s));
        let feasible = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| pushable(b) && b.weight <= n)
            .max_by_key(|(_, b)| (b.right_edge(), std::cmp::Reverse(b.id)));
        if let Some((i, _)) = feasible {
            return Some((i, true));
        }
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| pushable(b))
            .min_by_key(|(_, b)| (b.weight, b.id))
            .map(|(i, _)| (i, false))
    }

    /// Agent-to-slot matching minimising total path length; exhaustive for small teams.
    fn assign(&self, slots: &[Cell]) -> Vec<Option<usize>> {
        let n = self.agents.len();
        let open = |c: Cell| !self.block_cell(c);
        let dist: Vec<Vec<usize>> = self
            .agents
            .iter()
            .map(|&a| slots.iter().map(|&s| distance(self.k, a, &open, s)).collect())
            .collect();
        let m = slots.len().min(n);
        // Ties on total length go to the matching that spreads the walking out.
        let mut best: Option<((usize, usize), Vec<Option<usize>>)> = None;
        if n <= 6 && slots.len() <= 6 {
            let mut current = vec![None; n];
            let mut used = vec![false; slots.len()];
            search(0, m, &dist, &mut current, &mut used, (0, 0), &mut best);
            return best.map(|(_, a)| a).unwrap_or_else(|| vec![None; n]);
        }
        let mut pairs: Vec<(usize, usize, usize)> = (0..n).flat_map(|i| (0..slots.len()).map(move |s| (i, s))).map(|(i, s)| (dist[i][s], i, s)).collect();
        pairs.sort();
        let mut out = vec![None; n];
        let mut used = vec![false; slots.len()];
        let mut taken = 0;
        for (_, i, s) in pairs {
            if taken == m {
                break;
            }
            if out[i].is_none() && !used[s] {
                out[i] = Some(s);
                used[s] = true;
                taken += 1;
            }
        }
        out
    }

    fn step_toward(&self, agent: usize, goal: Cell) -> CubeMove {
        let me = self.agents[agent];
        let free = |c: Cell| !self.block_cell(c) && self.agent_at(c).is_none();
        let loose = |c: Cell| !self.block_cell(c);
        first_step(self.k, me, &free, &|c| c == goal)
            .or_else(|| first_step(self.k, me, &loose, &|c| c == goal))
            .map_or(CubeMove::Wait, |(d, _)| CubeMove::Step(d))
    }

    fn step_out(&self, agent: usize, keepout: &BTreeSet<Cell>, prefer: &[Direction]) -> CubeMove {
        let me = self.agents[agent];
        let ok = |c: Cell| c.in_bounds(self.k) && !self.block_cell(c) && self.agent_at(c).is_none();
        prefer
            .iter()
            .copied()
            .find(|&d| ok(me.step(d)) && !keepout.contains(&me.step(d)))
            .or_else(|| prefer.iter().copied().find(|&d| ok(me.step(d))))
            .map_or(CubeMove::Wait, CubeMove::Step)
    }

    /// One synchronised step of the whole team toward delivering the chosen block.
    pub fn joint_plan(&self) -> CubeJointPlan {
        let n = self.agents.len();
        let Some((bi, _)) = self.choose_target() else {
            return CubeJointPlan {
                target: None,
                assigned: vec![false; n],
                moves: vec![CubeMove::Wait; n],
            };
        };
        let block = &self.blocks[bi];
        let slots = block.right_push_slots();
        let assignment = self.assign(&slots);
        let ahead: BTreeSet<Cell> = block
            .rows()
            .flat_map(|r| (block.right_edge() + 1..self.k).map(move |c| Cell(r, c)))
            .collect();
        let slot_set: BTreeSet<Cell> = slots.iter().copied().collect();
        let keepout: BTreeSet<Cell> = ahead.union(&slot_set).copied().collect();
        let ready = assignment
            .iter()
            .enumerate()
            .all(|(i, s)| s.is_none_or(|s| self.agents[i] == slots[s]));
        let lane_clear = !self.agents.iter().any(|a| ahead.contains(a));
        let mut moves = vec![CubeMove::Wait; n];
        for i in 0..n {
            let me = self.agents[i];
            moves[i] = match assignment[i] {
                Some(_) if ready && lane_clear => CubeMove::Push(block.id),
                Some(s) if me == slots[s] => CubeMove::Wait,
                Some(s) => self.step_toward(i, slots[s]),
                None if ahead.contains(&me) => {
                    let top = block.pos.0;
                    let bottom = block.pos.0 + block.weight as i32 - 1;
                    let order = if me.0 - top <= bottom - me.0 {
                        [Direction::Up, Direction::Down, Direction::Right]
                    } else {
                        [Direction::Down, Direction::Up, Direction::Right]
                    };
                    self.step_out(i, &keepout, &order)
                }
                None if slot_set.contains(&me) => self.step_out(i, &keepout, &[Direction::Left, Direction::Up, Direction::Down]),
                None => CubeMove::Wait,
            };
        }
        CubeJointPlan {
            target: Some(block.id),
            assigned: assignment.iter().map(Option::is_some).collect(),
            moves,
        }
    }

    /// A lone agent pushing whichever block it can reach soonest.
    pub fn solo_move(&self, agent: usize) -> (Option<u32>, CubeMove) {
        let me = self.agents[agent];
        let open = |c: Cell| !self.block_cell(c);
        let best = self
            .blocks
            .iter()
            .flat_map(|b| b.right_push_slots().into_iter().filter(|s| s.in_bounds(self.k)).map(move |s| (b, s)))
            .map(|(b, s)| (distance(self.k, me, &open, s), b.id, s))
            .filter(|(d, _, _)| *d < UNREACHABLE)
            .min();
        match best {
            None => (None, CubeMove::Wait),
            Some((0, id, _)) => (Some(id), CubeMove::Push(id)),
            Some((_, id, s)) => (Some(id), self.step_toward(agent, s)),
        }
    }
}

fn search(
    agent: usize,
    m: usize,
    dist: &[Vec<usize>],
    current: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    cost: (usize, usize),
    best: &mut Option<((usize, usize), Vec<Option<usize>>)>,
) {
    let placed = current.iter().filter(|s| s.is_some()).count();
    if placed == m {
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            *best = Some((cost, current.clone()));
        }
        return;
    }
    if agent == dist.len() || dist.len() - agent < m - placed {
        return;
    }
    if best.as_ref().is_some_and(|(b, _)| cost >= *b) {
        return;
    }
    for s in 0..used.len() {
        if !used[s] {
            used[s] = true;
            current[agent] = Some(s);
            let d = dist[agent][s];
            search(agent + 1, m, dist, current, used, (cost.0 + d, cost.1 + d * d), best);
            current[agent] = None;
            used[s] = false;
        }
    }
    search(agent + 1, m, dist, current, used, cost, best);
}

/// What one agent remembers about the crafting map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CraftKnowledge {
    pub nodes: BTreeMap<u32, (NodeKind, Cell)>,
    gone: BTreeSet<u32>,
}

impl CraftKnowledge {
    pub fn observe(&mut self, o: &CraftObservation) {
        let seen: BTreeSet<u32> = o.nodes.iter().map(|n| n.id).collect();
        let in_view = |c: Cell| (c.0 - o.position.0).abs() <= VIEW_RADIUS && (c.1 - o.position.1).abs() <= VIEW_RADIUS;
        let vanished: Vec<u32> = self
            .nodes
            .iter()
            .filter(|(id, (_, c))| in_view(*c) && !seen.contains(id))
            .map(|(id, _)| *id)
            .collect();
        for id in vanished {
            self.nodes.remove(&id);
            self.gone.insert(id);
        }
        for n in &o.nodes {
            self.nodes.insert(n.id, (n.kind, Cell(n.row, n.col)));
        }
    }

    pub fn add(&mut self, id: u32, kind: NodeKind, at: Cell) {
        if !self.gone.contains(&id) {
            self.nodes.insert(id, (kind, at));
        }
    }

    pub fn forget(&mut self, id: u32) {
        self.nodes.remove(&id);
        self.gone.insert(id);
    }

    pub fn get(&self, id: u32) -> Option<(NodeKind, Cell)> {
        self.nodes.get(&id).copied()
    }

    /// Known node of `kind` with the smallest summed distance to `from`, ties by id.
    pub fn nearest(&self, kind: NodeKind, from: &[Cell]) -> Option<u32> {
        self.nodes
            .iter()
            .filter(|(_, (k, _))| *k == kind)
            .min_by_key(|(id, (_, c))| (from.iter().map(|f| f.manhattan(*c)).sum::<u32>(), **id))
            .map(|(id, _)| *id)
    }

    pub fn blocked(&self, c: Cell) -> bool {
        self.nodes.values().any(|(_, at)| *at == c)
    }
}

/// The team objective the pack strategy pursues, derived from one agent's own bag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PackGoal {
    Gather(Resource),
    PlaceTable,
    Craft(CraftItem),
    PlaceFurnace,
}

pub fn pack_goal(o: &CraftObservation, know: &CraftKnowledge) -> PackGoal {
    let has = |t: CraftItem| o.tools.contains(&t);
    let count = |r: Resource| o.inventory.get(&r).copied().unwrap_or(0);
    let table = know.nodes.values().any(|(k, _)| *k == NodeKind::Table);
    let furnace = know.nodes.values().any(|(k, _)| *k == NodeKind::Furnace);
    if !has(CraftItem::WoodPickaxe) {
        if !table {
            return if count(Resource::Wood) < 5 { PackGoal::Gather(Resource::Wood) } else { PackGoal::PlaceTable };
        }
        return if count(Resource::Wood) >= 1 { PackGoal::Craft(CraftItem::WoodPickaxe) } else { PackGoal::Gather(Resource::Wood) };
    }
    if !has(CraftItem::StonePickaxe) {
        if count(Resource::Stone) < 5 {
            return PackGoal::Gather(Resource::Stone);
        }
        if count(Resource::Wood) < 1 {
            return PackGoal::Gather(Resource::Wood);
        }
        return PackGoal::Craft(CraftItem::StonePickaxe);
    }
    if !has(CraftItem::IronPickaxe) {
        if !furnace {
            return PackGoal::PlaceFurnace;
        }
        if count(Resource::Coal) < 1 {
            return PackGoal::Gather(Resource::Coal);
        }
        if count(Resource::Iron) < 1 {
            return PackGoal::Gather(Resource::Iron);
        }
        if count(Resource::Wood) < 1 {
            return PackGoal::Gather(Resource::Wood);
        }
        return PackGoal::Craft(CraftItem::IronPickaxe);
    }
    PackGoal::Gather(Resource::Diamond)
}

pub fn gather_task(r: Resource, id: Option<u32>) -> TaskSpecification {
    TaskSpecification::new(&format!("collect_{}", r.name()), r.node_name(), id.map_or(-1, |i| i as i64))
}

/// Exploration waypoints visited in turn while a needed node type is unknown.
pub const WAYPOINTS: [Cell; 4] = [Cell(8, 8), Cell(8, 23), Cell(23, 23), Cell(23, 8)];

/// Positions of every agent, indexed by agent id.
pub fn team_positions(o: &CraftObservation, n: usize) -> Vec<Cell> {
    let mut out = vec![o.position; n];
    for t in &o.teammates {
        if t.id.index() < n {
            out[t.id.index()] = Cell(t.row, t.col);
        }
    }
    out
}

/// A single-step concept moving `me` toward a free cell next to `target`.
pub fn approach(o: &CraftObservation, know: &CraftKnowledge, positions: &[Cell], target: Cell) -> ActionConcept {
    let me = o.position;
    let k = o.grid_size;
    if me.manhattan(target) == 1 {
        let d = me.direction_to(target).expect("adjacent");
        return if o.facing == d { ActionConcept::Noop { num_steps: 1 } } else { ActionConcept::Move { direction: d, num_steps: 1 } };
    }
    let others: BTreeSet<Cell> = positions.iter().copied().filter(|&p| p != me).collect();
    let free = |c: Cell| !know.blocked(c) && !others.contains(&c);
    let loose = |c: Cell| !know.blocked(c);
    let goal_free = |c: Cell| c.manhattan(target) == 1 && !others.contains(&c);
    let goal_any = |c: Cell| c.manhattan(target) == 1;
    first_step(k, me, &free, &goal_free)
        .or_else(|| first_step(k, me, &loose, &goal_any))
        .map_or(ActionConcept::Noop { num_steps: 1 }, |(d, _)| ActionConcept::Move { direction: d, num_steps: 1 })
}

/// A single-step concept heading for `goal` itself.
pub fn walk_to(o: &CraftObservation, know: &CraftKnowledge, positions: &[Cell], goal: Cell) -> ActionConcept {
    let me = o.position;
    let others: BTreeSet<Cell> = positions.iter().copied().filter(|&p| p != me).collect();
    let free = |c: Cell| !know.blocked(c) && !others.contains(&c);
    first_step(o.grid_size, me, &free, &|c| c == goal)
        .or_else(|| first_step(o.grid_size, me, &|c| !know.blocked(c), &|c| c == goal))
        .map_or(ActionConcept::Noop { num_steps: 1 }, |(d, _)| ActionConcept::Move { direction: d, num_steps: 1 })
}

/// Single-step concept that turns or moves the agent so it faces an empty grass cell,
/// or places `item` when it already does.
pub fn place_here(o: &CraftObservation, know: &CraftKnowledge, positions: &[Cell], item: PlaceItem) -> ActionConcept {
    if o.facing_cell == "grass" {
        return ActionConcept::Place { item };
    }
    let me = o.position;
    let k = o.grid_size;
    let open = |c: Cell| c.in_bounds(k) && !know.blocked(c) && !positions.contains(&c);
    Direction::ALL
        .into_iter()
        .find(|&d| open(me.step(d)) && open(me.step(d).step(d)))
        .or_else(|| Direction::ALL.into_iter().find(|&d| open(me.step(d))))
        .map_or(ActionConcept::Noop { num_steps: 1 }, |d| ActionConcept::Move { direction: d, num_steps: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(agents: &[(i32, i32)], blocks: &[(u32, u32, i32, i32)]) -> CubeBoard {
        CubeBoard {
            k: 8,
            agents: agents.iter().map(|&(r, c)| Cell(r, c)).collect(),
            blocks: blocks
                .iter()
                .map(|&(id, weight, r, c)| BoardBlock { id, weight, pos: Cell(r, c) })
                .collect(),
        }
    }

    #[test]
    fn ready_team_pushes() {
        let b = board(&[(2, 2), (3, 2)], &[(0, 2, 2, 3)]);
        let plan = b.joint_plan();
        assert_eq!(plan.moves, vec![CubeMove::Push(0), CubeMove::Push(0)]);
    }

    #[test]
    fn pushers_wait_for_partner() {
        let b = board(&[(2, 2), (6, 0)], &[(0, 2, 2, 3)]);
        let plan = b.joint_plan();
        assert_eq!(plan.moves[0], CubeMove::Wait);
        assert!(matches!(plan.moves[1], CubeMove::Step(_)));
    }

    #[test]
    fn blocked_band_defers_to_front_block() {
        let b = board(&[(0, 0)], &[(0, 1, 3, 1), (1, 1, 3, 5)]);
        assert_eq!(b.choose_target(), Some((1, true)));
    }

    #[test]
    fn heavy_block_still_attempted() {
        let b = board(&[(0, 0)], &[(0, 2, 3, 3)]);
        assert_eq!(b.choose_target(), Some((0, false)));
    }

    #[test]
    fn assignment_is_optimal_on_small_team() {
        let b = board(&[(5, 1), (1, 1)], &[(0, 2, 1, 3)]);
        let a = b.assign(&b.blocks[0].right_push_slots());
        assert_eq!(a, vec![Some(1), Some(0)]);
    }
}
