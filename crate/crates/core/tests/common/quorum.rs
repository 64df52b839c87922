//! Independent quorum checks over recorded transitions.

use std::collections::BTreeMap;

use emcoop::env::craft::{tool_tier, CraftAction, CraftState, CoopConfig};
use emcoop::env::cube::{CubeAction, CubeState};
use emcoop::env::{Cell, Direction, Primitive};
use emcoop::kernel::EpisodeRecord;

fn delta(d: Direction) -> (i32, i32) {
    match d {
        Direction::Up => (-1, 0),
        Direction::Down => (1, 0),
        Direction::Left => (0, -1),
        Direction::Right => (0, 1),
    }
}

fn covers(pos: Cell, w: u32, c: Cell) -> bool {
    let w = w as i32;
    c.0 >= pos.0 && c.0 < pos.0 + w && c.1 >= pos.1 && c.1 < pos.1 + w
}

/// Returns (moved weight, qualifying pushers) for every group of blocks that moved together.
pub fn cube_moves(before: &CubeState, after: &CubeState, joint: &[CubeAction]) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for d in Direction::ALL {
        let (dr, dc) = delta(d);
        let moved: Vec<usize> = (0..before.blocks.len())
            .filter(|&b| !before.blocks[b].delivered && after.blocks[b].pos == Cell(before.blocks[b].pos.0 + dr, before.blocks[b].pos.1 + dc))
            .collect();
        if moved.is_empty() {
            continue;
        }
        // Blocks touching along d belong to the same group.
        let mut group: Vec<usize> = (0..moved.len()).collect();
        fn root(g: &mut [usize], i: usize) -> usize {
            if g[i] == i {
                i
            } else {
                let r = root(g, g[i]);
                g[i] = r;
                r
            }
        }
        for i in 0..moved.len() {
            for j in 0..moved.len() {
                let a = &before.blocks[moved[i]];
                let b = &before.blocks[moved[j]];
                let shifted = Cell(a.pos.0 + dr, a.pos.1 + dc);
                let touches = (0..a.weight as i32).any(|x| (0..a.weight as i32).any(|y| covers(b.pos, b.weight, Cell(shifted.0 + x, shifted.1 + y))));
                if i != j && touches {
                    let (ri, rj) = (root(&mut group, i), root(&mut group, j));
                    group[ri] = rj;
                }
            }
        }
        let mut weight: BTreeMap<usize, u32> = BTreeMap::new();
        for i in 0..moved.len() {
            *weight.entry(root(&mut group, i)).or_default() += before.blocks[moved[i]].weight;
        }
        let mut pushers: BTreeMap<usize, u32> = BTreeMap::new();
        for (a, &pos) in before.agents.iter().enumerate() {
            if joint[a].direction() != Some(d) {
                continue;
            }
            let mut c = Cell(pos.0 + dr, pos.1 + dc);
            loop {
                if let Some(i) = moved.iter().position(|&b| covers(before.blocks[b].pos, before.blocks[b].weight, c)) {
                    *pushers.entry(root(&mut group, i)).or_default() += 1;
                    break;
                }
                match before.agents.iter().position(|&x| x == c) {
                    Some(j) if joint[j].direction() == Some(d) => c = Cell(c.0 + dr, c.1 + dc),
                    _ => break,
                }
            }
        }
        for (g, w) in weight {
            out.push((w, pushers.get(&g).copied().unwrap_or(0)));
        }
    }
    out
}

/// Returns (block group moves, moves without a quorum).
pub fn cube_violations(record: &EpisodeRecord) -> (usize, usize) {
    let mut moves = 0;
    let mut bad = 0;
    for step in &record.steps {
        let before: CubeState = serde_json::from_value(step.state_before.clone()).unwrap();
        let after: CubeState = serde_json::from_value(step.state_after.clone()).unwrap();
        let joint: Vec<CubeAction> = step
            .joint_action
            .iter()
            .map(|p| match p {
                Primitive::Cube(a) => *a,
                other => panic!("not a cube action: {other:?}"),
            })
            .collect();
        for (w, f) in cube_moves(&before, &after, &joint) {
            moves += 1;
            if f < w {
                bad += 1;
            }
        }
    }
    (moves, bad)
}

/// Node a collect of `kind` by `agent` lands on: the faced node if close enough, else the nearest.
fn collect_target(s: &CraftState, agent: usize, kind: &str, d: u32) -> Option<usize> {
    let me = &s.agents[agent];
    let (dr, dc) = delta(me.facing);
    let faced = Cell(me.pos.0 + dr, me.pos.1 + dc);
    let dist = |c: Cell| c.0.abs_diff(me.pos.0) + c.1.abs_diff(me.pos.1);
    let live = |i: &usize| s.nodes[*i].alive && s.nodes[*i].kind.name() == kind && dist(s.nodes[*i].pos) <= d;
    if let Some(i) = (0..s.nodes.len()).filter(live).find(|&i| s.nodes[i].pos == faced) {
        return Some(i);
    }
    (0..s.nodes.len()).filter(live).min_by_key(|&i| (dist(s.nodes[i].pos), s.nodes[i].id))
}

/// Returns (collection gains, gains without a quorum).
pub fn craft_violations(record: &EpisodeRecord, cfg: &CoopConfig) -> (usize, usize) {
    let d = cfg.distance();
    let mut gains = 0;
    let mut bad = 0;
    for step in &record.steps {
        let before: CraftState = serde_json::from_value(step.state_before.clone()).unwrap();
        let after: CraftState = serde_json::from_value(step.state_after.clone()).unwrap();
        let acts: Vec<&CraftAction> = step
            .joint_action
            .iter()
            .map(|p| match p {
                Primitive::Craft(a) => a,
                other => panic!("not a craft action: {other:?}"),
            })
            .collect();
        // qualifying collectors per node
        let mut quorum: BTreeMap<usize, u32> = BTreeMap::new();
        let mut hits: Vec<Option<usize>> = vec![None; acts.len()];
        for (i, a) in acts.iter().enumerate() {
            let CraftAction::Collect(r) = a else { continue };
            let rule = &cfg.cooperative_collection.resources[r.node_name()];
            let tool = rule.required_tool.map(tool_tier).unwrap_or_default();
            if before.agents[i].tier() < tool {
                continue;
            }
            if let Some(g) = collect_target(&before, i, r.node_name(), d) {
                *quorum.entry(g).or_default() += 1;
                hits[i] = Some(g);
            }
        }
        for (i, a) in before.agents.iter().enumerate() {
            for r in emcoop::agents::Resource::ALL {
                let gained = after.agents[i].count(r).saturating_sub(a.count(r));
                let shared_in: u32 = acts
                    .iter()
                    .filter_map(|x| match x {
                        CraftAction::Share { to, resource, quantity } if to.index() == i && *resource == r => Some(*quantity),
                        _ => None,
                    })
                    .sum();
                if gained <= shared_in {
                    continue;
                }
                gains += 1;
                let p = if cfg.cooperative_collection.enabled {
                    cfg.cooperative_collection.resources[r.node_name()].required_agents
                } else {
                    1
                };
                let ok = hits[i].is_some_and(|g| before.nodes[g].kind.name() == r.node_name() && quorum[&g] >= p && !after.nodes[g].alive);
                if !ok {
                    bad += 1;
                }
            }
        }
    }
    (gains, bad)
}
