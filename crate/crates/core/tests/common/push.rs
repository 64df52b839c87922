//! Brute-force resolver for one block and at most two agents on a 4x4 grid.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use emcoop::env::cube::{resolve, Block, CubeAction, CubeState, MoveOutcome};
use emcoop::env::{Cell, Direction};
use emcoop::kernel::BlockId;

pub const K: i32 = 4;
/// w=1: 12 positions x (1 + 15*5 + 210*25); w=2: 6 x (1 + 12*5 + 132*25)
pub const CASES: u64 = 12 * 5326 + 6 * 3361;
pub const OUTCOMES: [&str; 6] = ["Stayed", "Moved", "Blocked", "Pushed", "PushFailed", "PushCanceled"];

fn dir(a: CubeAction) -> Option<(i32, i32, Direction)> {
    match a {
        CubeAction::Stay => None,
        CubeAction::Up => Some((-1, 0, Direction::Up)),
        CubeAction::Down => Some((1, 0, Direction::Down)),
        CubeAction::Left => Some((0, -1, Direction::Left)),
        CubeAction::Right => Some((0, 1, Direction::Right)),
    }
}

fn in_block(top: (i32, i32), w: i32, c: (i32, i32)) -> bool {
    c.0 >= top.0 && c.0 < top.0 + w && c.1 >= top.1 && c.1 < top.1 + w
}

fn inside(c: (i32, i32)) -> bool {
    c.0 >= 0 && c.0 < K && c.1 >= 0 && c.1 < K
}

struct Expect {
    agents: Vec<(i32, i32)>,
    block: (i32, i32),
    delivered: bool,
    outcomes: Vec<MoveOutcome>,
}

/// One block of width `w` at `top`, agents at `agents` issuing `acts`.
fn oracle(top: (i32, i32), w: i32, agents: &[(i32, i32)], acts: &[CubeAction]) -> Expect {
    let n = agents.len();
    let agent_at = |c: (i32, i32)| agents.iter().position(|&a| a == c);

    // Which direction, if any, each agent pushes the block in.
    let mut pushes: Vec<Option<Direction>> = vec![None; n];
    for i in 0..n {
        let Some((dr, dc, d)) = dir(acts[i]) else { continue };
        let mut c = (agents[i].0 + dr, agents[i].1 + dc);
        loop {
            if !inside(c) {
                break;
            }
            if in_block(top, w, c) {
                pushes[i] = Some(d);
                break;
            }
            match agent_at(c) {
                Some(j) if dir(acts[j]).map(|x| x.2) == Some(d) => c = (c.0 + dr, c.1 + dc),
                _ => break,
            }
        }
    }

    let delta = |d: Direction| match d {
        Direction::Up => (-1, 0),
        Direction::Down => (1, 0),
        Direction::Left => (0, -1),
        Direction::Right => (0, 1),
    };
    // quorum, in-bounds destination, agents sitting in the destination
    let attempt = |d: Direction| {
        let (dr, dc) = delta(d);
        let force = pushes.iter().filter(|p| **p == Some(d)).count() as i32;
        let dest = (top.0 + dr, top.1 + dc);
        let fits = inside(dest) && inside((dest.0 + w - 1, dest.1 + w - 1));
        let blockers: Vec<usize> = (0..n).filter(|&a| in_block(dest, w, agents[a]) && !in_block(top, w, agents[a])).collect();
        (force >= w && force > 0, fits, blockers)
    };
    let all = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];
    let mut ok: Vec<Direction> = Vec::new();
    for d in all {
        let (quorum, fits, blockers) = attempt(d);
        if !quorum || !fits {
            continue;
        }
        if blockers.is_empty() {
            ok.push(d);
            continue;
        }
        // Head-on: every blocker pushes back with a quorum whose own blockers all push in d.
        let back = d.opposite();
        let (bq, bfits, bblockers) = attempt(back);
        let head_on = bq
            && bfits
            && blockers.iter().all(|&a| pushes[a] == Some(back))
            && bblockers.iter().all(|&a| pushes[a] == Some(d));
        if head_on {
            ok.push(d);
        }
    }

    let mut new_agents = agents.to_vec();
    let mut outcomes = vec![MoveOutcome::Stayed; n];
    let mut new_top = top;
    let moved = if ok.len() == 1 { Some(ok[0]) } else { None };
    if let Some(d) = moved {
        let (dr, dc) = delta(d);
        new_top = (top.0 + dr, top.1 + dc);
    }
    for i in 0..n {
        if let Some(d) = pushes[i] {
            outcomes[i] = if Some(d) == moved {
                let (dr, dc) = delta(d);
                new_agents[i] = (agents[i].0 + dr, agents[i].1 + dc);
                MoveOutcome::Pushed
            } else if ok.len() > 1 && ok.contains(&d) {
                MoveOutcome::PushCanceled
            } else {
                MoveOutcome::PushFailed
            };
        }
    }
    let mut taken: Vec<(i32, i32)> = Vec::new();
    for i in 0..n {
        if pushes[i].is_some() {
            continue;
        }
        let Some((dr, dc, _)) = dir(acts[i]) else { continue };
        let target = (agents[i].0 + dr, agents[i].1 + dc);
        let free = inside(target) && agent_at(target).is_none() && !in_block(top, w, target) && !in_block(new_top, w, target);
        if free && !taken.contains(&target) {
            taken.push(target);
            new_agents[i] = target;
            outcomes[i] = MoveOutcome::Moved;
        } else {
            outcomes[i] = MoveOutcome::Blocked;
        }
    }
    Expect {
        agents: new_agents,
        block: new_top,
        delivered: new_top.1 + w > K - 1,
        outcomes,
    }
}

fn joints(n: usize) -> Vec<Vec<CubeAction>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                CubeAction::ALL.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

pub struct Summary {
    pub cases: u64,
    pub mismatches: Vec<String>,
    /// Expected outcome kinds and how often each occurred.
    pub seen: BTreeMap<String, u64>,
    pub elapsed: Duration,
}

/// Runs every placement and joint action through both resolvers.
pub fn exhaustive() -> Summary {
    let started = Instant::now();
    let cells: Vec<(i32, i32)> = (0..K).flat_map(|r| (0..K).map(move |c| (r, c))).collect();
    let mut cases = 0u64;
    let mut mismatches = Vec::new();
    let mut seen = BTreeMap::new();
    for w in 1..=2 {
        for r in 0..=K - w {
            // Blocks already touching the goal column are delivered on arrival.
            for c in 0..K - w {
                let top = (r, c);
                let free: Vec<(i32, i32)> = cells.iter().copied().filter(|&x| !in_block(top, w, x)).collect();
                let mut layouts: Vec<Vec<(i32, i32)>> = vec![vec![]];
                layouts.extend(free.iter().map(|&a| vec![a]));
                for &a in &free {
                    for &b in &free {
                        if a != b {
                            layouts.push(vec![a, b]);
                        }
                    }
                }
                for agents in &layouts {
                    let state = CubeState {
                        k: K,
                        agents: agents.iter().map(|&(r, c)| Cell(r, c)).collect(),
                        blocks: vec![Block {
                            id: BlockId(0),
                            weight: w as u32,
                            pos: Cell(r, c),
                            delivered: false,
                        }],
                        t: 0,
                    };
                    for joint in joints(agents.len()) {
                        cases += 1;
                        let (next, outcomes) = resolve(&state, &joint);
                        let want = oracle(top, w, agents, &joint);
                        for o in &want.outcomes {
                            *seen.entry(format!("{o:?}")).or_insert(0u64) += 1;
                        }
                        let got_agents: Vec<(i32, i32)> = next.agents.iter().map(|a| (a.0, a.1)).collect();
                        let b = &next.blocks[0];
                        if got_agents != want.agents || (b.pos.0, b.pos.1) != want.block || b.delivered != want.delivered || outcomes != want.outcomes {
                            mismatches.push(format!("w={w} block={top:?} agents={agents:?} joint={joint:?}"));
                        }
                    }
                }
            }
        }
    }
    Summary {
        cases,
        mismatches,
        seen,
        elapsed: started.elapsed(),
    }
}
