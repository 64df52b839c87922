//! Constraint evaluation against a brute-force count over every predicate combination.

mod common;

use emcoop::constraints::{evaluate, failure_time, feedback, CapabilityState, ConstraintKind, Task, TaskState, ToolTier};
use emcoop::comm::TopologyKind;
use emcoop::env::{Cell, Difficulty, EnvKind};
use emcoop::kernel::{AgentId, EnvStep, TaskId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TIERS: [ToolTier; 4] = [ToolTier::None, ToolTier::WoodPickaxe, ToolTier::StonePickaxe, ToolTier::IronPickaxe];

fn task(p: u32, tool: ToolTier) -> Task {
    Task {
        id: TaskId(7),
        kind: "collect".into(),
        object_type: "stone".into(),
        object_id: 7,
        anchor: vec![Cell(5, 5)],
        radius: 1,
        required_agents: p,
        required_tool: tool,
        dependencies: vec![],
        state: TaskState::InProgress,
    }
}

/// Agent `i` with each predicate switched on or off independently.
fn agent(i: u32, capable: bool, near: bool, engaged: bool) -> CapabilityState {
    CapabilityState {
        agent: AgentId(i),
        position: if near { Cell(5, 4 + (i as i32 % 3)) } else { Cell(0, i as i32) },
        tool_tier: if capable { ToolTier::WoodPickaxe } else { ToolTier::None },
        engaged: engaged.then_some(TaskId(7)),
    }
}

#[test]
fn participation_matches_brute_force_quorum() {
    let mut checked = 0;
    for n in 1..=4u32 {
        for mask in 0..(1u32 << (3 * n)) {
            let caps: Vec<CapabilityState> = (0..n)
                .map(|i| {
                    let bits = mask >> (3 * i);
                    agent(i, bits & 1 != 0, bits & 2 != 0, bits & 4 != 0)
                })
                .collect();
            let qualifying = (0..n).filter(|i| (mask >> (3 * i)) & 7 == 7).count() as u32;
            for p in 1..=4 {
                let v = evaluate(&task(p, ToolTier::WoodPickaxe), &caps, EnvStep(0), &|_| true);
                assert_eq!(v.participation, qualifying >= p, "n={n} mask={mask:b} p={p}");
                assert_eq!(v.qualifying(), qualifying);
                assert_eq!(v.violated.contains(&ConstraintKind::Participation), !v.participation);
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 4 * (8 + 64 + 512 + 4096));
}

#[test]
fn engagement_subsets_on_a_two_agent_tree() {
    // Three agents around a p=2 tree; every subset of who engages.
    let t = task(2, ToolTier::None);
    for subset in 0..8u32 {
        let caps: Vec<CapabilityState> = (0..3).map(|i| agent(i, true, true, subset & (1 << i) != 0)).collect();
        let v = evaluate(&t, &caps, EnvStep(3), &|_| true);
        let k = subset.count_ones();
        assert_eq!(v.participation, k >= 2, "subset {subset:03b}");
        assert_eq!(v.engaged, k);
        assert_eq!(v.proximate, 3);
        // Everyone is capable and close, so temporal only holds when nobody idles.
        assert_eq!(v.temporal, k == 3);
        assert_eq!(v.spatial, k > 0);
    }
}

#[test]
fn adding_a_qualifying_agent_never_breaks_participation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.gen_range(0..4);
        let mut caps: Vec<CapabilityState> = (0..n).map(|i| agent(i, rng.gen(), rng.gen(), rng.gen())).collect();
        let t = task(rng.gen_range(1..=4), ToolTier::WoodPickaxe);
        let before = evaluate(&t, &caps, EnvStep(0), &|_| true);
        caps.push(agent(n, true, true, true));
        let after = evaluate(&t, &caps, EnvStep(0), &|_| true);
        assert!(!before.participation || after.participation);
        assert_eq!(after.qualifying(), before.qualifying() + 1);
    }
}

#[test]
fn feedback_ratio_counts_qualifying_agents() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let tool = TIERS[rng.gen_range(0..TIERS.len())];
        let mut t = task(rng.gen_range(1..=4), tool);
        t.radius = rng.gen_range(0..3);
        let caps: Vec<CapabilityState> = (0..rng.gen_range(1..=4))
            .map(|i| CapabilityState {
                agent: AgentId(i),
                position: Cell(rng.gen_range(0..10), rng.gen_range(0..10)),
                tool_tier: TIERS[rng.gen_range(0..TIERS.len())],
                engaged: rng.gen_bool(0.6).then_some(TaskId(7)),
            })
            .collect();
        let v = evaluate(&t, &caps, EnvStep(0), &|_| true);
        let brute = caps
            .iter()
            .filter(|c| c.tool_tier >= tool && c.position.manhattan(Cell(5, 5)) <= t.radius && c.engaged == Some(TaskId(7)))
            .count();
        let snap = feedback(&t, &v, true).unwrap();
        assert_eq!(snap.participants.len(), brute);
        assert_eq!(snap.ratio, brute as f64 / t.required_agents as f64);
        assert!(feedback(&t, &v, false).is_err());
    }
}

#[test]
fn failure_time_is_the_termination_step() {
    let quit = common::episode(EnvKind::Craftlite, "scripted:quitter@12", 2, 0, 100).record;
    assert!(!quit.success());
    assert_eq!(failure_time(&quit), Some(EnvStep(12)));

    let truncated = common::episode(EnvKind::Cube, "scripted:idler", 2, 0, 50).record;
    assert_eq!(failure_time(&truncated), Some(EnvStep(50)));

    let cfg = common::config(EnvKind::Cube, Difficulty::Easy, 2, TopologyKind::Centralized, "scripted:oracle-coordinator", 0, 200);
    let solved = emcoop::harness::run(&cfg).unwrap().record;
    assert!(solved.success());
    assert_eq!(failure_time(&solved), None);
}
