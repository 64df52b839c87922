//! Exit gate: one PASS/FAIL line per criterion, then a single assertion over all of them.
//!
//! Run with `cargo test -p emcoop-core --test acceptance -- --nocapture` to see the lines.

mod common;

use std::time::Duration;

use common::{push, quorum, Check};
use emcoop::constraints::ConstraintKind;
use emcoop::env::craft::CoopConfig;
use emcoop::env::{Difficulty, EnvKind};

const PUSH_ORACLE_BUDGET: Duration = Duration::from_secs(60);
const QUORUM_CUBE_EPISODES: u64 = 1000;
const QUORUM_CUBE_STEPS: u64 = 50;
const QUORUM_CRAFT_EPISODES: u64 = 200;
const METRICS_TOL: f64 = 1e-9;
const MICRO_TOL: f64 = 1e-12;
const SOLVE_MIN: usize = 19;
const EPISODE_WALL: Duration = Duration::from_secs(1);
const EARLY_SEEDS_MIN: usize = 10;
const PARTICIPATION_SHARE_MIN: f64 = 0.6;

fn push_physics() -> Check {
    let s = push::exhaustive();
    let pass = s.cases == push::CASES && s.mismatches.is_empty() && s.elapsed < PUSH_ORACLE_BUDGET;
    Check::new(pass, format!("{} cases, {} mismatches, {:.2?}", s.cases, s.mismatches.len(), s.elapsed))
}

fn quorum_necessity() -> Check {
    let (mut moves, mut bad) = (0, 0);
    for seed in 0..QUORUM_CUBE_EPISODES {
        let rec = common::episode(EnvKind::Cube, "scripted:random-walker", 3, seed, QUORUM_CUBE_STEPS).record;
        let (m, b) = quorum::cube_violations(&rec);
        moves += m;
        bad += b;
    }
    let cfg = CoopConfig::preset(Difficulty::Hard);
    let (mut gains, mut bad_gains) = (0, 0);
    for seed in 0..QUORUM_CRAFT_EPISODES {
        for backend in ["scripted:random-walker", "scripted:oracle-coordinator"] {
            let rec = common::episode(EnvKind::Craftlite, backend, 3, seed, 100).record;
            let (g, b) = quorum::craft_violations(&rec, &cfg);
            gains += g;
            bad_gains += b;
        }
    }
    Check::new(
        bad == 0 && bad_gains == 0,
        format!("cube: {bad} of {moves} block moves under quorum; craftlite: {bad_gains} of {gains} gains under quorum"),
    )
}

fn topology_structure() -> Check {
    let parts = [
        ("individual", common::individual_silent().map(|s| format!("{s} silent steps"))),
        ("debate", common::debate_rounds().map(|r| format!("{r} rounds of n-1"))),
        ("centralized", common::centralized_rounds().map(|r| format!("{r} rounds of n"))),
        ("decentralized", common::decentralized_budget().map(|s| format!("{s} sends within budget"))),
    ];
    let pass = parts.iter().all(|(_, r)| r.is_ok());
    let detail = parts
        .iter()
        .map(|(k, r)| match r {
            Ok(s) => format!("{k}: {s}"),
            Err(e) => format!("{k}: {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    Check::new(pass, detail)
}

fn corpus_checks() -> (Check, Check) {
    let dir = tempfile::tempdir().expect("temp dir");
    let runs = common::run_all(&common::corpus(), dir.path());
    let (violations, first) = common::legality(&runs);
    let legality = Check::new(violations == 0, format!("{} traces, {violations} violations {first:?}", runs.len()));
    let (worst, bad) = common::metrics_roundtrip(&runs);
    let micro = common::micro_metrics();
    let micro_worst = micro.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let metrics = Check::new(
        worst <= METRICS_TOL && bad.is_empty() && micro_worst <= MICRO_TOL,
        format!("{} traces, max |delta| {worst:e}, M6 mismatches {}, micro traces max |delta| {micro_worst:e}", runs.len(), bad.len()),
    );
    (legality, metrics)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().expect("temp dir");
    let (pairs, differ) = common::determinism(dir.path());
    Check::new(pairs == 50 && differ.is_empty(), format!("{pairs} pairs, {} differ {differ:?}", differ.len()))
}

fn solvability() -> Check {
    let s = common::solvability();
    Check::new(
        s.cube_solved >= SOLVE_MIN && s.craft_trees >= SOLVE_MIN && s.slowest < EPISODE_WALL,
        format!(
            "cube hard solved {}/{}, craftlite hard p=2 tree {}/{}, slowest episode {:.2?}",
            s.cube_solved, s.seeds, s.craft_trees, s.seeds, s.slowest
        ),
    )
}

fn feedback_gap() -> Check {
    let g = common::feedback_gap();
    Check::new(
        g.gap >= 0.0 && g.early_seeds >= EARLY_SEEDS_MIN,
        format!(
            "gap {:.3} (feedback {:.3}, greedy {:.3}), >=2 early cooperative collections on {}/{} seeds",
            g.gap, g.with, g.without, g.early_seeds, g.seeds
        ),
    )
}

fn attribution() -> Check {
    let (share, hist, failing) = common::attribution();
    let participation = hist.get(&ConstraintKind::Participation).copied().unwrap_or(0);
    Check::new(
        share > PARTICIPATION_SHARE_MIN,
        format!("participation {participation} of histogram {hist:?} over {failing} failed episodes, share {share:.3}"),
    )
}

#[test]
fn acceptance() {
    let (legality, metrics) = corpus_checks();
    let results = [
        ("push-physics oracle", push_physics()),
        ("quorum necessity", quorum_necessity()),
        ("topology structure", topology_structure()),
        ("maeil legality", legality),
        ("determinism", determinism()),
        ("metrics consistency", metrics),
        ("solvability", solvability()),
        ("feedback gap sign", feedback_gap()),
        ("failure attribution", attribution()),
    ];
    for (name, c) in &results {
        println!("{} {name}: {}", if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|(_, c)| !c.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
