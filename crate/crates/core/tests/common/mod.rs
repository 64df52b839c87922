//! Shared episode helpers and the acceptance checks.
#![allow(dead_code)]

pub mod push;
pub mod quorum;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use emcoop::comm::{TopologyConfig, TopologyKind};
use emcoop::constraints::ConstraintKind;
use emcoop::env::craft::CraftState;
use emcoop::env::{Difficulty, EnvKind};
use emcoop::harness::{self, run, RunConfig, RunOutput, TRACE_FILE};
use emcoop::kernel::{AgentId, EpisodeRecord};
use emcoop::maeil::audit::audit;
use emcoop::maeil::TransitionCause;
use emcoop::metrics;

pub const TOPOLOGIES: [TopologyKind; 4] = [TopologyKind::Individual, TopologyKind::Debate, TopologyKind::Centralized, TopologyKind::Decentralized];

/// Outcome of one acceptance criterion.
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// One hard-mode episode under the individual topology.
pub fn episode(env: EnvKind, backend: &str, n: usize, seed: u64, max_steps: u64) -> RunOutput {
    let mut cfg = RunConfig::new(env, Difficulty::Hard, n, TopologyConfig::of(TopologyKind::Individual), backend, seed);
    cfg.max_steps = Some(max_steps);
    run(&cfg).expect("episode runs")
}

pub fn config(env: EnvKind, difficulty: Difficulty, n: usize, topology: TopologyKind, backend: &str, seed: u64, max_steps: u64) -> RunConfig {
    let mut cfg = RunConfig::new(env, difficulty, n, TopologyConfig::of(topology), backend, seed);
    cfg.max_steps = Some(max_steps);
    cfg.feedback_enabled = backend == "scripted:follow-feedback";
    cfg
}

/// The scripted corpus: both environments, every topology and policy, team sizes 1 to 4.
pub fn corpus() -> Vec<RunConfig> {
    let backends = [
        "scripted:oracle-coordinator",
        "scripted:random-walker",
        "scripted:greedy-collector",
        "scripted:follow-feedback",
        "scripted:idler",
        "scripted:quitter@6",
    ];
    let mut out = Vec::new();
    let mut seed = 0;
    for env in [EnvKind::Cube, EnvKind::Craftlite] {
        for topology in TOPOLOGIES {
            for backend in backends {
                for n in 1..=4 {
                    seed += 1;
                    let difficulty = match (env, seed % 3) {
                        (EnvKind::Cube, 0) if n >= 2 => Difficulty::Auto,
                        (_, 1) => Difficulty::Easy,
                        _ => Difficulty::Hard,
                    };
                    out.push(config(env, difficulty, n, topology, backend, seed, 40));
                }
            }
        }
    }
    out
}

/// Runs every config with its trace written under `dir`.
pub fn run_all(configs: &[RunConfig], dir: &Path) -> Vec<(RunConfig, RunOutput)> {
    configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let mut cfg = cfg.clone();
            cfg.out = Some(dir.join(format!("ep{i:04}")));
            let out = run(&cfg).unwrap_or_else(|e| panic!("{} {} seed {}: {e}", cfg.env.name(), cfg.backend, cfg.seed));
            (cfg, out)
        })
        .collect()
}

fn topology_corpus(kind: TopologyKind) -> Vec<EpisodeRecord> {
    (0..20u64)
        .map(|seed| {
            let env = if seed % 2 == 0 { EnvKind::Cube } else { EnvKind::Craftlite };
            let n = 2 + (seed as usize / 2) % 3;
            let backend = if seed % 4 < 2 { "scripted:oracle-coordinator" } else { "scripted:random-walker" };
            run(&config(env, Difficulty::Hard, n, kind, backend, seed, 40)).expect("episode runs").record
        })
        .collect()
}

pub fn individual_silent() -> Result<usize, String> {
    let mut steps = 0;
    for r in topology_corpus(TopologyKind::Individual) {
        let report = metrics::compute(&r);
        if report.messages_total != 0 || report.interrupt_breakdown.message != 0 {
            return Err(format!("seed {}: M6={} message interrupts={}", r.header.seed, report.messages_total, report.interrupt_breakdown.message));
        }
        if r.all_samples().any(|s| s.cause == TransitionCause::MessageArrived) || r.steps.iter().any(|s| !s.deliveries.is_empty()) {
            return Err(format!("seed {}: delivery under the individual topology", r.header.seed));
        }
        steps += r.steps.len();
    }
    Ok(steps)
}

/// Returns the number of rounds seen.
pub fn debate_rounds() -> Result<usize, String> {
    let mut rounds = 0;
    for r in topology_corpus(TopologyKind::Debate) {
        let n = r.header.n_agents;
        let order: Vec<AgentId> = (0..n as u32).map(AgentId).collect();
        for step in r.steps.iter().filter(|s| !s.messages.is_empty()) {
            rounds += 1;
            let senders: Vec<AgentId> = step.messages.iter().map(|m| m.sender).collect();
            if senders != order[..n - 1] {
                return Err(format!("seed {} step {}: senders {senders:?} with n={n}", r.header.seed, step.t.0));
            }
            for (pos, m) in step.messages.iter().enumerate() {
                if m.recipients != order[pos + 1..] {
                    return Err(format!("seed {} step {}: message {pos} goes to {:?}", r.header.seed, step.t.0, m.recipients));
                }
            }
        }
    }
    if rounds == 0 {
        return Err("no debate round ran".into());
    }
    Ok(rounds)
}

pub fn centralized_rounds() -> Result<usize, String> {
    let mut rounds = 0;
    for r in topology_corpus(TopologyKind::Centralized) {
        let n = r.header.n_agents;
        let leader = AgentId(0);
        for step in r.steps.iter().filter(|s| !s.messages.is_empty()) {
            rounds += 1;
            let fail = |what: &str| Err(format!("seed {} step {}: {what}", r.header.seed, step.t.0));
            if step.messages.len() != n {
                return fail(&format!("{} messages with n={n}", step.messages.len()));
            }
            let b = &step.messages[0];
            if b.sender != leader || b.recipients.len() != n - 1 {
                return fail("first message is not the leader broadcast");
            }
            if step.messages[1..].iter().any(|m| m.sender == leader || m.recipients != [leader]) {
                return fail("a reply does not go to the leader");
            }
        }
    }
    if rounds == 0 {
        return Err("no centralized round ran".into());
    }
    Ok(rounds)
}

/// Returns the number of sends seen.
pub fn decentralized_budget() -> Result<usize, String> {
    let mut sends = 0;
    for r in topology_corpus(TopologyKind::Decentralized) {
        let n = r.header.n_agents;
        for step in &r.steps {
            let mut sent: BTreeMap<AgentId, usize> = BTreeMap::new();
            for m in &step.messages {
                *sent.entry(m.sender).or_default() += 1;
            }
            let mut received: BTreeMap<AgentId, usize> = BTreeMap::new();
            for d in &step.deliveries {
                *received.entry(d.recipient).or_default() += 1;
            }
            if sent.values().chain(received.values()).any(|&c| c > n) {
                return Err(format!("seed {} step {}: sent {sent:?} received {received:?}", r.header.seed, step.t.0));
            }
            sends += step.messages.len();
        }
    }
    if sends == 0 {
        return Err("nobody sent anything".into());
    }
    Ok(sends)
}

/// Total audit violations over the runs, with the first few described.
pub fn legality(runs: &[(RunConfig, RunOutput)]) -> (usize, Vec<String>) {
    let mut total = 0;
    let mut first = Vec::new();
    for (cfg, out) in runs {
        let v = audit(&out.record);
        total += v.len();
        if first.len() < 3 {
            if let Some(x) = v.first() {
                first.push(format!("{} {} {} n={} seed {}: {x:?}", cfg.env.name(), cfg.topology.kind.name(), cfg.backend, cfg.n_agents, cfg.seed));
            }
        }
    }
    (total, first)
}

/// Largest metric difference between the runtime report and the one rebuilt from the trace file,
/// and the runs where M6 differs from the summed per-agent loads.
pub fn metrics_roundtrip(runs: &[(RunConfig, RunOutput)]) -> (f64, Vec<String>) {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (cfg, out) in runs {
        let dir = cfg.out.as_ref().expect("corpus runs write traces");
        let record = harness::read_trace(&dir.join(TRACE_FILE)).expect("trace reads back");
        let again = metrics::compute(&record);
        worst = worst.max(out.report.max_abs_diff(&again));
        let same_rest = again.steps == out.report.steps
            && again.success == out.report.success
            && again.interrupt_breakdown == out.report.interrupt_breakdown
            && again.load_per_agent == out.report.load_per_agent;
        let sum: u64 = out.report.load_per_agent.iter().sum();
        if !same_rest || sum != out.report.messages_total {
            bad.push(format!("{} seed {}", cfg.backend, cfg.seed));
        }
    }
    (worst, bad)
}

/// Fifty configs spread over both environments, run twice; returns the pairs whose traces differ.
pub fn determinism(dir: &Path) -> (usize, Vec<String>) {
    let backends = ["scripted:oracle-coordinator", "scripted:random-walker", "scripted:follow-feedback", "scripted:greedy-collector", "scripted:quitter@9"];
    let mut configs = Vec::new();
    for i in 0..50u64 {
        let env = if i % 2 == 0 { EnvKind::Cube } else { EnvKind::Craftlite };
        let difficulty = if i % 5 == 0 { Difficulty::Easy } else { Difficulty::Hard };
        let topology = TOPOLOGIES[(i / 2) as usize % 4];
        configs.push(config(env, difficulty, 2 + (i as usize % 3), topology, backends[(i / 3) as usize % 5], 1000 + i, 60));
    }
    let mut differ = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let mut traces = Vec::new();
        for round in 0..2 {
            let mut c = cfg.clone();
            let out = dir.join(format!("det{i:02}_{round}"));
            c.out = Some(out.clone());
            run(&c).expect("episode runs");
            traces.push(fs::read(out.join(TRACE_FILE)).expect("trace written"));
        }
        if traces[0] != traces[1] {
            differ.push(format!("{} {} seed {}", cfg.env.name(), cfg.backend, cfg.seed));
        }
    }
    (configs.len(), differ)
}

/// Completions of tasks whose last verdict asked for exactly `p` agents, before step `within`.
pub fn completions_with_quorum(record: &EpisodeRecord, p: u32, within: u64) -> usize {
    let mut required = BTreeMap::new();
    let mut count = 0;
    for step in record.steps.iter().take_while(|s| s.t.0 < within) {
        count += step.completed_tasks.iter().filter(|t| required.get(*t) == Some(&p)).count();
        for v in &step.verdicts {
            required.insert(v.task, v.required);
        }
    }
    count
}

/// Whether a tree node was collected in the episode.
pub fn collected_tree(record: &EpisodeRecord) -> bool {
    record.steps.iter().any(|s| {
        let before: CraftState = serde_json::from_value(s.state_before.clone()).expect("craft snapshot");
        s.completed_tasks
            .iter()
            .any(|t| before.nodes.iter().any(|n| n.id == t.0 && n.kind.name() == "tree"))
    })
}

pub struct Solvability {
    pub cube_solved: usize,
    pub craft_trees: usize,
    pub seeds: usize,
    pub slowest: Duration,
}

/// Oracle team on cube hard (200 steps) and craftlite hard (100 steps), 3 agents, 20 seeds each.
pub fn solvability() -> Solvability {
    let mut s = Solvability {
        cube_solved: 0,
        craft_trees: 0,
        seeds: 20,
        slowest: Duration::ZERO,
    };
    for seed in 0..20 {
        let started = Instant::now();
        let cube = run(&config(EnvKind::Cube, Difficulty::Hard, 3, TopologyKind::Centralized, "scripted:oracle-coordinator", seed, 200)).expect("cube runs");
        s.slowest = s.slowest.max(started.elapsed());
        if cube.record.success() && cube.record.steps.len() <= 200 {
            s.cube_solved += 1;
        }
        let started = Instant::now();
        let craft = run(&config(EnvKind::Craftlite, Difficulty::Hard, 3, TopologyKind::Centralized, "scripted:oracle-coordinator", seed, 100)).expect("craft runs");
        s.slowest = s.slowest.max(started.elapsed());
        if collected_tree(&craft.record) && completions_with_quorum(&craft.record, 2, 100) > 0 {
            s.craft_trees += 1;
        }
    }
    s
}

pub struct Gap {
    pub gap: f64,
    pub with: f64,
    pub without: f64,
    /// Seeds where the feedback arm made at least two cooperative collections in the early window.
    pub early_seeds: usize,
    pub seeds: usize,
}

pub fn feedback_gap() -> Gap {
    let base = config(EnvKind::Craftlite, Difficulty::Hard, 3, TopologyKind::Centralized, "scripted:follow-feedback", 0, 100);
    let seeds: Vec<u64> = (0..20).collect();
    let g = harness::feedback_gap(&base, &seeds, "scripted:follow-feedback", "scripted:greedy-collector").expect("both arms run");
    Gap {
        gap: g.gap,
        with: g.with_feedback.aggregate.success_rate,
        without: g.without_feedback.aggregate.success_rate,
        early_seeds: g.with_feedback.early_cooperative.iter().filter(|&&c| c >= 2).count(),
        seeds: seeds.len(),
    }
}

/// Participation share of the violated-constraint histogram over 2-agent hard sweeps.
pub fn attribution() -> (f64, BTreeMap<ConstraintKind, u64>, usize) {
    let mut records = Vec::new();
    for env in [EnvKind::Cube, EnvKind::Craftlite] {
        for topology in TOPOLOGIES {
            for backend in ["scripted:oracle-coordinator", "scripted:greedy-collector"] {
                for seed in 0..5 {
                    let max = if env == EnvKind::Cube { 200 } else { 100 };
                    let out = run(&config(env, Difficulty::Hard, 2, topology, backend, seed, max)).expect("episode runs");
                    records.push((format!("{}-{}-{backend}-{seed}", env.name(), topology.name()), out.record));
                }
            }
        }
    }
    let report = harness::attribute(records.iter().map(|(l, r)| (l.clone(), r)), 3).expect("some episodes fail");
    (report.share(ConstraintKind::Participation), report.histogram.clone(), report.failing.len())
}

/// Minimal trace text: a header and steps given as lists of (agent, stage, cause, task).
pub fn micro_trace(n: usize, steps: &[Vec<(u32, &str, &str, Option<&str>)>]) -> String {
    let header = serde_json::json!({
        "schema_version": "emcoop-trace/1", "env": "cube", "difficulty": "easy", "n_agents": n,
        "topology": {"kind": "individual"}, "seed": 0, "max_steps": steps.len(),
        "backend": "scripted:idler", "feedback_enabled": false,
    });
    let mut lines = vec![header.to_string()];
    let mut event = 0u64;
    for (t, samples) in steps.iter().enumerate() {
        let cognitive: Vec<serde_json::Value> = samples
            .iter()
            .map(|&(agent, stage, cause, task)| {
                let mut s = serde_json::json!({"event": event, "agent": agent, "stage": stage, "cause": cause, "decision_time": 0.0});
                if let Some(task) = task {
                    s["plan"] = serde_json::json!({
                        "id": agent, "task": {"task": "push_block", "object_type": "block", "object_id": task.as_bytes()[0] as i64},
                        "cursor": 0, "len": 1, "status": "active", "origin": "new", "created_event": 0,
                    });
                }
                event += 1;
                s
            })
            .collect();
        let mut step = serde_json::json!({
            "t": t, "cognitive": cognitive, "messages": [], "deliveries": [], "state_before": null,
            "joint_action": [], "outcomes": [], "state_after": null, "verdicts": [], "completed_tasks": [],
            "capability_gains": 0, "reward": 0.0,
        });
        if t + 1 == steps.len() {
            step["termination"] = serde_json::json!({"kind": "truncation", "step": steps.len(), "success": false});
        }
        lines.push(step.to_string());
    }
    lines.join("\n") + "\n"
}

/// Three constructed traces with hand-computed M1 and M13: returns (got, want) pairs.
pub fn micro_metrics() -> Vec<(&'static str, f64, f64)> {
    let r = |s: &str| EpisodeRecord::from_jsonl_str(s).expect("micro trace parses");
    let one = r(&micro_trace(
        2,
        &[
            vec![(0, "R", "init", None), (1, "R", "init", None), (0, "W", "plan_committed", Some("A")), (1, "W", "plan_committed", Some("A")), (0, "X", "barrier_released", Some("A")), (1, "X", "barrier_released", Some("A"))],
            vec![(0, "W", "step_completed", Some("A")), (1, "W", "step_completed", Some("A"))],
        ],
    ));
    let two = r(&micro_trace(
        3,
        &[vec![(0, "X", "barrier_released", Some("A")), (1, "X", "barrier_released", Some("A")), (2, "X", "barrier_released", Some("B"))]],
    ));
    let three = r(&micro_trace(
        2,
        &[
            vec![(0, "X", "barrier_released", Some("A")), (1, "X", "barrier_released", Some("A"))],
            vec![(0, "X", "barrier_released", Some("A")), (1, "X", "barrier_released", None)],
            vec![(0, "R", "execution_done", None)],
        ],
    ));
    let m = |rec: &EpisodeRecord| metrics::compute(rec);
    vec![
        ("M1 of 8 samples over 2 steps", m(&one).decision_overhead, 4.0),
        ("M13 of one all-agree barrier", m(&one).coherence, 1.0),
        ("M13 of {A,A,B}", m(&two).coherence, 1.0 / 3.0),
        ("M1 of 3 samples over 1 step", m(&two).decision_overhead, 3.0),
        ("M13 of agree, half-planned, skipped", m(&three).coherence, 0.5),
        ("M1 of 5 samples over 3 steps", m(&three).decision_overhead, 5.0 / 3.0),
    ]
}
