//! Process-level cooperation metrics M1–M18 computed from an episode record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::Message;
use crate::constraints::{focal_verdict, ConstraintKind, ConstraintVerdict};
use crate::kernel::{AgentId, EnvStep, EpisodeRecord, TaskId};
use crate::maeil::{CognitiveSample, PlanEvent, PlanStatus, StageLabel, TransitionCause};

/// Column order of the CSV row.
pub const COLUMNS: [&str; 18] = [
    "M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "M9", "M10", "M11", "M12", "M13", "M14", "M15", "M16", "M17", "M18",
];

/// How the plan interruption count splits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptBreakdown {
    pub message: u64,
    pub abort: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub steps: u64,
    pub success: bool,
    /// Stage samples per environment step.
    #[serde(rename = "M1")]
    pub decision_overhead: f64,
    #[serde(rename = "M2")]
    pub decision_time_avg: f64,
    #[serde(rename = "M3")]
    pub decision_time_std: f64,
    #[serde(rename = "M4")]
    pub wait_avg: f64,
    #[serde(rename = "M5")]
    pub wait_std: f64,
    #[serde(rename = "M6")]
    pub messages_total: u64,
    #[serde(rename = "M7")]
    pub load_std: f64,
    #[serde(rename = "M8")]
    pub load_avg: f64,
    #[serde(rename = "M9")]
    pub plans_total: u64,
    #[serde(rename = "M10")]
    pub interrupts: u64,
    #[serde(rename = "M11")]
    pub resume_rate: f64,
    #[serde(rename = "M12")]
    pub replan_rate: f64,
    #[serde(rename = "M13")]
    pub coherence: f64,
    #[serde(rename = "M14")]
    pub gain_rate: f64,
    #[serde(rename = "M15")]
    pub spatial_ratio: f64,
    #[serde(rename = "M16")]
    pub temporal_ratio: f64,
    #[serde(rename = "M17")]
    pub dependency_ratio: f64,
    #[serde(rename = "M18")]
    pub participation_ratio: f64,
    pub interrupt_breakdown: InterruptBreakdown,
    /// Messages sent per agent, indexed by agent.
    pub load_per_agent: Vec<u64>,
}

impl MetricsReport {
    /// The eighteen metric values in column order.
    pub fn values(&self) -> [f64; 18] {
        [
            self.decision_overhead,
            self.decision_time_avg,
            self.decision_time_std,
            self.wait_avg,
            self.wait_std,
            self.messages_total as f64,
            self.load_std,
            self.load_avg,
            self.plans_total as f64,
            self.interrupts as f64,
            self.resume_rate,
            self.replan_rate,
            self.coherence,
            self.gain_rate,
            self.spatial_ratio,
            self.temporal_ratio,
            self.dependency_ratio,
            self.participation_ratio,
        ]
    }

    /// Largest absolute difference between two reports over all eighteen metrics.
    pub fn max_abs_diff(&self, other: &MetricsReport) -> f64 {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header line plus one row, M1 through M18.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        w.write_record(self.values().iter().map(|v| v.to_string())).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation.
fn std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Fraction of agent pairs whose plans at one barrier target the same task.
/// `None` when no agent has an active plan; 0 when only some do or with fewer than two agents.
pub fn coherence(plans: &[Option<&crate::agents::TaskSpecification>]) -> Option<f64> {
    if plans.iter().all(Option::is_none) {
        return None;
    }
    if plans.len() < 2 || plans.iter().any(Option::is_none) {
        return Some(0.0);
    }
    let mut pairs = 0u32;
    let mut same = 0u32;
    for i in 0..plans.len() {
        for j in i + 1..plans.len() {
            pairs += 1;
            if plans[i] == plans[j] {
                same += 1;
            }
        }
    }
    Some(same as f64 / pairs as f64)
}

/// Progress measure of one constraint type on a verdict.
pub fn progress(v: &ConstraintVerdict, kind: ConstraintKind) -> u32 {
    match kind {
        ConstraintKind::Spatial => v.proximate,
        ConstraintKind::Temporal => v.engaged,
        ConstraintKind::Participation => v.qualifying(),
        ConstraintKind::Dependency => v.satisfied_dependencies(),
    }
}

/// Mean improvement score of one constraint type over consecutive (task, step) pairs:
/// 1 when the progress measure rose, 0.5 when it held, 0 when it fell.
pub fn improvement_ratio(record: &EpisodeRecord, kind: ConstraintKind) -> f64 {
    let mut prev: BTreeMap<TaskId, u32> = BTreeMap::new();
    let mut scores = Vec::new();
    for step in &record.steps {
        let mut now = BTreeMap::new();
        for v in &step.verdicts {
            let p = progress(v, kind);
            if let Some(&before) = prev.get(&v.task) {
                scores.push(match p.cmp(&before) {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                });
            }
            now.insert(v.task, p);
        }
        prev = now;
    }
    mean(&scores)
}

pub fn compute(record: &EpisodeRecord) -> MetricsReport {
    let n = record.header.n_agents;
    let t_len = record.steps.len() as u64;
    let per_step = |x: f64| if t_len == 0 { 0.0 } else { x / t_len as f64 };

    let mut samples_per_agent = vec![0u64; n];
    let mut time_per_agent = vec![0.0f64; n];
    let mut waits = vec![0u64; n];
    let mut plans = 0u64;
    let mut breakdown = InterruptBreakdown::default();
    let mut resumes = 0u64;
    let mut replans = 0u64;
    for s in record.all_samples() {
        let i = s.agent.index();
        samples_per_agent[i] += 1;
        time_per_agent[i] += s.decision_time;
        if s.stage == StageLabel::W {
            waits[i] += 1;
        }
        for e in &s.plan_events {
            match e {
                PlanEvent::Created => plans += 1,
                PlanEvent::Replanned => {
                    plans += 1;
                    replans += 1;
                }
                PlanEvent::Interrupted => breakdown.message += 1,
                PlanEvent::Resumed => resumes += 1,
                _ => {}
            }
        }
        if s.cause == TransitionCause::ExecutionFailed {
            breakdown.abort += 1;
        }
    }
    let interrupts = breakdown.message + breakdown.abort;
    let rate = |x: u64| if interrupts == 0 { 0.0 } else { x as f64 / interrupts as f64 };

    let mut load = vec![0u64; n];
    for m in record.all_messages() {
        load[m.sender.index()] += 1;
    }
    let messages_total: u64 = load.iter().sum();

    let mut coh = Vec::new();
    for step in &record.steps {
        let mut at_barrier: Vec<Option<&crate::agents::TaskSpecification>> = vec![None; n];
        for s in step.cognitive.iter().filter(|s| s.cause == TransitionCause::BarrierReleased) {
            at_barrier[s.agent.index()] = s.plan.as_ref().filter(|p| p.status == PlanStatus::Active).map(|p| &p.task);
        }
        if let Some(c) = coherence(&at_barrier) {
            coh.push(c);
        }
    }

    let f = |v: &[u64]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    MetricsReport {
        steps: t_len,
        success: record.success(),
        decision_overhead: per_step(samples_per_agent.iter().sum::<u64>() as f64),
        decision_time_avg: mean(&time_per_agent),
        decision_time_std: std(&time_per_agent),
        wait_avg: mean(&f(&waits)),
        wait_std: std(&f(&waits)),
        messages_total,
        load_std: std(&f(&load)),
        load_avg: mean(&f(&load)),
        plans_total: plans,
        interrupts,
        resume_rate: rate(resumes),
        replan_rate: rate(replans + breakdown.abort),
        coherence: if n < 2 { 0.0 } else { mean(&coh) },
        gain_rate: per_step(record.steps.iter().map(|s| s.capability_gains as f64).sum()),
        spatial_ratio: improvement_ratio(record, ConstraintKind::Spatial),
        temporal_ratio: improvement_ratio(record, ConstraintKind::Temporal),
        dependency_ratio: improvement_ratio(record, ConstraintKind::Dependency),
        participation_ratio: improvement_ratio(record, ConstraintKind::Participation),
        interrupt_breakdown: breakdown,
        load_per_agent: load,
    }
}

/// The cognitive and communicative context of a failed episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureWindow {
    pub failure_step: EnvStep,
    /// Up to `k` most recent stage samples per agent.
    pub window: BTreeMap<AgentId, Vec<CognitiveSample>>,
    /// Messages of the final interval.
    pub messages: Vec<Message>,
    pub task: Option<TaskId>,
    pub violated: Vec<ConstraintKind>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("episode succeeded; nothing to attribute")]
    NoFailure,
}

pub fn attribute_failure(record: &EpisodeRecord, k: usize) -> Result<FailureWindow, MetricsError> {
    let failure_step = crate::constraints::failure_time(record).ok_or(MetricsError::NoFailure)?;
    let mut window: BTreeMap<AgentId, Vec<CognitiveSample>> = BTreeMap::new();
    for s in record.all_samples() {
        window.entry(s.agent).or_default().push(s.clone());
    }
    for samples in window.values_mut() {
        let cut = samples.len().saturating_sub(k);
        samples.drain(..cut);
    }
    let last = record.steps.last();
    let focal = last.and_then(|l| focal_verdict(&l.verdicts));
    Ok(FailureWindow {
        failure_step,
        window,
        messages: last.map(|l| l.messages.clone()).unwrap_or_default(),
        task: focal.map(|v| v.task),
        violated: focal.map(|v| v.violated.clone()).unwrap_or_default(),
    })
}
