//! Invariant checks over a recorded episode.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{transition, PlanEvent, StageLabel, TransitionCause};
use crate::kernel::{AgentId, EpisodeRecord};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "invariant", rename_all = "snake_case")]
pub enum Violation {
    /// A sample does not follow from the agent's previous stage.
    StageLegality { agent: AgentId, event: u64, detail: String },
    /// The environment stepped while an agent was not waiting, or an agent skipped the barrier.
    BarrierSafety { step: u64, agent: AgentId, detail: String },
    /// An interruption without a triggering delivery or without a resolution.
    InterruptCompleteness { agent: AgentId, event: u64, detail: String },
    /// Two live plans at once, or a plan that changed without being committed.
    PlanExclusivity { agent: AgentId, event: u64, detail: String },
    /// Cognitive events that are duplicated, missing or out of step order.
    EventPartition { detail: String },
}

/// Runs every check and returns all violations found, in trace order per check.
pub fn audit(record: &EpisodeRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    check_events(record, &mut out);
    check_stages(record, &mut out);
    check_barrier(record, &mut out);
    check_interrupts(record, &mut out);
    check_plans(record, &mut out);
    out
}

fn check_events(record: &EpisodeRecord, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    let mut floor = 0u64;
    for step in &record.steps {
        let events: Vec<u64> = step.events().map(|e| e.0).collect();
        for &e in &events {
            if !seen.insert(e) {
                out.push(Violation::EventPartition {
                    detail: format!("event {e} recorded twice"),
                });
            }
            if e < floor {
                out.push(Violation::EventPartition {
                    detail: format!("event {e} of step {} precedes an earlier step", step.t.0),
                });
            }
        }
        if let Some(&max) = events.iter().max() {
            floor = floor.max(max + 1);
        }
        let samples: Vec<u64> = step.cognitive.iter().map(|s| s.event.0).collect();
        if samples.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Violation::EventPartition {
                detail: format!("samples of step {} are not in event order", step.t.0),
            });
        }
    }
    if let Some(&max) = seen.iter().next_back() {
        if max + 1 != seen.len() as u64 {
            out.push(Violation::EventPartition {
                detail: format!("{} events recorded but the largest is {max}", seen.len()),
            });
        }
    }
}

fn check_stages(record: &EpisodeRecord, out: &mut Vec<Violation>) {
    let mut stage: BTreeMap<AgentId, StageLabel> = BTreeMap::new();
    for s in record.all_samples() {
        let bad = match (stage.get(&s.agent), s.cause) {
            (None, TransitionCause::Init) if s.stage == StageLabel::R => None,
            (None, _) => Some("first sample is not the initial R".to_string()),
            (Some(_), TransitionCause::Init) => Some("repeated initial sample".to_string()),
            (Some(&from), cause) => match transition(from, cause) {
                Ok(to) if to == s.stage => None,
                Ok(to) => Some(format!("{from:?} on {cause:?} leads to {to:?}, sample says {:?}", s.stage)),
                Err(e) => Some(e.to_string()),
            },
        };
        if let Some(detail) = bad {
            out.push(Violation::StageLegality {
                agent: s.agent,
                event: s.event.0,
                detail,
            });
        }
        stage.insert(s.agent, s.stage);
    }
}

fn check_barrier(record: &EpisodeRecord, out: &mut Vec<Violation>) {
    let n = record.header.n_agents;
    for step in &record.steps {
        if step.joint_action.len() != n {
            out.push(Violation::BarrierSafety {
                step: step.t.0,
                agent: AgentId(0),
                detail: format!("joint action has {} entries for {n} agents", step.joint_action.len()),
            });
        }
        for i in 0..n as u32 {
            let a = AgentId(i);
            let mine: Vec<_> = step.cognitive.iter().filter(|s| s.agent == a).collect();
            let releases = mine.iter().filter(|s| s.cause == TransitionCause::BarrierReleased).count();
            let last_is_release = mine.last().is_some_and(|s| s.cause == TransitionCause::BarrierReleased);
            if releases != 1 || !last_is_release {
                out.push(Violation::BarrierSafety {
                    step: step.t.0,
                    agent: a,
                    detail: format!("{releases} barrier releases; the last sample must be the release"),
                });
            }
        }
    }
}

fn check_interrupts(record: &EpisodeRecord, out: &mut Vec<Violation>) {
    let mut last_event: BTreeMap<AgentId, u64> = BTreeMap::new();
    let mut open: BTreeMap<AgentId, u64> = BTreeMap::new();
    let deliveries: Vec<_> = record.steps.iter().flat_map(|s| s.deliveries.iter()).collect();
    for s in record.all_samples() {
        if s.cause == TransitionCause::MessageArrived {
            let after = last_event.get(&s.agent).copied();
            let triggered = deliveries
                .iter()
                .any(|d| d.recipient == s.agent && d.event < s.event && after.is_none_or(|p| d.event.0 > p));
            if !triggered {
                out.push(Violation::InterruptCompleteness {
                    agent: s.agent,
                    event: s.event.0,
                    detail: "interruption without a delivery".into(),
                });
            }
            open.insert(s.agent, s.event.0);
        } else if matches!(s.cause, TransitionCause::InterruptResolved(_)) {
            open.remove(&s.agent);
        }
        last_event.insert(s.agent, s.event.0);
    }
    for (agent, event) in open {
        out.push(Violation::InterruptCompleteness {
            agent,
            event,
            detail: "interruption never resolved".into(),
        });
    }
}

fn check_plans(record: &EpisodeRecord, out: &mut Vec<Violation>) {
    let mut current: BTreeMap<AgentId, (u64, bool)> = BTreeMap::new();
    for s in record.all_samples() {
        let Some(view) = &s.plan else { continue };
        let terminated = view.status.is_terminated();
        let new_plan = s.plan_events.contains(&PlanEvent::Created) || s.plan_events.contains(&PlanEvent::Replanned);
        match current.get(&s.agent) {
            Some(&(id, _)) if id == view.id => {
                if new_plan {
                    out.push(Violation::PlanExclusivity {
                        agent: s.agent,
                        event: s.event.0,
                        detail: format!("plan {id} created twice"),
                    });
                }
            }
            prev => {
                let prev_live = prev.is_some_and(|&(_, t)| !t);
                let replaced = s.plan_events.contains(&PlanEvent::Replanned);
                if !new_plan || (prev_live && !replaced) {
                    out.push(Violation::PlanExclusivity {
                        agent: s.agent,
                        event: s.event.0,
                        detail: format!("plan {} appears while another plan is live or without being committed", view.id),
                    });
                }
            }
        }
        current.insert(s.agent, (view.id, terminated));
    }
}
