//! The episode driver: runs the stage machine of every agent against one environment
//! under one communication topology and records an aligned trace.

use thiserror::Error;

use super::{
    transition, CognitiveHistory, CognitiveSample, HistoryItem, InterruptDecision, MaeilError, Plan, PlanEvent, PlanOrigin, PlanStatus,
    StageLabel, TransitionCause,
};
use crate::agents::{InterruptResponse, MessageIntent, PlanResponse, Policy, PolicyContext};
use crate::comm::{authorize_send, truncate_payload, BudgetLedger, Delivery, Message, MessageBuffers, Topology, TopologyKind};
use crate::constraints::{feedback, ConstraintVerdict, FeedbackSnapshot};
use crate::env::{Environment, Grounding, OutcomeKind, Primitive};
use crate::kernel::{AgentId, AlignedStepLog, CognitiveEvent, EnvStep, EpisodeBuilder, EpisodeRecord, KernelError, Termination, TerminationKind};

#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub max_steps: u64,
    pub feedback_enabled: bool,
    /// Most stage samples an agent may emit between two visits to W.
    pub event_budget: u32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_steps: 100,
            feedback_enabled: false,
            event_budget: 16,
        }
    }
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("agent {agent} emitted more than {budget} samples without reaching the barrier at step {step}")]
    Deadlock { agent: AgentId, step: EnvStep, budget: u32 },
    #[error("{policies} policies for {agents} agents")]
    PolicyCount { policies: usize, agents: usize },
    #[error(transparent)]
    Maeil(#[from] MaeilError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Debug, PartialEq)]
enum FillerEnd {
    Done,
    Fail(String),
}

/// What the agent will submit at the next barrier.
#[derive(Clone, Debug, PartialEq)]
enum Pending {
    Emit(Primitive),
    /// The plan could not produce a primitive; idle once, then end it.
    Filler(FillerEnd),
}

struct Slot {
    stage: StageLabel,
    plan: Option<Plan>,
    pending: Option<Pending>,
    history: CognitiveHistory,
    since_w: u32,
    last_outcome: Option<OutcomeKind>,
    /// Decision time not yet charged to a sample.
    carry: f64,
}

enum Lookahead {
    Live,
    Ended,
}

struct Loop<'a> {
    env: &'a mut dyn Environment,
    policies: &'a mut [Box<dyn Policy>],
    topo: &'a Topology,
    cfg: &'a LoopConfig,
    n: usize,
    t: EnvStep,
    next_event: u64,
    next_plan: u64,
    next_message: u64,
    slots: Vec<Slot>,
    buffers: MessageBuffers,
    ledger: BudgetLedger,
    deferred: Vec<(AgentId, Message)>,
    feedback: Vec<FeedbackSnapshot>,
    last_verdicts: Option<Vec<ConstraintVerdict>>,
    samples: Vec<CognitiveSample>,
    messages: Vec<Message>,
    deliveries: Vec<Delivery>,
}

/// Runs one episode to termination and returns the finished record.
pub fn run_episode_loop(
    env: &mut dyn Environment,
    policies: &mut [Box<dyn Policy>],
    topology: &Topology,
    config: &LoopConfig,
    mut builder: EpisodeBuilder,
) -> Result<EpisodeRecord, LoopError> {
    let n = env.n_agents();
    if policies.len() != n {
        return Err(LoopError::PolicyCount {
            policies: policies.len(),
            agents: n,
        });
    }
    if config.max_steps == 0 {
        return Ok(builder.finish(Termination::truncated_at(EnvStep(0))));
    }
    let t = env.t();
    let mut lp = Loop {
        env,
        policies,
        topo: topology,
        cfg: config,
        n,
        t,
        next_event: 0,
        next_plan: 0,
        next_message: 0,
        slots: (0..n)
            .map(|_| Slot {
                stage: StageLabel::R,
                plan: None,
                pending: None,
                history: CognitiveHistory::default(),
                since_w: 0,
                last_outcome: None,
                carry: 0.0,
            })
            .collect(),
        buffers: MessageBuffers::new(n),
        ledger: BudgetLedger::new(n),
        deferred: Vec::new(),
        feedback: Vec::new(),
        last_verdicts: None,
        samples: Vec::new(),
        messages: Vec::new(),
        deliveries: Vec::new(),
    };
    for i in 0..n {
        lp.emit(AgentId(i as u32), StageLabel::R, TransitionCause::Init, vec![], 0.0)?;
    }
    loop {
        let log = lp.interval()?;
        let termination = log.termination;
        builder.append_log(log)?;
        if let Some(term) = termination {
            return Ok(builder.finish(term));
        }
    }
}

impl<'a> Loop<'a> {
    fn agents(&self) -> Vec<AgentId> {
        (0..self.n as u32).map(AgentId).collect()
    }

    fn stage(&self, a: AgentId) -> StageLabel {
        self.slots[a.index()].stage
    }

    fn event(&mut self) -> CognitiveEvent {
        let e = CognitiveEvent(self.next_event);
        self.next_event += 1;
        e
    }

    fn emit(&mut self, a: AgentId, stage: StageLabel, cause: TransitionCause, plan_events: Vec<PlanEvent>, time: f64) -> Result<CognitiveEvent, LoopError> {
        let slot = &self.slots[a.index()];
        if cause != TransitionCause::Init {
            let to = transition(slot.stage, cause)?;
            debug_assert_eq!(to, stage);
        }
        let event = self.event();
        let slot = &mut self.slots[a.index()];
        slot.stage = stage;
        if stage == StageLabel::W {
            slot.since_w = 0;
        } else {
            slot.since_w += 1;
            if slot.since_w > self.cfg.event_budget {
                return Err(LoopError::Deadlock {
                    agent: a,
                    step: self.t,
                    budget: self.cfg.event_budget,
                });
            }
        }
        let decision_time = time + std::mem::take(&mut slot.carry);
        let plan = slot.plan.as_ref().map(Plan::view);
        slot.history.push(HistoryItem::Stage {
            event,
            step: self.t,
            stage,
            task: plan.as_ref().map(|p| p.task.task.clone()),
        });
        self.samples.push(CognitiveSample {
            event,
            agent: a,
            stage,
            cause,
            plan,
            plan_events,
            decision_time,
        });
        Ok(event)
    }

    fn set_plan_status(&mut self, a: AgentId, status: PlanStatus) -> Result<(), LoopError> {
        if let Some(p) = self.slots[a.index()].plan.as_mut() {
            p.set_status(status)?;
        }
        Ok(())
    }

    fn end_plan(&mut self, a: AgentId, ok: bool) -> Result<(), LoopError> {
        let (status, event, cause) = if ok {
            (PlanStatus::TerminatedSuccess, PlanEvent::TerminatedSuccess, TransitionCause::ExecutionDone)
        } else {
            (PlanStatus::TerminatedFailure, PlanEvent::TerminatedFailure, TransitionCause::ExecutionFailed)
        };
        self.set_plan_status(a, status)?;
        self.slots[a.index()].pending = None;
        self.emit(a, StageLabel::R, cause, vec![event], 0.0)?;
        Ok(())
    }

    /// Decides what follows the primitive just executed. Ends the plan (X to R) when
    /// nothing follows; otherwise caches the next primitive and leaves the agent in X.
    fn lookahead(&mut self, a: AgentId) -> Result<Lookahead, LoopError> {
        let i = a.index();
        match self.slots[i].pending.take() {
            Some(Pending::Filler(FillerEnd::Done)) => {
                self.end_plan(a, true)?;
                return Ok(Lookahead::Ended);
            }
            Some(Pending::Filler(FillerEnd::Fail(reason))) => {
                tracing::debug!(agent = %a, %reason, "plan could not start");
                self.end_plan(a, false)?;
                return Ok(Lookahead::Ended);
            }
            _ => {}
        }
        if self.slots[i].last_outcome == Some(OutcomeKind::Failure) {
            self.end_plan(a, false)?;
            return Ok(Lookahead::Ended);
        }
        loop {
            let Some(plan) = self.slots[i].plan.as_mut() else {
                self.emit(a, StageLabel::R, TransitionCause::ExecutionDone, vec![], 0.0)?;
                return Ok(Lookahead::Ended);
            };
            let Some(concept) = plan.current().cloned() else {
                return self.end_plan(a, true).map(|_| Lookahead::Ended);
            };
            let (g, progress) = self.env.ground(a, &concept, &plan.progress);
            match g {
                Grounding::Emit(p) => {
                    plan.progress = progress;
                    self.slots[i].pending = Some(Pending::Emit(p));
                    return Ok(Lookahead::Live);
                }
                Grounding::Complete => {
                    plan.cursor += 1;
                    plan.progress = Default::default();
                }
                Grounding::Fail(reason) => {
                    tracing::debug!(agent = %a, %reason, "grounding failed");
                    return self.end_plan(a, false).map(|_| Lookahead::Ended);
                }
            }
        }
    }

    fn resolve_x(&mut self, a: AgentId) -> Result<(), LoopError> {
        if let Lookahead::Live = self.lookahead(a)? {
            self.emit(a, StageLabel::W, TransitionCause::StepCompleted, vec![], 0.0)?;
        }
        Ok(())
    }

    /// Grounds a fresh plan up to its first primitive.
    fn prepare(&self, a: AgentId, mut plan: Plan) -> (Plan, Pending) {
        let mut probe = plan.clone();
        loop {
            let Some(concept) = probe.current().cloned() else {
                return (plan, Pending::Filler(FillerEnd::Done));
            };
            match self.env.ground(a, &concept, &probe.progress) {
                (Grounding::Emit(p), progress) => {
                    probe.progress = progress;
                    plan = probe;
                    return (plan, Pending::Emit(p));
                }
                (Grounding::Complete, _) => {
                    probe.cursor += 1;
                    probe.progress = Default::default();
                }
                (Grounding::Fail(reason), _) => return (plan, Pending::Filler(FillerEnd::Fail(reason))),
            }
        }
    }

    fn sanitize(&self, a: AgentId, resp: PlanResponse) -> PlanResponse {
        match resp.validate(self.env.kind()) {
            Ok(()) if !resp.actions.is_empty() => resp,
            Ok(()) => PlanResponse::idle(self.env.kind(), "empty plan"),
            Err(e) => {
                tracing::warn!(agent = %a, error = %e, "policy returned an invalid plan; idling");
                PlanResponse::idle(self.env.kind(), "invalid plan")
            }
        }
    }

    fn install(&mut self, a: AgentId, resp: PlanResponse, origin: PlanOrigin) {
        let plan = Plan::new(self.next_plan, resp.task, resp.actions, CognitiveEvent(self.next_event), origin);
        self.next_plan += 1;
        let (plan, pending) = self.prepare(a, plan);
        let slot = &mut self.slots[a.index()];
        slot.plan = Some(plan);
        slot.pending = Some(pending);
    }

    fn take_inbox(&mut self, a: AgentId) -> Vec<Message> {
        let msgs = self.buffers.read_all(a);
        for m in &msgs {
            self.slots[a.index()].history.push(HistoryItem::Received { message: m.clone() });
        }
        msgs
    }

    fn visible_feedback(&self, a: AgentId) -> &[FeedbackSnapshot] {
        match self.topo.kind {
            TopologyKind::Centralized if a != self.topo.leader => &[],
            _ => &self.feedback,
        }
    }

    fn context<'c>(&'c self, a: AgentId, obs: &'c crate::env::Observation, inbox: &'c [Message]) -> PolicyContext<'c> {
        let slot = &self.slots[a.index()];
        PolicyContext {
            agent: a,
            n_agents: self.n,
            env: self.env.kind(),
            step: self.t,
            stage: slot.stage,
            role: self.topo.role(a),
            env_prompt: self.env.prompt(),
            observation: obs,
            history: &slot.history,
            inbox,
            plan: None,
            feedback: self.visible_feedback(a),
        }
    }

    fn plan_agent(&mut self, a: AgentId, mut inbox: Vec<Message>) -> Result<(), LoopError> {
        inbox.extend(self.take_inbox(a));
        let obs = self.env.observe(a);
        let view = self.slots[a.index()].plan.as_ref().map(Plan::view);
        let policies = std::mem::take(&mut self.policies);
        let mut ctx = self.context(a, &obs, &inbox);
        ctx.plan = view.as_ref();
        let d = policies[a.index()].decide_plan(&ctx);
        self.policies = policies;
        let resp = self.sanitize(a, d.value);
        self.install(a, resp, PlanOrigin::New);
        self.emit(a, StageLabel::W, TransitionCause::PlanCommitted, vec![PlanEvent::Created], d.elapsed)?;
        Ok(())
    }

    fn interrupt_agent(&mut self, a: AgentId, mut inbox: Vec<Message>) -> Result<(), LoopError> {
        inbox.extend(self.take_inbox(a));
        let obs = self.env.observe(a);
        let view = self.slots[a.index()].plan.as_ref().map(Plan::view);
        let policies = std::mem::take(&mut self.policies);
        let mut ctx = self.context(a, &obs, &inbox);
        ctx.plan = view.as_ref();
        let d = policies[a.index()].decide_interrupt(&ctx);
        self.policies = policies;
        let InterruptResponse { decision, new_plan, .. } = d.value;
        match (decision, new_plan) {
            (InterruptDecision::Replan, Some(resp)) => {
                self.set_plan_status(a, PlanStatus::TerminatedFailure)?;
                let resp = self.sanitize(a, resp);
                self.install(a, resp, PlanOrigin::Replanned);
                self.emit(
                    a,
                    StageLabel::W,
                    TransitionCause::InterruptResolved(InterruptDecision::Replan),
                    vec![PlanEvent::Replanned],
                    d.elapsed,
                )?;
            }
            _ => {
                if let Some(p) = self.slots[a.index()].plan.as_mut() {
                    p.set_status(PlanStatus::Active)?;
                    p.origin = PlanOrigin::Resumed;
                }
                self.emit(
                    a,
                    StageLabel::W,
                    TransitionCause::InterruptResolved(InterruptDecision::Resume),
                    vec![PlanEvent::Resumed],
                    d.elapsed,
                )?;
            }
        }
        Ok(())
    }

    fn interrupt(&mut self, a: AgentId) -> Result<(), LoopError> {
        self.set_plan_status(a, PlanStatus::Interrupted)?;
        self.emit(a, StageLabel::I, TransitionCause::MessageArrived, vec![PlanEvent::Interrupted], 0.0)?;
        Ok(())
    }

    fn deliver(&mut self, to: AgentId, message: Message, deferred: bool) -> Result<(), LoopError> {
        if !self.ledger.try_receive(self.topo, to) {
            self.deferred.push((to, message));
            return Ok(());
        }
        let id = message.id;
        match self.stage(to) {
            StageLabel::W => {
                self.buffers.deliver(to, message);
                self.record_delivery(id, to, deferred);
                self.interrupt(to)?;
            }
            StageLabel::X => match self.lookahead(to)? {
                Lookahead::Live => {
                    self.buffers.deliver(to, message);
                    self.record_delivery(id, to, deferred);
                    self.interrupt(to)?;
                }
                Lookahead::Ended => {
                    self.buffers.deliver(to, message);
                    self.record_delivery(id, to, deferred);
                }
            },
            StageLabel::R | StageLabel::I => {
                self.buffers.deliver(to, message);
                self.record_delivery(id, to, deferred);
            }
        }
        Ok(())
    }

    fn record_delivery(&mut self, message: u64, recipient: AgentId, deferred: bool) {
        let event = self.event();
        self.deliveries.push(Delivery {
            message,
            recipient,
            event,
            deferred,
        });
    }

    /// Asks `a` for a message and sends it. Broadcasts and replies always go to
    /// `allowed` and fall back to `default` when the policy stays silent.
    fn send(&mut self, a: AgentId, intent: MessageIntent, allowed: &[AgentId], inbox: &[Message], default: Option<&str>) -> Result<(), LoopError> {
        if allowed.is_empty() {
            return Ok(());
        }
        let obs = self.env.observe(a);
        let view = self.slots[a.index()].plan.as_ref().map(Plan::view);
        let policies = std::mem::take(&mut self.policies);
        let mut ctx = self.context(a, &obs, inbox);
        ctx.plan = view.as_ref();
        let d = policies[a.index()].compose_message(&ctx, intent, allowed);
        self.policies = policies;
        self.slots[a.index()].carry += d.elapsed;
        let (recipients, content) = match (intent, d.value) {
            (MessageIntent::Free, Some(resp)) => match resp.resolve(a, self.n) {
                Ok(r) => (r, resp.content),
                Err(e) => {
                    tracing::warn!(agent = %a, error = %e, "dropping message with bad recipients");
                    return Ok(());
                }
            },
            (MessageIntent::Free, None) => return Ok(()),
            (_, Some(resp)) => (allowed.to_vec(), resp.content),
            (_, None) => match default {
                Some(text) => (allowed.to_vec(), text.to_string()),
                None => return Ok(()),
            },
        };
        if let Err(e) = authorize_send(self.topo, &mut self.ledger, a, &recipients) {
            tracing::warn!(agent = %a, error = %e, "dropping unauthorized message");
            return Ok(());
        }
        let (payload, cut) = truncate_payload(&content);
        if cut {
            tracing::debug!(agent = %a, "message payload truncated");
        }
        let attach = self.cfg.feedback_enabled && self.topo.kind == TopologyKind::Centralized && a == self.topo.leader && intent == MessageIntent::Broadcast;
        let message = Message {
            id: self.next_message,
            sender: a,
            recipients: recipients.clone(),
            payload,
            send_event: self.event(),
            env_step: self.t,
            feedback: if attach { self.feedback.clone() } else { Vec::new() },
        };
        self.next_message += 1;
        self.messages.push(message.clone());
        for r in recipients {
            self.deliver(r, message.clone(), false)?;
        }
        Ok(())
    }

    fn settle(&mut self, a: AgentId) -> Result<(), LoopError> {
        loop {
            match self.stage(a) {
                StageLabel::W => return Ok(()),
                StageLabel::X => self.resolve_x(a)?,
                StageLabel::R => self.plan_agent(a, Vec::new())?,
                StageLabel::I => self.interrupt_agent(a, Vec::new())?,
            }
        }
    }

    fn act(&mut self, a: AgentId, inbox: Vec<Message>) -> Result<(), LoopError> {
        match self.stage(a) {
            StageLabel::R => self.plan_agent(a, inbox),
            StageLabel::I => self.interrupt_agent(a, inbox),
            _ => Ok(()),
        }
    }

    fn debate(&mut self) -> Result<(), LoopError> {
        let order = self.topo.order.clone();
        let first = order[0];
        if self.stage(first) == StageLabel::X {
            self.resolve_x(first)?;
        }
        if self.stage(first) == StageLabel::R {
            for (pos, &sp) in order.iter().enumerate() {
                if self.stage(sp) == StageLabel::X {
                    self.resolve_x(sp)?;
                }
                let inbox = self.take_inbox(sp);
                if pos + 1 < order.len() {
                    self.send(sp, MessageIntent::Broadcast, &order[pos + 1..], &inbox, Some("no comment"))?;
                }
                self.act(sp, inbox)?;
            }
        }
        for a in self.agents() {
            self.settle(a)?;
        }
        Ok(())
    }

    fn centralized(&mut self) -> Result<(), LoopError> {
        let leader = self.topo.leader;
        if self.stage(leader) == StageLabel::X {
            self.resolve_x(leader)?;
        }
        if self.stage(leader) == StageLabel::R {
            let inbox = self.take_inbox(leader);
            let followers = self.topo.followers();
            self.send(leader, MessageIntent::Broadcast, &followers, &inbox, Some("proceed"))?;
            for &f in &followers {
                if self.stage(f) == StageLabel::X {
                    self.resolve_x(f)?;
                }
                let fin = self.take_inbox(f);
                self.send(f, MessageIntent::Reply, &[leader], &fin, Some("ack"))?;
                self.act(f, fin)?;
            }
            self.plan_agent(leader, inbox)?;
        }
        for a in self.agents() {
            self.settle(a)?;
        }
        Ok(())
    }

    fn decentralized(&mut self) -> Result<(), LoopError> {
        let agents = self.agents();
        while agents.iter().any(|&a| self.stage(a) != StageLabel::W) {
            for &a in &agents {
                match self.stage(a) {
                    StageLabel::W => {}
                    StageLabel::X => self.resolve_x(a)?,
                    StageLabel::R | StageLabel::I => {
                        let inbox = self.take_inbox(a);
                        let peers: Vec<AgentId> = agents.iter().copied().filter(|&b| b != a).collect();
                        self.send(a, MessageIntent::Free, &peers, &inbox, None)?;
                        self.act(a, inbox)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn refresh_feedback(&mut self) {
        self.feedback.clear();
        if !self.cfg.feedback_enabled {
            return;
        }
        let verdicts = match &self.last_verdicts {
            Some(v) => v.clone(),
            None => self.env.current_verdicts(),
        };
        let tasks = self.env.active_tasks();
        for v in &verdicts {
            if let Some(task) = tasks.iter().find(|t| t.id == v.task) {
                if let Ok(snap) = feedback(task, v, true) {
                    self.feedback.push(snap);
                }
            }
        }
    }

    /// One interval of cognition followed by one environment step.
    fn interval(&mut self) -> Result<AlignedStepLog, LoopError> {
        self.ledger.reset();
        for (to, m) in std::mem::take(&mut self.deferred) {
            self.deliver(to, m, true)?;
        }
        self.refresh_feedback();
        match self.topo.kind {
            TopologyKind::Individual => {
                for a in self.agents() {
                    self.settle(a)?;
                }
            }
            TopologyKind::Debate => self.debate()?,
            TopologyKind::Centralized => self.centralized()?,
            TopologyKind::Decentralized => self.decentralized()?,
        }

        let mut joint = Vec::with_capacity(self.n);
        for a in self.agents() {
            self.emit(a, StageLabel::X, TransitionCause::BarrierReleased, vec![], 0.0)?;
            let p = match &self.slots[a.index()].pending {
                Some(Pending::Emit(p)) => p.clone(),
                _ => self.env.idle(),
            };
            joint.push(p);
        }
        let state_before = self.env.snapshot();
        let report = self.env.step(&joint);
        let state_after = self.env.snapshot();
        for o in &report.outcomes {
            let slot = &mut self.slots[o.agent.index()];
            slot.last_outcome = Some(o.kind);
            slot.history.push(HistoryItem::Outcome {
                step: self.t,
                detail: format!("{:?}: {}", o.kind, o.detail),
            });
        }
        let next = EnvStep(self.t.0 + 1);
        let termination = if report.success {
            Some(Termination {
                kind: TerminationKind::Success,
                step: next,
                success: true,
            })
        } else if self.policies.iter().any(|p| p.resigned(next)) {
            Some(Termination {
                kind: TerminationKind::AgentTerminated,
                step: next,
                success: false,
            })
        } else if next.0 >= self.cfg.max_steps {
            Some(Termination::truncated_at(next))
        } else {
            None
        };
        let log = AlignedStepLog {
            t: self.t,
            cognitive: std::mem::take(&mut self.samples),
            messages: std::mem::take(&mut self.messages),
            deliveries: std::mem::take(&mut self.deliveries),
            state_before,
            joint_action: joint,
            outcomes: report.outcomes,
            state_after,
            verdicts: report.verdicts.clone(),
            completed_tasks: report.completed_tasks,
            capability_gains: report.capability_gains,
            reward: report.reward,
            termination,
        };
        self.last_verdicts = Some(report.verdicts);
        self.t = next;
        Ok(log)
    }
}
