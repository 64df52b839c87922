//! Identifiers, the dual clock, and the aligned per-step episode log.
//!
//! Cognitive time is a logical counter shared by every stage sample, message
//! send and message delivery of an episode. Environment time advances once per
//! joint primitive step. [`ClockMap`] relates the two: step `t` is recorded as
//! completed at the value the event counter held when the step finished, so
//! the interval `I_t` is every event numbered in `[completed(t), completed(t+1))`.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::comm::{Delivery, Message};
use crate::constraints::ConstraintVerdict;
use crate::env::{ExecOutcome, Primitive};
use crate::maeil::CognitiveSample;

pub const TRACE_SCHEMA_VERSION: &str = "emcoop-trace/1";

macro_rules! small_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            /// Stable string alias, e.g. `agent_0`.
            pub fn alias(self) -> String {
                format!(concat!($prefix, "_{}"), self.0)
            }

            pub fn parse_alias(s: &str) -> Option<Self> {
                s.strip_prefix(concat!($prefix, "_"))
                    .and_then(|rest| rest.parse().ok())
                    .map($name)
            }

            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "_{}"), self.0)
            }
        }
    };
}

small_id!(
    /// Agent identifier. The numeric order is the tie-breaking priority everywhere.
    AgentId,
    "agent"
);
small_id!(TaskId, "task");
small_id!(BlockId, "block");

/// Environment step index `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvStep(pub u64);

/// Position on the cognitive clock. Strictly increasing across an episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CognitiveEvent(pub u64);

impl fmt::Display for EnvStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

/// Maps cognitive events onto the environment step they precede.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockMap {
    completed: Vec<(EnvStep, CognitiveEvent)>,
}

impl Default for ClockMap {
    fn default() -> Self {
        Self::new()
    }
}

impl ClockMap {
    /// Step 0 completes at event 0, so the map is total from episode start.
    pub fn new() -> Self {
        Self {
            completed: vec![(EnvStep(0), CognitiveEvent(0))],
        }
    }

    pub fn from_completions(completed: Vec<(EnvStep, CognitiveEvent)>) -> Result<Self, KernelError> {
        if completed.first() != Some(&(EnvStep(0), CognitiveEvent(0))) {
            return Err(KernelError::Schema("clock map must start with (0, 0)".into()));
        }
        for pair in completed.windows(2) {
            if pair[1].0 .0 != pair[0].0 .0 + 1 || pair[1].1 < pair[0].1 {
                return Err(KernelError::Schema("clock map completions out of order".into()));
            }
        }
        Ok(Self { completed })
    }

    /// Records that `step` finished when the event counter read `at`.
    pub fn record_completion(&mut self, step: EnvStep, at: CognitiveEvent) -> Result<(), KernelError> {
        let (last_step, last_event) = *self.completed.last().expect("clock map is never empty");
        if step.0 != last_step.0 + 1 {
            return Err(KernelError::StepMismatch {
                expected: last_step.0 + 1,
                got: step.0,
            });
        }
        if at < last_event {
            return Err(KernelError::Schema("completion event moved backwards".into()));
        }
        self.completed.push((step, at));
        Ok(())
    }

    /// `κ(event)`: the largest step whose completion event is at or before `event`.
    pub fn align(&self, event: CognitiveEvent) -> EnvStep {
        let idx = self.completed.partition_point(|&(_, at)| at <= event);
        // idx >= 1 because completed[0] is (0, 0) and every event is >= 0.
        self.completed[idx - 1].0
    }

    pub fn completions(&self) -> &[(EnvStep, CognitiveEvent)] {
        &self.completed
    }

    pub fn last_step(&self) -> EnvStep {
        self.completed.last().expect("clock map is never empty").0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationKind {
    Success,
    Truncation,
    /// An agent reported termination before the team objective was reached.
    AgentTerminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Termination {
    pub kind: TerminationKind,
    pub step: EnvStep,
    pub success: bool,
}

impl Termination {
    pub fn truncated_at(step: EnvStep) -> Self {
        Self {
            kind: TerminationKind::Truncation,
            step,
            success: false,
        }
    }
}

/// One environment transition paired with the cognitive activity of the interval before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedStepLog {
    pub t: EnvStep,
    pub cognitive: Vec<CognitiveSample>,
    pub messages: Vec<Message>,
    pub deliveries: Vec<Delivery>,
    pub state_before: Value,
    pub joint_action: Vec<Primitive>,
    pub outcomes: Vec<ExecOutcome>,
    pub state_after: Value,
    pub verdicts: Vec<ConstraintVerdict>,
    pub completed_tasks: Vec<TaskId>,
    pub capability_gains: u32,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
}

impl AlignedStepLog {
    /// Every cognitive event recorded in this entry: stage samples, sends and deliveries.
    pub fn events(&self) -> impl Iterator<Item = CognitiveEvent> + '_ {
        self.cognitive
            .iter()
            .map(|s| s.event)
            .chain(self.messages.iter().map(|m| m.send_event))
            .chain(self.deliveries.iter().map(|d| d.event))
    }
}

/// First line of every trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: String,
    pub env: String,
    pub difficulty: String,
    pub n_agents: usize,
    pub topology: Value,
    pub seed: u64,
    pub max_steps: u64,
    pub backend: String,
    pub feedback_enabled: bool,
}

/// The standardized record of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub header: TraceHeader,
    pub steps: Vec<AlignedStepLog>,
    pub termination: Termination,
}

impl EpisodeRecord {
    pub fn success(&self) -> bool {
        self.termination.success
    }

    pub fn termination_step(&self) -> EnvStep {
        self.termination.step
    }

    /// `Y_g` for every task that appeared in the episode.
    pub fn outcomes(&self) -> std::collections::BTreeMap<TaskId, bool> {
        let mut out = std::collections::BTreeMap::new();
        for step in &self.steps {
            for v in &step.verdicts {
                out.entry(v.task).or_insert(false);
            }
            for task in &step.completed_tasks {
                out.insert(*task, true);
            }
        }
        out
    }

    /// The per-step satisfied and violated constraint series of one task.
    pub fn cooperation_trace(&self, task: TaskId) -> Vec<Option<&ConstraintVerdict>> {
        self.steps
            .iter()
            .map(|s| s.verdicts.iter().find(|v| v.task == task))
            .collect()
    }

    /// Rebuilds the clock map from the recorded events.
    pub fn clock_map(&self) -> ClockMap {
        let mut map = ClockMap::new();
        let mut next = 0u64;
        for step in &self.steps {
            if let Some(max) = step.events().max() {
                next = next.max(max.0 + 1);
            }
            map.record_completion(EnvStep(step.t.0 + 1), CognitiveEvent(next))
                .expect("steps are contiguous in a valid record");
        }
        map
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &CognitiveSample> {
        self.steps.iter().flat_map(|s| s.cognitive.iter())
    }

    pub fn all_messages(&self) -> impl Iterator<Item = &Message> {
        self.steps.iter().flat_map(|s| s.messages.iter())
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<(), KernelError> {
        let mut writer = TraceWriter::new(out, &self.header)?;
        for step in &self.steps {
            writer.write_step(step)?;
        }
        writer.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, KernelError> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| KernelError::Schema("empty trace file".into()))??;
        let header: TraceHeader = serde_json::from_str(&header_line)?;
        if header.schema_version != TRACE_SCHEMA_VERSION {
            return Err(KernelError::Schema(format!(
                "unsupported schema version {:?}",
                header.schema_version
            )));
        }
        let mut builder = EpisodeBuilder::new(header);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: AlignedStepLog = serde_json::from_str(&line)?;
            builder.append_log(entry)?;
        }
        let termination = match builder.steps.last() {
            None => Termination::truncated_at(EnvStep(0)),
            Some(last) => last.termination.ok_or_else(|| {
                KernelError::Schema("final step carries no termination marker".into())
            })?,
        };
        if termination.step.0 != builder.steps.len() as u64 {
            return Err(KernelError::Schema(format!(
                "termination step {} does not match {} logged steps",
                termination.step.0,
                builder.steps.len()
            )));
        }
        Ok(builder.finish(termination))
    }

    pub fn from_jsonl_str(s: &str) -> Result<Self, KernelError> {
        Self::read_jsonl(std::io::Cursor::new(s))
    }
}

/// Streams a trace file: the header first, then one line per step as it is appended.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: &TraceHeader) -> Result<Self, KernelError> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn write_step(&mut self, step: &AlignedStepLog) -> Result<(), KernelError> {
        serde_json::to_writer(&mut self.out, step)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), KernelError> {
        self.out.flush()?;
        Ok(())
    }
}

/// An episode record under construction.
pub struct EpisodeBuilder {
    header: TraceHeader,
    steps: Vec<AlignedStepLog>,
    sink: Option<TraceWriter<Box<dyn Write + Send>>>,
}

impl EpisodeBuilder {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            steps: Vec::new(),
            sink: None,
        }
    }

    /// Attaches a streaming writer; the header is written immediately.
    pub fn with_sink(header: TraceHeader, out: Box<dyn Write + Send>) -> Result<Self, KernelError> {
        let sink = TraceWriter::new(out, &header)?;
        Ok(Self {
            header,
            steps: Vec::new(),
            sink: Some(sink),
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[AlignedStepLog] {
        &self.steps
    }

    pub fn append_log(&mut self, entry: AlignedStepLog) -> Result<(), KernelError> {
        let expected = self.steps.len() as u64;
        if entry.t.0 != expected {
            return Err(KernelError::StepMismatch {
                expected,
                got: entry.t.0,
            });
        }
        if let Some(sink) = self.sink.as_mut() {
            sink.write_step(&entry)?;
            sink.flush()?;
        }
        self.steps.push(entry);
        Ok(())
    }

    pub fn finish(self, termination: Termination) -> EpisodeRecord {
        EpisodeRecord {
            header: self.header,
            steps: self.steps,
            termination,
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("log entry out of order: expected step {expected}, got {got}")]
    StepMismatch { expected: u64, got: u64 },
    #[error("trace schema error: {0}")]
    Schema(String),
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace json: {0}")]
    Json(#[from] serde_json::Error),
}
