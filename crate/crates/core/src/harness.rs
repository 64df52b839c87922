//! Experiment runner: single episodes, topology sweeps, feedback comparisons and
//! failure attribution over trace files.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{build_policies, AgentError, Backend};
use crate::comm::{CommError, Topology, TopologyConfig};
use crate::constraints::ConstraintKind;
use crate::env::{build_env, cube::Scenario, CoopConfig, Difficulty, EnvError, EnvKind, EnvSpec};
use crate::kernel::{EpisodeBuilder, EpisodeRecord, KernelError, TaskId, TraceHeader, TRACE_SCHEMA_VERSION};
use crate::maeil::{run_episode_loop, LoopConfig, LoopError};
use crate::metrics::{self, FailureWindow, MetricsReport, COLUMNS};

pub const DEFAULT_MAX_STEPS: u64 = 100;
pub const CUBE_AUTO_MAX_STEPS: u64 = 200;
pub const DEFAULT_SEEDS_PER_CELL: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub difficulty: Difficulty,
    pub n_agents: usize,
    pub topology: TopologyConfig,
    /// `scripted:<policy>` or `remote`.
    pub backend: String,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to 100, or 200 for cube auto.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub feedback_enabled: bool,
    /// Directory receiving `trace.jsonl`, `report.json` and `report.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Cooperative-collection rules replacing the craftlite difficulty preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coop: Option<CoopConfig>,
    /// Fixed cube layout replacing random generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_budget: Option<u32>,
}

impl RunConfig {
    pub fn new(env: EnvKind, difficulty: Difficulty, n_agents: usize, topology: TopologyConfig, backend: &str, seed: u64) -> Self {
        Self {
            env,
            difficulty,
            n_agents,
            topology,
            backend: backend.to_string(),
            seed,
            max_steps: None,
            feedback_enabled: false,
            out: None,
            coop: None,
            scenario: None,
            event_budget: None,
        }
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps.unwrap_or(match (self.env, self.difficulty) {
            (EnvKind::Cube, Difficulty::Auto) => CUBE_AUTO_MAX_STEPS,
            _ => DEFAULT_MAX_STEPS,
        })
    }

    /// Reads a config file; the format follows the extension (`.yaml`, `.yml`, `.toml` or `.json`).
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let parsed = match ext {
            "toml" => toml::from_str(&text).map_err(|e| e.to_string()),
            "json" => serde_json::from_str(&text).map_err(|e| e.to_string()),
            "yaml" | "yml" => serde_yaml::from_str(&text).map_err(|e| e.to_string()),
            other => Err(format!("unknown config extension {other:?}")),
        };
        parsed.map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn backend(&self) -> Result<Backend, HarnessError> {
        Backend::parse(&self.backend).map_err(|e| HarnessError::Validation(e.to_string()))
    }

    /// Checks everything that can be checked without building the episode.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Validation(m));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        self.backend()?;
        Topology::new(&self.topology, self.n_agents).map_err(|e| HarnessError::Validation(e.to_string()))?;
        if self.event_budget == Some(0) {
            return bad("event_budget must be positive".into());
        }
        match self.env {
            EnvKind::Craftlite => {
                if self.difficulty == Difficulty::Auto {
                    return bad("craftlite supports easy and hard only".into());
                }
                if self.n_agents > 25 {
                    return bad("craftlite supports at most 25 agents".into());
                }
                if self.scenario.is_some() {
                    return bad("scenario applies to cube only".into());
                }
            }
            EnvKind::Cube => {
                if self.coop.is_some() {
                    return bad("coop rules apply to craftlite only".into());
                }
                if let Some(s) = &self.scenario {
                    if s.agents.len() != self.n_agents {
                        return bad(format!("scenario has {} agents, n_agents is {}", s.agents.len(), self.n_agents));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn header(&self, topology: &Topology) -> TraceHeader {
        TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION.to_string(),
            env: self.env.name().to_string(),
            difficulty: self.difficulty.name().to_string(),
            n_agents: self.n_agents,
            topology: topology.describe(),
            seed: self.seed,
            max_steps: self.max_steps(),
            backend: self.backend.clone(),
            feedback_enabled: self.feedback_enabled,
        }
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            kind: self.env,
            difficulty: self.difficulty,
            n_agents: self.n_agents,
            seed: self.seed,
            coop: self.coop.clone(),
            scenario: self.scenario.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no failing traces to attribute")]
    NoFailures,
}

impl HarnessError {
    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Validation(_)) || matches!(self, HarnessError::Env(EnvError::Config(_) | EnvError::Scenario(_) | EnvError::Unsupported(_)))
    }
}

impl From<CommError> for HarnessError {
    fn from(e: CommError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct RunOutput {
    pub record: EpisodeRecord,
    pub report: MetricsReport,
}

pub const TRACE_FILE: &str = "trace.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Runs one episode. With an output directory the trace is streamed to
/// `trace.jsonl` and the report written next to it.
pub fn run(config: &RunConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let topology = Topology::new(&config.topology, config.n_agents)?;
    let mut env = build_env(&config.spec())?;
    let backend = config.backend()?;
    let mut policies = build_policies(&backend, config.n_agents, config.env, config.seed)?;
    let header = config.header(&topology);
    let builder = match &config.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(TRACE_FILE);
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            EpisodeBuilder::with_sink(header, Box::new(BufWriter::new(file)))?
        }
        None => EpisodeBuilder::new(header),
    };
    let loop_cfg = LoopConfig {
        max_steps: config.max_steps(),
        feedback_enabled: config.feedback_enabled,
        event_budget: config.event_budget.unwrap_or(LoopConfig::default().event_budget),
    };
    let record = run_episode_loop(env.as_mut(), &mut policies, &topology, &loop_cfg, builder)?;
    let report = metrics::compute(&record);
    if let Some(dir) = &config.out {
        if record.steps.is_empty() {
            // The streaming sink only saw the header; make sure the file is complete.
            let path = dir.join(TRACE_FILE);
            fs::write(&path, record.to_jsonl()).map_err(io_err(&path))?;
        }
        let path = dir.join(REPORT_JSON);
        fs::write(&path, report.to_json()).map_err(io_err(&path))?;
        let path = dir.join(REPORT_CSV);
        fs::write(&path, report.to_csv()).map_err(io_err(&path))?;
    }
    Ok(RunOutput { record, report })
}

pub fn read_trace(path: &Path) -> Result<EpisodeRecord, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(EpisodeRecord::read_jsonl(std::io::BufReader::new(file))?)
}

/// Tasks needing at least two agents completed before step `within`.
pub fn cooperative_completions(record: &EpisodeRecord, within: u64) -> usize {
    let mut required: BTreeMap<TaskId, u32> = BTreeMap::new();
    let mut count = 0;
    for step in record.steps.iter().take_while(|s| s.t.0 < within) {
        for task in &step.completed_tasks {
            if required.get(task).is_some_and(|&p| p >= 2) {
                count += 1;
            }
        }
        for v in &step.verdicts {
            required.insert(v.task, v.required);
        }
    }
    count
}

/// Mean and population standard deviation of each metric over a set of reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

impl Aggregate {
    pub fn of(reports: &[MetricsReport]) -> Self {
        let n = reports.len();
        if n == 0 {
            return Self::default();
        }
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        for (j, col) in COLUMNS.iter().enumerate() {
            let xs: Vec<f64> = reports.iter().map(|r| r.values()[j]).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            mean.insert(col.to_string(), m);
            std.insert(col.to_string(), v.sqrt());
        }
        Self {
            episodes: n,
            success_rate: reports.iter().filter(|r| r.success).count() as f64 / n as f64,
            mean,
            std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub topologies: Vec<TopologyConfig>,
    pub difficulties: Vec<Difficulty>,
    pub agent_counts: Vec<usize>,
    pub seeds_per_cell: usize,
    pub sweep_seed: u64,
}

impl SweepSpec {
    pub fn cells(&self) -> Vec<(TopologyConfig, Difficulty, usize)> {
        let mut out = Vec::new();
        for t in &self.topologies {
            for &d in &self.difficulties {
                for &n in &self.agent_counts {
                    out.push((t.clone(), d, n));
                }
            }
        }
        out
    }

    /// Seeds of cell `index`: consecutive blocks offset by the sweep seed, so cells never share a seed.
    pub fn cell_seeds(&self, index: usize) -> Vec<u64> {
        let base = self
            .sweep_seed
            .wrapping_mul(1 << 20)
            .wrapping_add((index * self.seeds_per_cell) as u64);
        (0..self.seeds_per_cell as u64).map(|j| base.wrapping_add(j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub topology: String,
    pub difficulty: Difficulty,
    pub n_agents: usize,
    pub seeds: Vec<u64>,
    pub aggregate: Aggregate,
    /// Violated constraint types of the focal task at failure, over failing episodes.
    pub violated_at_failure: BTreeMap<ConstraintKind, u64>,
    pub errors: Vec<CellError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    /// One row per cell: success rate, error count and the M1–M18 means.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["topology", "difficulty", "n_agents", "episodes", "errors", "success_rate"];
        head.extend(COLUMNS);
        head.extend(["violated_spatial", "violated_temporal", "violated_participation", "violated_dependency"]);
        w.write_record(&head).expect("in-memory write");
        for c in &self.cells {
            let mut row = vec![
                c.topology.clone(),
                c.difficulty.name().to_string(),
                c.n_agents.to_string(),
                c.aggregate.episodes.to_string(),
                c.errors.len().to_string(),
                c.aggregate.success_rate.to_string(),
            ];
            row.extend(COLUMNS.iter().map(|k| c.aggregate.mean.get(*k).copied().unwrap_or(0.0).to_string()));
            row.extend(ConstraintKind::ALL.iter().map(|k| c.violated_at_failure.get(k).copied().unwrap_or(0).to_string()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

/// Runs the full cross product in parallel. Failed episodes are recorded per cell and
/// do not stop the sweep. With `base.out` set, each episode writes to its own subdirectory.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult, HarnessError> {
    if spec.topologies.is_empty() || spec.difficulties.is_empty() || spec.agent_counts.is_empty() || spec.seeds_per_cell == 0 {
        return Err(HarnessError::Validation("sweep needs at least one topology, difficulty, team size and seed".into()));
    }
    let cells = spec.cells();
    let jobs: Vec<(usize, RunConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, (topo, d, n))| {
            spec.cell_seeds(ci).into_iter().map(move |seed| {
                let mut cfg = spec.base.clone();
                cfg.topology = topo.clone();
                cfg.difficulty = *d;
                cfg.n_agents = *n;
                cfg.seed = seed;
                cfg.out = spec
                    .base
                    .out
                    .as_ref()
                    .map(|o| o.join(format!("{}_{}_{}", topo.kind.name(), d.name(), n)).join(format!("seed_{seed}")));
                (ci, cfg)
            })
        })
        .collect();
    for (_, cfg) in &jobs {
        cfg.validate()?;
    }
    let results: Vec<(usize, u64, Result<RunOutput, HarnessError>)> = jobs.into_par_iter().map(|(ci, cfg)| (ci, cfg.seed, run(&cfg))).collect();

    let mut out = Vec::new();
    for (ci, (topo, d, n)) in cells.iter().enumerate() {
        let mut reports = Vec::new();
        let mut errors = Vec::new();
        let mut violated = BTreeMap::new();
        for (_, seed, res) in results.iter().filter(|r| r.0 == ci) {
            match res {
                Ok(o) => {
                    reports.push(o.report.clone());
                    if let Ok(w) = metrics::attribute_failure(&o.record, 1) {
                        for k in w.violated {
                            *violated.entry(k).or_insert(0) += 1;
                        }
                    }
                }
                Err(e) => errors.push(CellError {
                    seed: *seed,
                    error: e.to_string(),
                }),
            }
        }
        out.push(CellResult {
            topology: topo.kind.name().to_string(),
            difficulty: *d,
            n_agents: *n,
            seeds: spec.cell_seeds(ci),
            aggregate: Aggregate::of(&reports),
            violated_at_failure: violated,
            errors,
        });
    }
    Ok(SweepResult { cells: out })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub backend: String,
    pub feedback_enabled: bool,
    pub successes: Vec<bool>,
    /// Cooperative completions within the first 20 steps, per seed.
    pub early_cooperative: Vec<usize>,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackGap {
    pub seeds: Vec<u64>,
    pub with_feedback: Arm,
    pub without_feedback: Arm,
    /// Success rate with feedback minus success rate without.
    pub gap: f64,
}

pub const EARLY_WINDOW: u64 = 20;

fn run_arm(base: &RunConfig, backend: &str, feedback: bool, seeds: &[u64]) -> Result<Arm, HarnessError> {
    let outputs: Vec<Result<RunOutput, HarnessError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.backend = backend.to_string();
            cfg.feedback_enabled = feedback;
            cfg.seed = seed;
            cfg.out = base
                .out
                .as_ref()
                .map(|o| o.join(if feedback { "with_feedback" } else { "without_feedback" }).join(format!("seed_{seed}")));
            run(&cfg)
        })
        .collect();
    let outputs = outputs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<MetricsReport> = outputs.iter().map(|o| o.report.clone()).collect();
    Ok(Arm {
        backend: backend.to_string(),
        feedback_enabled: feedback,
        successes: outputs.iter().map(|o| o.record.success()).collect(),
        early_cooperative: outputs.iter().map(|o| cooperative_completions(&o.record, EARLY_WINDOW)).collect(),
        aggregate: Aggregate::of(&reports),
    })
}

/// Paired comparison on identical seeds: `feedback_backend` with feedback on versus
/// `baseline_backend` with feedback off.
pub fn feedback_gap(base: &RunConfig, seeds: &[u64], feedback_backend: &str, baseline_backend: &str) -> Result<FeedbackGap, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Validation("feedback-gap needs at least one seed".into()));
    }
    let with_feedback = run_arm(base, feedback_backend, true, seeds)?;
    let without_feedback = run_arm(base, baseline_backend, false, seeds)?;
    let gap = with_feedback.aggregate.success_rate - without_feedback.aggregate.success_rate;
    Ok(FeedbackGap {
        seeds: seeds.to_vec(),
        with_feedback,
        without_feedback,
        gap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceAttribution {
    pub source: String,
    pub window: FailureWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub failing: Vec<TraceAttribution>,
    pub succeeded: Vec<String>,
    pub histogram: BTreeMap<ConstraintKind, u64>,
}

impl AttributionReport {
    /// Share of histogram entries of one constraint type.
    pub fn share(&self, kind: ConstraintKind) -> f64 {
        let total: u64 = self.histogram.values().sum();
        if total == 0 {
            0.0
        } else {
            self.histogram.get(&kind).copied().unwrap_or(0) as f64 / total as f64
        }
    }
}

/// Failure windows of the failing records and a histogram of the constraint types
/// violated at failure.
pub fn attribute<'a>(records: impl IntoIterator<Item = (String, &'a EpisodeRecord)>, k: usize) -> Result<AttributionReport, HarnessError> {
    let mut failing = Vec::new();
    let mut succeeded = Vec::new();
    let mut histogram = BTreeMap::new();
    for (source, record) in records {
        match metrics::attribute_failure(record, k) {
            Ok(window) => {
                for kind in &window.violated {
                    *histogram.entry(*kind).or_insert(0) += 1;
                }
                failing.push(TraceAttribution { source, window });
            }
            Err(metrics::MetricsError::NoFailure) => succeeded.push(source),
        }
    }
    if failing.is_empty() {
        return Err(HarnessError::NoFailures);
    }
    Ok(AttributionReport {
        failing,
        succeeded,
        histogram,
    })
}
