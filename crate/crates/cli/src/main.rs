use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emcoop::comm::{TopologyConfig, TopologyKind};
use emcoop::env::{Difficulty, EnvKind};
use emcoop::harness::{self, HarnessError, RunConfig, SweepSpec, DEFAULT_SEEDS_PER_CELL};
use emcoop::kernel::AgentId;
use emcoop::metrics;

#[derive(Parser)]
#[command(name = "emcoop", version, about = "Run and analyse multi-agent cooperation episodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and print its metrics report.
    Run(RunArgs),
    /// Run every topology x difficulty x team size cell over several seeds.
    Sweep(SweepArgs),
    /// Compare a feedback-conditioned arm against a baseline on paired seeds.
    FeedbackGap(GapArgs),
    /// Extract failure windows and the violated-constraint histogram from traces.
    Attribute(AttributeArgs),
    /// Recompute the metrics report from a trace file.
    Metrics(MetricsArgs),
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// YAML, TOML or JSON file with RunConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    difficulty: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    topology: Option<String>,
    /// Centralized leader index.
    #[arg(long)]
    leader: Option<u32>,
    /// Debate speaking order, e.g. 2,0,1.
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<u32>>,
    /// Decentralized per-step message budget.
    #[arg(long)]
    budget: Option<u32>,
    /// scripted:<policy> or remote.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    feedback: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Print the CSV row instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "individual,debate,centralized,decentralized")]
    topologies: Vec<String>,
    /// Defaults to the base difficulty.
    #[arg(long, value_delimiter = ',')]
    difficulties: Option<Vec<String>>,
    /// Defaults to the base team size.
    #[arg(long, value_delimiter = ',')]
    team_sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_SEEDS_PER_CELL)]
    seeds_per_cell: usize,
    #[arg(long, default_value_t = 0)]
    sweep_seed: u64,
}

#[derive(Args)]
struct GapArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Number of paired seeds, starting at --seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value = "scripted:follow-feedback")]
    feedback_backend: String,
    #[arg(long, default_value = "scripted:greedy-collector")]
    baseline_backend: String,
}

#[derive(Args)]
struct AttributeArgs {
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Stage samples kept per agent before the failure.
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Args)]
struct MetricsArgs {
    trace: PathBuf,
    #[arg(long)]
    csv: bool,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation(msg.into())
}

fn build_config(a: &ConfigArgs) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(
            EnvKind::Cube,
            Difficulty::Easy,
            2,
            TopologyConfig::of(TopologyKind::Individual),
            "scripted:oracle-coordinator",
            0,
        ),
    };
    if let Some(e) = &a.env {
        cfg.env = EnvKind::parse(e).ok_or_else(|| bad(format!("unknown env {e:?}")))?;
    }
    if let Some(d) = &a.difficulty {
        cfg.difficulty = Difficulty::parse(d).ok_or_else(|| bad(format!("unknown difficulty {d:?}")))?;
    }
    if let Some(n) = a.agents {
        cfg.n_agents = n;
    }
    if let Some(t) = &a.topology {
        cfg.topology = TopologyConfig::of(TopologyKind::parse(t).ok_or_else(|| bad(format!("unknown topology {t:?}")))?);
    }
    if let Some(l) = a.leader {
        cfg.topology.leader = Some(AgentId(l));
    }
    if let Some(o) = &a.order {
        cfg.topology.order = Some(o.iter().map(|&i| AgentId(i)).collect());
    }
    if let Some(b) = a.budget {
        cfg.topology.budget = Some(b);
    }
    if let Some(b) = &a.backend {
        cfg.backend = b.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_steps {
        cfg.max_steps = Some(m);
    }
    if a.feedback {
        cfg.feedback_enabled = true;
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Writes to stdout, ignoring a reader that went away (e.g. `| head`).
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(a) => {
            let cfg = build_config(&a.cfg)?;
            let out = harness::run(&cfg)?;
            if a.csv {
                emit(&out.report.to_csv());
            } else {
                emit(&format!("{}\n", out.report.to_json()));
            }
        }
        Command::Sweep(a) => {
            let base = build_config(&a.cfg)?;
            let topologies = a
                .topologies
                .iter()
                .map(|t| TopologyKind::parse(t).map(TopologyConfig::of).ok_or_else(|| bad(format!("unknown topology {t:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let difficulties = match &a.difficulties {
                Some(ds) => ds
                    .iter()
                    .map(|d| Difficulty::parse(d).ok_or_else(|| bad(format!("unknown difficulty {d:?}"))))
                    .collect::<Result<Vec<_>, _>>()?,
                None => vec![base.difficulty],
            };
            let spec = SweepSpec {
                agent_counts: a.team_sizes.clone().unwrap_or(vec![base.n_agents]),
                base,
                topologies,
                difficulties,
                seeds_per_cell: a.seeds_per_cell,
                sweep_seed: a.sweep_seed,
            };
            let result = harness::sweep(&spec)?;
            if let Some(dir) = &spec.base.out {
                write(&dir.join("sweep.json"), &json(&result))?;
                write(&dir.join("sweep.csv"), &result.to_csv())?;
            }
            emit(&result.to_csv());
        }
        Command::FeedbackGap(a) => {
            let base = build_config(&a.cfg)?;
            let seeds: Vec<u64> = (base.seed..base.seed + a.seeds).collect();
            let gap = harness::feedback_gap(&base, &seeds, &a.feedback_backend, &a.baseline_backend)?;
            if let Some(dir) = &base.out {
                write(&dir.join("feedback_gap.json"), &json(&gap))?;
            }
            emit(&format!("{}\n", json(&gap)));
        }
        Command::Attribute(a) => {
            let records = a
                .traces
                .iter()
                .map(|p| harness::read_trace(p).map(|r| (p.display().to_string(), r)))
                .collect::<Result<Vec<_>, _>>()?;
            let report = harness::attribute(records.iter().map(|(s, r)| (s.clone(), r)), a.k)?;
            emit(&format!("{}\n", json(&report)));
        }
        Command::Metrics(a) => {
            let record = harness::read_trace(&a.trace)?;
            let report = metrics::compute(&record);
            if a.csv {
                emit(&report.to_csv());
            } else {
                emit(&format!("{}\n", report.to_json()));
            }
        }
        Command::Validate { config } => {
            RunConfig::load(&config)?.validate()?;
            emit("ok\n");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
