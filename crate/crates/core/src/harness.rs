//! Run configuration, seeded runs, experiment matrices and reports.

mod audit;
mod experiment;

pub use audit::{audit, AuditReport};
pub use experiment::{
    experiment, load_matrix, Cell, CellOutcome, ExperimentReport, Matrix, MatrixFile, REPORT_COLUMNS,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{sweep_threshold, sweep_totals, InterruptPolicy, SelfModel, SweepRow, SweepSpec};
use crate::agent::{Agent, AgentConfig, AgentError, PolicyMode, TraceRow};
use crate::interventions::{apply, preset, InterventionConfig};
use crate::planning::PlanSearchParams;
use crate::replay::WanderingParams;
use crate::suffering::{Source, Timescale, TimescaleWeights};
use crate::values::LearningParams;
use crate::world::{LoadError, WorldModel};

/// Bumped whenever a CSV column or summary field changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const EVENT_COLUMNS: [&str; 10] =
    ["run_id", "t", "source", "timescale", "expected", "obtained", "certainty", "attention", "count", "frustration"];

/// A configuration problem, located in the offending file where possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("runtime invariant breached: {0}")]
    Runtime(#[from] AgentError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Output(String),
}

impl HarnessError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
            HarnessError::Io { .. } | HarnessError::Output(_) => 1,
        }
    }

    fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io { context: context.into(), source }
    }
}

/// An intervention by preset name or spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InterventionRef {
    Named(String),
    Inline(InterventionConfig),
}

impl Default for InterventionRef {
    fn default() -> Self {
        InterventionRef::Named("baseline".into())
    }
}

impl InterventionRef {
    pub fn resolve(&self) -> Result<InterventionConfig, String> {
        match self {
            InterventionRef::Named(name) => preset(name).ok_or_else(|| format!("unknown intervention preset {name:?}")),
            InterventionRef::Inline(iv) => {
                iv.validate()?;
                Ok(iv.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// World file, relative to the configuration file.
    pub world: PathBuf,
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub intervention: InterventionRef,
    #[serde(default)]
    pub learning: LearningParams,
    #[serde(default)]
    pub planning: PlanSearchParams,
    #[serde(default = "default_reach")]
    pub reach: usize,
    #[serde(default = "default_goal_threshold")]
    pub goal_threshold: f64,
    #[serde(default)]
    pub wandering: WanderingParams,
    #[serde(default)]
    pub interrupts: InterruptPolicy,
    #[serde(default)]
    pub self_model: SelfModel,
    #[serde(default)]
    pub weights: TimescaleWeights,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    #[serde(default = "default_policy")]
    pub policy: PolicyMode,
}

fn default_reach() -> usize {
    AgentConfig::default().reach
}
fn default_goal_threshold() -> f64 {
    AgentConfig::default().goal_threshold
}
fn default_episode_length() -> usize {
    AgentConfig::default().episode_length
}
fn default_policy() -> PolicyMode {
    PolicyMode::Learn
}

impl RunConfig {
    pub fn new(world: impl Into<PathBuf>, steps: u64, seed: u64) -> Self {
        let a = AgentConfig::default();
        RunConfig {
            world: world.into(),
            steps,
            seed,
            intervention: InterventionRef::default(),
            learning: a.learning,
            planning: a.planning,
            reach: a.reach,
            goal_threshold: a.goal_threshold,
            wandering: a.wandering,
            interrupts: a.interrupts,
            self_model: a.self_model,
            weights: a.weights,
            episode_length: a.episode_length,
            policy: a.policy,
        }
    }

    /// The agent configuration before the intervention is applied.
    pub fn base_agent(&self) -> AgentConfig {
        AgentConfig {
            learning: self.learning,
            planning: self.planning,
            reach: self.reach,
            goal_threshold: self.goal_threshold,
            wandering: self.wandering,
            interrupts: self.interrupts,
            self_model: self.self_model,
            weights: self.weights,
            episode_length: self.episode_length,
            policy: self.policy,
            ..AgentConfig::default()
        }
    }

    pub fn agent_config(&self) -> Result<AgentConfig, String> {
        let iv = self.intervention.resolve()?;
        let cfg = apply(&self.base_agent(), &iv);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 1-based line and column of the first occurrence of `"key"` in `text`.
pub(crate) fn locate(text: &str, key: &str) -> Option<(usize, usize)> {
    let needle = format!("\"{key}\"");
    text.lines().enumerate().find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1)))
}

/// Picks the configuration key a validation message is about.
fn blame<'a>(message: &str, keys: &[&'a str]) -> Option<&'a str> {
    keys.iter().copied().find(|k| message.contains(k))
}

const CONFIG_KEYS: [&str; 34] = [
    "expectation_scale",
    "certainty_scale",
    "attention_scale",
    "self_standard_scale",
    "p_wander_override",
    "realness_override",
    "desire_threshold_delta",
    "p_wander",
    "batch_size",
    "mode_mix",
    "realness",
    "sweep_length",
    "rollout_depth",
    "capacity",
    "alpha",
    "gamma",
    "step_penalty",
    "epsilon",
    "curiosity_kappa",
    "baseline_rate",
    "max_depth",
    "branching_cap",
    "heuristic_weight",
    "threat_threshold",
    "desire_threshold",
    "decay_length",
    "evaluation_window",
    "failure_limit",
    "waiting_stay_prob",
    "reach",
    "episode_length",
    "goal_threshold",
    "intervention",
    "weights",
];

fn config_error(path: &Path, text: &str, message: String) -> ConfigError {
    let at = blame(&message, &CONFIG_KEYS).and_then(|k| locate(text, k));
    ConfigError { path: path.to_path_buf(), line: at.map(|a| a.0), column: at.map(|a| a.1), message }
}

/// Syntax errors keep serde's position; range errors raised while
/// deserializing a section are moved to the offending key when it can be
/// found.
fn json_error(path: &Path, text: &str, e: &serde_json::Error) -> ConfigError {
    let message = e.to_string().split(" at line ").next().unwrap_or_default().to_string();
    let keyed = if e.is_data() { blame(&message, &CONFIG_KEYS).and_then(|k| locate(text, k)) } else { None };
    let (line, column) = keyed.unwrap_or((e.line(), e.column()));
    ConfigError { path: path.to_path_buf(), line: Some(line), column: Some(column), message }
}

/// A run configuration with its world resolved and loaded.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub agent: AgentConfig,
    pub world: WorldModel,
    pub world_path: PathBuf,
}

pub(crate) fn load_world(path: &Path, referenced_from: &Path, text: &str) -> Result<WorldModel, ConfigError> {
    WorldModel::load(path).map_err(|e| match e {
        LoadError::Syntax { line, column, message, .. } => {
            ConfigError { path: path.to_path_buf(), line: Some(line), column: Some(column), message }
        }
        other => {
            let at = locate(text, "world");
            ConfigError {
                path: referenced_from.to_path_buf(),
                line: at.map(|a| a.0),
                column: at.map(|a| a.1),
                message: other.to_string(),
            }
        }
    })
}

/// Parses, validates and resolves a run configuration from `text`, with
/// relative paths taken against `path`'s directory.
pub fn parse_run_config(path: &Path, text: &str) -> Result<LoadedRun, ConfigError> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| json_error(path, text, &e))?;
    let agent = config.agent_config().map_err(|m| config_error(path, text, m))?;
    let world_path = path.parent().unwrap_or(Path::new("")).join(&config.world);
    let world = load_world(&world_path, path, text)?;
    Ok(LoadedRun { config, agent, world, world_path })
}

pub fn load_run_config(path: &Path) -> Result<LoadedRun, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: None,
        column: None,
        message: format!("cannot read: {e}"),
    })?;
    parse_run_config(path, &text)
}

/// Loads the world and threshold policy for a signal-detection sweep.
pub fn load_sweep(world_path: &Path, policy_path: &Path) -> Result<(WorldModel, SweepSpec), ConfigError> {
    let world = load_world(world_path, world_path, "")?;
    let text = fs::read_to_string(policy_path).map_err(|e| ConfigError {
        path: policy_path.to_path_buf(),
        line: None,
        column: None,
        message: format!("cannot read: {e}"),
    })?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| json_error(policy_path, &text, &e))?;
    spec.validate().map_err(|m| {
        let key = ["thresholds", "miss_cost", "false_alarm_cost", "decay_length", "seeds", "episodes", "epsilon"]
            .into_iter()
            .find(|k| m.contains(k));
        let at = key.and_then(|k| locate(&text, k));
        ConfigError { path: policy_path.to_path_buf(), line: at.map(|a| a.0), column: at.map(|a| a.1), message: m }
    })?;
    Ok((world, spec))
}

pub const SWEEP_COLUMNS: [&str; 7] =
    ["threshold", "seed", "alarms", "false_alarms", "misses", "hazard_hits", "realized_cost"];

/// Per-seed rows followed by one `total` row per threshold.
pub fn sweep_csv(world: &WorldModel, spec: &SweepSpec) -> Result<(String, Vec<SweepRow>), HarnessError> {
    let rows = sweep_threshold(world, spec);
    let totals = sweep_totals(&rows, spec);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
    for r in rows.iter().chain(&totals) {
        w.write_record([
            r.threshold.to_string(),
            r.seed.map_or_else(|| "total".to_string(), |s| s.to_string()),
            r.alarms.to_string(),
            r.false_alarms.to_string(),
            r.misses.to_string(),
            r.hazard_hits.to_string(),
            r.realized_cost.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)?;
    Ok((body, totals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub total: f64,
    pub weighted_total: f64,
    pub by_timescale: BTreeMap<String, f64>,
    pub by_source: BTreeMap<String, f64>,
    pub events_by_source: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub schema_version: u32,
    pub run_id: String,
    pub seed: u64,
    pub world: String,
    pub intervention: String,
    pub steps: u64,
    pub episodes: u64,
    pub obtained_reward: f64,
    pub object_reward: f64,
    pub event_count: usize,
    pub totals: Totals,
    pub intentions_reached: u64,
    pub intentions_aborted: u64,
    pub intentions_failed: u64,
    pub threat_interrupts: u64,
    pub desire_interrupts: u64,
    pub wander_fired: u64,
    pub replayed: u64,
    pub imagined: u64,
    pub waiting_steps: u64,
    pub treadmill_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub events_csv: String,
    pub trace_csv: String,
}

fn world_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Executes a run and renders its outputs.
pub fn run(
    agent_cfg: &AgentConfig,
    world: &WorldModel,
    world_name: &str,
    steps: u64,
    seed: u64,
) -> Result<RunOutput, HarnessError> {
    let mut agent = Agent::new(agent_cfg.clone(), world.clone(), seed)?;
    agent.run(steps)?;
    let run_id = format!("{}-{}-{}", agent_cfg.intervention, world_name, seed);
    let summary = summarize(&agent, &run_id, world_name, seed);
    let events_csv = events_csv(&agent, &run_id)?;
    let trace_csv = trace_csv(agent.trace())?;
    Ok(RunOutput { summary, events_csv, trace_csv })
}

pub fn run_loaded(loaded: &LoadedRun) -> Result<RunOutput, HarnessError> {
    run(&loaded.agent, &loaded.world, &world_label(&loaded.world_path), loaded.config.steps, loaded.config.seed)
}

fn summarize(agent: &Agent, run_id: &str, world: &str, seed: u64) -> RunSummary {
    let ledger = agent.ledger();
    let stats = agent.stats();
    let totals = Totals {
        total: ledger.total(),
        weighted_total: ledger.weighted_total(&agent.config().weights),
        by_timescale: Timescale::ALL.iter().map(|t| (t.name().to_string(), ledger.by_timescale(*t))).collect(),
        by_source: Source::ALL.iter().map(|s| (s.name().to_string(), ledger.by_source(*s))).collect(),
        events_by_source: Source::ALL.iter().map(|s| (s.name().to_string(), ledger.count_by_source(*s))).collect(),
    };
    RunSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        run_id: run_id.to_string(),
        seed,
        world: world.to_string(),
        intervention: agent.config().intervention.clone(),
        steps: stats.steps,
        episodes: stats.episodes,
        obtained_reward: stats.obtained_reward,
        object_reward: stats.object_reward,
        event_count: ledger.len(),
        totals,
        intentions_reached: stats.reached,
        intentions_aborted: stats.aborted,
        intentions_failed: stats.failed,
        threat_interrupts: stats.threat_interrupts,
        desire_interrupts: stats.desire_interrupts,
        wander_fired: stats.wander_fired,
        replayed: stats.replayed,
        imagined: stats.imagined,
        waiting_steps: stats.waiting_steps,
        treadmill_loss: stats.treadmill_loss,
    }
}

fn csv_err(e: impl fmt::Display) -> HarnessError {
    HarnessError::Output(format!("csv: {e}"))
}

fn events_csv(agent: &Agent, run_id: &str) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVENT_COLUMNS).map_err(csv_err)?;
    for e in agent.ledger().events() {
        w.write_record([
            run_id.to_string(),
            e.t.to_string(),
            e.source.name().to_string(),
            e.timescale.name().to_string(),
            e.expected.to_string(),
            e.obtained.to_string(),
            e.certainty.to_string(),
            e.attention.to_string(),
            e.count.to_string(),
            e.frustration.to_string(),
        ])
        .map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)
}

fn trace_csv(rows: &[TraceRow]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        // header only
        return Ok(TRACE_HEADER.to_string() + "\n");
    }
    String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)
}

pub const TRACE_HEADER: &str = "t,episode,state,observed,action,decision,reward,expected,threat,desire,plan_terminals,self_eval,meta,wander_fired,replayed,imagined,wander_negative,episode_end,events";

/// Writes `events.csv`, `trace.csv` and `summary.json` into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| HarnessError::io(format!("writing {}", p.display()), e))
    };
    write("events.csv", &out.events_csv)?;
    write("trace.csv", &out.trace_csv)?;
    let json = serde_json::to_string_pretty(&out.summary).map_err(|e| HarnessError::Output(e.to_string()))?;
    write("summary.json", &(json + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor_world() -> WorldModel {
        let mut w = WorldModel::from_ascii(&["S......R"], 1.0, 1.0).unwrap();
        w.slip_probability = 0.2;
        w
    }

    #[test]
    fn zero_steps_is_empty() {
        let out = run(&AgentConfig::default(), &corridor_world(), "c", 0, 1).unwrap();
        assert_eq!(out.events_csv.lines().count(), 1);
        assert_eq!(out.summary.totals.total, 0.0);
        assert_eq!(out.summary.event_count, 0);
        assert_eq!(out.trace_csv.trim(), TRACE_HEADER);
    }

    #[test]
    fn repeat_runs_are_byte_identical() {
        let a = run(&AgentConfig::default(), &corridor_world(), "c", 800, 4).unwrap();
        let b = run(&AgentConfig::default(), &corridor_world(), "c", 800, 4).unwrap();
        assert_eq!(a.events_csv, b.events_csv);
        assert_eq!(a.trace_csv, b.trace_csv);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn trace_header_matches_serialized_rows() {
        let out = run(&AgentConfig::default(), &corridor_world(), "c", 3, 0).unwrap();
        assert_eq!(out.trace_csv.lines().next().unwrap(), TRACE_HEADER);
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let text = "{\n  \"world\": \"w.json\",\n  \"steps\": 10,\n  \"seed\": oops\n}";
        let e = parse_run_config(Path::new("run.json"), text).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.column.is_some());
    }

    #[test]
    fn range_errors_point_at_the_key() {
        let text = "{\n  \"world\": \"w.json\",\n  \"steps\": 10,\n  \"wandering\": {\n    \"p_wander\": 1.5\n  }\n}";
        let e = parse_run_config(Path::new("run.json"), text).unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
        assert!(e.message.contains("p_wander"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "{\"world\": \"w.json\", \"steps\": 1, \"stpes\": 2}";
        assert!(parse_run_config(Path::new("run.json"), text).is_err());
    }

    #[test]
    fn unknown_preset_rejected() {
        let text = "{\n\"world\": \"w.json\",\n\"steps\": 1,\n\"intervention\": \"zen\"\n}";
        let e = parse_run_config(Path::new("run.json"), text).unwrap_err();
        assert_eq!(e.line, Some(4));
    }
}
