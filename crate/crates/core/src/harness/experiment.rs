//! Interventions x worlds x seeds, run in parallel and reported in a
//! deterministic order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    json_error, load_world, locate, run, world_label, ConfigError, HarnessError, InterventionRef, RunConfig, RunSummary,
};
use crate::agent::AgentConfig;
use crate::interventions::{apply, canonical_suite, InterventionConfig};
use crate::protocols::median;
use crate::suffering::{Source, Timescale};
use crate::world::WorldModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    /// Run configuration supplying the agent sections; its world, seed and
    /// intervention are ignored.
    #[serde(default)]
    pub base: Option<PathBuf>,
    /// Defaults to the canonical suite.
    #[serde(default)]
    pub interventions: Option<Vec<InterventionRef>>,
    pub worlds: Vec<PathBuf>,
    pub seeds: u64,
    #[serde(default)]
    pub first_seed: u64,
    /// Overrides the base configuration's step count.
    #[serde(default)]
    pub steps: Option<u64>,
}

/// One cell of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub intervention: String,
    pub world: String,
    pub seed: u64,
}

pub type CellOutcome = Result<RunSummary, String>;

/// A resolved matrix, ready to run.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub base: AgentConfig,
    pub interventions: Vec<InterventionConfig>,
    /// Worlds that failed to load fail their cells, not the whole matrix.
    pub worlds: Vec<(String, Result<WorldModel, String>)>,
    pub seeds: Vec<u64>,
    pub steps: u64,
}

pub fn load_matrix(path: &Path) -> Result<Matrix, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: None,
        column: None,
        message: format!("cannot read: {e}"),
    })?;
    let file: MatrixFile = serde_json::from_str(&text).map_err(|e| json_error(path, &text, &e))?;
    let at = |key: &str, message: String| {
        let loc = locate(&text, key);
        ConfigError { path: path.to_path_buf(), line: loc.map(|l| l.0), column: loc.map(|l| l.1), message }
    };
    let dir = path.parent().unwrap_or(Path::new(""));
    let (base, base_steps) = match &file.base {
        Some(p) => {
            let p = dir.join(p);
            let base_text =
                fs::read_to_string(&p).map_err(|e| at("base", format!("cannot read {}: {e}", p.display())))?;
            let cfg: RunConfig = serde_json::from_str(&base_text).map_err(|e| json_error(&p, &base_text, &e))?;
            (cfg.base_agent(), Some(cfg.steps))
        }
        None => (AgentConfig::default(), None),
    };
    base.validate().map_err(|m| at("base", m))?;
    let steps = file
        .steps
        .or(base_steps)
        .ok_or_else(|| at("worlds", "no step count: set \"steps\" or a base configuration".into()))?;
    let interventions = match &file.interventions {
        None => canonical_suite(),
        Some(list) => list
            .iter()
            .map(InterventionRef::resolve)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|m| at("interventions", m))?,
    };
    let mut names: Vec<&str> = interventions.iter().map(|i| i.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(at("interventions", "intervention names must be unique".into()));
    }
    if file.worlds.is_empty() || file.seeds == 0 {
        return Err(at("worlds", "matrix needs at least one world and one seed".into()));
    }
    let worlds = file
        .worlds
        .iter()
        .map(|w| {
            let p = dir.join(w);
            (world_label(&p), load_world(&p, path, &text).map_err(|e| e.to_string()))
        })
        .collect();
    Ok(Matrix { base, interventions, worlds, seeds: (file.first_seed..file.first_seed + file.seeds).collect(), steps })
}

pub const REPORT_COLUMNS: [&str; 20] = [
    "intervention",
    "world",
    "seed",
    "status",
    "steps",
    "episodes",
    "obtained_reward",
    "total",
    "weighted_total",
    "step",
    "plan",
    "self_eval",
    "step_loss",
    "plan_loss",
    "self_eval_source",
    "threat_internal",
    "replay",
    "imagination",
    "meta",
    "events",
];

fn numeric_row(s: &RunSummary) -> Vec<f64> {
    let ts = |t: Timescale| s.totals.by_timescale[t.name()];
    let src = |x: Source| s.totals.by_source[x.name()];
    vec![
        s.steps as f64,
        s.episodes as f64,
        s.obtained_reward,
        s.totals.total,
        s.totals.weighted_total,
        ts(Timescale::Step),
        ts(Timescale::Plan),
        ts(Timescale::SelfEval),
        src(Source::StepLoss),
        src(Source::PlanLoss),
        src(Source::SelfEval),
        src(Source::ThreatInternal),
        src(Source::Replayed),
        src(Source::Imagined),
        src(Source::Meta),
        s.event_count as f64,
    ]
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Sorted by intervention, world, seed.
    pub cells: Vec<(Cell, CellOutcome)>,
    pub csv: String,
}

impl ExperimentReport {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|(_, o)| o.is_err()).count()
    }

    /// Medians over completed seeds of one column, per (intervention, world).
    pub fn medians(&self, column: &str) -> BTreeMap<(String, String), f64> {
        let idx = REPORT_COLUMNS.iter().position(|c| *c == column).expect("known column") - 4;
        let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for (cell, outcome) in &self.cells {
            if let Ok(s) = outcome {
                groups.entry((cell.intervention.clone(), cell.world.clone())).or_default().push(numeric_row(s)[idx]);
            }
        }
        groups.into_iter().filter_map(|(k, mut v)| median(&mut v).map(|m| (k, m))).collect()
    }
}

/// Runs every cell, in parallel, and assembles the sorted report.
pub fn experiment(matrix: &Matrix) -> Result<ExperimentReport, HarnessError> {
    let mut cells = Vec::new();
    for iv in &matrix.interventions {
        for (wi, (name, _)) in matrix.worlds.iter().enumerate() {
            for &seed in &matrix.seeds {
                cells.push((iv, wi, Cell { intervention: iv.name.clone(), world: name.clone(), seed }));
            }
        }
    }
    let mut results: Vec<(Cell, CellOutcome)> = cells
        .into_par_iter()
        .map(|(iv, wi, cell)| {
            let outcome = match &matrix.worlds[wi].1 {
                Err(e) => Err(e.clone()),
                Ok(world) => {
                    let cfg = apply(&matrix.base, iv);
                    cfg.validate()
                        .map_err(|e| e.to_string())
                        .and_then(|_| run(&cfg, world, &cell.world, matrix.steps, cell.seed).map_err(|e| e.to_string()))
                        .map(|out| out.summary)
                }
            };
            (cell, outcome)
        })
        .collect();
    results.sort_by(|a, b| (&a.0.intervention, &a.0.world, a.0.seed).cmp(&(&b.0.intervention, &b.0.world, b.0.seed)));
    let csv = render(&results)?;
    Ok(ExperimentReport { cells: results, csv })
}

fn render(results: &[(Cell, CellOutcome)]) -> Result<String, HarnessError> {
    let err = |e: csv::Error| HarnessError::Output(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).map_err(err)?;
    // completed rows and failure count per (intervention, world)
    type Group = (Vec<Vec<f64>>, usize);
    let mut groups: BTreeMap<(&str, &str), Group> = BTreeMap::new();
    for (cell, outcome) in results {
        let mut rec = vec![cell.intervention.clone(), cell.world.clone(), cell.seed.to_string()];
        let group = groups.entry((&cell.intervention, &cell.world)).or_default();
        match outcome {
            Ok(s) => {
                rec.push("ok".into());
                let nums = numeric_row(s);
                rec.extend(nums.iter().map(f64::to_string));
                group.0.push(nums);
            }
            Err(e) => {
                rec.push(format!("failed: {e}"));
                rec.extend(std::iter::repeat_n(String::new(), REPORT_COLUMNS.len() - 4));
                group.1 += 1;
            }
        }
        w.write_record(&rec).map_err(err)?;
    }
    for ((iv, world), (rows, failed)) in &groups {
        let mut rec = vec![iv.to_string(), world.to_string(), "median".to_string()];
        rec.push(if *failed == 0 { "ok".into() } else { format!("partial: {failed} failed") });
        for col in 0..REPORT_COLUMNS.len() - 4 {
            let mut v: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            rec.push(median(&mut v).map(|m| m.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Output(e.to_string()))
}
