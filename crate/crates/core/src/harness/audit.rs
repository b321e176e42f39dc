//! Cross-checks a run's event log against its step trace: every event must
//! be explained by the step that emitted it, and every stored frustration
//! must re-evaluate to the same bits.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::HarnessError;
use crate::agent::TraceRow;
use crate::suffering::{evaluate, Source, Timescale};

#[derive(Debug, Deserialize)]
struct EventRow {
    #[allow(dead_code)]
    run_id: String,
    t: u64,
    source: String,
    timescale: String,
    expected: f64,
    obtained: f64,
    certainty: f64,
    attention: f64,
    count: u32,
    frustration: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub steps: usize,
    pub events: usize,
    /// Human-readable discrepancies; empty when the run checks out.
    pub mismatches: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Default)]
struct Tally {
    by_source: BTreeMap<Source, usize>,
    total: usize,
}

fn parse_err(what: &str, e: csv::Error) -> HarnessError {
    HarnessError::Output(format!("{what}: {e}"))
}

pub fn audit(events_csv: &str, trace_csv: &str) -> Result<AuditReport, HarnessError> {
    let mut report = AuditReport::default();
    let mut per_step: BTreeMap<u64, Tally> = BTreeMap::new();

    for (i, row) in csv::Reader::from_reader(events_csv.as_bytes()).deserialize::<EventRow>().enumerate() {
        let e = row.map_err(|e| parse_err("events.csv", e))?;
        report.events += 1;
        let line = i + 2;
        let Some(source) = Source::parse(&e.source) else {
            report.mismatches.push(format!("events.csv:{line}: unknown source {:?}", e.source));
            continue;
        };
        if Timescale::parse(&e.timescale).is_none() {
            report.mismatches.push(format!("events.csv:{line}: unknown timescale {:?}", e.timescale));
        }
        match evaluate(e.expected, e.obtained, e.certainty, e.attention, e.count) {
            Ok(f) if f.to_bits() == e.frustration.to_bits() => {}
            Ok(f) => {
                report.mismatches.push(format!("events.csv:{line}: frustration {} re-evaluates to {f}", e.frustration))
            }
            Err(err) => report.mismatches.push(format!("events.csv:{line}: {err}")),
        }
        let tally = per_step.entry(e.t).or_default();
        *tally.by_source.entry(source).or_default() += 1;
        tally.total += 1;
    }

    let empty = Tally::default();
    for row in csv::Reader::from_reader(trace_csv.as_bytes()).deserialize::<TraceRow>() {
        let r = row.map_err(|e| parse_err("trace.csv", e))?;
        report.steps += 1;
        let tally = per_step.remove(&r.t);
        let tally = tally.as_ref().unwrap_or(&empty);
        let got = |s: Source| tally.by_source.get(&s).copied().unwrap_or(0);
        let checks = [
            ("step_loss", got(Source::StepLoss), usize::from(r.expected > r.reward)),
            ("plan_loss", got(Source::PlanLoss), r.plan_terminals as usize),
            ("threat_internal", got(Source::ThreatInternal), usize::from(r.threat)),
            ("self_eval", got(Source::SelfEval), usize::from(r.self_eval)),
            ("meta", got(Source::Meta), usize::from(r.meta)),
            ("wandering", got(Source::Replayed) + got(Source::Imagined), r.wander_negative),
            ("all", tally.total, r.events),
        ];
        for (what, logged, traced) in checks {
            if logged != traced {
                report.mismatches.push(format!("step {}: {what} events logged {logged}, trace implies {traced}", r.t));
            }
        }
    }
    for (t, tally) in per_step {
        report.mismatches.push(format!("{} events at t={t} have no trace row", tally.total));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::harness::run;
    use crate::world::WorldModel;

    fn sample() -> (String, String) {
        let mut w = WorldModel::from_ascii(&["S..H", "....", "...R"], 1.0, 1.0).unwrap();
        w.slip_probability = 0.2;
        w.observation_confusion = 0.1;
        let out = run(&AgentConfig::default(), &w, "w", 1_500, 2).unwrap();
        (out.events_csv, out.trace_csv)
    }

    #[test]
    fn clean_run_passes() {
        let (ev, tr) = sample();
        let r = audit(&ev, &tr).unwrap();
        assert!(r.ok(), "{:?}", &r.mismatches[..r.mismatches.len().min(5)]);
        assert_eq!(r.steps, 1_500);
        assert!(r.events > 0);
    }

    #[test]
    fn dropped_event_is_caught() {
        let (ev, tr) = sample();
        let mut lines: Vec<&str> = ev.lines().collect();
        lines.remove(1);
        let r = audit(&(lines.join("\n") + "\n"), &tr).unwrap();
        assert!(!r.ok());
    }

    #[test]
    fn tampered_frustration_is_caught() {
        let ev = "run_id,t,source,timescale,expected,obtained,certainty,attention,count,frustration\n\
                  x,0,step_loss,step,1,0,1,1,1,0.5\n";
        let tr = "t,episode,state,observed,action,decision,reward,expected,threat,desire,plan_terminals,self_eval,meta,wander_fired,replayed,imagined,wander_negative,episode_end,events\n\
                  0,0,0,0,right,habit,0,1,false,false,0,false,false,false,0,0,0,false,1\n";
        let r = audit(ev, tr).unwrap();
        assert_eq!(r.mismatches.len(), 1, "{:?}", r.mismatches);
        assert!(r.mismatches[0].contains("re-evaluates"));
    }
}
