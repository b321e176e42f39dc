//! The frustration ledger.
//!
//! Every scored event evaluates
//! `max(0, expected - obtained) * certainty * attention * count`.
//! A replayed or imagined re-perception of an earlier event is re-emitted
//! with the origin's tally incremented; the ledger adds one further unit
//! (`loss * certainty * attention`) for it rather than re-counting history.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::values::reward_loss;

#[derive(Debug, Error, PartialEq)]
pub enum SufferingError {
    #[error("certainty {0} not in [0,1]")]
    Certainty(f64),
    #[error("attention {0} must be >= 0")]
    Attention(f64),
    #[error("count must be >= 1")]
    Count,
    #[error("non-finite factor in event at t={0}")]
    NonFinite(u64),
    #[error("event frustration {stored} does not match its factors ({expected})")]
    Mismatch { stored: f64, expected: f64 },
    #[error("re-emission of unknown event {0}")]
    UnknownOrigin(u64),
    #[error("re-emission count {got} does not follow tally {tally} of event {origin}")]
    TallyOrder { origin: u64, tally: u32, got: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    StepLoss,
    PlanLoss,
    SelfEval,
    ThreatInternal,
    Replayed,
    Imagined,
    /// Optional aversion-to-aversion stream; off unless `meta_rate > 0`.
    Meta,
}

impl Source {
    pub const ALL: [Source; 7] = [
        Source::StepLoss,
        Source::PlanLoss,
        Source::SelfEval,
        Source::ThreatInternal,
        Source::Replayed,
        Source::Imagined,
        Source::Meta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::StepLoss => "step_loss",
            Source::PlanLoss => "plan_loss",
            Source::SelfEval => "self_eval",
            Source::ThreatInternal => "threat_internal",
            Source::Replayed => "replay",
            Source::Imagined => "imagination",
            Source::Meta => "meta",
        }
    }

    pub fn parse(name: &str) -> Option<Source> {
        Source::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timescale {
    Step,
    Plan,
    SelfEval,
}

impl Timescale {
    pub const ALL: [Timescale; 3] = [Timescale::Step, Timescale::Plan, Timescale::SelfEval];

    pub fn name(self) -> &'static str {
        match self {
            Timescale::Step => "step",
            Timescale::Plan => "plan",
            Timescale::SelfEval => "self_eval",
        }
    }

    pub fn parse(name: &str) -> Option<Timescale> {
        Timescale::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Timescale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `max(0, expected - obtained) * certainty * attention * count`.
pub fn evaluate(
    expected: f64,
    obtained: f64,
    certainty: f64,
    attention: f64,
    count: u32,
) -> Result<f64, SufferingError> {
    if !(0.0..=1.0).contains(&certainty) {
        return Err(SufferingError::Certainty(certainty));
    }
    if !(attention >= 0.0) {
        return Err(SufferingError::Attention(attention));
    }
    if count == 0 {
        return Err(SufferingError::Count);
    }
    Ok(reward_loss(expected, obtained) * certainty * attention * f64::from(count))
}

/// Certainty attributed to a perception through a channel with the given
/// confusion rate.
pub fn certainty_of(observation_confusion: f64, certainty_scale: f64) -> f64 {
    (1.0 - observation_confusion) * certainty_scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrustrationEvent {
    pub id: u64,
    pub t: u64,
    pub source: Source,
    pub timescale: Timescale,
    pub expected: f64,
    pub obtained: f64,
    pub certainty: f64,
    pub attention: f64,
    pub count: u32,
    pub frustration: f64,
    /// Event this one re-perceives, for replayed events.
    pub origin: Option<u64>,
}

impl FrustrationEvent {
    /// A fresh event; `id` is assigned by the ledger on record.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t: u64,
        source: Source,
        timescale: Timescale,
        expected: f64,
        obtained: f64,
        certainty: f64,
        attention: f64,
        count: u32,
    ) -> Result<Self, SufferingError> {
        if !(expected.is_finite() && obtained.is_finite() && attention.is_finite()) {
            return Err(SufferingError::NonFinite(t));
        }
        let frustration = evaluate(expected, obtained, certainty, attention, count)?;
        Ok(FrustrationEvent {
            id: 0,
            t,
            source,
            timescale,
            expected,
            obtained,
            certainty,
            attention,
            count,
            frustration,
            origin: None,
        })
    }

    pub fn loss(&self) -> f64 {
        reward_loss(self.expected, self.obtained)
    }

    /// Frustration of a single perception (count 1).
    pub fn unit(&self) -> f64 {
        self.loss() * self.certainty * self.attention
    }

    fn check(&self) -> Result<(), SufferingError> {
        if !(self.expected.is_finite() && self.obtained.is_finite() && self.attention.is_finite()) {
            return Err(SufferingError::NonFinite(self.t));
        }
        let expected = evaluate(self.expected, self.obtained, self.certainty, self.attention, self.count)?;
        if expected != self.frustration {
            return Err(SufferingError::Mismatch { stored: self.frustration, expected });
        }
        Ok(())
    }
}

/// Correctly rounded floating-point sum (Shewchuk's partials), so totals
/// do not depend on the order events were added in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // half-way correction
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }
}

/// Per-timescale weights of the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimescaleWeights {
    pub step: f64,
    /// Also the intention-frustration amplification.
    pub plan: f64,
    pub self_eval: f64,
}

impl Default for TimescaleWeights {
    fn default() -> Self {
        TimescaleWeights { step: 1.0, plan: 2.0, self_eval: 4.0 }
    }
}

impl TimescaleWeights {
    pub fn weight(&self, ts: Timescale) -> f64 {
        match ts {
            Timescale::Step => self.step,
            Timescale::Plan => self.plan,
            Timescale::SelfEval => self.self_eval,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Ledger {
    events: Vec<FrustrationEvent>,
    contributions: Vec<f64>,
    tallies: Vec<u32>,
    by_timescale: [ExactSum; 3],
    by_source: [ExactSum; 7],
    total: ExactSum,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[FrustrationEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Amount event `id` added to the totals.
    pub fn contribution(&self, id: u64) -> f64 {
        self.contributions[id as usize]
    }

    /// Times event `id` has been perceived or simulated so far.
    pub fn tally(&self, id: u64) -> Option<u32> {
        self.tallies.get(id as usize).copied()
    }

    /// Appends an event. Fresh events contribute their full frustration;
    /// re-emissions (with `origin`) contribute one unit and must carry the
    /// origin's next tally.
    pub fn record(&mut self, mut event: FrustrationEvent) -> Result<u64, SufferingError> {
        event.check()?;
        let contribution = match event.origin {
            None => event.frustration,
            Some(origin) => {
                let tally = self.tally(origin).ok_or(SufferingError::UnknownOrigin(origin))?;
                if event.count != tally + 1 {
                    return Err(SufferingError::TallyOrder { origin, tally, got: event.count });
                }
                self.tallies[origin as usize] = event.count;
                event.unit()
            }
        };
        let id = self.events.len() as u64;
        event.id = id;
        self.by_timescale[event.timescale as usize].add(contribution);
        self.by_source[event.source as usize].add(contribution);
        self.total.add(contribution);
        self.tallies.push(event.count);
        self.contributions.push(contribution);
        self.events.push(event);
        Ok(id)
    }

    /// Re-emits event `origin` as a simulated perception with the given
    /// source, attention and certainty.
    pub fn reemit(
        &mut self,
        origin: u64,
        t: u64,
        source: Source,
        certainty: f64,
        attention: f64,
    ) -> Result<u64, SufferingError> {
        let base = self.events.get(origin as usize).ok_or(SufferingError::UnknownOrigin(origin))?;
        let count = self.tallies[origin as usize] + 1;
        let mut e = FrustrationEvent::new(
            t,
            source,
            base.timescale,
            base.expected,
            base.obtained,
            certainty,
            attention,
            count,
        )?;
        e.origin = Some(origin);
        self.record(e)
    }

    pub fn total(&self) -> f64 {
        self.total.value()
    }

    pub fn by_timescale(&self, ts: Timescale) -> f64 {
        self.by_timescale[ts as usize].value()
    }

    pub fn by_source(&self, s: Source) -> f64 {
        self.by_source[s as usize].value()
    }

    pub fn weighted_total(&self, w: &TimescaleWeights) -> f64 {
        let mut sum = ExactSum::default();
        for ts in Timescale::ALL {
            sum.add(w.weight(ts) * self.by_timescale(ts));
        }
        sum.value()
    }

    pub fn count_by_source(&self, s: Source) -> usize {
        self.events.iter().filter(|e| e.source == s).count()
    }
}
