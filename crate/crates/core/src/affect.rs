//! Interrupts, self-evaluation and the depression gate.

use serde::{Deserialize, Serialize};

use crate::planning::{suggest_goals, Goal, Intention, TransitionModel};
use crate::rng::{stream, Stream};
use crate::suffering::{FrustrationEvent, Source, SufferingError, Timescale};
use crate::values::{epsilon_greedy, value_iteration, Mdp, ValueScheme, ValueStore};
use crate::world::{Action, Cell, StateId, WorldModel};

/// Thresholds serialize `+inf` as `null`.
mod threshold {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Threshold lists with `null` standing for "never fires".
mod thresholds {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|t| if t.is_infinite() && *t > 0.0 { None } else { Some(*t) }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|t| t.unwrap_or(f64::INFINITY)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterruptPolicy {
    /// `null` disables the threat detector.
    #[serde(with = "threshold")]
    pub threat_threshold: f64,
    /// `null` disables desire interrupts.
    #[serde(with = "threshold")]
    pub desire_threshold: f64,
    pub miss_cost: f64,
    pub false_alarm_cost: f64,
    pub decay_length: f64,
    /// Extra internal cost charged with each threat interrupt.
    pub interrupt_cost: f64,
}

impl Default for InterruptPolicy {
    fn default() -> Self {
        InterruptPolicy {
            threat_threshold: 0.5,
            desire_threshold: 0.5,
            miss_cost: 1.0,
            false_alarm_cost: 1.0,
            decay_length: 1.0,
            interrupt_cost: 0.0,
        }
    }
}

impl InterruptPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threat_threshold >= 0.0) {
            return Err(format!("threat_threshold {} must be >= 0", self.threat_threshold));
        }
        if self.desire_threshold.is_nan() {
            return Err("desire_threshold is NaN".into());
        }
        if !(self.miss_cost >= 0.0 && self.false_alarm_cost >= 0.0 && self.interrupt_cost >= 0.0) {
            return Err("interrupt costs must be >= 0".into());
        }
        if !(self.decay_length > 0.0 && self.decay_length.is_finite()) {
            return Err(format!("decay_length {} must be > 0", self.decay_length));
        }
        Ok(())
    }
}

/// `sum over hazards of magnitude * exp(-d / decay_length)`, with `d` the
/// Manhattan distance from the cell of `s`.
pub fn threat_level(world: &WorldModel, s: StateId, decay_length: f64) -> f64 {
    threat_at(world, world.cell_of(s), decay_length)
}

fn threat_at(world: &WorldModel, c: Cell, decay_length: f64) -> f64 {
    world.hazards().map(|(h, m)| m * (-(h.manhattan(c) as f64) / decay_length).exp()).sum()
}

/// Whether a hazard lies within one step of the cell of `s`.
pub fn hazard_adjacent(world: &WorldModel, s: StateId) -> bool {
    let c = world.cell_of(s);
    world.hazards().any(|(h, _)| h.manhattan(c) <= 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interrupt {
    Threat { level: f64 },
    Desire { goal: Goal },
}

/// Threat fires on the observed state's threat level; desire fires while an
/// intention is active and a better state than its goal lies within reach.
/// Threat outranks desire.
#[allow(clippy::too_many_arguments)]
pub fn check_interrupts(
    world: &WorldModel,
    store: &ValueStore,
    observed: StateId,
    active: Option<&Intention>,
    policy: &InterruptPolicy,
    reach: usize,
    t: u64,
) -> Option<Interrupt> {
    if policy.threat_threshold.is_finite() {
        let level = threat_level(world, observed, policy.decay_length);
        if level > policy.threat_threshold {
            return Some(Interrupt::Threat { level });
        }
    }
    let intention = active.filter(|i| i.is_active())?;
    if !policy.desire_threshold.is_finite() {
        return None;
    }
    let bar = policy.desire_threshold.max(intention.goal.anticipated_value);
    suggest_goals(store, world, observed, reach, bar, t)
        .into_iter()
        .find(|g| g.target != intention.goal.target)
        .map(|goal| Interrupt::Desire { goal })
}

/// The move whose predicted landing has the lowest threat level.
pub fn flee_action(world: &WorldModel, s: StateId, decay_length: f64) -> Action {
    let mut best = Action::ALL[0];
    let mut best_level = f64::INFINITY;
    for a in Action::ALL {
        let level = threat_level(world, world.predict(s, a), decay_length);
        if level < best_level {
            best = a;
            best_level = level;
        }
    }
    best
}

/// Open-loop evaluation settings for the threshold sweep: trajectories are
/// generated once per seed by an epsilon-greedy goal seeker that ignores
/// alarms, then scored under every threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Ascending; `null` is the detector that never fires.
    #[serde(with = "thresholds")]
    pub thresholds: Vec<f64>,
    pub miss_cost: f64,
    pub false_alarm_cost: f64,
    pub decay_length: f64,
    pub seeds: u64,
    pub episodes: usize,
    pub episode_length: usize,
    pub epsilon: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            thresholds: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0],
            miss_cost: 5.0,
            false_alarm_cost: 1.0,
            decay_length: 1.0,
            seeds: 20,
            episodes: 20,
            episode_length: 60,
            epsilon: 0.3,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.thresholds.is_empty() {
            return Err("thresholds must not be empty".into());
        }
        if self.thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err("thresholds must be non-negative numbers or null".into());
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err("thresholds must be strictly ascending".into());
        }
        if !(self.miss_cost >= 0.0 && self.false_alarm_cost >= 0.0) {
            return Err("miss_cost and false_alarm_cost must be non-negative".into());
        }
        if !(self.decay_length > 0.0) {
            return Err("decay_length must be positive".into());
        }
        if self.seeds == 0 || self.episodes == 0 || self.episode_length == 0 {
            return Err("seeds, episodes and episode_length must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err("epsilon must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub seed: Option<u64>,
    pub alarms: u64,
    pub false_alarms: u64,
    pub misses: u64,
    pub hazard_hits: u64,
    pub realized_cost: f64,
}

/// One decision point of a scored trajectory.
#[derive(Debug, Clone, Copy)]
struct Probe {
    threat_observed: f64,
    truly_near: bool,
    damage_next: bool,
}

fn probe_trajectories(world: &WorldModel, spec: &SweepSpec, seed: u64) -> Vec<Probe> {
    let mut world = world.clone();
    let mut rng_world = stream(seed, Stream::World);
    let mut rng_obs = stream(seed, Stream::Observation);
    let mut rng_act = stream(seed, Stream::Exploration);
    let values = value_iteration(&Mdp::from_world(&world, 0), ValueScheme::Discounted { gamma: 0.9 }, 1e-9, 10_000)
        .unwrap_or_default();
    let mut probes = Vec::new();
    for _ in 0..spec.episodes {
        world.restore_objects();
        let mut s = world.start_state();
        for _ in 0..spec.episode_length {
            let obs = world.observe(s, &mut rng_obs);
            let a = epsilon_greedy(&values, obs.reported_state, spec.epsilon, &mut rng_act);
            let out = world.step(s, a, &mut rng_world).expect("valid state");
            probes.push(Probe {
                threat_observed: threat_level(&world, obs.reported_state, spec.decay_length),
                truly_near: hazard_adjacent(&world, s),
                damage_next: out.hazard.is_some(),
            });
            s = out.next;
            if out.collected.is_some() {
                break;
            }
        }
    }
    probes
}

/// False alarms, misses and realized cost per threshold and seed.
pub fn sweep_threshold(world: &WorldModel, spec: &SweepSpec) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(spec.thresholds.len() * spec.seeds as usize);
    for seed in 0..spec.seeds {
        let probes = probe_trajectories(world, spec, seed);
        for &threshold in &spec.thresholds {
            let mut row = SweepRow {
                threshold,
                seed: Some(seed),
                alarms: 0,
                false_alarms: 0,
                misses: 0,
                hazard_hits: 0,
                realized_cost: 0.0,
            };
            for p in &probes {
                let fired = p.threat_observed > threshold;
                if fired {
                    row.alarms += 1;
                    if !p.truly_near {
                        row.false_alarms += 1;
                    }
                }
                if p.damage_next {
                    row.hazard_hits += 1;
                    if !fired {
                        row.misses += 1;
                    }
                }
            }
            row.realized_cost = spec.false_alarm_cost * row.false_alarms as f64 + spec.miss_cost * row.misses as f64;
            rows.push(row);
        }
    }
    rows
}

/// Sums per-seed rows into one row per threshold.
pub fn sweep_totals(rows: &[SweepRow], spec: &SweepSpec) -> Vec<SweepRow> {
    spec.thresholds
        .iter()
        .map(|&threshold| {
            let mut total = SweepRow {
                threshold,
                seed: None,
                alarms: 0,
                false_alarms: 0,
                misses: 0,
                hazard_hits: 0,
                realized_cost: 0.0,
            };
            for r in rows.iter().filter(|r| r.threshold == threshold) {
                total.alarms += r.alarms;
                total.false_alarms += r.false_alarms;
                total.misses += r.misses;
                total.hazard_hits += r.hazard_hits;
            }
            total.realized_cost =
                spec.false_alarm_cost * total.false_alarms as f64 + spec.miss_cost * total.misses as f64;
            total
        })
        .collect()
}

/// Cheapest threshold; the lowest one wins ties.
pub fn cost_minimizing_threshold(totals: &[SweepRow]) -> Option<f64> {
    totals
        .iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.realized_cost <= r.realized_cost => Some(b),
            _ => Some(r),
        })
        .map(|r| r.threshold)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Active,
    Waiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfModel {
    pub evaluation_window: usize,
    /// Required mean episode reward.
    pub standard: f64,
    /// Size of the optional aversion-to-aversion event relative to each
    /// self-evaluation; 0 disables the stream.
    pub meta_rate: f64,
    /// `None` never gives up.
    pub failure_limit: Option<u32>,
    pub cooldown: u32,
    /// Probability a habit action is replaced by `Stay` while waiting.
    pub waiting_stay_prob: f64,
    #[serde(skip)]
    pub mode: Mode,
    #[serde(skip)]
    pub cooldown_remaining: u32,
}

impl Default for SelfModel {
    fn default() -> Self {
        SelfModel {
            evaluation_window: 10,
            standard: 0.5,
            meta_rate: 0.0,
            failure_limit: Some(5),
            cooldown: 20,
            waiting_stay_prob: 0.8,
            mode: Mode::Active,
            cooldown_remaining: 0,
        }
    }
}

impl SelfModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.evaluation_window == 0 {
            return Err("evaluation_window must be positive".into());
        }
        if !self.standard.is_finite() || !(self.meta_rate >= 0.0) {
            return Err("standard must be finite and meta_rate >= 0".into());
        }
        if self.failure_limit == Some(0) {
            return Err("failure_limit must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.waiting_stay_prob) {
            return Err("waiting_stay_prob not in [0,1]".into());
        }
        Ok(())
    }
}

/// Compares the mean of the last `evaluation_window` episode rewards with
/// the standard; a shortfall is a self-evaluation event. A standard at or
/// below zero means the agent asks nothing of itself and never fires.
pub fn self_evaluate(
    model: &SelfModel,
    episode_rewards: &[f64],
    t: u64,
    certainty: f64,
    attention: f64,
) -> Result<Option<FrustrationEvent>, SufferingError> {
    let w = model.evaluation_window;
    if model.standard <= 0.0 || episode_rewards.len() < w {
        return Ok(None);
    }
    let recent = &episode_rewards[episode_rewards.len() - w..];
    let mean = recent.iter().sum::<f64>() / w as f64;
    if model.standard - mean <= 0.0 {
        return Ok(None);
    }
    FrustrationEvent::new(t, Source::SelfEval, Timescale::SelfEval, model.standard, mean, certainty, attention, 1)
        .map(Some)
}

/// Mode update for one step. Enters `Waiting` once consecutive failed
/// intentions reach the limit; leaves it after the cooldown or on any
/// positive reward.
#[must_use]
pub fn depression_gate(model: &SelfModel, consecutive_failed: u32, positive_reward: bool) -> SelfModel {
    let mut next = *model;
    match model.mode {
        Mode::Active => {
            if model.failure_limit.is_some_and(|limit| consecutive_failed >= limit) {
                next.mode = Mode::Waiting;
                next.cooldown_remaining = model.cooldown;
            }
        }
        Mode::Waiting => {
            if positive_reward || model.cooldown_remaining == 0 {
                next.mode = Mode::Active;
                next.cooldown_remaining = 0;
            } else {
                next.cooldown_remaining -= 1;
            }
        }
    }
    next
}
