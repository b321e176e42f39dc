//! Experience buffer, prioritized backward replay, and the wandering
//! scheduler that spends idle steps replaying the past or imagining the
//! future. Both kinds of simulation feed the frustration ledger.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::interventions::scale_expectation;
use crate::planning::{plan_search, suggest_goals, PlanSearchParams, TransitionModel};
use crate::suffering::{FrustrationEvent, Ledger, Source, SufferingError, Timescale};
use crate::values::{experience_td_error, td_update, LearningParams, ValueScheme, ValueStore};
use crate::world::{Action, StateId};

/// One transition as perceived by the agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub s: StateId,
    pub a: Action,
    pub r: f64,
    pub s_next: StateId,
    pub t: u64,
    /// No bootstrapping past `s_next`.
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stored {
    pub exp: Experience,
    pub episode: u64,
    /// Ledger event scored when this experience was lived, if any.
    pub loss_event: Option<u64>,
}

/// Ring buffer of experiences, oldest evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: VecDeque<Stored>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { entries: VecDeque::with_capacity(capacity.min(1 << 16)), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, exp: Experience, episode: u64, loss_event: Option<u64>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(Stored { exp, episode, loss_event });
    }

    pub fn get(&self, i: usize) -> Option<&Stored> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Stored> {
        self.entries.iter()
    }
}

/// |TD error| of `exp` under the current store.
pub fn priority(exp: &Experience, store: &ValueStore, scheme: ValueScheme) -> f64 {
    experience_td_error(store, exp, scheme).abs()
}

/// Applies `td_update` to the `k` experiences ending at `seed_index`, newest
/// first, without crossing into an earlier episode. Returns the indices
/// replayed, in replay order.
pub fn backward_sweep(
    buffer: &ReplayBuffer,
    seed_index: usize,
    k: usize,
    store: &mut ValueStore,
    params: &LearningParams,
) -> Vec<usize> {
    let Some(seed) = buffer.get(seed_index) else {
        return Vec::new();
    };
    let episode = seed.episode;
    let mut replayed = Vec::with_capacity(k);
    let mut i = seed_index;
    loop {
        let item = &buffer.entries[i];
        if item.episode != episode {
            break;
        }
        td_update(store, &item.exp, params);
        replayed.push(i);
        if replayed.len() == k || i == 0 {
            break;
        }
        i -= 1;
    }
    replayed
}

/// Draws an index with probability proportional to `weights`; uniform when
/// every weight is zero.
pub fn sample_proportional<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    if weights.is_empty() {
        return None;
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Some(rng.gen_range(0..weights.len()));
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Some(i);
        }
        u -= w;
    }
    // rounding: fall back to the last positive weight
    weights.iter().rposition(|w| *w > 0.0)
}

/// Last observed outcome per state-action pair; the agent's reward model
/// for imagined rollouts.
#[derive(Debug, Clone, Default)]
pub struct OutcomeMemory {
    outcomes: HashMap<(StateId, Action), (f64, StateId, bool)>,
}

impl OutcomeMemory {
    pub fn record(&mut self, exp: &Experience) {
        self.outcomes.insert((exp.s, exp.a), (exp.r, exp.s_next, exp.terminal));
    }

    pub fn lookup(&self, s: StateId, a: Action) -> Option<(f64, StateId, bool)> {
        self.outcomes.get(&(s, a)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WanderingParams {
    pub p_wander: f64,
    pub batch_size: usize,
    /// Share of batch items spent on replay rather than imagination.
    pub mode_mix: f64,
    /// How seriously simulated events are taken; multiplies attention.
    pub realness: f64,
    pub sweep_length: usize,
    pub rollout_depth: usize,
    pub capacity: usize,
}

impl Default for WanderingParams {
    fn default() -> Self {
        WanderingParams {
            p_wander: 0.1,
            batch_size: 4,
            mode_mix: 0.7,
            realness: 1.0,
            sweep_length: 3,
            rollout_depth: 4,
            capacity: 10_000,
        }
    }
}

impl WanderingParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("p_wander", self.p_wander), ("mode_mix", self.mode_mix), ("realness", self.realness)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} not in [0,1]"));
            }
        }
        if self.batch_size == 0 || self.sweep_length == 0 || self.rollout_depth == 0 || self.capacity == 0 {
            return Err("batch_size, sweep_length, rollout_depth and capacity must be positive".into());
        }
        Ok(())
    }
}

/// Everything a wandering step reads.
pub struct WanderScope<'a, M: TransitionModel + ?Sized> {
    pub params: &'a WanderingParams,
    pub learning: &'a LearningParams,
    pub model: &'a M,
    pub memory: &'a OutcomeMemory,
    pub buffer: &'a ReplayBuffer,
    pub state: StateId,
    pub t: u64,
    /// Certainty of imagined perceptions.
    pub certainty: f64,
    /// Attention before the realness multiplier.
    pub attention: f64,
    pub expectation_scale: f64,
    pub goal_threshold: f64,
    pub plan: &'a PlanSearchParams,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WanderReport {
    pub fired: bool,
    pub replayed: usize,
    pub imagined: usize,
    /// Ledger ids of events emitted, in order.
    pub events: Vec<u64>,
    /// Negative items: replayed experiences tied to a loss, and imagined
    /// transitions that fell short of expectation.
    pub negative_items: usize,
}

/// Step-level expectation `V(s) - gamma V(s')`, or `V(s)` at a terminal.
pub fn step_expectation(store: &ValueStore, exp: &Experience, scheme: ValueScheme) -> f64 {
    if exp.terminal {
        store.v(exp.s)
    } else {
        store.v(exp.s) - scheme.gamma() * store.v(exp.s_next)
    }
}

/// One wandering opportunity. Fires with probability `p_wander`; then each
/// of `batch_size` items is a prioritized backward replay (probability
/// `mode_mix`, when the buffer is non-empty) or an imagined rollout from the
/// current state.
pub fn wandering_step<M, R>(
    scope: &WanderScope<'_, M>,
    store: &mut ValueStore,
    ledger: &mut Ledger,
    rng: &mut R,
) -> Result<WanderReport, SufferingError>
where
    M: TransitionModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut report = WanderReport::default();
    let p = scope.params;
    if p.p_wander == 0.0 || rng.gen::<f64>() >= p.p_wander {
        return Ok(report);
    }
    report.fired = true;
    let attention = scope.attention * p.realness;
    let scheme = scope.learning.scheme;
    let priorities: Vec<f64> = if scope.buffer.is_empty() {
        Vec::new()
    } else {
        scope.buffer.iter().map(|e| priority(&e.exp, store, scheme)).collect()
    };

    for _ in 0..p.batch_size {
        let replay = !scope.buffer.is_empty() && rng.gen::<f64>() < p.mode_mix;
        if replay {
            let seed = sample_proportional(&priorities, rng).expect("non-empty");
            let replayed = backward_sweep(scope.buffer, seed, p.sweep_length, store, scope.learning);
            for i in replayed {
                report.replayed += 1;
                if let Some(origin) = scope.buffer.entries[i].loss_event {
                    let certainty = ledger.events()[origin as usize].certainty;
                    let id = ledger.reemit(origin, scope.t, Source::Replayed, certainty, attention)?;
                    report.events.push(id);
                    report.negative_items += 1;
                }
            }
        } else {
            imagine(scope, store, ledger, attention, &mut report)?;
        }
    }
    Ok(report)
}

fn imagine<M: TransitionModel + ?Sized>(
    scope: &WanderScope<'_, M>,
    store: &mut ValueStore,
    ledger: &mut Ledger,
    attention: f64,
    report: &mut WanderReport,
) -> Result<(), SufferingError> {
    let depth = scope.params.rollout_depth;
    let goals = suggest_goals(store, scope.model, scope.state, depth, scope.goal_threshold, scope.t);
    let search = PlanSearchParams { max_depth: depth, ..*scope.plan };
    let plan = goals.first().and_then(|g| plan_search(scope.model, scope.state, g.target, store, &search).plan);

    let mut s = scope.state;
    for i in 0..depth {
        let a = match &plan {
            Some(p) => match p.get(i) {
                Some(a) => *a,
                None => break,
            },
            None => store.greedy_action(s),
        };
        let Some((r, s_next, terminal)) = scope.memory.lookup(s, a) else {
            break;
        };
        let exp = Experience { s, a, r, s_next, t: scope.t, terminal };
        let expected = scale_expectation(step_expectation(store, &exp, scope.learning.scheme), scope.expectation_scale);
        report.imagined += 1;
        if expected > r {
            let e = FrustrationEvent::new(
                scope.t,
                Source::Imagined,
                Timescale::Step,
                expected,
                r,
                scope.certainty,
                attention,
                1,
            )?;
            report.events.push(ledger.record(e)?);
            report.negative_items += 1;
        }
        td_update(store, &exp, scope.learning);
        if terminal {
            break;
        }
        s = s_next;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::values::{value_iteration, Mdp};
    use crate::world::{Cell, WorldModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const STEP: ValueScheme = ValueScheme::StepPenalty { penalty: 0.1 };

    fn full_step() -> LearningParams {
        LearningParams { alpha: 1.0, scheme: STEP, ..Default::default() }
    }

    fn e(s: usize, r: f64, s_next: usize, t: u64, terminal: bool) -> Experience {
        Experience { s: StateId(s), a: Action::East, r, s_next: StateId(s_next), t, terminal }
    }

    /// The rooms path 21 -> 13 -> 42 with its reward collected at 42.
    fn rooms_buffer() -> ReplayBuffer {
        let mut b = ReplayBuffer::new(16);
        b.push(e(21, -0.1, 13, 0, false), 0, None);
        b.push(e(13, -0.1, 42, 1, false), 0, None);
        b.push(Experience { a: Action::Stay, ..e(42, 1.0, 42, 2, true) }, 0, None);
        b
    }

    #[test]
    fn rooms_backward_sweep() {
        let b = rooms_buffer();
        let mut store = ValueStore::new();
        let order = backward_sweep(&b, 2, 3, &mut store, &full_step());
        assert_eq!(order, vec![2, 1, 0]);
        assert!((store.v(StateId(42)) - 1.0).abs() < 1e-9);
        assert!((store.v(StateId(13)) - 0.9).abs() < 1e-9);
        assert!((store.v(StateId(21)) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn single_item_sweep_equals_td_update() {
        let b = rooms_buffer();
        let mut a = ValueStore::new();
        backward_sweep(&b, 2, 1, &mut a, &full_step());
        let mut direct = ValueStore::new();
        td_update(&mut direct, &b.get(2).unwrap().exp, &full_step());
        assert_eq!(a, direct);
    }

    #[test]
    fn forward_replay_needs_three_passes() {
        let b = rooms_buffer();
        let target = 0.8;
        let mut store = ValueStore::new();
        let mut passes = 0;
        while (store.v(StateId(21)) - target).abs() > 1e-9 {
            for i in 0..3 {
                td_update(&mut store, &b.get(i).unwrap().exp, &full_step());
            }
            passes += 1;
            assert!(passes < 10);
        }
        assert_eq!(passes, 3);

        let mut backward = ValueStore::new();
        backward_sweep(&b, 2, 3, &mut backward, &full_step());
        assert!((backward.v(StateId(21)) - target).abs() < 1e-9);
    }

    #[test]
    fn sweep_truncates_at_buffer_start_and_episode_boundary() {
        let mut b = ReplayBuffer::new(8);
        b.push(e(0, 0.0, 1, 0, false), 0, None);
        b.push(e(1, 0.0, 2, 1, true), 0, None);
        b.push(e(5, 0.0, 6, 2, false), 1, None);
        b.push(e(6, 1.0, 7, 3, true), 1, None);
        let mut store = ValueStore::new();
        assert_eq!(backward_sweep(&b, 3, 10, &mut store, &full_step()), vec![3, 2]);
        assert_eq!(backward_sweep(&b, 1, 10, &mut store, &full_step()), vec![1, 0]);
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(2);
        for t in 0..3 {
            b.push(e(t as usize, 0.0, 0, t, false), 0, None);
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).unwrap().exp.t, 1);
    }

    #[test]
    fn priority_examples() {
        // fully learned chain: zero on path
        let mdp = Mdp::chain(3, 1.0, 0.1);
        let fixed = value_iteration(&mdp, STEP, 1e-12, 100).unwrap();
        assert!(priority(&e(0, -0.1, 1, 0, false), &fixed, STEP) < 1e-12);
        assert!(priority(&e(1, -0.1, 2, 0, false), &fixed, STEP) < 1e-12);

        let empty = ValueStore::new();
        assert_eq!(priority(&e(0, 1.0, 1, 0, true), &empty, STEP), 1.0);

        let mut store = ValueStore::new();
        store.set_v(StateId(0), 0.9);
        store.set_v(StateId(1), 0.2);
        assert!((priority(&e(0, 0.0, 1, 0, false), &store, STEP) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn proportional_sampling_matches_weights() {
        let weights = [0.0, 1.0, 3.0, 6.0];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            counts[sample_proportional(&weights, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[0], 0);
        for (i, w) in weights.iter().enumerate() {
            let p = w / 10.0;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((f64::from(counts[i]) - n as f64 * p).abs() <= 3.0 * sigma + 1e-9, "{counts:?}");
        }
    }

    #[test]
    fn zero_weights_sample_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 3];
        for _ in 0..100 {
            seen[sample_proportional(&[0.0; 3], &mut rng).unwrap()] = true;
        }
        assert_eq!(seen, [true; 3]);
        assert_eq!(sample_proportional(&[], &mut rng), None);
    }

    struct Fixture {
        world: WorldModel,
        buffer: ReplayBuffer,
        memory: OutcomeMemory,
        ledger: Ledger,
        loss_id: u64,
    }

    fn fixture() -> Fixture {
        let world = WorldModel::new(4, 1, &[], &[], None, 0.0, 0.0, 0.0, &[]).unwrap();
        let mut ledger = Ledger::new();
        let loss = FrustrationEvent::new(0, Source::StepLoss, Timescale::Step, 1.0, 0.0, 1.0, 1.0, 1).unwrap();
        let loss_id = ledger.record(loss).unwrap();
        let mut buffer = ReplayBuffer::new(8);
        buffer.push(e(0, 0.0, 1, 0, false), 0, Some(loss_id));
        Fixture { world, buffer, memory: OutcomeMemory::default(), ledger, loss_id }
    }

    fn scope<'a>(
        f: &'a Fixture,
        params: &'a WanderingParams,
        learning: &'a LearningParams,
        plan: &'a PlanSearchParams,
    ) -> WanderScope<'a, WorldModel> {
        WanderScope {
            params,
            learning,
            model: &f.world,
            memory: &f.memory,
            buffer: &f.buffer,
            state: f.world.state_of(Cell::new(0, 0)),
            t: 10,
            certainty: 1.0,
            attention: 1.0,
            expectation_scale: 1.0,
            goal_threshold: 0.5,
            plan,
        }
    }

    #[test]
    fn no_wandering_when_probability_zero() {
        let mut f = fixture();
        let params = WanderingParams { p_wander: 0.0, ..Default::default() };
        let learning = LearningParams::default();
        let plan = PlanSearchParams::default();
        let mut store = ValueStore::new();
        let mut ledger = std::mem::take(&mut f.ledger);
        let before = ledger.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = wandering_step(&scope(&f, &params, &learning, &plan), &mut store, &mut ledger, &mut rng).unwrap();
        assert!(!r.fired);
        assert_eq!(ledger.len(), before);
        assert_eq!(store, ValueStore::new());
    }

    #[test]
    fn replay_tally_counts_each_simulation() {
        let mut f = fixture();
        let params =
            WanderingParams { p_wander: 1.0, batch_size: 3, mode_mix: 1.0, sweep_length: 1, ..Default::default() };
        let learning = LearningParams { alpha: 0.0, ..Default::default() };
        let plan = PlanSearchParams::default();
        let mut store = ValueStore::new();
        let mut ledger = std::mem::take(&mut f.ledger);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = wandering_step(&scope(&f, &params, &learning, &plan), &mut store, &mut ledger, &mut rng).unwrap();
        assert_eq!(r.replayed, 3);
        assert_eq!(ledger.tally(f.loss_id), Some(4));
        assert_eq!(ledger.total(), 4.0);
        assert!(ledger.events()[1..].iter().all(|e| e.source == Source::Replayed));
    }

    #[test]
    fn zero_realness_scores_nothing() {
        let mut f = fixture();
        let params =
            WanderingParams { p_wander: 1.0, batch_size: 2, mode_mix: 1.0, realness: 0.0, ..Default::default() };
        let learning = LearningParams::default();
        let plan = PlanSearchParams::default();
        let mut store = ValueStore::new();
        let mut ledger = std::mem::take(&mut f.ledger);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = wandering_step(&scope(&f, &params, &learning, &plan), &mut store, &mut ledger, &mut rng).unwrap();
        assert!(!r.events.is_empty());
        assert!(r.events.iter().all(|&id| ledger.contribution(id) == 0.0));
        assert_eq!(ledger.total(), 1.0);
    }

    #[test]
    fn empty_buffer_imagines_from_memory() {
        let mut f = fixture();
        f.buffer = ReplayBuffer::new(4);
        // known outcome: East from 0 lands in 1 with a loss
        f.memory.record(&e(0, -1.0, 1, 0, false));
        let params = WanderingParams { p_wander: 1.0, batch_size: 1, mode_mix: 1.0, ..Default::default() };
        let learning = LearningParams { alpha: 0.0, ..Default::default() };
        let plan = PlanSearchParams::default();
        let mut store = ValueStore::new();
        // greedy action at state 0 is East
        store.set_q(StateId(0), Action::East, 1.0);
        let mut ledger = Ledger::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = wandering_step(&scope(&f, &params, &learning, &plan), &mut store, &mut ledger, &mut rng).unwrap();
        assert_eq!(r.replayed, 0);
        assert_eq!(r.imagined, 1);
        assert_eq!(ledger.count_by_source(Source::Imagined), 1);
        assert_eq!(ledger.total(), 1.0);
    }
}
