//! Tabular habit system: state and action values, TD learning, reward loss,
//! exploration, the curiosity bonus and the adaptive expectation baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::Experience;
use crate::world::{Action, ObjectKind, StateId, WorldModel};

#[derive(Debug, Error, PartialEq)]
pub enum ValueError {
    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },
    #[error("invalid learning parameters: {0}")]
    Params(String),
}

/// How future value is discounted. Exactly one scheme is active per run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueScheme {
    Discounted {
        gamma: f64,
    },
    /// Undiscounted values; every step costs `penalty`, charged by the
    /// environment as its step cost.
    StepPenalty {
        penalty: f64,
    },
}

impl ValueScheme {
    pub fn gamma(self) -> f64 {
        match self {
            ValueScheme::Discounted { gamma } => gamma,
            ValueScheme::StepPenalty { .. } => 1.0,
        }
    }

    pub fn penalty(self) -> f64 {
        match self {
            ValueScheme::Discounted { .. } => 0.0,
            ValueScheme::StepPenalty { penalty } => penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LearningParamsFile", into = "LearningParamsFile")]
pub struct LearningParams {
    pub alpha: f64,
    pub scheme: ValueScheme,
    pub epsilon: f64,
    pub curiosity_kappa: f64,
    pub baseline_rate: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams {
            alpha: 0.1,
            scheme: ValueScheme::Discounted { gamma: 0.9 },
            epsilon: 0.1,
            curiosity_kappa: 0.0,
            baseline_rate: 0.1,
        }
    }
}

impl LearningParams {
    pub fn gamma(&self) -> f64 {
        self.scheme.gamma()
    }

    pub fn validate(&self) -> Result<(), ValueError> {
        let bad = |m: String| Err(ValueError::Params(m));
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} not in [0,1]", self.alpha));
        }
        match self.scheme {
            ValueScheme::Discounted { gamma } if !(0.0..=1.0).contains(&gamma) => {
                return bad(format!("gamma {gamma} not in [0,1]"))
            }
            ValueScheme::StepPenalty { penalty } if !(penalty >= 0.0 && penalty.is_finite()) => {
                return bad(format!("step_penalty {penalty} must be >= 0"))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} not in [0,1]", self.epsilon));
        }
        if !(self.curiosity_kappa >= 0.0 && self.curiosity_kappa.is_finite()) {
            return bad(format!("curiosity_kappa {} must be >= 0", self.curiosity_kappa));
        }
        if !(0.0..=1.0).contains(&self.baseline_rate) {
            return bad(format!("baseline_rate {} not in [0,1]", self.baseline_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearningParamsFile {
    #[serde(default = "d_alpha")]
    alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step_penalty: Option<f64>,
    #[serde(default = "d_epsilon")]
    epsilon: f64,
    #[serde(default)]
    curiosity_kappa: f64,
    #[serde(default = "d_rate")]
    baseline_rate: f64,
}

fn d_alpha() -> f64 {
    0.1
}
fn d_epsilon() -> f64 {
    0.1
}
fn d_rate() -> f64 {
    0.1
}

impl TryFrom<LearningParamsFile> for LearningParams {
    type Error = String;

    fn try_from(f: LearningParamsFile) -> Result<Self, Self::Error> {
        let scheme = match (f.gamma, f.step_penalty) {
            (Some(_), Some(_)) => return Err("set either gamma or step_penalty, not both".into()),
            (Some(gamma), None) => ValueScheme::Discounted { gamma },
            (None, Some(penalty)) => ValueScheme::StepPenalty { penalty },
            (None, None) => ValueScheme::Discounted { gamma: 0.9 },
        };
        let p = LearningParams {
            alpha: f.alpha,
            scheme,
            epsilon: f.epsilon,
            curiosity_kappa: f.curiosity_kappa,
            baseline_rate: f.baseline_rate,
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

impl From<LearningParams> for LearningParamsFile {
    fn from(p: LearningParams) -> Self {
        let (gamma, step_penalty) = match p.scheme {
            ValueScheme::Discounted { gamma } => (Some(gamma), None),
            ValueScheme::StepPenalty { penalty } => (None, Some(penalty)),
        };
        LearningParamsFile {
            alpha: p.alpha,
            gamma,
            step_penalty,
            epsilon: p.epsilon,
            curiosity_kappa: p.curiosity_kappa,
            baseline_rate: p.baseline_rate,
        }
    }
}

const N_ACTIONS: usize = Action::ALL.len();

/// Dense tables keyed by state index; unseen entries read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueStore {
    v: Vec<f64>,
    q: Vec<[f64; N_ACTIONS]>,
    visits: Vec<[u64; N_ACTIONS]>,
}

impl ValueStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(states: usize) -> Self {
        ValueStore { v: vec![0.0; states], q: vec![[0.0; N_ACTIONS]; states], visits: vec![[0; N_ACTIONS]; states] }
    }

    fn grow(&mut self, s: StateId) {
        if s.0 >= self.v.len() {
            let n = s.0 + 1;
            self.v.resize(n, 0.0);
            self.q.resize(n, [0.0; N_ACTIONS]);
            self.visits.resize(n, [0; N_ACTIONS]);
        }
    }

    pub fn v(&self, s: StateId) -> f64 {
        self.v.get(s.0).copied().unwrap_or(0.0)
    }

    pub fn set_v(&mut self, s: StateId, value: f64) {
        self.grow(s);
        self.v[s.0] = value;
    }

    pub fn q(&self, s: StateId, a: Action) -> f64 {
        self.q.get(s.0).map_or(0.0, |row| row[a.index()])
    }

    pub fn set_q(&mut self, s: StateId, a: Action, value: f64) {
        self.grow(s);
        self.q[s.0][a.index()] = value;
    }

    pub fn visits(&self, s: StateId, a: Action) -> u64 {
        self.visits.get(s.0).map_or(0, |row| row[a.index()])
    }

    pub fn max_q(&self, s: StateId) -> f64 {
        Action::ALL.iter().map(|&a| self.q(s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-Q action, ties broken by the fixed action order.
    pub fn greedy_action(&self, s: StateId) -> Action {
        let mut best = Action::ALL[0];
        let mut best_q = self.q(s, best);
        for &a in &Action::ALL[1..] {
            let q = self.q(s, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    /// Returns a copy with every Q value multiplied by `k`.
    pub fn scaled_q(&self, k: f64) -> ValueStore {
        let mut out = self.clone();
        for row in &mut out.q {
            for q in row.iter_mut() {
                *q *= k;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.v.iter().all(|x| x.is_finite()) && self.q.iter().flatten().all(|x| x.is_finite())
    }
}

/// `max(0, expected - obtained)`.
pub fn reward_loss(expected: f64, obtained: f64) -> f64 {
    (expected - obtained).max(0.0)
}

/// Reward prediction error `r + gamma * v_after - v_before`.
pub fn td_error(r: f64, v_before: f64, v_after: f64, scheme: ValueScheme) -> f64 {
    r + scheme.gamma() * v_after - v_before
}

/// TD error of a stored experience under the current store. Terminal
/// experiences do not bootstrap.
pub fn experience_td_error(store: &ValueStore, exp: &Experience, scheme: ValueScheme) -> f64 {
    let after = if exp.terminal { 0.0 } else { store.v(exp.s_next) };
    td_error(exp.r, store.v(exp.s), after, scheme)
}

/// One TD(0) step on V and one Q-learning step on Q. Returns the V TD error.
pub fn td_update(store: &mut ValueStore, exp: &Experience, params: &LearningParams) -> f64 {
    let delta = experience_td_error(store, exp, params.scheme);
    if params.alpha == 0.0 {
        return delta;
    }
    let v = store.v(exp.s);
    store.set_v(exp.s, v + params.alpha * delta);

    let bootstrap = if exp.terminal { 0.0 } else { store.max_q(exp.s_next) };
    let q = store.q(exp.s, exp.a);
    let q_target = exp.r + params.gamma() * bootstrap;
    store.set_q(exp.s, exp.a, q + params.alpha * (q_target - q));

    store.grow(exp.s);
    store.visits[exp.s.0][exp.a.index()] += 1;
    delta
}

/// `(probability, next, reward)` for each possible successor.
pub type Outcomes = Vec<(f64, StateId, f64)>;

/// A fully known finite MDP. Terminal states carry a fixed value and have
/// no outgoing transitions.
#[derive(Debug, Clone)]
pub struct Mdp {
    pub states: Vec<StateId>,
    terminal: Vec<Option<f64>>,
    /// Per state index: per action, `(probability, next, reward)` outcomes.
    transitions: Vec<Vec<(Action, Outcomes)>>,
}

impl Mdp {
    fn with_bound(bound: usize) -> Self {
        Mdp { states: Vec::new(), terminal: vec![None; bound], transitions: vec![Vec::new(); bound] }
    }

    pub fn terminal_value(&self, s: StateId) -> Option<f64> {
        self.terminal.get(s.0).copied().flatten()
    }

    pub fn actions(&self, s: StateId) -> &[(Action, Outcomes)] {
        &self.transitions[s.0]
    }

    /// Linear chain `0 -> 1 -> ... -> n-1` moving East; the last state is
    /// terminal with `terminal_value`, each move costs `step_penalty`.
    pub fn chain(n: usize, terminal_value: f64, step_penalty: f64) -> Self {
        let mut m = Mdp::with_bound(n);
        for i in 0..n {
            m.states.push(StateId(i));
            if i + 1 == n {
                m.terminal[i] = Some(terminal_value);
            } else {
                m.transitions[i].push((Action::East, vec![(1.0, StateId(i + 1), -step_penalty)]));
            }
        }
        m
    }

    /// The world at `epoch` as a known MDP, slips included. Reward cells are
    /// terminal and valued at their magnitude; moving into one costs only
    /// the step cost, so the object reward is counted once, at the goal.
    pub fn from_world(world: &WorldModel, epoch: usize) -> Self {
        let mut m = Mdp::with_bound(world.state_bound());
        let reward_at = |c| match world.object_at(c, epoch).map(|o| o.kind) {
            Some(ObjectKind::Hazard { magnitude }) => -magnitude,
            _ => 0.0,
        };
        for c in world.open_cells() {
            let s = world.state_at(c, epoch);
            m.states.push(s);
            if let Some(ObjectKind::Reward { magnitude, .. }) = world.object_at(c, epoch).map(|o| o.kind) {
                m.terminal[s.0] = Some(magnitude);
                continue;
            }
            for a in Action::ALL {
                let mut outcomes: Vec<(f64, StateId, f64)> = Vec::new();
                let mut add = |p: f64, cell| {
                    if p <= 0.0 {
                        return;
                    }
                    let ns = world.state_at(cell, epoch);
                    let r = reward_at(cell) - world.step_cost;
                    match outcomes.iter_mut().find(|o| o.1 == ns) {
                        Some(o) => o.0 += p,
                        None => outcomes.push((p, ns, r)),
                    }
                };
                match a.laterals() {
                    Some([l1, l2]) => {
                        let slip = world.slip_probability;
                        add(1.0 - slip, world.intended_cell(c, a));
                        add(slip / 2.0, world.intended_cell(c, l1));
                        add(slip / 2.0, world.intended_cell(c, l2));
                    }
                    None => add(1.0, c),
                }
                m.transitions[s.0].push((a, outcomes));
            }
        }
        m
    }

    /// Expected backup of action outcomes under `values`.
    pub fn backup(outcomes: &[(f64, StateId, f64)], gamma: f64, values: &dyn Fn(StateId) -> f64) -> f64 {
        outcomes.iter().map(|&(p, ns, r)| p * (r + gamma * values(ns))).sum()
    }
}

/// Jacobi value iteration to a sup-norm change below `tol`.
pub fn value_iteration(mdp: &Mdp, scheme: ValueScheme, tol: f64, max_sweeps: usize) -> Result<ValueStore, ValueError> {
    let bound = mdp.terminal.len();
    let gamma = scheme.gamma();
    let mut v = vec![0.0; bound];
    for &s in &mdp.states {
        if let Some(tv) = mdp.terminal_value(s) {
            v[s.0] = tv;
        }
    }
    let mut residual = f64::INFINITY;
    for _ in 0..max_sweeps {
        let old = v.clone();
        let lookup = |s: StateId| old[s.0];
        residual = 0.0;
        for &s in &mdp.states {
            if mdp.terminal_value(s).is_some() {
                continue;
            }
            let best = mdp
                .actions(s)
                .iter()
                .map(|(_, outs)| Mdp::backup(outs, gamma, &lookup))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                residual = f64::max(residual, (best - old[s.0]).abs());
                v[s.0] = best;
            }
        }
        if residual < tol {
            let mut store = ValueStore::with_capacity(bound);
            for &s in &mdp.states {
                store.set_v(s, v[s.0]);
                match mdp.terminal_value(s) {
                    Some(tv) => {
                        for a in Action::ALL {
                            store.set_q(s, a, tv);
                        }
                    }
                    None => {
                        let lookup = |s: StateId| v[s.0];
                        for (a, outs) in mdp.actions(s) {
                            store.set_q(s, *a, Mdp::backup(outs, gamma, &lookup));
                        }
                    }
                }
            }
            return Ok(store);
        }
    }
    Err(ValueError::NotConverged { sweeps: max_sweeps, residual })
}

/// With probability `epsilon` a uniform action, else the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(store: &ValueStore, s: StateId, epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Action::ALL[rng.gen_range(0..Action::ALL.len())]
    } else {
        store.greedy_action(s)
    }
}

/// `kappa / sqrt(1 + visits(s, a))`.
pub fn curiosity_bonus(store: &ValueStore, s: StateId, a: Action, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    kappa / (1.0 + store.visits(s, a) as f64).sqrt()
}

/// Greedy action with the curiosity bonus added to each Q value.
pub fn curious_greedy_action(store: &ValueStore, s: StateId, kappa: f64) -> Action {
    let score = |a| store.q(s, a) + curiosity_bonus(store, s, a, kappa);
    let mut best = Action::ALL[0];
    for &a in &Action::ALL[1..] {
        if score(a) > score(best) {
            best = a;
        }
    }
    best
}

/// Expected per-episode reward, tracked as an exponential moving average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationBaseline {
    pub level: f64,
    pub adaptation_rate: f64,
}

impl ExpectationBaseline {
    pub fn new(level: f64, adaptation_rate: f64) -> Self {
        ExpectationBaseline { level, adaptation_rate }
    }

    #[must_use]
    pub fn update(self, episode_reward: f64) -> Self {
        ExpectationBaseline {
            level: (1.0 - self.adaptation_rate) * self.level + self.adaptation_rate * episode_reward,
            ..self
        }
    }
}
