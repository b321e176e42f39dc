//! Deliberation: desire proposes goals from learned values, intention
//! commits to one, and a depth-limited value-guided search produces the
//! plan. Execution is monitored step by step.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::suffering::{FrustrationEvent, Source, SufferingError, Timescale};
use crate::values::ValueStore;
use crate::world::{Action, StateId, WorldModel};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{branching}^{depth} overflows u64")]
    Overflow { branching: u64, depth: u32 },
    #[error("branching factor must be >= 1")]
    Branching,
    #[error("{parts} parts do not divide depth {depth}")]
    Indivisible { depth: u32, parts: u32 },
    #[error("illegal intention transition {from:?} -> {to:?}")]
    IllegalTransition { from: IntentionStatus, to: IntentionStatus },
    #[error("plan frustration requested for an active intention")]
    NotTerminal,
    #[error(transparent)]
    Suffering(#[from] SufferingError),
}

/// Number of distinct action paths of length `depth`.
pub fn count_paths(branching: u64, depth: u32) -> Result<u64, PlanError> {
    if branching == 0 {
        return Err(PlanError::Branching);
    }
    branching.checked_pow(depth).ok_or(PlanError::Overflow { branching, depth })
}

/// Search cost after splitting a depth-`depth` tree into `parts` equal
/// sub-searches: `parts * branching^(depth/parts)`.
pub fn split_cost(branching: u64, depth: u32, parts: u32) -> Result<u64, PlanError> {
    if parts == 0 || !depth.is_multiple_of(parts) {
        return Err(PlanError::Indivisible { depth, parts });
    }
    count_paths(branching, depth / parts)?.checked_mul(u64::from(parts)).ok_or(PlanError::Overflow { branching, depth })
}

/// The agent's known, deterministic transition model.
pub trait TransitionModel {
    fn predict(&self, s: StateId, a: Action) -> StateId;
    /// Terminal states end an episode; search does not pass through them.
    fn is_terminal(&self, s: StateId) -> bool;
    /// Whether two states put the agent in the same place.
    fn same_place(&self, a: StateId, b: StateId) -> bool {
        a == b
    }
}

impl TransitionModel for WorldModel {
    fn predict(&self, s: StateId, a: Action) -> StateId {
        self.state_at(self.intended_cell(self.cell_of(s), a), self.epoch_of(s))
    }

    fn is_terminal(&self, s: StateId) -> bool {
        self.is_goal_state(s)
    }

    fn same_place(&self, a: StateId, b: StateId) -> bool {
        self.cell_of(a) == self.cell_of(b)
    }
}

fn moves<M: TransitionModel + ?Sized>(model: &M, s: StateId) -> impl Iterator<Item = (Action, StateId)> + '_ {
    Action::ALL[..4].iter().map(move |&a| (a, model.predict(s, a))).filter(move |&(_, n)| n != s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub target: StateId,
    pub anticipated_value: f64,
    pub proposed_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntentionStatus {
    Active,
    Reached,
    Aborted,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intention {
    pub goal: Goal,
    pub plan: Vec<Action>,
    pub committed_at: u64,
    status: IntentionStatus,
    cursor: usize,
    realized: f64,
}

impl Intention {
    pub fn new(goal: Goal, plan: Vec<Action>, committed_at: u64) -> Option<Self> {
        if plan.is_empty() {
            return None;
        }
        Some(Intention { goal, plan, committed_at, status: IntentionStatus::Active, cursor: 0, realized: 0.0 })
    }

    pub fn status(&self) -> IntentionStatus {
        self.status
    }

    pub fn is_active(&self) -> bool {
        self.status == IntentionStatus::Active
    }

    /// Actions issued so far.
    pub fn issued(&self) -> &[Action] {
        &self.plan[..self.cursor]
    }

    pub fn remaining(&self) -> &[Action] {
        &self.plan[self.cursor..]
    }

    /// Object reward collected while executing.
    pub fn realized(&self) -> f64 {
        self.realized
    }

    pub fn next_action(&self) -> Option<Action> {
        if self.is_active() {
            self.plan.get(self.cursor).copied()
        } else {
            None
        }
    }

    fn transition(&mut self, to: IntentionStatus) -> Result<(), PlanError> {
        if self.status != IntentionStatus::Active || to == IntentionStatus::Active {
            return Err(PlanError::IllegalTransition { from: self.status, to });
        }
        self.status = to;
        Ok(())
    }

    pub fn abort(&mut self) -> Result<(), PlanError> {
        self.transition(IntentionStatus::Aborted)
    }

    pub fn fail(&mut self) -> Result<(), PlanError> {
        self.transition(IntentionStatus::Failed)
    }

    /// Registers the outcome of the next plan action. `from` is the state
    /// the action was issued in and `observed` the state perceived after it.
    /// Epoch changes are not visible until arrival: intermediate steps are
    /// compared by place, the target by full state.
    pub fn record_outcome<M: TransitionModel + ?Sized>(
        &mut self,
        model: &M,
        from: StateId,
        observed: StateId,
        object_reward: f64,
    ) -> Result<IntentionStatus, PlanError> {
        let a = self.next_action().ok_or(PlanError::IllegalTransition { from: self.status, to: self.status })?;
        self.cursor += 1;
        self.realized += object_reward;
        let predicted = model.predict(from, a);
        if observed == self.goal.target {
            self.transition(IntentionStatus::Reached)?;
        } else if !model.same_place(predicted, observed) || self.cursor == self.plan.len() {
            self.transition(IntentionStatus::Failed)?;
        }
        Ok(self.status)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSearchParams {
    pub max_depth: usize,
    pub branching_cap: usize,
    pub heuristic_weight: f64,
}

impl Default for PlanSearchParams {
    fn default() -> Self {
        PlanSearchParams { max_depth: 12, branching_cap: 4, heuristic_weight: 1.0 }
    }
}

impl PlanSearchParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth == 0 {
            return Err("max_depth must be positive".into());
        }
        if self.branching_cap == 0 {
            return Err("branching_cap must be positive".into());
        }
        if !(self.heuristic_weight >= 0.0 && self.heuristic_weight.is_finite()) {
            return Err("heuristic_weight must be >= 0".into());
        }
        Ok(())
    }
}

/// States within `reach` moves of `s` (excluding `s`) whose value exceeds
/// `threshold`, best first, ties by ascending state id.
pub fn suggest_goals<M: TransitionModel + ?Sized>(
    store: &ValueStore,
    model: &M,
    s: StateId,
    reach: usize,
    threshold: f64,
    t: u64,
) -> Vec<Goal> {
    let mut seen = HashSet::from([s]);
    let mut frontier = VecDeque::from([(s, 0usize)]);
    let mut goals = Vec::new();
    while let Some((cur, d)) = frontier.pop_front() {
        if d == reach || (cur != s && model.is_terminal(cur)) {
            continue;
        }
        for (_, n) in moves(model, cur) {
            if seen.insert(n) {
                let v = store.v(n);
                if v > threshold {
                    goals.push(Goal { target: n, anticipated_value: v, proposed_at: t });
                }
                frontier.push_back((n, d + 1));
            }
        }
    }
    goals.sort_by(|a, b| b.anticipated_value.total_cmp(&a.anticipated_value).then(a.target.cmp(&b.target)));
    goals
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub plan: Option<Vec<Action>>,
    pub expansions: usize,
}

struct Node {
    priority: f64,
    value: f64,
    seq: usize,
    index: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: the "greatest" node is popped first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.priority.total_cmp(&self.priority).then(self.value.total_cmp(&other.value)).then(other.seq.cmp(&self.seq))
    }
}

/// Best-first search toward `target`. Nodes are popped by
/// `depth - heuristic_weight * V(state)`; each expansion keeps the
/// `branching_cap` highest-valued children. Paths longer than `max_depth`
/// are not explored. With weight 0 and no effective cap this is
/// breadth-first and returns a shortest path.
pub fn plan_search<M: TransitionModel + ?Sized>(
    model: &M,
    s: StateId,
    target: StateId,
    store: &ValueStore,
    params: &PlanSearchParams,
) -> SearchOutcome {
    if s == target {
        return SearchOutcome { plan: Some(Vec::new()), expansions: 0 };
    }
    // (state, depth, parent index, action from parent)
    let mut nodes: Vec<(StateId, usize, usize, Action)> = vec![(s, 0, usize::MAX, Action::Stay)];
    let mut heap = BinaryHeap::from([Node { priority: 0.0, value: store.v(s), seq: 0, index: 0 }]);
    let mut closed = HashSet::new();
    let mut expansions = 0;
    while let Some(node) = heap.pop() {
        let (state, depth, _, _) = nodes[node.index];
        if state == target {
            let mut plan = Vec::with_capacity(depth);
            let mut i = node.index;
            while nodes[i].2 != usize::MAX {
                plan.push(nodes[i].3);
                i = nodes[i].2;
            }
            plan.reverse();
            return SearchOutcome { plan: Some(plan), expansions };
        }
        if !closed.insert(state) {
            continue;
        }
        if depth >= params.max_depth || (depth > 0 && model.is_terminal(state)) {
            continue;
        }
        expansions += 1;
        let mut children: Vec<(Action, StateId, f64)> =
            moves(model, state).filter(|(_, n)| !closed.contains(n)).map(|(a, n)| (a, n, store.v(n))).collect();
        children.sort_by(|a, b| b.2.total_cmp(&a.2));
        for (a, n, v) in children.into_iter().take(params.branching_cap) {
            let index = nodes.len();
            nodes.push((n, depth + 1, node.index, a));
            heap.push(Node { priority: (depth + 1) as f64 - params.heuristic_weight * v, value: v, seq: index, index });
        }
    }
    SearchOutcome { plan: None, expansions }
}

/// Commits to the first goal, in order, for which a plan exists.
pub fn commit<M: TransitionModel + ?Sized>(
    goals: &[Goal],
    model: &M,
    s: StateId,
    store: &ValueStore,
    params: &PlanSearchParams,
    t: u64,
) -> Option<Intention> {
    goals
        .iter()
        .find_map(|g| plan_search(model, s, g.target, store, params).plan.and_then(|plan| Intention::new(*g, plan, t)))
}

/// Hooks the executor calls around each plan action.
pub trait ExecutionHooks {
    /// Checked before the `issued`-th action; returning true aborts.
    fn interrupt(&mut self, _issued: usize, _state: StateId) -> bool {
        false
    }
}

pub struct NoHooks;
impl ExecutionHooks for NoHooks {}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub intention: Intention,
    pub final_state: StateId,
    pub total_reward: f64,
}

/// Runs an active intention against the world until it terminates.
pub fn execute<R: Rng + ?Sized, H: ExecutionHooks>(
    mut intention: Intention,
    world: &mut WorldModel,
    mut state: StateId,
    t0: u64,
    rng: &mut R,
    hooks: &mut H,
) -> Result<ExecutionReport, crate::world::WorldError> {
    let mut total_reward = 0.0;
    let mut t = t0;
    while let Some(a) = intention.next_action() {
        if hooks.interrupt(intention.issued().len(), state) {
            intention.abort().expect("active");
            break;
        }
        if world.apply_schedule(t) > 0 {
            state = world.rebase(state);
        }
        let out = world.step(state, a, rng)?;
        total_reward += out.reward;
        intention.record_outcome(world, state, out.next, out.object_reward).expect("active");
        state = out.next;
        t += 1;
    }
    Ok(ExecutionReport { intention, final_state: state, total_reward })
}

/// Scores a finished intention. Reaching the goal charges the shortfall of
/// `obtained` against the anticipated value; failing or aborting charges
/// the whole anticipated value.
pub fn plan_frustration(
    intention: &Intention,
    obtained: f64,
    certainty: f64,
    attention: f64,
    t: u64,
) -> Result<FrustrationEvent, PlanError> {
    let obtained = match intention.status() {
        IntentionStatus::Active => return Err(PlanError::NotTerminal),
        IntentionStatus::Reached => obtained,
        IntentionStatus::Aborted | IntentionStatus::Failed => 0.0,
    };
    Ok(FrustrationEvent::new(
        t,
        Source::PlanLoss,
        Timescale::Plan,
        intention.goal.anticipated_value,
        obtained,
        certainty,
        attention,
        1,
    )?)
}
