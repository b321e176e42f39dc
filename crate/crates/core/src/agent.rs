//! The agent loop: observe, check interrupts, deliberate or act from habit,
//! step the world, learn, wander, and score every shortfall in the ledger.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{
    check_interrupts, depression_gate, flee_action, self_evaluate, Interrupt, InterruptPolicy, Mode, SelfModel,
};
use crate::interventions::scale_expectation;
use crate::planning::{
    commit, plan_frustration, suggest_goals, Goal, Intention, IntentionStatus, PlanError, PlanSearchParams,
};
use crate::replay::{
    step_expectation, wandering_step, Experience, OutcomeMemory, ReplayBuffer, WanderScope, WanderingParams,
};
use crate::rng::{stream, stream_at, Stream, StreamRng};
use crate::suffering::{
    certainty_of, ExactSum, FrustrationEvent, Ledger, Source, SufferingError, Timescale, TimescaleWeights,
};
use crate::values::{
    curiosity_bonus, curious_greedy_action, reward_loss, td_update, value_iteration, ExpectationBaseline,
    LearningParams, Mdp, ValueError, ValueStore,
};
use crate::world::{Action, StateId, WorldError, WorldModel};

use rand::Rng;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Suffering(#[from] SufferingError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

/// How the agent's values evolve during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Values start at zero and are learned from real and simulated
    /// experience.
    Learn,
    /// Values are solved once from the known world and never updated, so
    /// behaviour is identical across equation-term interventions.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub learning: LearningParams,
    pub planning: PlanSearchParams,
    /// Moves within which desire looks for goals.
    pub reach: usize,
    /// Value a state must exceed to be suggested as a goal.
    pub goal_threshold: f64,
    pub wandering: WanderingParams,
    pub interrupts: InterruptPolicy,
    pub self_model: SelfModel,
    pub weights: TimescaleWeights,
    pub episode_length: usize,
    pub policy: PolicyMode,
    pub expectation_scale: f64,
    pub certainty_scale: f64,
    pub attention_scale: f64,
    pub acceptance: bool,
    pub coupled: bool,
    pub intervention: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            learning: LearningParams::default(),
            planning: PlanSearchParams::default(),
            reach: 6,
            goal_threshold: 0.5,
            wandering: WanderingParams::default(),
            interrupts: InterruptPolicy::default(),
            self_model: SelfModel::default(),
            weights: TimescaleWeights::default(),
            episode_length: 100,
            policy: PolicyMode::Learn,
            expectation_scale: 1.0,
            certainty_scale: 1.0,
            attention_scale: 1.0,
            acceptance: false,
            coupled: false,
            intervention: "baseline".into(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.learning.validate().map_err(|e| e.to_string())?;
        self.planning.validate()?;
        self.wandering.validate()?;
        self.interrupts.validate()?;
        self.self_model.validate()?;
        if self.reach == 0 {
            return Err("reach must be positive".into());
        }
        if self.episode_length == 0 {
            return Err("episode_length must be positive".into());
        }
        if !self.goal_threshold.is_finite() {
            return Err("goal_threshold must be finite".into());
        }
        for (name, v) in [
            ("expectation_scale", self.expectation_scale),
            ("certainty_scale", self.certainty_scale),
            ("attention_scale", self.attention_scale),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} not in [0,1]"));
            }
        }
        let w = self.weights;
        if !(w.step >= 0.0 && w.plan >= 0.0 && w.self_eval >= 0.0) {
            return Err("timescale weights must be >= 0".into());
        }
        Ok(())
    }
}

/// How the action of a step was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Plan,
    Habit,
    Flee,
    Wait,
}

/// One audited step. Every ledger event recorded during the step is
/// accounted for by one of the fields below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub episode: u64,
    pub state: usize,
    pub observed: usize,
    pub action: String,
    pub decision: Decision,
    pub reward: f64,
    /// Step expectation after intervention scaling.
    pub expected: f64,
    pub threat: bool,
    pub desire: bool,
    /// Intentions that reached a terminal status this step.
    pub plan_terminals: u32,
    pub self_eval: bool,
    pub meta: bool,
    pub wander_fired: bool,
    pub replayed: usize,
    pub imagined: usize,
    pub wander_negative: usize,
    pub episode_end: bool,
    pub events: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub episodes: u64,
    pub obtained_reward: f64,
    pub object_reward: f64,
    pub reached: u64,
    pub aborted: u64,
    pub failed: u64,
    pub threat_interrupts: u64,
    pub desire_interrupts: u64,
    pub wander_fired: u64,
    pub replayed: u64,
    pub imagined: u64,
    pub waiting_steps: u64,
    /// Summed episode-level reward loss against the adaptive baseline.
    pub treadmill_loss: f64,
}

pub struct Agent {
    cfg: AgentConfig,
    /// Learning applied to values: `cfg.learning`, or a zero-rate copy in
    /// fixed-policy mode.
    update: LearningParams,
    world: WorldModel,
    seed: u64,
    store: ValueStore,
    ledger: Ledger,
    buffer: ReplayBuffer,
    memory: OutcomeMemory,
    baseline: ExpectationBaseline,
    self_model: SelfModel,
    intention: Option<Intention>,
    replan_block: bool,
    consecutive_failed: u32,
    state: StateId,
    t: u64,
    episode: u64,
    episode_steps: usize,
    episode_reward: f64,
    episode_rewards: Vec<f64>,
    rng_world: StreamRng,
    rng_obs: StreamRng,
    rng_explore: StreamRng,
    trace: Vec<TraceRow>,
    stats: RunStats,
    treadmill: ExactSum,
}

/// Values of the world solved for every epoch, as a fixed habit.
pub fn solved_values(world: &WorldModel, params: &LearningParams) -> Result<ValueStore, ValueError> {
    let mut store = ValueStore::with_capacity(world.state_bound());
    for epoch in 0..world.epoch_count() {
        let mdp = Mdp::from_world(world, epoch);
        let solved = value_iteration(&mdp, params.scheme, 1e-10, 100_000)?;
        for &s in &mdp.states {
            store.set_v(s, solved.v(s));
            for a in Action::ALL {
                store.set_q(s, a, solved.q(s, a));
            }
        }
    }
    Ok(store)
}

impl Agent {
    pub fn new(cfg: AgentConfig, world: WorldModel, seed: u64) -> Result<Self, AgentError> {
        cfg.validate().map_err(AgentError::Config)?;
        let (store, update) = match cfg.policy {
            PolicyMode::Learn => (ValueStore::with_capacity(world.state_bound()), cfg.learning),
            PolicyMode::Fixed => (solved_values(&world, &cfg.learning)?, LearningParams { alpha: 0.0, ..cfg.learning }),
        };
        let mut world = world;
        world.apply_schedule(0);
        let state = world.start_state();
        Ok(Agent {
            update,
            buffer: ReplayBuffer::new(cfg.wandering.capacity),
            baseline: ExpectationBaseline::new(0.0, cfg.learning.baseline_rate),
            self_model: cfg.self_model,
            cfg,
            world,
            seed,
            store,
            ledger: Ledger::new(),
            memory: OutcomeMemory::default(),
            intention: None,
            replan_block: false,
            consecutive_failed: 0,
            state,
            t: 0,
            episode: 0,
            episode_steps: 0,
            episode_reward: 0.0,
            episode_rewards: Vec::new(),
            rng_world: stream(seed, Stream::World),
            rng_obs: stream(seed, Stream::Observation),
            rng_explore: stream(seed, Stream::Exploration),
            trace: Vec::new(),
            stats: RunStats::default(),
            treadmill: ExactSum::default(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn store(&self) -> &ValueStore {
        &self.store
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn intention(&self) -> Option<&Intention> {
        self.intention.as_ref()
    }

    pub fn mode(&self) -> Mode {
        self.self_model.mode
    }

    pub fn state(&self) -> StateId {
        self.state
    }

    pub fn stats(&self) -> RunStats {
        RunStats { treadmill_loss: self.treadmill.value(), ..self.stats.clone() }
    }

    pub fn episode_rewards(&self) -> &[f64] {
        &self.episode_rewards
    }

    pub fn run(&mut self, steps: u64) -> Result<(), AgentError> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    fn certainty(&self) -> f64 {
        certainty_of(self.world.observation_confusion, self.cfg.certainty_scale)
    }

    fn suggest(&self, from: StateId, t: u64) -> Vec<Goal> {
        let beta = self.cfg.expectation_scale;
        if !self.cfg.coupled {
            return suggest_goals(&self.store, &self.world, from, self.cfg.reach, self.cfg.goal_threshold, t);
        }
        // coupled: desire sees values through the lowered expectations
        if beta == 0.0 {
            return Vec::new();
        }
        let mut goals =
            suggest_goals(&self.store, &self.world, from, self.cfg.reach, self.cfg.goal_threshold / beta, t);
        for g in &mut goals {
            g.anticipated_value *= beta;
        }
        goals
    }

    fn habit_action(&mut self, s: StateId) -> Action {
        let eps = self.cfg.learning.epsilon;
        if eps > 0.0 && self.rng_explore.gen::<f64>() < eps {
            Action::ALL[self.rng_explore.gen_range(0..Action::ALL.len())]
        } else {
            curious_greedy_action(&self.store, s, self.cfg.learning.curiosity_kappa)
        }
    }

    /// Scores and closes the current intention.
    fn finish_intention(&mut self, row: &mut TraceRow) -> Result<(), AgentError> {
        let Some(mut it) = self.intention.take() else {
            return Ok(());
        };
        if it.is_active() {
            it.abort()?;
        }
        let obtained = match it.status() {
            IntentionStatus::Reached if self.world.is_goal_state(it.goal.target) => it.realized(),
            IntentionStatus::Reached => self.store.v(it.goal.target),
            _ => 0.0,
        };
        match it.status() {
            IntentionStatus::Reached => {
                self.stats.reached += 1;
                self.consecutive_failed = 0;
            }
            IntentionStatus::Failed => {
                self.stats.failed += 1;
                self.consecutive_failed += 1;
                self.replan_block = true;
            }
            IntentionStatus::Aborted => self.stats.aborted += 1,
            IntentionStatus::Active => unreachable!("aborted above"),
        }
        it.goal.anticipated_value = scale_expectation(it.goal.anticipated_value, self.cfg.expectation_scale);
        let e = plan_frustration(&it, obtained, self.certainty(), self.cfg.attention_scale, self.t)?;
        self.ledger.record(e)?;
        row.plan_terminals += 1;
        Ok(())
    }

    pub fn step(&mut self) -> Result<(), AgentError> {
        let t = self.t;
        let events_before = self.ledger.len();
        if self.world.apply_schedule(t) > 0 {
            self.state = self.world.rebase(self.state);
        }
        let state = self.state;
        let perceived = self.world.observe(state, &mut self.rng_obs).reported_state;
        let certainty = self.certainty();
        let attention = self.cfg.attention_scale;
        let mut row = TraceRow {
            t,
            episode: self.episode,
            state: state.0,
            observed: perceived.0,
            action: String::new(),
            decision: Decision::Habit,
            reward: 0.0,
            expected: 0.0,
            threat: false,
            desire: false,
            plan_terminals: 0,
            self_eval: false,
            meta: false,
            wander_fired: false,
            replayed: 0,
            imagined: 0,
            wander_negative: 0,
            episode_end: false,
            events: 0,
        };

        // interrupts
        let mut forced = None;
        let mut desired = None;
        match check_interrupts(
            &self.world,
            &self.store,
            perceived,
            self.intention.as_ref(),
            &self.cfg.interrupts,
            self.cfg.reach,
            t,
        ) {
            Some(Interrupt::Threat { level }) => {
                row.threat = true;
                self.stats.threat_interrupts += 1;
                self.finish_intention(&mut row)?;
                let obtained = -(level + self.cfg.interrupts.interrupt_cost);
                let e = FrustrationEvent::new(
                    t,
                    Source::ThreatInternal,
                    Timescale::Step,
                    0.0,
                    obtained,
                    certainty,
                    attention,
                    1,
                )?;
                self.ledger.record(e)?;
                forced = Some(flee_action(&self.world, perceived, self.cfg.interrupts.decay_length));
            }
            Some(Interrupt::Desire { goal }) => {
                row.desire = true;
                self.stats.desire_interrupts += 1;
                self.finish_intention(&mut row)?;
                desired = Some(goal);
            }
            None => {}
        }

        // deliberation or habit
        let (action, decision) = if let Some(a) = forced {
            (a, Decision::Flee)
        } else if self.self_model.mode == Mode::Waiting {
            self.stats.waiting_steps += 1;
            let a = self.habit_action(perceived);
            if self.rng_explore.gen::<f64>() < self.self_model.waiting_stay_prob {
                (Action::Stay, Decision::Wait)
            } else {
                (a, Decision::Wait)
            }
        } else {
            if self.intention.is_none() && !self.replan_block {
                let goals = match desired {
                    Some(g) => vec![g],
                    None => self.suggest(perceived, t),
                };
                self.intention = commit(&goals, &self.world, perceived, &self.store, &self.cfg.planning, t);
            }
            self.replan_block = false;
            match self.intention.as_ref().and_then(Intention::next_action) {
                Some(a) => (a, Decision::Plan),
                None => (self.habit_action(perceived), Decision::Habit),
            }
        };
        row.action = action.name().to_string();
        row.decision = decision;

        // act
        let out = self.world.step(state, action, &mut self.rng_world)?;
        let terminal = out.collected.is_some();
        let scheme = self.cfg.learning.scheme;
        let lived = Experience { s: state, a: action, r: out.reward, s_next: out.next, t, terminal };
        let expected = scale_expectation(step_expectation(&self.store, &lived, scheme), self.cfg.expectation_scale);
        row.reward = out.reward;
        row.expected = expected;
        let loss_event = if expected > out.reward {
            let e = FrustrationEvent::new(
                t,
                Source::StepLoss,
                Timescale::Step,
                expected,
                out.reward,
                certainty,
                attention,
                1,
            )?;
            Some(self.ledger.record(e)?)
        } else {
            None
        };

        // learn; a collected reward is split into the move and the
        // terminal collection so the reward is valued at the goal state
        let bonus = curiosity_bonus(&self.store, state, action, self.cfg.learning.curiosity_kappa);
        let parts = if terminal {
            vec![
                Experience { r: out.reward - out.object_reward + bonus, terminal: false, ..lived },
                Experience { s: out.next, a: Action::Stay, r: out.object_reward, s_next: out.next, t, terminal: true },
            ]
        } else {
            vec![Experience { r: out.reward + bonus, ..lived }]
        };
        for (i, part) in parts.iter().enumerate() {
            td_update(&mut self.store, part, &self.update);
            self.memory.record(part);
            self.buffer.push(*part, self.episode, if i == 0 { loss_event } else { None });
        }

        // intention bookkeeping
        if decision == Decision::Plan {
            if let Some(it) = self.intention.as_mut() {
                if it.record_outcome(&self.world, perceived, out.next, out.object_reward)? != IntentionStatus::Active {
                    self.finish_intention(&mut row)?;
                }
            }
        }
        let was = self.self_model.mode;
        self.self_model = depression_gate(&self.self_model, self.consecutive_failed, out.object_reward > 0.0);
        if was == Mode::Active && self.self_model.mode == Mode::Waiting {
            self.consecutive_failed = 0;
        }

        self.state = out.next;
        self.episode_reward += out.reward;
        self.episode_steps += 1;
        self.stats.steps += 1;
        self.stats.obtained_reward += out.reward;
        self.stats.object_reward += out.object_reward;

        // wander
        let mut wander_rng = stream_at(self.seed, Stream::Wandering, t);
        let scope = WanderScope {
            params: &self.cfg.wandering,
            learning: &self.update,
            model: &self.world,
            memory: &self.memory,
            buffer: &self.buffer,
            state: self.state,
            t,
            certainty,
            attention,
            expectation_scale: self.cfg.expectation_scale,
            goal_threshold: self.cfg.goal_threshold,
            plan: &self.cfg.planning,
        };
        let report = wandering_step(&scope, &mut self.store, &mut self.ledger, &mut wander_rng)?;
        row.wander_fired = report.fired;
        row.replayed = report.replayed;
        row.imagined = report.imagined;
        row.wander_negative = report.negative_items;
        self.stats.wander_fired += u64::from(report.fired);
        self.stats.replayed += report.replayed as u64;
        self.stats.imagined += report.imagined as u64;

        if terminal || self.episode_steps >= self.cfg.episode_length {
            self.end_episode(&mut row, certainty, attention)?;
        }
        row.events = self.ledger.len() - events_before;
        self.trace.push(row);
        self.t += 1;
        Ok(())
    }

    fn end_episode(&mut self, row: &mut TraceRow, certainty: f64, attention: f64) -> Result<(), AgentError> {
        row.episode_end = true;
        self.finish_intention(row)?;
        let reward = self.episode_reward;
        self.treadmill.add(reward_loss(self.baseline.level, reward));
        self.baseline = self.baseline.update(reward);
        self.episode_rewards.push(reward);

        let judged = SelfModel {
            standard: scale_expectation(self.self_model.standard, self.cfg.expectation_scale),
            ..self.self_model
        };
        if let Some(e) = self_evaluate(&judged, &self.episode_rewards, self.t, certainty, attention)? {
            let loss = e.loss();
            self.ledger.record(e)?;
            row.self_eval = true;
            if judged.meta_rate > 0.0 && !self.cfg.acceptance {
                let meta = FrustrationEvent::new(
                    self.t,
                    Source::Meta,
                    Timescale::SelfEval,
                    judged.meta_rate * loss,
                    0.0,
                    certainty,
                    attention,
                    1,
                )?;
                self.ledger.record(meta)?;
                row.meta = true;
            }
        }

        self.world.restore_objects();
        self.state = self.world.start_state();
        self.episode += 1;
        self.stats.episodes += 1;
        self.episode_steps = 0;
        self.episode_reward = 0.0;
        self.replan_block = false;
        Ok(())
    }
}
