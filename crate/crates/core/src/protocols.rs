//! Scripted experiments: the hedonic treadmill, the corridor replay
//! benchmark and curiosity coverage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::solved_values;
use crate::replay::{backward_sweep, priority, sample_proportional, Experience, ReplayBuffer};
use crate::rng::{stream, Stream};
use crate::values::{
    curiosity_bonus, curious_greedy_action, epsilon_greedy, reward_loss, td_update, ExpectationBaseline,
    LearningParams, ValueError, ValueScheme, ValueStore,
};
use crate::world::{Action, Cell, StateId, WorldModel};

/// Runs one episode of an epsilon-greedy policy over fixed values and
/// returns its summed reward.
fn fixed_episode<R: Rng>(
    world: &mut WorldModel,
    values: &ValueStore,
    epsilon: f64,
    max_steps: usize,
    rng_act: &mut R,
    rng_world: &mut R,
) -> f64 {
    world.restore_objects();
    let mut s = world.start_state();
    let mut total = 0.0;
    for _ in 0..max_steps {
        let a = epsilon_greedy(values, s, epsilon, rng_act);
        let out = world.step(s, a, rng_world).expect("valid state");
        total += out.reward;
        s = out.next;
        if out.collected.is_some() {
            break;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreadmillParams {
    pub adaptation_rate: f64,
    pub epsilon: f64,
    pub episode_length: usize,
    /// Baseline must come within this fraction of the rich reward level.
    pub tolerance: f64,
    pub max_rich_episodes: usize,
}

impl Default for TreadmillParams {
    fn default() -> Self {
        TreadmillParams {
            adaptation_rate: 0.2,
            epsilon: 0.1,
            episode_length: 50,
            tolerance: 0.05,
            max_rich_episodes: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreadmillReport {
    pub seed: u64,
    pub rich_episodes: usize,
    /// Mean per-episode reward over the rich phase.
    pub rich_level: f64,
    pub baseline_at_reversion: f64,
    pub first_lean_reward: f64,
    pub first_lean_loss: f64,
    pub converged: bool,
}

/// Boost-then-revert: a fixed policy collects rewards in the rich world
/// until the baseline has adapted to within `tolerance` of the rich level,
/// then plays one episode in the lean world.
pub fn hedonic_treadmill(
    rich: &WorldModel,
    lean: &WorldModel,
    params: &TreadmillParams,
    seed: u64,
) -> Result<TreadmillReport, ValueError> {
    let learning = LearningParams::default();
    let rich_values = solved_values(rich, &learning)?;
    let lean_values = solved_values(lean, &learning)?;
    let mut rng_act = stream(seed, Stream::Exploration);
    let mut rng_world = stream(seed, Stream::World);
    let mut baseline = ExpectationBaseline::new(0.0, params.adaptation_rate);
    let mut rich = rich.clone();
    let mut sum = 0.0;
    let mut n = 0;
    let mut converged = false;
    while n < params.max_rich_episodes {
        let r =
            fixed_episode(&mut rich, &rich_values, params.epsilon, params.episode_length, &mut rng_act, &mut rng_world);
        baseline = baseline.update(r);
        sum += r;
        n += 1;
        let level = sum / n as f64;
        if (baseline.level - level).abs() <= params.tolerance * level.abs() {
            converged = true;
            break;
        }
    }
    let mut lean = lean.clone();
    let first =
        fixed_episode(&mut lean, &lean_values, params.epsilon, params.episode_length, &mut rng_act, &mut rng_world);
    Ok(TreadmillReport {
        seed,
        rich_episodes: n,
        rich_level: sum / n.max(1) as f64,
        baseline_at_reversion: baseline.level,
        first_lean_reward: first,
        first_lean_loss: reward_loss(baseline.level, first),
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorridorLearner {
    /// One TD update per real step.
    Td,
    /// TD plus prioritized backward replay after every episode.
    PrioritizedReplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorridorParams {
    pub length: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Backward sweeps drawn per episode.
    pub sweeps: usize,
    pub sweep_length: usize,
    pub max_steps: u64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        CorridorParams {
            length: 20,
            alpha: 0.5,
            gamma: 0.9,
            epsilon: 0.1,
            sweeps: 50,
            sweep_length: 20,
            max_steps: 5_000_000,
        }
    }
}

/// A `1 x length` corridor, start at the west end, reward 1 at the east end.
pub fn corridor(length: usize) -> WorldModel {
    let row: String =
        std::iter::once('S').chain(std::iter::repeat_n('.', length - 2)).chain(std::iter::once('R')).collect();
    WorldModel::from_ascii(&[row.as_str()], 1.0, 1.0).expect("corridor is valid")
}

fn greedy_is_optimal(store: &ValueStore, world: &WorldModel) -> bool {
    (0..world.width() - 1).all(|x| store.greedy_action(world.state_of(Cell::new(x, 0))) == Action::East)
}

/// Environment interactions until the greedy policy heads east from every
/// non-terminal cell, or `None` within `max_steps`.
pub fn corridor_interactions(learner: CorridorLearner, params: &CorridorParams, seed: u64) -> Option<u64> {
    let mut world = corridor(params.length);
    let learning = LearningParams {
        alpha: params.alpha,
        scheme: ValueScheme::Discounted { gamma: params.gamma },
        epsilon: params.epsilon,
        ..Default::default()
    };
    let mut rng_act = stream(seed, Stream::Exploration);
    let mut rng_world = stream(seed, Stream::World);
    let mut rng_replay = stream(seed, Stream::Wandering);
    let mut store = ValueStore::with_capacity(world.state_bound());
    let mut buffer = ReplayBuffer::new(params.max_steps as usize * 2 + 2);
    let mut steps = 0u64;
    let mut episode = 0u64;
    while steps < params.max_steps {
        world.restore_objects();
        let mut s = world.start_state();
        let episode_start = buffer.len();
        loop {
            let a = epsilon_greedy(&store, s, params.epsilon, &mut rng_act);
            let out = world.step(s, a, &mut rng_world).expect("valid state");
            steps += 1;
            let terminal = out.collected.is_some();
            let parts = if terminal {
                vec![
                    Experience { s, a, r: out.reward - out.object_reward, s_next: out.next, t: steps, terminal: false },
                    Experience {
                        s: out.next,
                        a: Action::Stay,
                        r: out.object_reward,
                        s_next: out.next,
                        t: steps,
                        terminal: true,
                    },
                ]
            } else {
                vec![Experience { s, a, r: out.reward, s_next: out.next, t: steps, terminal: false }]
            };
            for p in &parts {
                td_update(&mut store, p, &learning);
                buffer.push(*p, episode, None);
            }
            s = out.next;
            if greedy_is_optimal(&store, &world) {
                return Some(steps);
            }
            if terminal || steps >= params.max_steps {
                break;
            }
        }
        if learner == CorridorLearner::PrioritizedReplay {
            // sweeps are seeded from the episode just lived
            for _ in 0..params.sweeps {
                let weights: Vec<f64> =
                    buffer.iter().skip(episode_start).map(|e| priority(&e.exp, &store, learning.scheme)).collect();
                if weights.iter().all(|w| *w == 0.0) {
                    break;
                }
                let seed_index =
                    episode_start + sample_proportional(&weights, &mut rng_replay).expect("non-empty episode");
                backward_sweep(&buffer, seed_index, params.sweep_length, &mut store, &learning);
            }
            if greedy_is_optimal(&store, &world) {
                return Some(steps);
            }
        }
        episode += 1;
    }
    None
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub seed: u64,
    pub pairs: usize,
    /// Steps until every state-action pair was tried, if it happened.
    pub steps_to_cover: Option<u64>,
    pub bound: u64,
}

/// Step budget for coverage: every pair, times the grid diameter, times
/// the number of actions.
pub fn coverage_bound(world: &WorldModel) -> u64 {
    let pairs = (world.open_cells().count() * Action::ALL.len()) as u64;
    pairs * (world.width() + world.height()) as u64 * Action::ALL.len() as u64
}

/// Greedy (epsilon 0) curiosity-driven exploration of a reward-free world
/// from a seed-chosen start cell. Counts steps until every state-action
/// pair has been visited.
pub fn curiosity_coverage(world: &WorldModel, learning: &LearningParams, bound: u64, seed: u64) -> CoverageReport {
    let mut world = world.clone();
    let cells: Vec<Cell> = world.open_cells().collect();
    let mut rng = stream(seed, Stream::World);
    let mut s = world.state_of(cells[rng.gen_range(0..cells.len())]);
    let kappa = learning.curiosity_kappa;
    let mut store = ValueStore::with_capacity(world.state_bound());
    let pairs = cells.len() * Action::ALL.len();
    let mut covered = 0;
    let mut steps_to_cover = None;
    for step in 1..=bound {
        let a = curious_greedy_action(&store, s, kappa);
        if store.visits(s, a) == 0 {
            covered += 1;
        }
        let out = world.step(s, a, &mut rng).expect("valid state");
        let r = out.reward + curiosity_bonus(&store, s, a, kappa);
        td_update(&mut store, &Experience { s, a, r, s_next: out.next, t: step, terminal: false }, learning);
        s = out.next;
        if covered == pairs {
            steps_to_cover = Some(step);
            break;
        }
    }
    CoverageReport { seed, pairs, steps_to_cover, bound }
}

/// State ids of all open cells in epoch 0.
pub fn open_states(world: &WorldModel) -> Vec<StateId> {
    world.open_cells().map(|c| world.state_of(c)).collect()
}
