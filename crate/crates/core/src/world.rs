//! Discrete gridworld with reward objects, hazards, a noisy observation
//! channel and scheduled object relocations.
//!
//! States are `(cell, epoch)` pairs. Each applied relocation starts a new
//! epoch, so values learned before a relocation stay attached to the old
//! configuration and the agent has to re-learn after it.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod io;

pub use io::{LoadError, ObjectSpec, RelocationSpec, WorldFile};

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("invalid state {0}")]
    InvalidState(StateId),
    #[error("world configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Index of an `(agent cell, world epoch)` configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    North,
    East,
    South,
    West,
    Stay,
}

impl Action {
    /// Fixed enumeration order; also the tie-break order everywhere.
    pub const ALL: [Action; 5] = [Action::North, Action::East, Action::South, Action::West, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    /// The two perpendicular moves. `Stay` has none.
    pub fn laterals(self) -> Option<[Action; 2]> {
        match self {
            Action::North | Action::South => Some([Action::East, Action::West]),
            Action::East | Action::West => Some([Action::North, Action::South]),
            Action::Stay => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::North => "N",
            Action::East => "E",
            Action::South => "S",
            Action::West => "W",
            Action::Stay => "stay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "obj#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectKind {
    Reward { magnitude: f64, consumable: bool },
    Hazard { magnitude: f64 },
}

impl ObjectKind {
    /// Signed reward delivered on landing.
    pub fn reward(self) -> f64 {
        match self {
            ObjectKind::Reward { magnitude, .. } => magnitude,
            ObjectKind::Hazard { magnitude } => -magnitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellKind {
    Empty,
    Wall,
    RewardObject { id: ObjectId, magnitude: f64, consumable: bool },
    Hazard { id: ObjectId, magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldObject {
    pub id: ObjectId,
    pub kind: ObjectKind,
    /// Position per epoch; `homes[e]` is where the object sits in epoch `e`.
    homes: Vec<Cell>,
    present: bool,
}

impl WorldObject {
    pub fn home(&self, epoch: usize) -> Cell {
        self.homes[epoch]
    }

    pub fn is_present(&self) -> bool {
        self.present
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relocation {
    pub t: u64,
    pub object: ObjectId,
    pub to: Cell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: StateId,
    /// Object reward at the landed cell minus the step cost.
    pub reward: f64,
    /// The object part of `reward` (0 on empty cells).
    pub object_reward: f64,
    /// Reward object collected on landing, consumable or not.
    pub collected: Option<ObjectId>,
    /// Set when the collected object was consumable and has been removed.
    pub consumed: Option<ObjectId>,
    pub hazard: Option<ObjectId>,
    pub slipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub reported_state: StateId,
    pub confusion_applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    objects: Vec<WorldObject>,
    start: Cell,
    pub slip_probability: f64,
    pub step_cost: f64,
    pub observation_confusion: f64,
    schedule: Vec<Relocation>,
    applied: usize,
}

impl WorldModel {
    /// Builds and validates a world. Object positions are the epoch-0 homes.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        walls: &[Cell],
        objects: &[(ObjectId, ObjectKind, Cell)],
        start: Option<Cell>,
        slip_probability: f64,
        step_cost: f64,
        observation_confusion: f64,
        schedule: &[Relocation],
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::Config("width and height must be positive".into()));
        }
        let mut wall_map = vec![false; width * height];
        for w in walls {
            if w.x >= width || w.y >= height {
                return Err(WorldError::Config(format!("wall {w} outside the grid")));
            }
            wall_map[w.y * width + w.x] = true;
        }
        if wall_map.iter().all(|&w| w) {
            return Err(WorldError::Config("no non-wall cell".into()));
        }
        if !(0.0..=1.0).contains(&slip_probability) {
            return Err(WorldError::Config(format!("slip_probability {slip_probability} not in [0,1]")));
        }
        if !(step_cost >= 0.0 && step_cost.is_finite()) {
            return Err(WorldError::Config(format!("step_cost {step_cost} must be >= 0")));
        }
        if !(0.0..1.0).contains(&observation_confusion) {
            return Err(WorldError::Config(format!("observation_confusion {observation_confusion} not in [0,1)")));
        }
        for pair in schedule.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(WorldError::Config("schedule step indices must be strictly increasing".into()));
            }
        }

        let free = |c: Cell| c.x < width && c.y < height && !wall_map[c.y * width + c.x];
        let mut objs = Vec::with_capacity(objects.len());
        for &(id, kind, at) in objects {
            if objs.iter().any(|o: &WorldObject| o.id == id) {
                return Err(WorldError::Config(format!("duplicate object id {id}")));
            }
            let magnitude = match kind {
                ObjectKind::Reward { magnitude, .. } | ObjectKind::Hazard { magnitude } => magnitude,
            };
            if !(magnitude > 0.0 && magnitude.is_finite()) {
                return Err(WorldError::Config(format!("{id}: magnitude must be > 0")));
            }
            if !free(at) {
                return Err(WorldError::Config(format!("{id} placed on wall or off-grid cell {at}")));
            }
            objs.push(WorldObject { id, kind, homes: vec![at], present: true });
        }
        // Precompute object homes for every epoch.
        for (e, r) in schedule.iter().enumerate() {
            if !free(r.to) {
                return Err(WorldError::Config(format!(
                    "relocation of {} at t={} targets wall or off-grid cell {}",
                    r.object, r.t, r.to
                )));
            }
            if !objs.iter().any(|o| o.id == r.object) {
                return Err(WorldError::Config(format!("relocation at t={} names unknown object {}", r.t, r.object)));
            }
            for o in objs.iter_mut() {
                let prev = o.homes[e];
                o.homes.push(if o.id == r.object { r.to } else { prev });
            }
        }

        let start = match start {
            Some(c) if free(c) => c,
            Some(c) => return Err(WorldError::Config(format!("start {c} is a wall or off-grid"))),
            None => {
                let i = wall_map.iter().position(|&w| !w).expect("checked above");
                Cell::new(i % width, i / width)
            }
        };

        Ok(WorldModel {
            width,
            height,
            walls: wall_map,
            objects: objs,
            start,
            slip_probability,
            step_cost,
            observation_confusion,
            schedule: schedule.to_vec(),
            applied: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn objects(&self) -> &[WorldObject] {
        &self.objects
    }

    pub fn schedule(&self) -> &[Relocation] {
        &self.schedule
    }

    /// Number of epochs the schedule can produce.
    pub fn epoch_count(&self) -> usize {
        self.schedule.len() + 1
    }

    pub fn epoch(&self) -> usize {
        self.applied
    }

    pub fn cells_per_epoch(&self) -> usize {
        self.width * self.height
    }

    /// Upper bound (exclusive) on state indices across all epochs.
    pub fn state_bound(&self) -> usize {
        self.cells_per_epoch() * self.epoch_count()
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[c.y * self.width + c.x]
    }

    pub fn open_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
            .filter(move |&c| !self.is_wall(c))
    }

    pub fn state_at(&self, c: Cell, epoch: usize) -> StateId {
        StateId(epoch * self.cells_per_epoch() + c.y * self.width + c.x)
    }

    /// State of cell `c` in the current epoch.
    pub fn state_of(&self, c: Cell) -> StateId {
        self.state_at(c, self.applied)
    }

    pub fn start_state(&self) -> StateId {
        self.state_of(self.start)
    }

    pub fn cell_of(&self, s: StateId) -> Cell {
        let i = s.0 % self.cells_per_epoch();
        Cell::new(i % self.width, i / self.width)
    }

    pub fn epoch_of(&self, s: StateId) -> usize {
        s.0 / self.cells_per_epoch()
    }

    pub fn is_valid(&self, s: StateId) -> bool {
        s.0 < self.state_bound() && !self.is_wall(self.cell_of(s))
    }

    pub fn check(&self, s: StateId) -> Result<(), WorldError> {
        if self.is_valid(s) {
            Ok(())
        } else {
            Err(WorldError::InvalidState(s))
        }
    }

    /// Same cell, current epoch.
    pub fn rebase(&self, s: StateId) -> StateId {
        self.state_of(self.cell_of(s))
    }

    /// Cell reached by an unslipped move; walls and the grid edge block.
    pub fn intended_cell(&self, c: Cell, a: Action) -> Cell {
        let target = match a {
            Action::North if c.y > 0 => Cell::new(c.x, c.y - 1),
            Action::South => Cell::new(c.x, c.y + 1),
            Action::West if c.x > 0 => Cell::new(c.x - 1, c.y),
            Action::East => Cell::new(c.x + 1, c.y),
            _ => c,
        };
        if self.is_wall(target) {
            c
        } else {
            target
        }
    }

    /// Object at `c` in epoch `epoch`, ignoring consumption.
    pub fn object_at(&self, c: Cell, epoch: usize) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.homes[epoch] == c)
    }

    fn present_object_at(&self, c: Cell) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.present && o.homes[self.applied] == c)
    }

    pub fn cell_kind(&self, c: Cell) -> CellKind {
        if self.is_wall(c) {
            return CellKind::Wall;
        }
        match self.present_object_at(c) {
            Some(o) => match o.kind {
                ObjectKind::Reward { magnitude, consumable } => {
                    CellKind::RewardObject { id: o.id, magnitude, consumable }
                }
                ObjectKind::Hazard { magnitude } => CellKind::Hazard { id: o.id, magnitude },
            },
            None => CellKind::Empty,
        }
    }

    /// Hazards in the current epoch as `(cell, magnitude)`.
    pub fn hazards(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.objects.iter().filter_map(move |o| match o.kind {
            ObjectKind::Hazard { magnitude } if o.present => Some((o.homes[self.applied], magnitude)),
            _ => None,
        })
    }

    /// Whether a reward object sits at the cell of `s` in the epoch of `s`.
    pub fn is_goal_state(&self, s: StateId) -> bool {
        let epoch = self.epoch_of(s);
        epoch < self.epoch_count()
            && self.object_at(self.cell_of(s), epoch).is_some_and(|o| matches!(o.kind, ObjectKind::Reward { .. }))
    }

    /// Distinct cells one move away, as states in the epoch of `s`.
    pub fn neighbors(&self, s: StateId) -> Vec<StateId> {
        let c = self.cell_of(s);
        let epoch = self.epoch_of(s);
        let mut out = Vec::with_capacity(4);
        for a in &Action::ALL[..4] {
            let n = self.intended_cell(c, *a);
            if n != c {
                let ns = self.state_at(n, epoch);
                if !out.contains(&ns) {
                    out.push(ns);
                }
            }
        }
        out
    }

    /// One environment transition from `s`. The result is expressed in the
    /// current epoch regardless of the epoch encoded in `s`.
    pub fn step<R: Rng + ?Sized>(&mut self, s: StateId, a: Action, rng: &mut R) -> Result<StepOutcome, WorldError> {
        self.check(s)?;
        let c = self.cell_of(s);
        let mut slipped = false;
        let mut actual = a;
        if self.slip_probability > 0.0 {
            if let Some(lat) = a.laterals() {
                if rng.gen::<f64>() < self.slip_probability {
                    actual = lat[rng.gen_range(0..2)];
                    slipped = true;
                }
            }
        }
        let landed = self.intended_cell(c, actual);
        let mut outcome = StepOutcome {
            next: self.state_of(landed),
            reward: -self.step_cost,
            object_reward: 0.0,
            collected: None,
            consumed: None,
            hazard: None,
            slipped,
        };
        let epoch = self.applied;
        if let Some(obj) = self.objects.iter_mut().find(|o| o.present && o.homes[epoch] == landed) {
            outcome.object_reward = obj.kind.reward();
            outcome.reward += outcome.object_reward;
            match obj.kind {
                ObjectKind::Reward { consumable, .. } => {
                    outcome.collected = Some(obj.id);
                    if consumable {
                        obj.present = false;
                        outcome.consumed = Some(obj.id);
                    }
                }
                ObjectKind::Hazard { .. } => outcome.hazard = Some(obj.id),
            }
        }
        Ok(outcome)
    }

    /// Reports the true state, or with probability `observation_confusion`
    /// a uniformly chosen neighbouring configuration.
    pub fn observe<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> Observation {
        if self.observation_confusion > 0.0 && rng.gen::<f64>() < self.observation_confusion {
            let nbrs = self.neighbors(s);
            if !nbrs.is_empty() {
                return Observation { reported_state: nbrs[rng.gen_range(0..nbrs.len())], confusion_applied: true };
            }
        }
        Observation { reported_state: s, confusion_applied: false }
    }

    /// Applies every relocation with step index `<= t` not yet applied.
    /// Returns how many were applied by this call.
    pub fn apply_schedule(&mut self, t: u64) -> usize {
        let before = self.applied;
        while self.applied < self.schedule.len() && self.schedule[self.applied].t <= t {
            self.applied += 1;
        }
        self.applied - before
    }

    /// Restores consumed objects (episode reset). Relocations persist.
    pub fn restore_objects(&mut self) {
        for o in &mut self.objects {
            o.present = true;
        }
    }

    /// BFS distance between two cells over unslipped moves.
    pub fn bfs_distance(&self, from: Cell, to: Cell) -> Option<usize> {
        self.bfs_distances(from)[to.y * self.width + to.x]
    }

    /// BFS distances from `from` to every cell.
    pub fn bfs_distances(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells_per_epoch()];
        if self.is_wall(from) {
            return dist;
        }
        let mut queue = VecDeque::from([from]);
        dist[from.y * self.width + from.x] = Some(0);
        while let Some(c) = queue.pop_front() {
            let d = dist[c.y * self.width + c.x].unwrap();
            for a in &Action::ALL[..4] {
                let n = self.intended_cell(c, *a);
                let slot = &mut dist[n.y * self.width + n.x];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Builds a world from an ASCII map: `#` wall, `.` empty, `R` reward,
    /// `H` hazard, `S` start. Objects are numbered from 1 in reading order.
    pub fn from_ascii(rows: &[&str], reward_magnitude: f64, hazard_magnitude: f64) -> Result<Self, WorldError> {
        let spec = io::parse_ascii(rows, reward_magnitude, hazard_magnitude)?;
        WorldModel::new(spec.width, spec.height, &spec.walls, &spec.objects, spec.start, 0.0, 0.0, 0.0, &[])
    }
}
