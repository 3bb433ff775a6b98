//! Deterministic, seedable grid-world environments.
//!
//! Both environments expose the full global state to every policy and
//! share a binary occupancy codec: one bit per (entity slot, cell).
//! Transitions are pure functions of `(state, joint action)`, so a seed
//! plus an action sequence fully determines a trajectory.

pub mod codec;
pub mod lbf;
pub mod pp;

pub use codec::{SlotDesc, StateCodec};
pub use lbf::{LbfConfig, LbfEnv};
pub use pp::{PpConfig, PpEnv};

use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Predator,
    Prey,
    Agent,
    Food,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Predator => 0,
            Role::Prey => 1,
            Role::Agent => 2,
            Role::Food => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Role> {
        Ok(match c {
            0 => Role::Predator,
            1 => Role::Prey,
            2 => Role::Agent,
            3 => Role::Food,
            _ => return Err(Error::data(format!("unknown role code {c}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub role: Role,
    pub pos: (i32, i32),
    pub level: u8,
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridWorldState {
    pub grid_w: i32,
    pub grid_h: i32,
    pub entities: Vec<Entity>,
    pub step_index: usize,
    pub horizon: usize,
}

impl GridWorldState {
    pub fn in_bounds(&self, p: (i32, i32)) -> bool {
        p.0 >= 0 && p.0 < self.grid_w && p.1 >= 0 && p.1 < self.grid_h
    }

    pub fn occupied(&self, p: (i32, i32)) -> bool {
        self.entities.iter().any(|e| e.alive && e.pos == p)
    }

    pub fn entities_with_role(&self, role: Role) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.role == role)
    }
}

/// Movement actions shared by both environments. North is `y - 1`.
pub const MOVE_DELTAS: [(i32, i32); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

pub fn move_delta(action: usize) -> Option<(i32, i32)> {
    MOVE_DELTAS.get(action).copied()
}

pub fn manhattan(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

pub fn chebyshev(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Places `count` entities on distinct random cells.
pub(crate) fn place_distinct(
    rng: &mut ChaCha8Rng,
    grid_w: i32,
    grid_h: i32,
    count: usize,
) -> Result<Vec<(i32, i32)>> {
    let cells = (grid_w * grid_h) as usize;
    if count > cells {
        return Err(Error::config(format!(
            "grid {grid_w}x{grid_h} too small to host {count} entities"
        )));
    }
    let mut taken: Vec<(i32, i32)> = Vec::with_capacity(count);
    while taken.len() < count {
        let x = rng.random_range(0..grid_w);
        let y = rng.random_range(0..grid_h);
        if !taken.contains(&(x, y)) {
            taken.push((x, y));
        }
    }
    Ok(taken)
}

/// Common interface over the two environments.
pub trait Env: Sync {
    fn name(&self) -> &'static str;
    fn action_count(&self) -> usize;
    /// Number of controllable agents (ego plus teammates).
    fn controllable_agents(&self) -> usize;
    fn horizon(&self) -> usize;
    fn codec(&self) -> &StateCodec;
    fn reset(&self, seed: u64) -> GridWorldState;
    fn step(&self, state: &GridWorldState, joint: &[usize]) -> Result<(GridWorldState, f64, bool)>;
}

pub(crate) fn check_joint(joint: &[usize], agents: usize, actions: usize) -> Result<()> {
    if joint.len() != agents {
        return Err(Error::invalid(format!(
            "joint action has {} entries, expected {agents}",
            joint.len()
        )));
    }
    for &a in joint {
        if a >= actions {
            return Err(Error::invalid(format!("action index {a} out of range 0..{actions}")));
        }
    }
    Ok(())
}
