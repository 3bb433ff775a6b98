//! Level-Based Foraging: leveled agents collect leveled food items.
//!
//! Actions: up, down, left, right, load, noop. A load succeeds on a
//! food when the levels of all orthogonally adjacent loading agents sum
//! to at least the food's level; the team then receives
//! `food_level / total_food_level`, so a fully cleared episode returns
//! exactly 1. Movement conflicts resolve by agent-index priority.

use super::{
    check_joint, manhattan, move_delta, place_distinct, Entity, Env, GridWorldState, Role,
    StateCodec,
};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::Rng;

pub const LBF_ACTIONS: usize = 6;
pub const LBF_LOAD: usize = 4;
pub const LBF_NOOP: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfConfig {
    pub grid_w: i32,
    pub grid_h: i32,
    pub agents: usize,
    pub foods: usize,
    pub max_agent_level: u8,
    /// Food levels are drawn from `min_food_level..=max_food_level`
    /// (capped by the team's level sum). The default floor of 3 makes
    /// every food a genuine co-loading problem for level-1/2 agents.
    pub min_food_level: u8,
    pub max_food_level: u8,
    pub horizon: usize,
}

impl Default for LbfConfig {
    fn default() -> Self {
        LbfConfig {
            grid_w: 8,
            grid_h: 8,
            agents: 3,
            foods: 3,
            max_agent_level: 2,
            min_food_level: 3,
            max_food_level: 4,
            horizon: 32,
        }
    }
}

pub struct LbfEnv {
    cfg: LbfConfig,
    codec: StateCodec,
}

impl LbfEnv {
    pub fn new(cfg: LbfConfig) -> Result<Self> {
        if cfg.agents < 2 {
            return Err(Error::config("level-based foraging needs at least 2 agents"));
        }
        if cfg.foods == 0 {
            return Err(Error::config("level-based foraging needs at least 1 food"));
        }
        if cfg.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        if cfg.max_agent_level == 0 || cfg.max_food_level == 0 || cfg.min_food_level == 0 {
            return Err(Error::config("levels must be positive"));
        }
        if cfg.min_food_level > cfg.max_food_level {
            return Err(Error::config("min food level exceeds max food level"));
        }
        let total = cfg.agents + cfg.foods;
        if total > (cfg.grid_w * cfg.grid_h) as usize {
            return Err(Error::config(format!(
                "grid {}x{} too small to host {total} entities",
                cfg.grid_w, cfg.grid_h
            )));
        }
        // Levels are drawn per episode, so the codec advertises the
        // slot layout with level 0; the dataset stores realized levels
        // inside each trajectory's states.
        let mut slots: Vec<_> =
            (0..cfg.agents).map(|_| super::SlotDesc { role: Role::Agent, level: 0 }).collect();
        slots.extend((0..cfg.foods).map(|_| super::SlotDesc { role: Role::Food, level: 0 }));
        let codec =
            StateCodec { grid_w: cfg.grid_w, grid_h: cfg.grid_h, horizon: cfg.horizon, slots };
        Ok(LbfEnv { cfg, codec })
    }

    pub fn config(&self) -> &LbfConfig {
        &self.cfg
    }

    fn food_range(&self) -> std::ops::Range<usize> {
        self.cfg.agents..self.cfg.agents + self.cfg.foods
    }

    fn total_food_level(state: &GridWorldState) -> f64 {
        state.entities_with_role(Role::Food).map(|e| e.level as f64).sum()
    }
}

impl Env for LbfEnv {
    fn name(&self) -> &'static str {
        "lbf"
    }

    fn action_count(&self) -> usize {
        LBF_ACTIONS
    }

    fn controllable_agents(&self) -> usize {
        self.cfg.agents
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn codec(&self) -> &StateCodec {
        &self.codec
    }

    fn reset(&self, seed: u64) -> GridWorldState {
        let mut rng = rng_from_seed(seed);
        let positions =
            place_distinct(&mut rng, self.cfg.grid_w, self.cfg.grid_h, self.cfg.agents + self.cfg.foods)
                .expect("validated at construction");
        let agent_levels: Vec<u8> =
            (0..self.cfg.agents).map(|_| rng.random_range(1..=self.cfg.max_agent_level)).collect();
        let team_sum: u8 = agent_levels.iter().sum();
        let food_cap = self.cfg.max_food_level.min(team_sum);
        let food_floor = self.cfg.min_food_level.min(food_cap);
        let mut entities: Vec<Entity> = Vec::with_capacity(positions.len());
        for (i, &pos) in positions.iter().enumerate() {
            if i < self.cfg.agents {
                entities.push(Entity { role: Role::Agent, pos, level: agent_levels[i], alive: true });
            } else {
                let level = rng.random_range(food_floor..=food_cap);
                entities.push(Entity { role: Role::Food, pos, level, alive: true });
            }
        }
        GridWorldState {
            grid_w: self.cfg.grid_w,
            grid_h: self.cfg.grid_h,
            entities,
            step_index: 0,
            horizon: self.cfg.horizon,
        }
    }

    fn step(&self, state: &GridWorldState, joint: &[usize]) -> Result<(GridWorldState, f64, bool)> {
        let foods_left = state.entities[self.food_range()].iter().any(|e| e.alive);
        if state.step_index >= state.horizon || !foods_left {
            return Err(Error::invalid("step on a terminal state"));
        }
        check_joint(joint, self.cfg.agents, LBF_ACTIONS)?;
        let mut next = state.clone();
        let total_level = Self::total_food_level(state);

        // Movement phase, agent-index priority.
        for (i, &action) in joint.iter().enumerate() {
            if let Some(d) = move_delta(action) {
                let cur = next.entities[i].pos;
                let target = (cur.0 + d.0, cur.1 + d.1);
                if next.in_bounds(target) && !next.occupied(target) {
                    next.entities[i].pos = target;
                }
            }
        }

        // Load phase: each food checks its adjacent loaders.
        let mut reward = 0.0;
        for f in self.food_range() {
            if !next.entities[f].alive {
                continue;
            }
            let food_pos = next.entities[f].pos;
            let food_level = next.entities[f].level as u32;
            let loader_sum: u32 = joint
                .iter()
                .enumerate()
                .filter(|&(i, &a)| a == LBF_LOAD && manhattan(next.entities[i].pos, food_pos) == 1)
                .map(|(i, _)| next.entities[i].level as u32)
                .sum();
            if loader_sum >= food_level {
                next.entities[f].alive = false;
                reward += food_level as f64 / total_level;
            }
        }

        next.step_index += 1;
        let all_collected = next.entities[self.food_range()].iter().all(|e| !e.alive);
        let done = all_collected || next.step_index >= next.horizon;
        Ok((next, reward, done))
    }
}
