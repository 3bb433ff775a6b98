//! Scripted teammate policies, organized into train/test pools.
//!
//! Each pool member ("checkpoint") is an (archetype, noise rate) pair.
//! Archetypes are deterministic functions of the global state given the
//! slot they control; the noise rate substitutes a uniform random
//! action with the given probability. Pools are composed so that
//! members of one pool share a coordination convention while members of
//! different pools clash, which the cross-play matrix makes visible as
//! diagonal dominance.

mod crossplay;

pub use crossplay::{crossplay_matrix, rollout_scripted};

use crate::envs::{
    chebyshev, lbf, manhattan, move_delta, pp, Env, GridWorldState, Role,
};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, ChaCha8Rng};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Archetype {
    // Predator-prey
    FlankerN,
    FlankerS,
    FlankerE,
    FlankerW,
    MirrorChaser,
    Interceptor,
    LazyGuard,
    // Level-based foraging
    NearestFood,
    HighestLevelFood,
    FollowEgo,
    CornerSweeperNw,
    CornerSweeperNe,
    CornerSweeperSe,
    CornerSweeperSw,
}

impl Archetype {
    pub fn id(self) -> &'static str {
        match self {
            Archetype::FlankerN => "flanker_n",
            Archetype::FlankerS => "flanker_s",
            Archetype::FlankerE => "flanker_e",
            Archetype::FlankerW => "flanker_w",
            Archetype::MirrorChaser => "mirror_chaser",
            Archetype::Interceptor => "interceptor",
            Archetype::LazyGuard => "lazy_guard",
            Archetype::NearestFood => "nearest_food",
            Archetype::HighestLevelFood => "highest_level_food",
            Archetype::FollowEgo => "follow_ego",
            Archetype::CornerSweeperNw => "corner_sweeper_nw",
            Archetype::CornerSweeperNe => "corner_sweeper_ne",
            Archetype::CornerSweeperSe => "corner_sweeper_se",
            Archetype::CornerSweeperSw => "corner_sweeper_sw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "flanker_n" => Archetype::FlankerN,
            "flanker_s" => Archetype::FlankerS,
            "flanker_e" => Archetype::FlankerE,
            "flanker_w" => Archetype::FlankerW,
            "mirror_chaser" => Archetype::MirrorChaser,
            "interceptor" => Archetype::Interceptor,
            "lazy_guard" => Archetype::LazyGuard,
            "nearest_food" => Archetype::NearestFood,
            "highest_level_food" => Archetype::HighestLevelFood,
            "follow_ego" => Archetype::FollowEgo,
            "corner_sweeper_nw" => Archetype::CornerSweeperNw,
            "corner_sweeper_ne" => Archetype::CornerSweeperNe,
            "corner_sweeper_se" => Archetype::CornerSweeperSe,
            "corner_sweeper_sw" => Archetype::CornerSweeperSw,
            _ => return Err(Error::config(format!("unknown archetype `{s}`"))),
        })
    }

    pub fn env_name(self) -> &'static str {
        match self {
            Archetype::FlankerN
            | Archetype::FlankerS
            | Archetype::FlankerE
            | Archetype::FlankerW
            | Archetype::MirrorChaser
            | Archetype::Interceptor
            | Archetype::LazyGuard => "pp",
            _ => "lbf",
        }
    }
}

/// A scripted policy instance bound to the entity slot it controls.
#[derive(Clone, Debug)]
pub struct TeammatePolicy {
    pub policy_id: String,
    pub archetype: Archetype,
    pub noise_rate: f64,
    pub slot: usize,
    rng: ChaCha8Rng,
}

impl TeammatePolicy {
    pub fn new(archetype: Archetype, noise_rate: f64, slot: usize, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&noise_rate), "noise rate out of range");
        TeammatePolicy {
            policy_id: format!("{}/{}@{noise_rate}", archetype.env_name(), archetype.id()),
            archetype,
            noise_rate,
            slot,
            rng: rng_from_seed(seed),
        }
    }

    /// Chooses this policy's action for the state. Deterministic when
    /// the noise rate is zero.
    pub fn act(&mut self, state: &GridWorldState, action_count: usize) -> usize {
        if self.noise_rate > 0.0 && self.rng.random::<f64>() < self.noise_rate {
            return self.rng.random_range(0..action_count);
        }
        scripted_action(self.archetype, self.slot, state)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum AxisPriority {
    /// Larger remaining distance first.
    Longest,
    VerticalFirst,
    HorizontalFirst,
}

/// Greedy movement action toward a target cell with the given axis
/// preference, falling back to the other axis when blocked. Returns
/// `None` when already at the target or fully blocked.
fn greedy_move_pref(
    state: &GridWorldState,
    from: (i32, i32),
    target: (i32, i32),
    pref: AxisPriority,
) -> Option<usize> {
    if from == target {
        return None;
    }
    let dx = target.0 - from.0;
    let dy = target.1 - from.1;
    let horiz = if dx > 0 { Some(3) } else if dx < 0 { Some(2) } else { None };
    let vert = if dy > 0 { Some(1) } else if dy < 0 { Some(0) } else { None };
    let order = match pref {
        AxisPriority::Longest => {
            if dx.abs() >= dy.abs() {
                [horiz, vert]
            } else {
                [vert, horiz]
            }
        }
        AxisPriority::VerticalFirst => [vert, horiz],
        AxisPriority::HorizontalFirst => [horiz, vert],
    };
    for action in order.into_iter().flatten() {
        let d = move_delta(action).unwrap();
        let cell = (from.0 + d.0, from.1 + d.1);
        if state.in_bounds(cell) && !state.occupied(cell) {
            return Some(action);
        }
    }
    None
}

fn greedy_move(state: &GridWorldState, from: (i32, i32), target: (i32, i32)) -> Option<usize> {
    greedy_move_pref(state, from, target, AxisPriority::Longest)
}

fn prey_of(state: &GridWorldState) -> Option<&crate::envs::Entity> {
    state.entities.iter().find(|e| e.role == Role::Prey && e.alive)
}

fn clamp_to_grid(state: &GridWorldState, p: (i32, i32)) -> (i32, i32) {
    (p.0.clamp(0, state.grid_w - 1), p.1.clamp(0, state.grid_h - 1))
}

fn pp_action(archetype: Archetype, slot: usize, state: &GridWorldState) -> usize {
    let me = state.entities[slot].pos;
    let Some(prey) = prey_of(state) else { return pp::PP_STAY };
    let prey_pos = prey.pos;
    // Flankers approach along their own axis first, so flankers of
    // different directions take visibly different routes.
    let (target, pref) = match archetype {
        Archetype::FlankerN => {
            (clamp_to_grid(state, (prey_pos.0, prey_pos.1 - 1)), AxisPriority::VerticalFirst)
        }
        Archetype::FlankerS => {
            (clamp_to_grid(state, (prey_pos.0, prey_pos.1 + 1)), AxisPriority::VerticalFirst)
        }
        Archetype::FlankerE => {
            (clamp_to_grid(state, (prey_pos.0 + 1, prey_pos.1)), AxisPriority::HorizontalFirst)
        }
        Archetype::FlankerW => {
            (clamp_to_grid(state, (prey_pos.0 - 1, prey_pos.1)), AxisPriority::HorizontalFirst)
        }
        // Holds the prey's reflection across the grid center, cutting
        // off long escape runs into the opposite quadrant.
        Archetype::MirrorChaser => (
            (state.grid_w - 1 - prey_pos.0, state.grid_h - 1 - prey_pos.1),
            AxisPriority::Longest,
        ),
        Archetype::Interceptor => {
            if manhattan(me, prey_pos) == 1 {
                return pp::PP_STAY;
            }
            (pp::greedy_evade_target(state), AxisPriority::Longest)
        }
        Archetype::LazyGuard => {
            if chebyshev(me, prey_pos) > 3 || manhattan(me, prey_pos) == 1 {
                return pp::PP_STAY;
            }
            (prey_pos, AxisPriority::Longest)
        }
        _ => unreachable!("lbf archetype in pp"),
    };
    greedy_move_pref(state, me, target, pref).unwrap_or(pp::PP_STAY)
}

fn live_foods(state: &GridWorldState) -> impl Iterator<Item = (usize, &crate::envs::Entity)> {
    state.entities.iter().enumerate().filter(|(_, e)| e.role == Role::Food && e.alive)
}

fn lbf_target_food(archetype: Archetype, state: &GridWorldState) -> Option<usize> {
    match archetype {
        Archetype::NearestFood | Archetype::FollowEgo => {
            let agents: Vec<(i32, i32)> = state
                .entities
                .iter()
                .filter(|e| e.role == Role::Agent && e.alive)
                .map(|e| e.pos)
                .collect();
            let n = agents.len().max(1) as i32;
            let centroid =
                (agents.iter().map(|p| p.0).sum::<i32>() / n, agents.iter().map(|p| p.1).sum::<i32>() / n);
            live_foods(state).min_by_key(|(i, e)| (manhattan(e.pos, centroid), *i)).map(|(i, _)| i)
        }
        Archetype::HighestLevelFood => {
            live_foods(state).min_by_key(|(i, e)| (-(e.level as i32), *i)).map(|(i, _)| i)
        }
        Archetype::CornerSweeperNw
        | Archetype::CornerSweeperNe
        | Archetype::CornerSweeperSe
        | Archetype::CornerSweeperSw => {
            let corner = match archetype {
                Archetype::CornerSweeperNw => (0, 0),
                Archetype::CornerSweeperNe => (state.grid_w - 1, 0),
                Archetype::CornerSweeperSe => (state.grid_w - 1, state.grid_h - 1),
                _ => (0, state.grid_h - 1),
            };
            live_foods(state).min_by_key(|(i, e)| (manhattan(e.pos, corner), *i)).map(|(i, _)| i)
        }
        _ => unreachable!("pp archetype in lbf"),
    }
}

/// Nearest free cell orthogonally adjacent to `food_pos`, ties broken
/// in fixed (up, down, left, right) order. Routing to a free adjacency
/// cell instead of the food itself keeps late arrivals from stalling in
/// a blocked column behind an earlier loader.
fn free_adjacent_cell(
    state: &GridWorldState,
    me: (i32, i32),
    food_pos: (i32, i32),
) -> Option<(i32, i32)> {
    crate::envs::MOVE_DELTAS
        .iter()
        .map(|d| (food_pos.0 + d.0, food_pos.1 + d.1))
        .filter(|&c| state.in_bounds(c) && (c == me || !state.occupied(c)))
        .min_by_key(|&c| manhattan(me, c))
}

fn lbf_action(archetype: Archetype, slot: usize, state: &GridWorldState) -> usize {
    let me = state.entities[slot].pos;
    if archetype == Archetype::FollowEgo && slot != 0 {
        // Shadow the ego agent and assist whatever it is next to.
        let ego = state.entities[0].pos;
        let adjacent_food = live_foods(state).any(|(_, e)| manhattan(e.pos, me) == 1);
        if adjacent_food {
            return lbf::LBF_LOAD;
        }
        if manhattan(me, ego) <= 1 {
            return lbf::LBF_NOOP;
        }
        return greedy_move(state, me, ego).unwrap_or(lbf::LBF_NOOP);
    }
    let Some(food_idx) = lbf_target_food(archetype, state) else { return lbf::LBF_NOOP };
    let food_pos = state.entities[food_idx].pos;
    if manhattan(me, food_pos) == 1 {
        return lbf::LBF_LOAD;
    }
    match free_adjacent_cell(state, me, food_pos) {
        Some(cell) => greedy_move(state, me, cell).unwrap_or(lbf::LBF_NOOP),
        None => greedy_move(state, me, food_pos).unwrap_or(lbf::LBF_NOOP),
    }
}

/// The deterministic archetype rule: what this archetype does at this
/// state when controlling the given slot.
pub fn scripted_action(archetype: Archetype, slot: usize, state: &GridWorldState) -> usize {
    match archetype.env_name() {
        "pp" => pp_action(archetype, slot, state),
        _ => lbf_action(archetype, slot, state),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolRole {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolMember {
    pub archetype: Archetype,
    pub noise_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyPool {
    pub pool_id: String,
    pub role: PoolRole,
    pub members: Vec<PoolMember>,
}

impl PolicyPool {
    pub fn new(pool_id: impl Into<String>, role: PoolRole, members: Vec<PoolMember>) -> Self {
        PolicyPool { pool_id: pool_id.into(), role, members }
    }

    /// Sub-pool with the given members, keeping the role.
    pub fn slice(&self, suffix: &str, range: std::ops::Range<usize>) -> PolicyPool {
        PolicyPool {
            pool_id: format!("{}_{suffix}", self.pool_id),
            role: self.role,
            members: self.members[range].to_vec(),
        }
    }
}

/// Draws the required number of teammates uniformly with replacement
/// and binds them to slots 1..=count (slot 0 is the ego agent).
pub fn sample_team(pool: &PolicyPool, count: usize, rng: &mut ChaCha8Rng) -> Vec<TeammatePolicy> {
    assert!(!pool.members.is_empty(), "cannot sample from an empty pool");
    (0..count)
        .map(|i| {
            let m = pool.members[rng.random_range(0..pool.members.len())];
            TeammatePolicy::new(m.archetype, m.noise_rate, i + 1, rng.random())
        })
        .collect()
}

/// Draws a single member bound to the given slot.
pub fn sample_member(pool: &PolicyPool, slot: usize, rng: &mut ChaCha8Rng) -> TeammatePolicy {
    assert!(!pool.members.is_empty(), "cannot sample from an empty pool");
    let m = pool.members[rng.random_range(0..pool.members.len())];
    TeammatePolicy::new(m.archetype, m.noise_rate, slot, rng.random())
}

fn member(archetype: Archetype, noise_rate: f64) -> PoolMember {
    PoolMember { archetype, noise_rate }
}

/// The three training pools for an environment: 3 pools x 3 checkpoints.
pub fn default_train_pools(env_name: &str) -> Result<Vec<PolicyPool>> {
    use Archetype::*;
    Ok(match env_name {
        "pp" => vec![
            PolicyPool::new(
                "pp_train_a",
                PoolRole::Train,
                vec![member(FlankerN, 0.0), member(FlankerS, 0.0), member(Interceptor, 0.05)],
            ),
            PolicyPool::new(
                "pp_train_b",
                PoolRole::Train,
                vec![member(FlankerE, 0.0), member(FlankerW, 0.0), member(MirrorChaser, 0.05)],
            ),
            PolicyPool::new(
                "pp_train_c",
                PoolRole::Train,
                vec![member(Interceptor, 0.0), member(MirrorChaser, 0.0), member(LazyGuard, 0.05)],
            ),
        ],
        "lbf" => vec![
            PolicyPool::new(
                "lbf_train_a",
                PoolRole::Train,
                vec![member(NearestFood, 0.0), member(NearestFood, 0.05), member(NearestFood, 0.1)],
            ),
            PolicyPool::new(
                "lbf_train_b",
                PoolRole::Train,
                vec![
                    member(HighestLevelFood, 0.0),
                    member(HighestLevelFood, 0.05),
                    member(HighestLevelFood, 0.1),
                ],
            ),
            PolicyPool::new(
                "lbf_train_c",
                PoolRole::Train,
                vec![
                    member(CornerSweeperNw, 0.0),
                    member(CornerSweeperNw, 0.05),
                    member(CornerSweeperNw, 0.1),
                ],
            ),
        ],
        other => return Err(Error::config(format!("unknown environment `{other}`"))),
    })
}

/// The held-out test pool: 12 checkpoints, disjoint from every train
/// pool by (archetype, noise rate). `group4`/`group8` split it into the
/// two evaluation groups.
pub fn default_test_pool(env_name: &str) -> Result<PolicyPool> {
    use Archetype::*;
    Ok(match env_name {
        "pp" => PolicyPool::new(
            "pp_test",
            PoolRole::Test,
            vec![
                member(FlankerN, 0.1),
                member(FlankerS, 0.1),
                member(FlankerE, 0.1),
                member(FlankerW, 0.1),
                member(MirrorChaser, 0.1),
                member(Interceptor, 0.1),
                member(LazyGuard, 0.0),
                member(LazyGuard, 0.1),
                member(FlankerN, 0.2),
                member(FlankerE, 0.2),
                member(MirrorChaser, 0.2),
                member(Interceptor, 0.2),
            ],
        ),
        "lbf" => PolicyPool::new(
            "lbf_test",
            PoolRole::Test,
            vec![
                member(CornerSweeperSe, 0.0),
                member(CornerSweeperSe, 0.01),
                member(CornerSweeperSe, 0.02),
                member(CornerSweeperSe, 0.03),
                member(CornerSweeperSe, 0.04),
                member(CornerSweeperSe, 0.06),
                member(CornerSweeperSe, 0.07),
                member(CornerSweeperSe, 0.08),
                member(CornerSweeperSe, 0.09),
                member(CornerSweeperSe, 0.11),
                member(CornerSweeperSe, 0.12),
                member(CornerSweeperSe, 0.13),
            ],
        ),
        other => return Err(Error::config(format!("unknown environment `{other}`"))),
    })
}

/// First four test checkpoints.
pub fn test_group4(env_name: &str) -> Result<PolicyPool> {
    Ok(default_test_pool(env_name)?.slice("g4", 0..4))
}

/// Remaining eight test checkpoints.
pub fn test_group8(env_name: &str) -> Result<PolicyPool> {
    Ok(default_test_pool(env_name)?.slice("g8", 4..12))
}

/// Fraction of 1000 random states on which two archetypes pick
/// different actions for the same slot.
pub fn action_disagreement(env: &dyn Env, a: Archetype, b: Archetype, seed: u64) -> f64 {
    let slot = 1;
    let n = 1000;
    let mut differ = 0;
    for i in 0..n {
        let state = env.reset(seed.wrapping_add(i));
        if scripted_action(a, slot, &state) != scripted_action(b, slot, &state) {
            differ += 1;
        }
    }
    differ as f64 / n as f64
}
