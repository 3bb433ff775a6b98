//! Predator-Prey: a team of predators corners a greedily evading prey.
//!
//! Actions: up, down, left, right, stay. Predators move first in slot
//! order (wall moves clamp in place, occupied cells block); a capture
//! (two or more predators orthogonally adjacent to the prey) ends the
//! episode with reward +10. Otherwise the prey takes the move that
//! maximizes its minimum Chebyshev distance to the predators (ties
//! resolved in fixed action order) and the step yields a small shaped
//! penalty proportional to the mean predator-to-prey distance.

use super::{
    chebyshev, check_joint, manhattan, move_delta, place_distinct, Entity, Env, GridWorldState,
    Role, StateCodec,
};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const PP_ACTIONS: usize = 5;
pub const PP_STAY: usize = 4;
pub const CAPTURE_REWARD: f64 = 10.0;

/// The prey's greedy-evade target cell: the reachable cell maximizing
/// the minimum Chebyshev distance to the live predators, ties broken by
/// action order (up, down, left, right, stay). Also used by the
/// interceptor teammate archetype as its one-step prediction.
pub fn greedy_evade_target(state: &GridWorldState) -> (i32, i32) {
    let Some(prey) = state.entities.iter().find(|e| e.role == Role::Prey && e.alive) else {
        return (0, 0);
    };
    let predators: Vec<(i32, i32)> = state
        .entities
        .iter()
        .filter(|e| e.role == Role::Predator && e.alive)
        .map(|e| e.pos)
        .collect();
    let mut best = prey.pos;
    let mut best_score = i32::MIN;
    for action in 0..PP_ACTIONS {
        let cand = match move_delta(action) {
            Some(d) => (prey.pos.0 + d.0, prey.pos.1 + d.1),
            None => prey.pos,
        };
        let cand = if state.in_bounds(cand) { cand } else { prey.pos };
        if cand != prey.pos && state.occupied(cand) {
            continue;
        }
        let score = predators.iter().map(|&p| chebyshev(cand, p)).min().unwrap_or(0);
        if score > best_score {
            best_score = score;
            best = cand;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpConfig {
    pub grid_w: i32,
    pub grid_h: i32,
    pub predators: usize,
    pub horizon: usize,
}

impl Default for PpConfig {
    fn default() -> Self {
        PpConfig { grid_w: 10, grid_h: 10, predators: 3, horizon: 50 }
    }
}

pub struct PpEnv {
    cfg: PpConfig,
    codec: StateCodec,
}

impl PpEnv {
    pub fn new(cfg: PpConfig) -> Result<Self> {
        if cfg.predators < 2 {
            return Err(Error::config("predator-prey needs at least 2 predators"));
        }
        if cfg.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        let total = cfg.predators + 1;
        if total > (cfg.grid_w * cfg.grid_h) as usize {
            return Err(Error::config(format!(
                "grid {}x{} too small to host {total} entities",
                cfg.grid_w, cfg.grid_h
            )));
        }
        let mut slots: Vec<_> = (0..cfg.predators)
            .map(|_| super::SlotDesc { role: Role::Predator, level: 1 })
            .collect();
        slots.push(super::SlotDesc { role: Role::Prey, level: 1 });
        let codec =
            StateCodec { grid_w: cfg.grid_w, grid_h: cfg.grid_h, horizon: cfg.horizon, slots };
        Ok(PpEnv { cfg, codec })
    }

    pub fn config(&self) -> &PpConfig {
        &self.cfg
    }

    fn prey_index(&self) -> usize {
        self.cfg.predators
    }

    fn capture(&self, state: &GridWorldState) -> bool {
        let prey = &state.entities[self.prey_index()];
        if !prey.alive {
            return false;
        }
        let adjacent = state
            .entities
            .iter()
            .take(self.cfg.predators)
            .filter(|e| e.alive && manhattan(e.pos, prey.pos) == 1)
            .count();
        adjacent >= 2
    }
}

impl Env for PpEnv {
    fn name(&self) -> &'static str {
        "pp"
    }

    fn action_count(&self) -> usize {
        PP_ACTIONS
    }

    fn controllable_agents(&self) -> usize {
        self.cfg.predators
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
            place_distinct(&mut rng, self.cfg.grid_w, self.cfg.grid_h, self.cfg.predators + 1)
                .expect("validated at construction");
        let entities: Vec<Entity> = positions
            .iter()
            .enumerate()
            .map(|(i, &pos)| Entity {
                role: if i < self.cfg.predators { Role::Predator } else { Role::Prey },
                pos,
                level: 1,
                alive: true,
            })
            .collect();
        GridWorldState {
            grid_w: self.cfg.grid_w,
            grid_h: self.cfg.grid_h,
            entities,
            step_index: 0,
            horizon: self.cfg.horizon,
        }
    }

    fn step(&self, state: &GridWorldState, joint: &[usize]) -> Result<(GridWorldState, f64, bool)> {
        if state.step_index >= state.horizon || !state.entities[self.prey_index()].alive {
            return Err(Error::invalid("step on a terminal state"));
        }
        check_joint(joint, self.cfg.predators, PP_ACTIONS)?;
        let mut next = state.clone();

        // Predators move in slot order; walls clamp, occupied cells block.
        for (i, &action) in joint.iter().enumerate() {
            if let Some(d) = move_delta(action) {
                let cur = next.entities[i].pos;
                let target = (cur.0 + d.0, cur.1 + d.1);
                if next.in_bounds(target) && !next.occupied(target) {
                    next.entities[i].pos = target;
                }
            }
        }

        next.step_index += 1;
        if self.capture(&next) {
            let prey_idx = self.prey_index();
            next.entities[prey_idx].alive = false;
            return Ok((next, CAPTURE_REWARD, true));
        }

        let prey_idx = self.prey_index();
        let target = greedy_evade_target(&next);
        next.entities[prey_idx].pos = target;

        let prey_pos = next.entities[prey_idx].pos;
        let mean_dist: f64 = next
            .entities
            .iter()
            .take(self.cfg.predators)
            .map(|e| manhattan(e.pos, prey_pos) as f64)
            .sum::<f64>()
            / self.cfg.predators as f64;
        let reward = -0.05 * mean_dist / (self.cfg.grid_w + self.cfg.grid_h) as f64;
        let done = next.step_index >= next.horizon;
        Ok((next, reward, done))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PpEnv {
        PpEnv::new(PpConfig::default()).unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_distinct() {
        let e = env();
        let a = e.reset(42);
        let b = e.reset(42);
        assert_eq!(a, b);
        let codec = e.codec();
        assert_eq!(codec.encode(&a).unwrap(), codec.encode(&b).unwrap());
        assert_eq!(a.entities.len(), 4);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_ne!(a.entities[i].pos, a.entities[j].pos);
            }
        }
    }

    #[test]
    fn wall_moves_clamp_in_place() {
        let e = env();
        let mut s = e.reset(1);
        // Put predator 0 on the top edge, everyone else far away.
        s.entities[0].pos = (4, 0);
        s.entities[1].pos = (0, 9);
        s.entities[2].pos = (9, 9);
        s.entities[3].pos = (0, 0);
        let (next, _, _) = e.step(&s, &[0, 4, 4]).unwrap(); // up into the wall
        assert_eq!(next.entities[0].pos, (4, 0));
    }

    #[test]
    fn two_adjacent_predators_capture() {
        // Hand-built 3x3 scenario: predators flank the prey and close in.
        let e = PpEnv::new(PpConfig { grid_w: 3, grid_h: 3, predators: 2, horizon: 10 }).unwrap();
        let mut s = e.reset(0);
        s.entities[0].pos = (0, 0);
        s.entities[1].pos = (2, 2);
        s.entities[2].pos = (1, 1); // prey in the center
        // Predator 0 moves right to (1,0), predator 1 moves left to (1,2):
        // both orthogonally adjacent to (1,1).
        let (next, reward, done) = e.step(&s, &[3, 2]).unwrap();
        assert_eq!(reward, CAPTURE_REWARD);
        assert!(done);
        assert!(!next.entities[2].alive);
    }

    #[test]
    fn prey_evades_away_from_predators() {
        let e = env();
        let mut s = e.reset(5);
        s.entities[0].pos = (0, 5);
        s.entities[1].pos = (1, 6);
        s.entities[2].pos = (0, 7);
        s.entities[3].pos = (3, 5);
        let (next, _, _) = e.step(&s, &[4, 4, 4]).unwrap();
        // All predators sit to the west; the evade move goes east.
        assert_eq!(next.entities[3].pos, (4, 5));
    }

    #[test]
    fn random_episode_replays_identically() {
        let e = env();
        let run = |seed: u64| {
            let mut rng = rng_from_seed(seed);
            let mut s = e.reset(seed);
            let mut trace = Vec::new();
            loop {
                let joint: Vec<usize> =
                    (0..3).map(|_| rand::Rng::random_range(&mut rng, 0..PP_ACTIONS)).collect();
                let (next, r, done) = e.step(&s, &joint).unwrap();
                trace.push((e.codec().encode(&next).unwrap(), r.to_bits(), done));
                s = next;
                if done {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(33), run(33));
    }

    #[test]
    fn step_reward_is_bounded() {
        let e = env();
        let mut s = e.reset(9);
        let mut rng = rng_from_seed(4);
        loop {
            let joint: Vec<usize> =
                (0..3).map(|_| rand::Rng::random_range(&mut rng, 0..PP_ACTIONS)).collect();
            let (next, r, done) = e.step(&s, &joint).unwrap();
            assert!((-0.05..=CAPTURE_REWARD).contains(&r), "reward {r} out of bounds");
            s = next;
            if done {
                break;
            }
        }
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let e = env();
        let s = e.reset(0);
        assert!(e.step(&s, &[0, 1, 9]).is_err());
        assert!(e.step(&s, &[0, 1]).is_err());
    }

    #[test]
    fn consecutive_encodings_differ_by_few_bits() {
        let e = env();
        let mut s = e.reset(21);
        let mut rng = rng_from_seed(22);
        let mut prev = e.codec().encode(&s).unwrap();
        for _ in 0..30 {
            let joint: Vec<usize> =
                (0..3).map(|_| rand::Rng::random_range(&mut rng, 0..PP_ACTIONS)).collect();
            let (next, _, done) = e.step(&s, &joint).unwrap();
            let cur = e.codec().encode(&next).unwrap();
            let hamming: usize =
                prev.iter().zip(&cur).filter(|(a, b)| a != b).count();
            // 4 entities move at most one cell each: at most 2 bits per mover.
            assert!(hamming <= 2 * 4, "hamming {hamming}");
            prev = cur;
            s = next;
            if done {
                break;
            }
        }
    }
}
