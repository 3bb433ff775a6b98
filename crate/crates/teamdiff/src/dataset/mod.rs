//! Offline trajectory collection and supervision targets.
//!
//! A trajectory records the encoded global state, the ego action, the
//! teammates' actions and the shared reward at every decision step.
//! Training consumes (window, action, return-to-go, future-state goal)
//! tuples materialized on demand from trajectories.

mod format;

pub use format::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};

use crate::envs::{Env, GridWorldState, StateCodec};
use crate::error::{Error, Result};
use crate::rng::{episode_seed, rng_from_seed, ChaCha8Rng};
use crate::teammates::{sample_team, PolicyPool, TeammatePolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct TrajStep {
    /// Encoded state at the decision point, one byte per bit.
    pub state_bits: Vec<u8>,
    pub ego_action: u8,
    pub teammate_actions: Vec<u8>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub episode_id: u64,
    pub env_name: String,
    pub seed: u64,
    pub teammate_ids: Vec<String>,
    pub steps: Vec<TrajStep>,
    /// True when the episode ended by reaching its goal (capture, all
    /// food collected) rather than by the horizon.
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A full offline dataset: trajectories plus the codec they were
/// encoded with.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env_name: String,
    pub codec: StateCodec,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Every (trajectory, t) pair, the sampling units of one epoch.
    pub fn tuple_refs(&self) -> Vec<TupleRef> {
        let mut out = Vec::new();
        for (i, traj) in self.trajectories.iter().enumerate() {
            for t in 0..traj.len() {
                out.push(TupleRef { traj: i, t });
            }
        }
        out
    }

    /// Largest absolute return-to-go over the dataset; the return
    /// normalizer stored in checkpoints.
    pub fn max_abs_return(&self) -> f64 {
        let mut best: f64 = 0.0;
        for traj in &self.trajectories {
            if !traj.is_empty() {
                best = best.max(return_to_go(traj, 0).abs());
                for t in 0..traj.len() {
                    best = best.max(return_to_go(traj, t).abs());
                }
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TupleRef {
    pub traj: usize,
    pub t: usize,
}

/// One training tuple: zero-padded state window, clean action,
/// undiscounted return-to-go and the binary future-state goal.
#[derive(Clone, Debug)]
pub struct TrainingTuple {
    /// `(m+1) * D_s` values, window slots before the episode start are
    /// zero.
    pub window: Vec<f64>,
    /// One validity flag per window slot.
    pub mask: Vec<f64>,
    pub action: usize,
    pub return_to_go: f64,
    pub goal: Vec<f64>,
}

/// Exact undiscounted suffix sum of rewards from step `t`.
pub fn return_to_go(traj: &Trajectory, t: usize) -> f64 {
    assert!(t < traj.len(), "step index {t} out of range");
    traj.steps[t..].iter().rev().map(|s| s.reward).sum()
}

/// Encoded state `n` steps ahead, clamped to the last recorded state
/// near the episode end. `n = 0` (the current state) is allowed for
/// tests.
pub fn goal_target(traj: &Trajectory, t: usize, n: usize) -> Vec<u8> {
    assert!(t < traj.len(), "step index {t} out of range");
    let idx = (t + n).min(traj.len() - 1);
    traj.steps[idx].state_bits.clone()
}

/// Materializes the training tuple for `(traj, t)` with history window
/// `m` and goal horizon `n`.
pub fn materialize_tuple(
    dataset: &Dataset,
    tref: TupleRef,
    m: usize,
    n: usize,
) -> TrainingTuple {
    let traj = &dataset.trajectories[tref.traj];
    let t = tref.t;
    let ds = dataset.codec.bits();
    let slots = m + 1;
    let mut window = vec![0.0; slots * ds];
    let mut mask = vec![0.0; slots];
    for offset in 0..slots {
        // Slot `slots-1` holds s_t, earlier slots hold history.
        let steps_back = slots - 1 - offset;
        if steps_back <= t {
            let src = &traj.steps[t - steps_back].state_bits;
            for (dst, &b) in window[offset * ds..(offset + 1) * ds].iter_mut().zip(src) {
                *dst = f64::from(b);
            }
            mask[offset] = 1.0;
        }
    }
    TrainingTuple {
        window,
        mask,
        action: traj.steps[t].ego_action as usize,
        return_to_go: return_to_go(traj, t),
        goal: goal_target(traj, t, n).into_iter().map(f64::from).collect(),
    }
}

/// Anything that can act as the ego agent during collection or
/// evaluation.
pub trait EgoAgent {
    fn begin_episode(&mut self);
    fn act(&mut self, state: &GridWorldState, codec: &StateCodec) -> Result<usize>;
}

/// Scripted ego backed by a teammate archetype bound to slot 0.
pub struct ScriptedEgo {
    pub policy: TeammatePolicy,
    pub action_count: usize,
}

impl EgoAgent for ScriptedEgo {
    fn begin_episode(&mut self) {}

    fn act(&mut self, state: &GridWorldState, _codec: &StateCodec) -> Result<usize> {
        Ok(self.policy.act(state, self.action_count))
    }
}

/// Uniform-random ego, the evaluation floor.
pub struct RandomEgo {
    pub rng: ChaCha8Rng,
    pub action_count: usize,
}

impl EgoAgent for RandomEgo {
    fn begin_episode(&mut self) {}

    fn act(&mut self, _state: &GridWorldState, _codec: &StateCodec) -> Result<usize> {
        use rand::Rng;
        Ok(self.rng.random_range(0..self.action_count))
    }
}

/// Runs one episode and records it. The environment is reset with
/// `seed`; the ego controls slot 0 and the teammates their bound slots.
pub fn collect_episode(
    env: &dyn Env,
    ego: &mut dyn EgoAgent,
    team: &mut [TeammatePolicy],
    seed: u64,
    episode_id: u64,
) -> Result<Trajectory> {
    let codec = env.codec();
    let mut state = env.reset(seed);
    let mut steps = Vec::new();
    let mut terminal = false;
    ego.begin_episode();
    loop {
        let state_bits = codec.encode(&state)?;
        let ego_action = ego.act(&state, codec)?;
        if ego_action >= env.action_count() {
            return Err(Error::invalid(format!(
                "ego emitted invalid action {ego_action} at step {} of episode {episode_id}",
                state.step_index
            )));
        }
        let mut joint = vec![ego_action];
        joint.extend(team.iter_mut().map(|p| p.act(&state, env.action_count())));
        let (next, reward, done) = env.step(&state, &joint)?;
        steps.push(TrajStep {
            state_bits,
            ego_action: ego_action as u8,
            teammate_actions: joint[1..].iter().map(|&a| a as u8).collect(),
            reward,
        });
        if done {
            terminal = next.step_index < next.horizon;
            break;
        }
        state = next;
    }
    Ok(Trajectory {
        episode_id,
        env_name: env.name().to_string(),
        seed,
        teammate_ids: team.iter().map(|p| p.policy_id.clone()).collect(),
        steps,
        terminal,
    })
}

/// Ego archetype used for dataset generation (a noisy near-expert).
pub fn collection_ego(env_name: &str, seed: u64) -> Result<TeammatePolicy> {
    use crate::teammates::Archetype;
    let archetype = match env_name {
        "pp" => Archetype::Interceptor,
        "lbf" => Archetype::NearestFood,
        other => return Err(Error::config(format!("unknown environment `{other}`"))),
    };
    Ok(TeammatePolicy::new(archetype, 0.1, 0, seed))
}

/// Collects `episodes` episodes, cycling through the train pools
/// round-robin; episode `i` uses seed `base_seed + i`.
pub fn collect_dataset(
    env: &dyn Env,
    pools: &[PolicyPool],
    episodes: usize,
    base_seed: u64,
) -> Result<Dataset> {
    if pools.is_empty() {
        return Err(Error::config("no teammate pools to sample from"));
    }
    let teammate_count = env.controllable_agents() - 1;
    let trajectories: Vec<Result<Trajectory>> = crate::par::par_map_idx(episodes, |i| {
        let seed = episode_seed(base_seed, i as u64);
        let pool = &pools[i % pools.len()];
        let mut rng = rng_from_seed(seed);
        let mut team = sample_team(pool, teammate_count, &mut rng);
        use rand::Rng;
        let mut ego = ScriptedEgo {
            policy: collection_ego(env.name(), rng.random())?,
            action_count: env.action_count(),
        };
        collect_episode(env, &mut ego, &mut team, seed, i as u64)
    });
    let trajectories: Vec<Trajectory> = trajectories.into_iter().collect::<Result<_>>()?;
    Ok(Dataset {
        env_name: env.name().to_string(),
        codec: env.codec().clone(),
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{PpConfig, PpEnv};
    use crate::teammates::default_train_pools;
    use proptest::prelude::*;

    fn tiny_env() -> PpEnv {
        PpEnv::new(PpConfig { horizon: 1, ..PpConfig::default() }).unwrap()
    }

    #[test]
    fn horizon_one_gives_a_single_step() {
        let env = tiny_env();
        let pools = default_train_pools("pp").unwrap();
        let mut rng = rng_from_seed(1);
        let mut team = sample_team(&pools[0], 2, &mut rng);
        let mut ego = ScriptedEgo { policy: collection_ego("pp", 7).unwrap(), action_count: 5 };
        let traj = collect_episode(&env, &mut ego, &mut team, 5, 0).unwrap();
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn collection_is_deterministic() {
        let env = PpEnv::new(PpConfig::default()).unwrap();
        let pools = default_train_pools("pp").unwrap();
        let collect = || {
            let mut rng = rng_from_seed(9);
            let mut team = sample_team(&pools[1], 2, &mut rng);
            let mut ego =
                ScriptedEgo { policy: collection_ego("pp", 11).unwrap(), action_count: 5 };
            collect_episode(&env, &mut ego, &mut team, 13, 3).unwrap()
        };
        assert_eq!(collect(), collect());
    }

    #[test]
    fn dataset_collects_the_requested_episode_count() {
        let env = PpEnv::new(PpConfig { horizon: 5, ..PpConfig::default() }).unwrap();
        let pools = default_train_pools("pp").unwrap();
        let n = 4;
        let ds = collect_dataset(&env, &pools, n * 3, 100).unwrap();
        assert_eq!(ds.trajectories.len(), n * 3);
        // Round-robin: each pool contributes n episodes.
        for traj in &ds.trajectories {
            assert!(!traj.is_empty());
        }
    }

    #[test]
    fn return_to_go_examples() {
        let mut traj = Trajectory {
            episode_id: 0,
            env_name: "pp".into(),
            seed: 0,
            teammate_ids: vec![],
            steps: vec![],
            terminal: false,
        };
        for r in [1.0, 2.0, 3.0] {
            traj.steps.push(TrajStep {
                state_bits: vec![0],
                ego_action: 0,
                teammate_actions: vec![],
                reward: r,
            });
        }
        assert_eq!(return_to_go(&traj, 0), 6.0);
        assert_eq!(return_to_go(&traj, 2), 3.0);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn return_to_go_rejects_bad_index() {
        let traj = Trajectory {
            episode_id: 0,
            env_name: "pp".into(),
            seed: 0,
            teammate_ids: vec![],
            steps: vec![TrajStep {
                state_bits: vec![0],
                ego_action: 0,
                teammate_actions: vec![],
                reward: 0.0,
            }],
            terminal: false,
        };
        let _ = return_to_go(&traj, 1);
    }

    #[test]
    fn return_to_go_matches_loop_oracle_and_recursion() {
        let mut rng = rng_from_seed(3);
        use rand::Rng;
        let rewards: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let traj = Trajectory {
            episode_id: 0,
            env_name: "pp".into(),
            seed: 0,
            teammate_ids: vec![],
            steps: rewards
                .iter()
                .map(|&r| TrajStep {
                    state_bits: vec![0],
                    ego_action: 0,
                    teammate_actions: vec![],
                    reward: r,
                })
                .collect(),
            terminal: false,
        };
        for t in 0..rewards.len() {
            // Naive loop oracle, summed in the same back-to-front order.
            let mut want = 0.0;
            for r in rewards[t..].iter().rev() {
                want += r;
            }
            assert_eq!(return_to_go(&traj, t), want);
        }
        for t in 0..rewards.len() - 1 {
            let lhs = return_to_go(&traj, t);
            let rhs = rewards[t] + return_to_go(&traj, t + 1);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn goal_targets_clamp_at_the_end() {
        let env = PpEnv::new(PpConfig { horizon: 8, ..PpConfig::default() }).unwrap();
        let pools = default_train_pools("pp").unwrap();
        let mut rng = rng_from_seed(2);
        let mut team = sample_team(&pools[0], 2, &mut rng);
        let mut ego = ScriptedEgo { policy: collection_ego("pp", 3).unwrap(), action_count: 5 };
        let traj = collect_episode(&env, &mut ego, &mut team, 21, 0).unwrap();
        let last = traj.len() - 1;
        assert_eq!(goal_target(&traj, last, 5), traj.steps[last].state_bits);
        assert_eq!(goal_target(&traj, 0, 0), traj.steps[0].state_bits);
        if traj.len() > 3 {
            assert_eq!(goal_target(&traj, 0, 3), traj.steps[3].state_bits);
        }
        let ds = env.codec().bits();
        for t in 0..traj.len() {
            let g = goal_target(&traj, t, 5);
            assert_eq!(g.len(), ds);
            assert!(g.iter().all(|&b| b <= 1));
        }
    }

    #[test]
    fn window_is_zero_padded_with_mask() {
        let env = PpEnv::new(PpConfig { grid_w: 3, grid_h: 1, predators: 2, horizon: 12 }).unwrap();
        let bits = env.codec().bits();
        let steps: Vec<TrajStep> = (0..4)
            .map(|t| {
                let mut state_bits = vec![0u8; bits];
                state_bits[t] = 1;
                TrajStep { state_bits, ego_action: 0, teammate_actions: vec![1], reward: 0.5 }
            })
            .collect();
        let ds = Dataset {
            env_name: "pp".into(),
            codec: env.codec().clone(),
            trajectories: vec![Trajectory {
                episode_id: 0,
                env_name: "pp".into(),
                seed: 0,
                teammate_ids: vec![],
                steps,
            terminal: false,
            }],
        };
        let m = 3;
        let tref = TupleRef { traj: 0, t: 1 };
        let tuple = materialize_tuple(&ds, tref, m, 5);
        assert_eq!(tuple.window.len(), (m + 1) * bits);
        assert_eq!(tuple.mask, vec![0.0, 0.0, 1.0, 1.0]);
        // Padded slots are all-zero.
        assert!(tuple.window[..2 * bits].iter().all(|&v| v == 0.0));
        // The last two slots hold s_0 and s_1.
        assert_eq!(tuple.window[2 * bits], 1.0);
        assert_eq!(tuple.window[3 * bits + 1], 1.0);
        // Goal clamps to the final state; return-to-go is the suffix sum.
        assert_eq!(tuple.goal[3], 1.0);
        assert!((tuple.return_to_go - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn suffix_sum_recursion_holds(seed in 0u64..200) {
            let env = PpEnv::new(PpConfig { horizon: 15, ..PpConfig::default() }).unwrap();
            let pools = default_train_pools("pp").unwrap();
            let mut rng = rng_from_seed(seed);
            let mut team = sample_team(&pools[(seed % 3) as usize], 2, &mut rng);
            let mut ego =
                ScriptedEgo { policy: collection_ego("pp", seed).unwrap(), action_count: 5 };
            let traj = collect_episode(&env, &mut ego, &mut team, seed, 0).unwrap();
            for t in 0..traj.len() - 1 {
                let lhs = return_to_go(&traj, t);
                let rhs = traj.steps[t].reward + return_to_go(&traj, t + 1);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }
}
