//! Pairwise pool evaluation: the cross-play matrix.
//!
//! Cell (i, j) pairs teammates drawn from pool i with a designated ego
//! agent drawn from pool j. A diagonally dominant matrix witnesses that
//! the pools carry genuinely distinct coordination conventions.

use super::{sample_member, sample_team, PolicyPool, TeammatePolicy};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::par::par_map_idx;
use crate::rng::{derive_seed, rng_from_seed};

/// Rolls out one episode where every slot (including the ego slot 0) is
/// scripted. Returns the episode return.
pub fn rollout_scripted(env: &dyn Env, members: &mut [TeammatePolicy], env_seed: u64) -> f64 {
    let mut state = env.reset(env_seed);
    let actions = env.action_count();
    let mut total = 0.0;
    loop {
        let joint: Vec<usize> = members.iter_mut().map(|p| p.act(&state, actions)).collect();
        let (next, reward, done) = env
            .step(&state, &joint)
            .expect("scripted policies only emit valid actions");
        total += reward;
        state = next;
        if done {
            return total;
        }
    }
}

/// Mean return for every (teammate pool, ego pool) pairing, averaged
/// over `episodes_per_cell` seeded episodes. Cell seeds derive from the
/// pool identifiers, so identical pools produce identical cells.
pub fn crossplay_matrix(
    env: &dyn Env,
    pools: &[PolicyPool],
    episodes_per_cell: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if pools.len() < 2 {
        return Err(Error::invalid("cross-play needs at least two pools"));
    }
    if episodes_per_cell == 0 {
        return Err(Error::invalid("empty evaluation"));
    }
    let teammate_count = env.controllable_agents() - 1;
    let mut matrix = Vec::with_capacity(pools.len());
    for row_pool in pools {
        let mut row = Vec::with_capacity(pools.len());
        for col_pool in pools {
            let cell_seed = derive_seed(seed, &["crossplay", &row_pool.pool_id, &col_pool.pool_id]);
            let returns = par_map_idx(episodes_per_cell, |ep| {
                let ep_seed = derive_seed(cell_seed, &["episode", &ep.to_string()]);
                let mut rng = rng_from_seed(ep_seed);
                let mut members = vec![sample_member(col_pool, 0, &mut rng)];
                members.extend(sample_team(row_pool, teammate_count, &mut rng));
                rollout_scripted(env, &mut members, derive_seed(ep_seed, &["env"]))
            });
            // Sequential reduction in episode order keeps the mean
            // bit-stable regardless of thread scheduling.
            let mean = returns.iter().sum::<f64>() / episodes_per_cell as f64;
            row.push(mean);
        }
        matrix.push(row);
    }
    Ok(matrix)
}
