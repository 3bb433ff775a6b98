//! Categorical denoising diffusion over discrete actions.
//!
//! The forward chain corrupts a one-hot action through row-stochastic
//! transition matrices `Q_k` mixing the identity with the uniform
//! distribution; the reverse chain is parameterized by a predicted
//! distribution over the clean action and the exact Bayes posterior.
//! Matrices are tiny (`|A| <= 6`) and stored densely.

use crate::error::{Error, Result};
use crate::tensor::Var;
use rand::Rng;

/// Forward-corruption schedule: step count, per-step rates, transition
/// matrices and their cumulative products.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    k_steps: usize,
    action_count: usize,
    beta: Vec<f64>,
    /// q[k-1] is the one-step matrix for step k, row-major `|A| x |A|`.
    q: Vec<Vec<f64>>,
    /// qbar[k-1] = Q_1 ... Q_k.
    qbar: Vec<Vec<f64>>,
}

fn uniform_mix_matrix(beta: f64, n: usize) -> Vec<f64> {
    let off = beta / n as f64;
    let diag = 1.0 - beta + off;
    let mut m = vec![off; n * n];
    for i in 0..n {
        m[i * n + i] = diag;
    }
    m
}

fn mat_product(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for p in 0..n {
            let av = a[i * n + p];
            if av != 0.0 {
                for j in 0..n {
                    out[i * n + j] += av * b[p * n + j];
                }
            }
        }
    }
    out
}

fn assert_row_stochastic(m: &[f64], n: usize, what: &str) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        assert!(row.iter().all(|&v| v >= 0.0), "{what}: negative entry");
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "{what}: row sum {s} drifts from 1");
    }
}

impl NoiseSchedule {
    /// Uniform schedule with `beta_k = 1/(K-k+1)`, which makes the
    /// terminal marginal exactly uniform.
    pub fn uniform(k_steps: usize, action_count: usize) -> Result<Self> {
        if k_steps == 0 {
            return Err(Error::config("diffusion steps must be at least 1"));
        }
        let betas: Vec<f64> = (1..=k_steps).map(|k| 1.0 / (k_steps - k + 1) as f64).collect();
        let sched = Self::from_betas(&betas, action_count)?;
        for i in 0..action_count {
            let row = &sched.qbar[k_steps - 1][i * action_count..(i + 1) * action_count];
            for &v in row {
                assert!(
                    (v - 1.0 / action_count as f64).abs() <= 1e-9,
                    "terminal marginal is not uniform"
                );
            }
        }
        Ok(sched)
    }

    /// Builds a schedule from explicit corruption rates. Primarily for
    /// tests (e.g. `beta = 0` giving identity steps).
    pub fn from_betas(betas: &[f64], action_count: usize) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("diffusion steps must be at least 1"));
        }
        if action_count < 2 {
            return Err(Error::config("action count must be at least 2"));
        }
        if betas.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
            return Err(Error::config("corruption rates must lie in [0,1]"));
        }
        let n = action_count;
        let mut q = Vec::with_capacity(betas.len());
        let mut qbar: Vec<Vec<f64>> = Vec::with_capacity(betas.len());
        for (i, &b) in betas.iter().enumerate() {
            let qk = uniform_mix_matrix(b, n);
            assert_row_stochastic(&qk, n, "Q");
            let cumulative = match qbar.last() {
                Some(prev) => mat_product(prev, &qk, n),
                None => qk.clone(),
            };
            assert_row_stochastic(&cumulative, n, "Qbar");
            q.push(qk);
            qbar.push(cumulative);
            let _ = i;
        }
        Ok(NoiseSchedule { k_steps: betas.len(), action_count, beta: betas.to_vec(), q, qbar })
    }

    pub fn k_steps(&self) -> usize {
        self.k_steps
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.check_k(k);
        self.beta[k - 1]
    }

    /// One-step matrix `Q_k`, row-major.
    pub fn q_k(&self, k: usize) -> &[f64] {
        self.check_k(k);
        &self.q[k - 1]
    }

    /// Cumulative matrix `Qbar_k`, row-major.
    pub fn qbar_k(&self, k: usize) -> &[f64] {
        self.check_k(k);
        &self.qbar[k - 1]
    }

    fn check_k(&self, k: usize) {
        assert!(k >= 1 && k <= self.k_steps, "diffusion step {k} out of range 1..={}", self.k_steps);
    }

    fn check_action(&self, a: usize) {
        assert!(a < self.action_count, "action index {a} out of range");
    }
}

/// Marginal distribution of the corrupted action at step `k` given the
/// clean action: row `a0` of `Qbar_k`.
pub fn forward_marginal(a0: usize, k: usize, sched: &NoiseSchedule) -> Vec<f64> {
    sched.check_k(k);
    sched.check_action(a0);
    let n = sched.action_count;
    sched.qbar_k(k)[a0 * n..(a0 + 1) * n].to_vec()
}

/// Bayes posterior over the action at step `k-1` given the corrupted
/// action at step `k` and the clean action.
pub fn posterior(a_k: usize, a0: usize, k: usize, sched: &NoiseSchedule) -> Vec<f64> {
    sched.check_k(k);
    sched.check_action(a_k);
    sched.check_action(a0);
    let n = sched.action_count;
    let qk = sched.q_k(k);
    // Row a0 of Qbar_{k-1}; the empty product is the identity.
    let prior: Vec<f64> = if k >= 2 {
        let qb = sched.qbar_k(k - 1);
        qb[a0 * n..(a0 + 1) * n].to_vec()
    } else {
        let mut e = vec![0.0; n];
        e[a0] = 1.0;
        e
    };
    let norm = sched.qbar_k(k)[a0 * n + a_k];
    if norm <= 0.0 {
        panic!("unreachable corruption pair");
    }
    // (a_k Q_k^T)_j = Q_k[j, a_k]
    let mut out: Vec<f64> = (0..n).map(|j| qk[j * n + a_k] * prior[j] / norm).collect();
    // Guard against accumulated drift; the products above are exact to
    // ~1e-16 but downstream KL terms expect a distribution.
    let s: f64 = out.iter().sum();
    debug_assert!((s - 1.0).abs() < 1e-12, "posterior rows must sum to 1");
    if s != 1.0 {
        for v in &mut out {
            *v /= s;
        }
    }
    out
}

/// Reverse-step distribution under the clean-action parameterization:
/// the posterior mixture weighted by `softmax(x0_logits)`. At `k == 1`
/// this is the clean-action reconstruction itself.
pub fn reverse_distribution<'t>(
    x0_logits: Var<'t>,
    a_k: usize,
    k: usize,
    sched: &NoiseSchedule,
) -> Var<'t> {
    sched.check_k(k);
    sched.check_action(a_k);
    let n = sched.action_count;
    assert_eq!(x0_logits.len(), n, "logits length mismatch");
    let probs = x0_logits.softmax();
    if k == 1 {
        return probs;
    }
    // M[a0_hat, j] = posterior(a_k, a0_hat, k)[j]
    let mut mix = vec![0.0; n * n];
    for a0_hat in 0..n {
        let post = posterior(a_k, a0_hat, k, sched);
        mix[a0_hat * n..(a0_hat + 1) * n].copy_from_slice(&post);
    }
    probs.vec_const_mat(&mix, n, n)
}

/// Per-step variational-bound term: posterior-to-reverse KL for
/// `k >= 2`, negative log-likelihood of the clean action for `k == 1`.
pub fn vlb_loss<'t>(
    x0_logits: Var<'t>,
    a0: usize,
    a_k: usize,
    k: usize,
    sched: &NoiseSchedule,
) -> Var<'t> {
    sched.check_k(k);
    sched.check_action(a0);
    if k == 1 {
        return -x0_logits.log_softmax().index(a0);
    }
    let target = posterior(a_k, a0, k, sched);
    reverse_distribution(x0_logits, a_k, k, sched).kl_from(&target)
}

/// Samples an index from a probability vector by inverse CDF.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::tensor::{grad_check, Tape, Tensor, Var};
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} != {b} (tol {tol})");
    }

    #[test]
    fn single_step_schedule_is_uniform() {
        let s = NoiseSchedule::uniform(1, 2).unwrap();
        assert_eq!(s.beta(1), 1.0);
        for v in s.q_k(1) {
            approx(*v, 0.5, 1e-15);
        }
    }

    #[test]
    fn two_step_schedule_matches_hand_product() {
        let s = NoiseSchedule::uniform(2, 2).unwrap();
        assert_eq!(s.beta(1), 0.5);
        assert_eq!(s.beta(2), 1.0);
        // Q1 = [[.75,.25],[.25,.75]], Q2 = [[.5,.5],[.5,.5]],
        // hand product Qbar2 = [[.5,.5],[.5,.5]].
        let q1 = s.q_k(1);
        approx(q1[0], 0.75, 1e-15);
        approx(q1[1], 0.25, 1e-15);
        for v in s.qbar_k(2) {
            approx(*v, 0.5, 1e-12);
        }
    }

    #[test]
    fn zero_rate_step_is_identity() {
        let s = NoiseSchedule::from_betas(&[0.0], 3).unwrap();
        let q = s.q_k(1);
        for i in 0..3 {
            for j in 0..3 {
                approx(q[i * 3 + j], if i == j { 1.0 } else { 0.0 }, 1e-15);
            }
        }
    }

    #[test]
    fn zero_steps_is_a_config_error() {
        assert!(NoiseSchedule::uniform(0, 4).is_err());
    }

    #[test]
    fn terminal_marginal_ignores_the_clean_action() {
        let s = NoiseSchedule::uniform(7, 5).unwrap();
        for a0 in 0..5 {
            let m = forward_marginal(a0, 7, &s);
            for v in m {
                approx(v, 0.2, 1e-9);
            }
        }
    }

    #[test]
    fn first_step_marginal_matches_formula() {
        let k_steps = 4;
        let s = NoiseSchedule::uniform(k_steps, 5).unwrap();
        let b1 = 1.0 / k_steps as f64;
        let m = forward_marginal(2, 1, &s);
        for (i, v) in m.iter().enumerate() {
            let want = if i == 2 { 1.0 - b1 + b1 / 5.0 } else { b1 / 5.0 };
            approx(*v, want, 1e-15);
        }
    }

    #[test]
    fn chapman_kolmogorov_holds_by_enumeration() {
        let s = NoiseSchedule::uniform(5, 3).unwrap();
        for k in 2..=5usize {
            for a0 in 0..3 {
                let direct = forward_marginal(a0, k, &s);
                let prev = forward_marginal(a0, k - 1, &s);
                let qk = s.q_k(k);
                for j in 0..3 {
                    let composed: f64 = (0..3).map(|i| prev[i] * qk[i * 3 + j]).sum();
                    approx(direct[j], composed, 1e-12);
                }
            }
        }
    }

    #[test]
    fn posterior_matches_brute_force_bayes() {
        // Enumerate the joint q(a1, a2 | a0) and condition on a2.
        let s = NoiseSchedule::uniform(2, 2).unwrap();
        let q1 = s.q_k(1);
        let q2 = s.q_k(2);
        for a0 in 0..2 {
            for a2 in 0..2 {
                let joint: Vec<f64> = (0..2).map(|a1| q1[a0 * 2 + a1] * q2[a1 * 2 + a2]).collect();
                let z: f64 = joint.iter().sum();
                let got = posterior(a2, a0, 2, &s);
                for a1 in 0..2 {
                    approx(got[a1], joint[a1] / z, 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_step_posterior_is_a_delta() {
        let s = NoiseSchedule::from_betas(&[0.5, 0.0], 3).unwrap();
        let p = posterior(2, 0, 2, &s);
        approx(p[2], 1.0, 1e-15);
        approx(p[0], 0.0, 1e-15);
        approx(p[1], 0.0, 1e-15);
    }

    #[test]
    fn reverse_with_hard_delta_collapses_to_posterior() {
        let s = NoiseSchedule::uniform(4, 3).unwrap();
        let mut logits = vec![-2000.0; 3];
        logits[1] = 2000.0;
        let tape = Tape::new();
        let lv = tape.constant(&logits);
        for k in 2..=4usize {
            for a_k in 0..3 {
                let got = reverse_distribution(lv, a_k, k, &s).value();
                let want = posterior(a_k, 1, k, &s);
                for (g, w) in got.iter().zip(&want) {
                    approx(*g, *w, 1e-12);
                }
            }
        }
    }

    #[test]
    fn reverse_with_uniform_logits_is_the_mean_posterior() {
        let s = NoiseSchedule::uniform(3, 3).unwrap();
        let tape = Tape::new();
        let lv = tape.constant(&[0.0, 0.0, 0.0]);
        let got = reverse_distribution(lv, 2, 2, &s).value();
        let mut want = vec![0.0; 3];
        for a0 in 0..3 {
            for (w, p) in want.iter_mut().zip(posterior(2, a0, 2, &s)) {
                *w += p / 3.0;
            }
        }
        let total: f64 = got.iter().sum();
        approx(total, 1.0, 1e-12);
        for (g, w) in got.iter().zip(&want) {
            approx(*g, *w, 1e-12);
        }
    }

    #[test]
    fn vlb_is_zero_for_an_oracle_predictor() {
        let s = NoiseSchedule::uniform(4, 3).unwrap();
        let a0 = 2;
        let mut logits = vec![-2000.0; 3];
        logits[a0] = 2000.0;
        let tape = Tape::new();
        let lv = tape.constant(&logits);
        for k in 2..=4usize {
            for a_k in 0..3 {
                let loss = vlb_loss(lv, a0, a_k, k, &s).scalar();
                approx(loss, 0.0, 1e-12);
            }
        }
        // The k = 1 reconstruction goes to zero as the delta sharpens.
        let l1 = vlb_loss(lv, a0, 0, 1, &s).scalar();
        assert!(l1 < 1e-10, "reconstruction loss {l1}");
    }

    #[test]
    fn vlb_uniform_logits_matches_hand_evaluated_kl() {
        let s = NoiseSchedule::uniform(2, 2).unwrap();
        let (a0, a_k, k) = (0usize, 1usize, 2usize);
        let tape = Tape::new();
        let lv = tape.constant(&[0.0, 0.0]);
        let got = vlb_loss(lv, a0, a_k, k, &s).scalar();

        // Oracle: direct evaluation with plain loops.
        let target = posterior(a_k, a0, k, &s);
        let mut mix = vec![0.0; 2];
        for a0_hat in 0..2 {
            for (m, p) in mix.iter_mut().zip(posterior(a_k, a0_hat, k, &s)) {
                *m += 0.5 * p;
            }
        }
        let want: f64 = target
            .iter()
            .zip(&mix)
            .filter(|(p, _)| **p > 0.0)
            .map(|(&p, &q)| p * (p.ln() - q.ln()))
            .sum();
        approx(got, want, 1e-12);
        assert!(got > 0.0);
    }

    #[test]
    fn vlb_gradient_matches_finite_differences() {
        let s = NoiseSchedule::uniform(3, 4).unwrap();
        let logits = Tensor::vector(vec![0.4, -0.9, 1.3, 0.1]).with_grad();
        for (a0, a_k, k) in [(0usize, 2usize, 3usize), (1, 3, 2), (2, 0, 1)] {
            let sc = s.clone();
            let f: Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>> =
                Box::new(move |_t, vs| vlb_loss(vs[0], a0, a_k, k, &sc));
            let err = grad_check(&*f, &[logits.clone()], 1e-4);
            assert!(err < 1e-4, "vlb grad error {err} at k={k}");
        }
    }

    #[test]
    fn posterior_then_step_reproduces_the_marginal() {
        // Exact: sum_{a_{k-1}} q(a_{k-1}|a0) Q_k[a_{k-1}, a_k] equals
        // q(a_k|a0), and the posterior-weighted joint agrees with it.
        let s = NoiseSchedule::uniform(6, 4).unwrap();
        for k in 2..=6usize {
            for a0 in 0..4 {
                let marg_k = forward_marginal(a0, k, &s);
                for a_k in 0..4 {
                    let post = posterior(a_k, a0, k, &s);
                    let prev = forward_marginal(a0, k - 1, &s);
                    let qk = s.q_k(k);
                    // joint via forward factorization
                    let joint_fwd: f64 = (0..4).map(|i| prev[i] * qk[i * 4 + a_k]).sum();
                    approx(joint_fwd, marg_k[a_k], 1e-12);
                    // joint via posterior factorization
                    for i in 0..4 {
                        let via_post = marg_k[a_k] * post[i];
                        let via_fwd = prev[i] * qk[i * 4 + a_k];
                        approx(via_post, via_fwd, 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn empirical_posterior_sampling_is_consistent() {
        // Sample a_{k-1} ~ posterior then a_k ~ Q_k and check the
        // resulting a_k histogram against the exact marginal.
        let s = NoiseSchedule::uniform(3, 3).unwrap();
        let (a0, k) = (1usize, 3usize);
        let mut rng = rng_from_seed(77);
        let n = 100_000;
        let marg = forward_marginal(a0, k, &s);
        let mut counts = vec![0usize; 3];
        for _ in 0..n {
            let a_k = sample_categorical(&marg, &mut rng);
            let post = posterior(a_k, a0, k, &s);
            let a_prev = sample_categorical(&post, &mut rng);
            let qk = s.q_k(k);
            let row = &qk[a_prev * 3..(a_prev + 1) * 3];
            let a_k2 = sample_categorical(row, &mut rng);
            counts[a_k2] += 1;
        }
        // chi-square statistic against the exact marginal
        let chi2: f64 = counts
            .iter()
            .zip(&marg)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e) * (c as f64 - e) / e
            })
            .sum();
        // 2 dof, p > 0.01 means chi2 < 9.21
        assert!(chi2 < 9.21, "chi2 {chi2}");
    }

    proptest! {
        #[test]
        fn posterior_rows_always_sum_to_one(
            k_steps in 1usize..8,
            seed in 0u64..500,
        ) {
            let n = 2 + (seed % 5) as usize;
            let s = NoiseSchedule::uniform(k_steps, n).unwrap();
            let k = 1 + (seed as usize % k_steps);
            let a_k = (seed as usize / 7) % n;
            let a0 = (seed as usize / 3) % n;
            let p = posterior(a_k, a0, k, &s);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn schedule_rows_are_stochastic(k_steps in 1usize..20, n in 2usize..7) {
            let s = NoiseSchedule::uniform(k_steps, n).unwrap();
            for k in 1..=k_steps {
                for m in [s.q_k(k), s.qbar_k(k)] {
                    for i in 0..n {
                        let row_sum: f64 = m[i * n..(i + 1) * n].iter().sum();
                        prop_assert!((row_sum - 1.0).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
