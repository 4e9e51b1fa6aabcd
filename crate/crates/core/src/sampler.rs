//! Monte Carlo rollouts and the return-to-go estimator of the discounted
//! approximation.
//!
//! Every episode draws from its own ChaCha8 stream keyed by
//! `(master seed, episode index)`, so batches can be generated in parallel
//! and still reproduce bit-for-bit.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::discounted_approximation;
use crate::error::{Error, Result};
use crate::mdp::AbsorbingMdp;
use crate::policy::{policy_matrix, score_into, ParamTable, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeSeed {
    pub master: u64,
    pub index: u64,
}

impl EpisodeSeed {
    pub fn new(master: u64, index: u64) -> Self {
        Self { master, index }
    }

    fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.index);
        rng
    }
}

/// `states` has `T + 1` entries ending in the terminal state; `actions` and
/// `rewards` have `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub seed: EpisodeSeed,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `G_t = Σ_{i ≥ t} γ^{i-t} R_i` for every `t`.
    pub fn returns_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rewards.len()];
        let mut acc = 0.0;
        for t in (0..self.rewards.len()).rev() {
            acc = self.rewards[t] + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

fn draw(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn rollout_with(mdp: &AbsorbingMdp, pi: &[f64], seed: EpisodeSeed) -> Episode {
    let na = mdp.num_actions();
    let horizon = mdp.horizon();
    let mut rng = seed.rng();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = draw(mdp.initial_dist(), &mut rng);
    states.push(s);
    for _ in 0..horizon {
        let a = draw(&pi[s * na..(s + 1) * na], &mut rng);
        let next = draw(mdp.transition_row(s, a), &mut rng);
        actions.push(a);
        rewards.push(mdp.r(s, a, next));
        states.push(next);
        s = next;
    }
    debug_assert_eq!(s, mdp.terminal());
    Episode {
        states,
        actions,
        rewards,
        seed,
    }
}

fn check_policy(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<()> {
    if theta.num_states() != mdp.num_states() || theta.num_actions() != mdp.num_actions() {
        return Err(Error::Shape("policy shape does not match the MDP".into()));
    }
    Ok(())
}

/// Samples one episode under π_θ.
pub fn rollout(mdp: &AbsorbingMdp, theta: &PolicyParams, seed: EpisodeSeed) -> Result<Episode> {
    check_policy(mdp, theta)?;
    Ok(rollout_with(mdp, &policy_matrix(theta), seed))
}

/// Episodes `first..first + count` of the stream keyed by `master`, in index
/// order regardless of scheduling.
pub fn rollouts(
    mdp: &AbsorbingMdp,
    theta: &PolicyParams,
    master: u64,
    first: u64,
    count: usize,
) -> Result<Vec<Episode>> {
    check_policy(mdp, theta)?;
    let pi = policy_matrix(theta);
    Ok((0..count as u64)
        .into_par_iter()
        .map(|k| rollout_with(mdp, &pi, EpisodeSeed::new(master, first + k)))
        .collect())
}

/// `Σ_t G_t^γ ∂ln π(A_t|S_t)/∂θ` for a single episode.
pub fn episode_estimate(episode: &Episode, theta: &PolicyParams, gamma: f64) -> ParamTable {
    let na = theta.num_actions();
    let pi = policy_matrix(theta);
    let mut out = ParamTable::zeros(theta.num_states(), na);
    let mut sc = vec![0.0; na];
    for (t, g) in episode.returns_to_go(gamma).into_iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let (s, a) = (episode.states[t], episode.actions[t]);
        score_into(&pi[s * na..(s + 1) * na], a, &mut sc);
        for (o, x) in out.row_mut(s).iter_mut().zip(&sc) {
            *o += g * x;
        }
    }
    out
}

/// Mean of [`episode_estimate`] over on-policy episodes.
pub fn reinforce_estimate(episodes: &[Episode], theta: &PolicyParams, gamma: f64) -> Result<ParamTable> {
    if episodes.is_empty() {
        return Err(Error::Sampler("reinforce_estimate needs at least one episode".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Gamma(gamma));
    }
    let mut mean = ParamTable::zeros(theta.num_states(), theta.num_actions());
    for ep in episodes {
        mean.add_scaled(1.0, &episode_estimate(ep, theta, gamma));
    }
    mean.scale(1.0 / episodes.len() as f64);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub gamma: f64,
    pub episodes: usize,
    pub seed: u64,
    pub mean: ParamTable,
    pub exact: ParamTable,
    pub std_err: ParamTable,
    /// `(mean - exact) / std_err`; zero where both numerator and denominator vanish.
    pub z: ParamTable,
    pub max_abs_z: f64,
    /// Coordinates with zero sample variance but a nonzero deviation.
    pub structural_mismatch: Vec<(usize, usize)>,
}

/// Below this, a deviation with zero sample variance counts as zero.
const ZERO_DEVIATION: f64 = 1e-12;

/// z-score audit of [`reinforce_estimate`] against the exact approximation.
pub fn estimator_check(
    mdp: &AbsorbingMdp,
    theta: &PolicyParams,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<BiasReport> {
    if n < 100 {
        return Err(Error::Sampler(format!("estimator_check needs n >= 100 episodes, got {n}")));
    }
    let exact = discounted_approximation(mdp, theta, gamma)?;
    let episodes = rollouts(mdp, theta, seed, 0, n)?;
    let (ns, na) = (theta.num_states(), theta.num_actions());

    // Welford, sequential in episode order.
    let mut mean = ParamTable::zeros(ns, na);
    let mut m2 = ParamTable::zeros(ns, na);
    for (k, ep) in episodes.iter().enumerate() {
        let x = episode_estimate(ep, theta, gamma);
        let count = (k + 1) as f64;
        for ((m, s2), xi) in mean.as_mut_slice().iter_mut().zip(m2.as_mut_slice()).zip(x.as_slice()) {
            let delta = xi - *m;
            *m += delta / count;
            *s2 += delta * (xi - *m);
        }
    }
    let mut std_err = m2.clone();
    for v in std_err.as_mut_slice() {
        *v = (*v / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt();
    }
    let mut z = ParamTable::zeros(ns, na);
    let mut structural_mismatch = Vec::new();
    let mut max_abs_z: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let dev = mean.get(s, a) - exact.get(s, a);
            let se = std_err.get(s, a);
            let zi = if se > 0.0 {
                dev / se
            } else if dev.abs() <= ZERO_DEVIATION {
                0.0
            } else {
                structural_mismatch.push((s, a));
                f64::INFINITY.copysign(dev)
            };
            z.set(s, a, zi);
            max_abs_z = max_abs_z.max(zi.abs());
        }
    }
    Ok(BiasReport {
        gamma,
        episodes: n,
        seed,
        mean,
        exact,
        std_err,
        z,
        max_abs_z,
        structural_mismatch,
    })
}

/// Writes episodes as CSV blocks with columns `t,state,action,reward`,
/// separated by blank lines. The final row of each block holds the terminal
/// state with empty action and reward.
pub fn write_episodes_csv<W: Write>(mut out: W, episodes: &[Episode]) -> Result<()> {
    for (k, ep) in episodes.iter().enumerate() {
        if k > 0 {
            writeln!(out)?;
        }
        writeln!(out, "t,state,action,reward")?;
        for t in 0..ep.len() {
            writeln!(out, "{t},{},{},{}", ep.states[t], ep.actions[t], ep.rewards[t])?;
        }
        writeln!(out, "{},{},,", ep.len(), ep.states[ep.len()])?;
    }
    Ok(())
}
