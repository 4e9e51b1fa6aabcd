//! Built-in environment generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::mdp::{Mdp, MdpTables};

struct Builder {
    n: usize,
    na: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

impl Builder {
    fn new(n: usize, na: usize) -> Self {
        let mut b = Self {
            n,
            na,
            transition: vec![0.0; n * na * n],
            reward: vec![0.0; n * na * n],
        };
        for a in 0..na {
            b.edge(n - 1, a, n - 1, 1.0, 0.0);
        }
        b
    }

    fn edge(&mut self, s: usize, a: usize, next: usize, p: f64, r: f64) {
        let i = (s * self.na + a) * self.n + next;
        self.transition[i] = p;
        self.reward[i] = r;
    }

    fn finish(self, horizon: usize, initial_dist: Vec<f64>, r_max: f64) -> Result<Mdp> {
        Mdp::new(MdpTables {
            num_states: self.n,
            num_actions: self.na,
            horizon,
            transition: self.transition,
            reward: self.reward,
            initial_dist,
            r_max,
        })
    }
}

fn start_at_zero(n: usize) -> Vec<f64> {
    let mut d0 = vec![0.0; n];
    d0[0] = 1.0;
    d0
}

/// Deterministic single-action chain `s0 → … → s_{length-1} → terminal`
/// with horizon `length`.
pub fn make_chain(length: usize, reward_per_step: f64) -> Result<Mdp> {
    if length == 0 {
        return Err(Error::Config("chain length must be at least 1".into()));
    }
    let n = length + 1;
    let mut b = Builder::new(n, 1);
    for s in 0..length {
        b.edge(s, 0, s + 1, 1.0, reward_per_step);
    }
    b.finish(length, start_at_zero(n), reward_per_step.abs())
}

/// One-step bandit: a single start state whose actions pay `rewards[a]` and
/// terminate.
pub fn make_bandit(rewards: &[f64]) -> Result<Mdp> {
    if rewards.is_empty() {
        return Err(Error::Config("bandit needs at least one arm".into()));
    }
    let mut b = Builder::new(2, rewards.len());
    for (a, &r) in rewards.iter().enumerate() {
        b.edge(0, a, 1, 1.0, r);
    }
    let r_max = rewards.iter().fold(0.0, |m: f64, r| m.max(r.abs()));
    b.finish(1, start_at_zero(2), r_max)
}

fn dirichlet_one(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Layered random MDP.
///
/// The `num_states - 1` non-terminal states are split into
/// `min(horizon, num_states - 1)` consecutive layers. Layer 0 carries the
/// initial distribution, each row moves to the next layer and the last layer
/// moves to the terminal state, so absorption happens by the horizon.
/// Distributions are Dirichlet(1) and rewards uniform on `[-1, 1]`.
pub fn make_random(num_states: usize, num_actions: usize, horizon: usize, seed: u64) -> Result<Mdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(Error::Config("random MDP sizes must all be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = num_states - 1;
    let term = num_states - 1;
    let mut b = Builder::new(num_states, num_actions);
    if inner == 0 {
        return b.finish(horizon, vec![1.0], 1.0);
    }
    let layers = horizon.min(inner);
    let layer_of = |s: usize| s * layers / inner;
    let members = |l: usize| (0..inner).filter(move |&s| layer_of(s) == l);

    let first: Vec<usize> = members(0).collect();
    let mut d0 = vec![0.0; num_states];
    for (s, p) in first.iter().zip(dirichlet_one(&mut rng, first.len())) {
        d0[*s] = p;
    }

    for s in 0..inner {
        let l = layer_of(s);
        let targets: Vec<usize> = if l + 1 < layers {
            members(l + 1).collect()
        } else {
            vec![term]
        };
        for a in 0..num_actions {
            let probs = dirichlet_one(&mut rng, targets.len());
            for next in 0..num_states {
                b.edge(s, a, next, 0.0, rng.random_range(-1.0..=1.0));
            }
            for (&next, p) in targets.iter().zip(probs) {
                let i = (s * num_actions + a) * num_states + next;
                b.transition[i] = p;
            }
        }
    }
    b.finish(horizon, d0, 1.0)
}

/// Start state with two actions: `a0` pays `small_reward` and terminates,
/// `a1` walks `delay` zero-reward steps and then pays `big_reward`.
/// Horizon is `delay + 1`; both actions agree everywhere except the start.
pub fn make_bias_trap(small_reward: f64, big_reward: f64, delay: usize) -> Result<Mdp> {
    if !(0.0 < small_reward && small_reward < big_reward) {
        return Err(Error::Config(format!(
            "bias trap needs 0 < small_reward < big_reward, got {small_reward} and {big_reward}"
        )));
    }
    if delay < 2 {
        return Err(Error::Config(format!("bias trap needs delay >= 2, got {delay}")));
    }
    // s0, corridor states 1..=delay, terminal.
    let n = delay + 2;
    let term = n - 1;
    let mut b = Builder::new(n, 2);
    b.edge(0, 0, term, 1.0, small_reward);
    b.edge(0, 1, 1, 1.0, 0.0);
    for s in 1..=delay {
        let (next, r) = if s == delay { (term, big_reward) } else { (s + 1, 0.0) };
        for a in 0..2 {
            b.edge(s, a, next, 1.0, r);
        }
    }
    b.finish(delay + 1, start_at_zero(n), big_reward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{absorption_check, validate};

    #[test]
    fn chain_rejects_zero_length() {
        assert!(make_chain(0, 1.0).is_err());
    }

    #[test]
    fn generators_validate() {
        for m in [
            make_chain(1, 1.0).unwrap(),
            make_chain(5, -0.5).unwrap(),
            make_bandit(&[1.0, 0.0]).unwrap(),
            make_bias_trap(0.5, 1.0, 3).unwrap(),
        ] {
            assert!(validate(&m).ok, "{}", validate(&m));
            assert_eq!(absorption_check(&m), 0.0);
        }
    }

    #[test]
    fn random_is_deterministic_and_valid() {
        for seed in 0..100 {
            let n = 1 + (seed as usize % 8);
            let na = 1 + (seed as usize % 3);
            let horizon = 1 + (seed as usize % 6);
            let m = make_random(n, na, horizon, seed).unwrap();
            assert!(validate(&m).ok, "seed {seed}: {}", validate(&m));
            assert_eq!(absorption_check(&m), 0.0);
            assert_eq!(m, make_random(n, na, horizon, seed).unwrap());
        }
        assert_ne!(make_random(5, 2, 3, 1).unwrap(), make_random(5, 2, 3, 2).unwrap());
    }

    #[test]
    fn bias_trap_parameters() {
        assert!(make_bias_trap(1.0, 0.5, 3).is_err());
        assert!(make_bias_trap(0.0, 0.5, 3).is_err());
        assert!(make_bias_trap(0.5, 1.0, 1).is_err());
        let m = make_bias_trap(0.5, 1.0, 3).unwrap();
        assert_eq!(m.num_states(), 5);
        assert_eq!(m.horizon(), 4);
    }
}
