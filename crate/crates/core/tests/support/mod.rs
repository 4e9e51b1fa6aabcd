//! Independent oracles for the integration tests.
//!
//! Nothing here calls into the analysis engine: the oracles only read the
//! raw MDP tables and recompute softmax probabilities from scratch.
#![allow(dead_code)]

use annealpg::mdp::{Mdp, MdpTables};
use annealpg::PolicyParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Everything exhaustive trajectory enumeration yields for one `(θ, γ)`.
#[derive(Debug, Clone)]
pub struct Enumerated {
    pub j: f64,
    /// `T`-step discounted value from each start state.
    pub v: Vec<f64>,
    /// `q[s][a]`: first action fixed, `T` steps in total.
    pub q: Vec<Vec<f64>>,
    /// `p[t][s]` for `t = 0..T-1`.
    pub p: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    /// `Σ_τ P(τ) R(τ) Σ_t ∇log π(a_t|s_t)`, flattened `[s][a]`.
    pub grad_j: Vec<f64>,
    /// `Σ_τ P(τ) Σ_t G_t^γ ∇log π(a_t|s_t)`, flattened `[s][a]`.
    pub approx: Vec<f64>,
}

struct Walker<'a> {
    mdp: &'a Mdp,
    pi: Vec<Vec<f64>>,
    gamma: f64,
}

/// One complete trajectory: states `s_0..s_{T-1}`, actions and rewards.
struct Path {
    states: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl Walker<'_> {
    /// Calls `visit(prob, path)` for every positive-probability trajectory of
    /// exactly `steps` steps from `start`, optionally forcing the first action.
    fn walk(&self, start: usize, steps: usize, first: Option<usize>, visit: &mut dyn FnMut(f64, &Path)) {
        let mut path = Path {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
        };
        self.step(start, 1.0, steps, first, &mut path, visit);
    }

    fn step(&self, s: usize, prob: f64, left: usize, first: Option<usize>, path: &mut Path, visit: &mut dyn FnMut(f64, &Path)) {
        if left == 0 {
            visit(prob, path);
            return;
        }
        let na = self.mdp.num_actions();
        for a in 0..na {
            let pa = match (first, path.actions.is_empty()) {
                (Some(f), true) => f64::from(u8::from(a == f)),
                _ => self.pi[s][a],
            };
            if pa == 0.0 {
                continue;
            }
            for next in 0..self.mdp.num_states() {
                let pt = self.mdp.p(s, a, next);
                if pt == 0.0 {
                    continue;
                }
                path.states.push(s);
                path.actions.push(a);
                path.rewards.push(self.mdp.r(s, a, next));
                self.step(next, prob * pa * pt, left - 1, first, path, visit);
                path.states.pop();
                path.actions.pop();
                path.rewards.pop();
            }
        }
    }

    fn discounted(&self, rewards: &[f64]) -> f64 {
        rewards.iter().rev().fold(0.0, |acc, r| r + self.gamma * acc)
    }
}

pub fn enumerate(mdp: &Mdp, theta: &PolicyParams, gamma: f64) -> Enumerated {
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let pi: Vec<Vec<f64>> = (0..n).map(|s| softmax(theta.row(s))).collect();
    let w = Walker { mdp, pi, gamma };

    let mut v = vec![0.0; n];
    let mut q = vec![vec![0.0; na]; n];
    for s in 0..n {
        w.walk(s, horizon, None, &mut |prob, path| v[s] += prob * w.discounted(&path.rewards));
        #[allow(clippy::needless_range_loop)]
        for a in 0..na {
            w.walk(s, horizon, Some(a), &mut |prob, path| q[s][a] += prob * w.discounted(&path.rewards));
        }
    }

    let mut j = 0.0;
    let mut p = vec![vec![0.0; n]; horizon];
    let mut grad_j = vec![0.0; n * na];
    let mut approx = vec![0.0; n * na];
    for s0 in 0..n {
        let d0 = mdp.initial_dist()[s0];
        if d0 == 0.0 {
            continue;
        }
        w.walk(s0, horizon, None, &mut |prob, path| {
            let prob = prob * d0;
            let total: f64 = path.rewards.iter().sum();
            j += prob * total;
            for (t, &s) in path.states.iter().enumerate() {
                p[t][s] += prob;
                let a = path.actions[t];
                let rtg = w.discounted(&path.rewards[t..]);
                for b in 0..na {
                    let score = f64::from(u8::from(a == b)) - w.pi[s][b];
                    grad_j[s * na + b] += prob * total * score;
                    approx[s * na + b] += prob * rtg * score;
                }
            }
        });
    }

    let mut d = mdp.initial_dist().to_vec();
    for pt in p.iter().skip(1) {
        for s in 0..n {
            d[s] += (1.0 - gamma) * pt[s];
        }
    }
    Enumerated { j, v, q, p, d, grad_j, approx }
}

/// Undiscounted `T`-step return by enumeration, valid without absorption.
pub fn enumerate_objective(mdp: &Mdp, theta: &PolicyParams) -> f64 {
    let n = mdp.num_states();
    let pi: Vec<Vec<f64>> = (0..n).map(|s| softmax(theta.row(s))).collect();
    let w = Walker { mdp, pi, gamma: 1.0 };
    let mut j = 0.0;
    for s0 in 0..n {
        let d0 = mdp.initial_dist()[s0];
        if d0 > 0.0 {
            w.walk(s0, mdp.horizon(), None, &mut |prob, path| j += d0 * prob * path.rewards.iter().sum::<f64>());
        }
    }
    j
}

fn dirichlet<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let z: f64 = x.iter().sum();
    x.into_iter().map(|v| v / z).collect()
}

/// Random DAG: every non-terminal state moves only to strictly higher
/// indices (terminal included), so episodes have variable length and
/// terminate within `|S| - 1` steps. Some edges are pruned to exact zeros.
pub fn random_dag(n: usize, na: usize, horizon: usize, seed: u64) -> Mdp {
    assert!(n >= 2 && horizon + 1 >= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let term = n - 1;
    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na * n];
    for s in 0..term {
        for a in 0..na {
            let targets: Vec<usize> = (s + 1..n).filter(|&t| t == term || rng.random_bool(0.7)).collect();
            let probs = dirichlet(&mut rng, targets.len());
            let o = (s * na + a) * n;
            for (&t, p) in targets.iter().zip(probs) {
                transition[o + t] = p;
            }
            for next in 0..n {
                reward[o + next] = rng.random_range(-1.0..=1.0);
            }
        }
    }
    for a in 0..na {
        transition[(term * na + a) * n + term] = 1.0;
    }
    let mut initial_dist = vec![0.0; n];
    let starts = dirichlet(&mut rng, term);
    initial_dist[..term].copy_from_slice(&starts);
    Mdp::new(MdpTables {
        num_states: n,
        num_actions: na,
        horizon,
        transition,
        reward,
        initial_dist,
        r_max: 1.0,
    })
    .unwrap()
}

/// Dense random MDP whose terminal is never reached: it validates but does
/// not absorb, so only [`annealpg::mdp::time_augment`] makes it analyzable.
pub fn dense_cyclic(n: usize, na: usize, horizon: usize, seed: u64) -> Mdp {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let term = n - 1;
    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na * n];
    for s in 0..term {
        for a in 0..na {
            let probs = dirichlet(&mut rng, term);
            let o = (s * na + a) * n;
            transition[o..o + term].copy_from_slice(&probs);
            for next in 0..term {
                reward[o + next] = rng.random_range(-1.0..=1.0);
            }
        }
    }
    for a in 0..na {
        transition[(term * na + a) * n + term] = 1.0;
    }
    let mut initial_dist = vec![0.0; n];
    initial_dist[..term].copy_from_slice(&dirichlet(&mut rng, term));
    Mdp::new(MdpTables {
        num_states: n,
        num_actions: na,
        horizon,
        transition,
        reward,
        initial_dist,
        r_max: 1.0,
    })
    .unwrap()
}

/// Closed-form exact ascent on the one-step bandit with rewards `(r0, r1)`,
/// tracking only `u = θ[0][1] - θ[0][0]`:
/// `π1 = σ(u)`, `∂J/∂θ[0][1] = -∂J/∂θ[0][0] = (r1 - r0) π1 (1 - π1)`, so
/// `u ← u + 2α (r1 - r0) π1 (1 - π1)`.
pub fn bandit_ascent(r0: f64, r1: f64, alphas: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut u: f64 = 0.0;
    for alpha in alphas {
        let p1 = 1.0 / (1.0 + (-u).exp());
        u += 2.0 * alpha * (r1 - r0) * p1 * (1.0 - p1);
    }
    let p1 = 1.0 / (1.0 + (-u).exp());
    let grad_norm = std::f64::consts::SQRT_2 * (r1 - r0).abs() * p1 * (1.0 - p1);
    (r0 + (r1 - r0) * p1, grad_norm)
}
