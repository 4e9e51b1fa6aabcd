//! Finite episodic MDPs with a terminal absorbing state.
//!
//! An [`Mdp`] owns dense `[s][a][s']` transition and expected-reward tensors.
//! The terminal state is always the last index. Construction only checks
//! shapes; the probabilistic invariants are reported by [`validate`] and never
//! repaired. Analysis code works on [`AbsorbingMdp`], which additionally
//! guarantees that every policy reaches the terminal state by the horizon.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

/// Absolute tolerance for every probability check.
pub const PROB_TOL: f64 = 1e-9;

/// Flat tensors used to build an [`Mdp`]; the terminal state is the last index.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpTables {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// Row-major `[s][a][s']`.
    pub transition: Vec<f64>,
    /// Row-major `[s][a][s']`, same shape as `transition`.
    pub reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    terminal: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
    r_max: f64,
}

impl Mdp {
    pub fn new(tables: MdpTables) -> Result<Self> {
        let MdpTables {
            num_states,
            num_actions,
            horizon,
            transition,
            reward,
            initial_dist,
            r_max,
        } = tables;
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Shape(format!(
                "need at least one state and one action, got |S|={num_states}, |A|={num_actions}"
            )));
        }
        let len = num_states * num_actions * num_states;
        if transition.len() != len {
            return Err(Error::Shape(format!(
                "transition has {} entries, expected {len}",
                transition.len()
            )));
        }
        if reward.len() != len {
            return Err(Error::Shape(format!(
                "reward has {} entries, expected {len}",
                reward.len()
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::Shape(format!(
                "initial_dist has {} entries, expected {num_states}",
                initial_dist.len()
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            terminal: num_states - 1,
            transition,
            reward,
            initial_dist,
            r_max,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn terminal(&self) -> usize {
        self.terminal
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `(T + 1) * r_max`, the bound on any value-function entry.
    pub fn v_max(&self) -> f64 {
        (self.horizon as f64 + 1.0) * self.r_max
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    #[inline]
    fn row_offset(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    /// `P[s][a][·]`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.row_offset(s, a);
        &self.transition[o..o + self.num_states]
    }

    /// `r[s][a][·]`.
    #[inline]
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.row_offset(s, a);
        &self.reward[o..o + self.num_states]
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[self.row_offset(s, a) + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.row_offset(s, a) + next]
    }

    /// `Σ_{s'} P[s][a][s'] r[s][a][s']`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(self.reward_row(s, a))
            .map(|(p, r)| p * r)
            .sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// On-disk JSON layout of an MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    pub horizon: usize,
    pub terminal: usize,
    pub r_max: f64,
}

fn flatten_tensor(
    name: &str,
    nested: Vec<Vec<Vec<f64>>>,
    num_states: usize,
    num_actions: usize,
) -> Result<Vec<f64>> {
    if nested.len() != num_states {
        return Err(Error::Shape(format!(
            "{name} has {} state rows, expected {num_states}",
            nested.len()
        )));
    }
    let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
    for (s, per_action) in nested.into_iter().enumerate() {
        if per_action.len() != num_actions {
            return Err(Error::Shape(format!(
                "{name}[{s}] has {} action rows, expected {num_actions}",
                per_action.len()
            )));
        }
        for (a, row) in per_action.into_iter().enumerate() {
            if row.len() != num_states {
                return Err(Error::Shape(format!(
                    "{name}[{s}][{a}] has {} entries, expected {num_states}",
                    row.len()
                )));
            }
            flat.extend(row);
        }
    }
    Ok(flat)
}

impl TryFrom<MdpDocument> for Mdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let transition = flatten_tensor("transition", doc.transition, doc.num_states, doc.num_actions)?;
        let reward = flatten_tensor("reward", doc.reward, doc.num_states, doc.num_actions)?;
        let mut mdp = Mdp::new(MdpTables {
            num_states: doc.num_states,
            num_actions: doc.num_actions,
            horizon: doc.horizon,
            transition,
            reward,
            initial_dist: doc.initial_dist,
            r_max: doc.r_max,
        })?;
        if doc.terminal >= doc.num_states {
            return Err(Error::Shape(format!(
                "terminal index {} out of range for {} states",
                doc.terminal, doc.num_states
            )));
        }
        // Kept as declared so that validate() can report a misplaced terminal.
        mdp.terminal = doc.terminal;
        Ok(mdp)
    }
}

impl From<Mdp> for MdpDocument {
    fn from(mdp: Mdp) -> Self {
        let nest = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            flat.chunks(mdp.num_actions * mdp.num_states)
                .map(|per_state| per_state.chunks(mdp.num_states).map(<[f64]>::to_vec).collect())
                .collect()
        };
        MdpDocument {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            transition: nest(&mdp.transition),
            reward: nest(&mdp.reward),
            initial_dist: mdp.initial_dist.clone(),
            horizon: mdp.horizon,
            terminal: mdp.terminal,
            r_max: mdp.r_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Global,
    State(usize),
    StateAction(usize, usize),
    Transition(usize, usize, usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Global => write!(f, "global"),
            Location::State(s) => write!(f, "s={s}"),
            Location::StateAction(s, a) => write!(f, "(s={s}, a={a})"),
            Location::Transition(s, a, n) => write!(f, "(s={s}, a={a}, s'={n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub location: Location,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return write!(f, "ok");
        }
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(5) {
            write!(f, "; {} at {} (magnitude {:e})", v.rule, v.location, v.magnitude)?;
        }
        if self.violations.len() > 5 {
            write!(f, "; ...")?;
        }
        Ok(())
    }
}

/// Lists every invariant violation of `mdp`.
pub fn validate(mdp: &Mdp) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |rule: &str, location: Location, magnitude: f64| {
        out.push(Violation {
            rule: rule.to_string(),
            location,
            magnitude,
        })
    };
    let (n, na) = (mdp.num_states, mdp.num_actions);
    let term = mdp.terminal;

    if mdp.horizon == 0 {
        push("horizon", Location::Global, 0.0);
    }
    if term != n - 1 {
        push("terminal-index", Location::State(term), (n - 1 - term) as f64);
    }
    if !mdp.r_max.is_finite() || mdp.r_max < 0.0 {
        push("r-max", Location::Global, mdp.r_max);
    }

    for s in 0..n {
        for a in 0..na {
            let row = mdp.transition_row(s, a);
            let mut finite = true;
            for (next, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    push("non-finite", Location::Transition(s, a, next), p);
                    finite = false;
                } else if !(0.0..=1.0).contains(&p) {
                    let excess = if p < 0.0 { -p } else { p - 1.0 };
                    push("probability-range", Location::Transition(s, a, next), excess);
                }
            }
            let sum: f64 = row.iter().sum();
            if finite && (sum - 1.0).abs() > PROB_TOL {
                push("row-sum", Location::StateAction(s, a), (sum - 1.0).abs());
            }
            for (next, &r) in mdp.reward_row(s, a).iter().enumerate() {
                if !r.is_finite() {
                    push("non-finite", Location::Transition(s, a, next), r);
                } else if r.abs() > mdp.r_max {
                    push("reward-bound", Location::Transition(s, a, next), r.abs() - mdp.r_max);
                }
                if s == term && r != 0.0 {
                    push("terminal-reward", Location::Transition(s, a, next), r.abs());
                }
            }
            if s == term {
                let stay = mdp.p(term, a, term);
                if (stay - 1.0).abs() > PROB_TOL {
                    push("terminal-absorbing", Location::StateAction(s, a), (stay - 1.0).abs());
                }
            }
        }
    }

    let mut d0_finite = true;
    for (s, &p) in mdp.initial_dist.iter().enumerate() {
        if !p.is_finite() {
            push("non-finite", Location::State(s), p);
            d0_finite = false;
        } else if !(0.0..=1.0).contains(&p) {
            let excess = if p < 0.0 { -p } else { p - 1.0 };
            push("initial-range", Location::State(s), excess);
        }
    }
    let d0_sum: f64 = mdp.initial_dist.iter().sum();
    if d0_finite && (d0_sum - 1.0).abs() > PROB_TOL {
        push("initial-sum", Location::Global, (d0_sum - 1.0).abs());
    }
    // A lone terminal state has no other state to start in.
    if n > 1 && mdp.initial_dist[term] != 0.0 {
        push("initial-terminal", Location::State(term), mdp.initial_dist[term]);
    }

    ValidationReport::from_violations(out)
}

/// Largest probability, over all policies, of not being in the terminal
/// state at time T. Zero iff absorption is guaranteed.
pub fn absorption_check(mdp: &Mdp) -> f64 {
    let (n, na, term) = (mdp.num_states, mdp.num_actions, mdp.terminal);

    // Reachability decides exact zero; the max-probability DP gives magnitude.
    let mut reach: Vec<bool> = mdp.initial_dist.iter().map(|&p| p > 0.0).collect();
    for _ in 0..mdp.horizon {
        let mut next = vec![false; n];
        for s in (0..n).filter(|&s| reach[s]) {
            for a in 0..na {
                for (sp, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        next[sp] = true;
                    }
                }
            }
        }
        reach = next;
    }
    if (0..n).all(|s| s == term || !reach[s]) {
        return 0.0;
    }

    let mut survive: Vec<f64> = (0..n).map(|s| if s == term { 0.0 } else { 1.0 }).collect();
    for _ in 0..mdp.horizon {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if s == term {
                    return 0.0;
                }
                (0..na)
                    .map(|a| {
                        mdp.transition_row(s, a)
                            .iter()
                            .zip(&survive)
                            .map(|(p, w)| p * w)
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        survive = next;
    }
    let worst: f64 = mdp.initial_dist.iter().zip(&survive).map(|(d, w)| d * w).sum();
    worst.max(f64::MIN_POSITIVE)
}

/// Product MDP over `(s, t)` pairs with a forced transition to a fresh
/// terminal state after step `T - 1`.
///
/// State `(s, t)` has index `t * |S| + s`; the new terminal is `|S| * T`.
/// The last step's reward is the conditional expectation `Σ_{s'} P r`.
pub fn time_augment(mdp: &Mdp) -> Result<Mdp> {
    if mdp.horizon == 0 {
        return Err(Error::Config("time augmentation needs horizon >= 1".into()));
    }
    let report = validate(mdp);
    if !report.ok {
        return Err(Error::InvalidMdp(report));
    }
    let (n, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let n_aug = n * horizon + 1;
    let term_aug = n_aug - 1;
    let idx = |s: usize, t: usize| t * n + s;

    let mut transition = vec![0.0; n_aug * na * n_aug];
    let mut reward = vec![0.0; n_aug * na * n_aug];
    let offset = |s: usize, a: usize| (s * na + a) * n_aug;
    for t in 0..horizon {
        for s in 0..n {
            let from = idx(s, t);
            for a in 0..na {
                let o = offset(from, a);
                if t + 1 < horizon {
                    for sp in 0..n {
                        transition[o + idx(sp, t + 1)] = mdp.p(s, a, sp);
                        reward[o + idx(sp, t + 1)] = mdp.r(s, a, sp);
                    }
                } else {
                    transition[o + term_aug] = 1.0;
                    reward[o + term_aug] = mdp.expected_reward(s, a);
                }
            }
        }
    }
    for a in 0..na {
        transition[offset(term_aug, a) + term_aug] = 1.0;
    }
    let mut initial_dist = vec![0.0; n_aug];
    initial_dist[..n].copy_from_slice(&mdp.initial_dist);

    Mdp::new(MdpTables {
        num_states: n_aug,
        num_actions: na,
        horizon,
        transition,
        reward,
        initial_dist,
        r_max: mdp.r_max,
    })
}

/// Lifts a time-independent policy onto the states of [`time_augment`].
pub fn augment_policy(theta: &PolicyParams, horizon: usize) -> PolicyParams {
    let (n, na) = (theta.num_states(), theta.num_actions());
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n * horizon + 1);
    for _ in 0..horizon {
        rows.extend((0..n).map(|s| theta.row(s).to_vec()));
    }
    rows.push(vec![0.0; na]);
    PolicyParams::from_rows(rows).expect("tiling finite parameters stays finite")
}

/// An MDP that validates and absorbs by the horizon under every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingMdp(Mdp);

impl AbsorbingMdp {
    pub fn new(mdp: Mdp) -> Result<Self> {
        let report = validate(&mdp);
        if !report.ok {
            return Err(Error::InvalidMdp(report));
        }
        let probability = absorption_check(&mdp);
        if probability > 0.0 {
            return Err(Error::NotAbsorbing { probability });
        }
        Ok(Self(mdp))
    }

    pub fn into_inner(self) -> Mdp {
        self.0
    }
}

impl Deref for AbsorbingMdp {
    type Target = Mdp;

    fn deref(&self) -> &Mdp {
        &self.0
    }
}

impl TryFrom<Mdp> for AbsorbingMdp {
    type Error = Error;

    fn try_from(mdp: Mdp) -> Result<Self> {
        Self::new(mdp)
    }
}
