//! Tabular softmax policies and their score function.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real table with one entry per `(state, action)`: the shape of θ and of
/// every gradient with respect to θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ParamTable {
    num_states: usize,
    num_actions: usize,
    data: Vec<f64>,
}

impl ParamTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            data: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Shape("parameter table needs at least one row and column".into()));
        }
        if let Some((s, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != num_actions) {
            return Err(Error::Shape(format!(
                "row {s} has {} entries, expected {num_actions}",
                r.len()
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of entries, `|S| * |A|`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.data[s * self.num_actions + a] = value;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, k: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += k * y;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(x, y)| x * y).sum()
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.num_actions).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for ParamTable {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<ParamTable> for Vec<Vec<f64>> {
    fn from(table: ParamTable) -> Self {
        table.to_rows()
    }
}

/// Softmax parameters θ, one logit per `(state, action)`. Always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamTable", into = "ParamTable")]
pub struct PolicyParams(ParamTable);

impl PolicyParams {
    /// All-zero logits: the uniform policy.
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self(ParamTable::zeros(num_states, num_actions))
    }

    pub fn from_table(table: ParamTable) -> Result<Self> {
        if let Some(i) = table.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteParams {
                state: i / table.num_actions,
                action: i % table.num_actions,
            });
        }
        Ok(Self(table))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_table(ParamTable::from_rows(rows)?)
    }

    /// Entries i.i.d. uniform on `[-scale, scale]`.
    pub fn random_uniform<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut table = ParamTable::zeros(num_states, num_actions);
        for x in table.as_mut_slice() {
            *x = rng.random_range(-scale..=scale);
        }
        Self(table)
    }

    pub fn table(&self) -> &ParamTable {
        &self.0
    }

    pub fn into_table(self) -> ParamTable {
        self.0
    }

    pub fn num_states(&self) -> usize {
        self.0.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.0.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    /// `θ + k·direction`, rejected if any entry becomes non-finite.
    pub fn stepped(&self, k: f64, direction: &ParamTable) -> Result<Self> {
        let mut next = self.0.clone();
        next.add_scaled(k, direction);
        Self::from_table(next)
    }
}

impl TryFrom<ParamTable> for PolicyParams {
    type Error = Error;

    fn try_from(table: ParamTable) -> Result<Self> {
        Self::from_table(table)
    }
}

impl From<PolicyParams> for ParamTable {
    fn from(theta: PolicyParams) -> Self {
        theta.0
    }
}

/// Softmax of one logit row into `out`, with max subtraction.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// π_θ(·|s). Panics if `s` is out of range.
pub fn action_probs(theta: &PolicyParams, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; theta.num_actions()];
    softmax_into(theta.row(s), &mut out);
    out
}

/// Row-major `[s][a]` table of π_θ(a|s) for every state.
pub fn policy_matrix(theta: &PolicyParams) -> Vec<f64> {
    let na = theta.num_actions();
    let mut out = vec![0.0; theta.num_states() * na];
    for (s, chunk) in out.chunks_mut(na).enumerate() {
        softmax_into(theta.row(s), chunk);
    }
    out
}

/// One score-table entry, ∂ ln π_θ(a|s)/∂θ. Nonzero only in row `state`,
/// so only that row is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub state: usize,
    pub action: usize,
    pub values: Vec<f64>,
}

impl ScoreRow {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_table(&self, num_states: usize) -> ParamTable {
        let mut table = ParamTable::zeros(num_states, self.values.len());
        table.row_mut(self.state).copy_from_slice(&self.values);
        table
    }
}

/// Writes `1[a = a'] - π(a'|s)` into `out`.
#[inline]
pub fn score_into(probs: &[f64], a: usize, out: &mut [f64]) {
    for (k, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
        *o = if k == a { 1.0 - p } else { -p };
    }
}

pub fn score(theta: &PolicyParams, s: usize, a: usize) -> ScoreRow {
    let probs = action_probs(theta, s);
    let mut values = vec![0.0; probs.len()];
    score_into(&probs, a, &mut values);
    ScoreRow {
        state: s,
        action: a,
        values,
    }
}

/// Euclidean bound on every softmax score, √2: the score is `e_a - π` with
/// `‖e_a - π‖² = (1 - π_a)² + Σ_{a'≠a} π_{a'}² ≤ 2(1 - π_a)²`.
pub fn score_bound() -> f64 {
    std::f64::consts::SQRT_2
}
