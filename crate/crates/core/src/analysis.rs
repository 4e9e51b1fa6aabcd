//! Exact dynamic-programming evaluation of values, visitation
//! probabilities, their θ-gradients, the objective and the two policy
//! gradient directions.
//!
//! Conventions used throughout:
//!
//! * `V_γ(s)` is the expected discounted return of a `T`-step episode started
//!   in `s`, obtained by `T` sweeps of `v ← r_π + γ P_π v` from zero. Under
//!   guaranteed absorption this is the fixed point at every reachable state,
//!   including at `γ = 1`.
//! * `Q_γ(s, a)` is one backup of the `T - 1` sweep values, so that
//!   `V_γ(s) = Σ_a π(a|s) Q_γ(s, a)` holds exactly at every state.
//! * `Pr(S_t = s)` is tabulated for `t = 0..T-1`.
//! * Gradients are [`ParamTable`]s with the shape of θ; norms are Euclidean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::AbsorbingMdp;
use crate::policy::{policy_matrix, score_into, ParamTable, PolicyParams};

/// Tolerance for vector identities between gradient routes.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Tolerance for scalar identities.
pub const SCALAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub gamma: f64,
    pub v: Vec<f64>,
    /// Row-major `[s][a]`.
    pub q: Vec<f64>,
    num_actions: usize,
}

impl ValueTables {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }
}

/// `p[t][s] = Pr(S_t = s)` for `t = 0..T-1`, optionally with
/// `grad[t][s] = ∂Pr(S_t = s)/∂θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationTable {
    pub p: Vec<Vec<f64>>,
    pub grad: Option<Vec<Vec<ParamTable>>>,
}

/// The weighting `d_γ(s) = d0(s) + (1-γ) Σ_{t=1}^{T-1} Pr(S_t = s)` and its
/// θ-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighting {
    pub gamma: f64,
    pub d: Vec<f64>,
    pub d_grad: Vec<ParamTable>,
}

/// `approx = grad_j - error_vec`, with the residuals of both identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub gamma: f64,
    pub grad_j: ParamTable,
    pub approx: ParamTable,
    pub error_vec: ParamTable,
    pub residual_bias_identity: f64,
    pub residual_forms: f64,
}

impl GradientReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_policy(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<()> {
    if theta.num_states() != mdp.num_states() || theta.num_actions() != mdp.num_actions() {
        return Err(Error::Shape(format!(
            "policy is {}x{} but the MDP has {} states and {} actions",
            theta.num_states(),
            theta.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Gamma(gamma))
    }
}

/// Adds `k · Σ_a π(a|s) w(a) ∂ln π(a|s)/∂θ` into row `s` of `out`, where
/// `w` is a per-action weight row.
fn add_weighted_score(probs: &[f64], weights: &[f64], k: f64, s: usize, out: &mut ParamTable) {
    let na = probs.len();
    let mut sc = vec![0.0; na];
    let row = out.row_mut(s);
    for a in 0..na {
        let coef = k * probs[a] * weights[a];
        if coef == 0.0 {
            continue;
        }
        score_into(probs, a, &mut sc);
        for (o, x) in row.iter_mut().zip(sc.iter()) {
            *o += coef * x;
        }
    }
}

fn backward(mdp: &AbsorbingMdp, pi: &[f64], gamma: f64) -> ValueTables {
    let (n, na) = (mdp.num_states(), mdp.num_actions());
    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * na];
    for _ in 0..mdp.horizon() {
        let prev = v.clone();
        for s in 0..n {
            let mut vs = 0.0;
            for a in 0..na {
                let qa: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(mdp.reward_row(s, a))
                    .zip(&prev)
                    .map(|((p, r), vn)| p * (r + gamma * vn))
                    .sum();
                q[s * na + a] = qa;
                vs += pi[s * na + a] * qa;
            }
            v[s] = vs;
        }
    }
    ValueTables {
        gamma,
        v,
        q,
        num_actions: na,
    }
}

/// Backward induction carrying `∂V/∂θ` alongside `V`.
fn backward_with_grad(mdp: &AbsorbingMdp, pi: &[f64], gamma: f64) -> (ValueTables, Vec<ParamTable>) {
    let (n, na) = (mdp.num_states(), mdp.num_actions());
    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * na];
    let mut dv = vec![ParamTable::zeros(n, na); n];
    for _ in 0..mdp.horizon() {
        let prev = v.clone();
        let dprev = dv.clone();
        for s in 0..n {
            let mut vs = 0.0;
            let mut grad = ParamTable::zeros(n, na);
            for a in 0..na {
                let pa = pi[s * na + a];
                let mut qa = 0.0;
                for (next, (&p, &r)) in mdp.transition_row(s, a).iter().zip(mdp.reward_row(s, a)).enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    qa += p * (r + gamma * prev[next]);
                    // ∂Q(s,a) = γ Σ_{s'} P ∂V(s'), weighted by π(a|s).
                    grad.add_scaled(pa * gamma * p, &dprev[next]);
                }
                q[s * na + a] = qa;
                vs += pa * qa;
            }
            // Σ_a ∂π(a|s) Q(s,a) with ∂π = π ∂ln π.
            add_weighted_score(&pi[s * na..(s + 1) * na], &q[s * na..(s + 1) * na], 1.0, s, &mut grad);
            v[s] = vs;
            dv[s] = grad;
        }
    }
    (
        ValueTables {
            gamma,
            v,
            q,
            num_actions: na,
        },
        dv,
    )
}

fn forward(mdp: &AbsorbingMdp, pi: &[f64]) -> Vec<Vec<f64>> {
    let (n, na) = (mdp.num_states(), mdp.num_actions());
    let mut p = Vec::with_capacity(mdp.horizon());
    p.push(mdp.initial_dist().to_vec());
    for t in 1..mdp.horizon() {
        let prev: &Vec<f64> = &p[t - 1];
        let mut next = vec![0.0; n];
        for s in 0..n {
            if prev[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let w = prev[s] * pi[s * na + a];
                for (x, &pt) in next.iter_mut().zip(mdp.transition_row(s, a)) {
                    *x += w * pt;
                }
            }
        }
        p.push(next);
    }
    p
}

/// Forward product-rule recursion for `∂Pr(S_t = s)/∂θ`:
/// `∂p_{t+1}(s') = Σ_{s,a} P(s'|s,a) [π(a|s) ∂p_t(s) + p_t(s) ∂π(a|s)]`.
fn forward_grad(mdp: &AbsorbingMdp, pi: &[f64], p: &[Vec<f64>]) -> Vec<Vec<ParamTable>> {
    let (n, na) = (mdp.num_states(), mdp.num_actions());
    let mut grad: Vec<Vec<ParamTable>> = Vec::with_capacity(p.len());
    grad.push(vec![ParamTable::zeros(n, na); n]);
    let mut dpi = ParamTable::zeros(n, na);
    let mut unit = vec![0.0; na];
    for t in 1..p.len() {
        let prev = &grad[t - 1];
        let mut next = vec![ParamTable::zeros(n, na); n];
        for s in 0..n {
            let probs = &pi[s * na..(s + 1) * na];
            for a in 0..na {
                let pa = probs[a];
                // ∂π(a|s) = π(a|s) ∂ln π(a|s), living in row s only.
                dpi.row_mut(s).fill(0.0);
                unit.fill(0.0);
                unit[a] = 1.0;
                add_weighted_score(probs, &unit, 1.0, s, &mut dpi);
                for (sp, &pt) in mdp.transition_row(s, a).iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    next[sp].add_scaled(pt * pa, &prev[s]);
                    if p[t - 1][s] != 0.0 {
                        let k = pt * p[t - 1][s];
                        for (o, d) in next[sp].row_mut(s).iter_mut().zip(dpi.row(s)) {
                            *o += k * d;
                        }
                    }
                }
            }
            dpi.row_mut(s).fill(0.0);
        }
        grad.push(next);
    }
    grad
}

fn weighting_from(d0: &[f64], vis: &VisitationTable, gamma: f64) -> Weighting {
    let n = d0.len();
    let mut d = d0.to_vec();
    for pt in vis.p.iter().skip(1) {
        for (x, y) in d.iter_mut().zip(pt) {
            *x += (1.0 - gamma) * y;
        }
    }
    let d_grad = match &vis.grad {
        Some(grad) => (0..n)
            .map(|s| {
                let mut total = grad[0][s].clone();
                total.scale(0.0);
                for gt in grad.iter().skip(1) {
                    total.add_scaled(1.0, &gt[s]);
                }
                total.scale(1.0 - gamma);
                total
            })
            .collect(),
        None => Vec::new(),
    };
    Weighting { gamma, d, d_grad }
}

/// `Σ_t Σ_s p_t(s) Σ_a π(a|s) Q(s,a) ∂ln π(a|s)/∂θ`.
fn score_form(mdp: &AbsorbingMdp, pi: &[f64], p: &[Vec<f64>], values: &ValueTables) -> ParamTable {
    let (n, na) = (mdp.num_states(), mdp.num_actions());
    let mut out = ParamTable::zeros(n, na);
    for s in 0..n {
        let occupancy: f64 = p.iter().map(|pt| pt[s]).sum();
        if occupancy == 0.0 {
            continue;
        }
        add_weighted_score(&pi[s * na..(s + 1) * na], values.q_row(s), occupancy, s, &mut out);
    }
    out
}

fn objective_from(mdp: &AbsorbingMdp, pi: &[f64], p: &[Vec<f64>]) -> f64 {
    let na = mdp.num_actions();
    p.iter()
        .map(|pt| {
            pt.iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(s, &w)| {
                    w * (0..na)
                        .map(|a| pi[s * na + a] * mdp.expected_reward(s, a))
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}

pub fn value_functions(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma: f64) -> Result<ValueTables> {
    check_policy(mdp, theta)?;
    check_gamma(gamma)?;
    Ok(backward(mdp, &policy_matrix(theta), gamma))
}

/// Values together with `∂V_γ(s)/∂θ` for every state.
pub fn value_gradients(
    mdp: &AbsorbingMdp,
    theta: &PolicyParams,
    gamma: f64,
) -> Result<(ValueTables, Vec<ParamTable>)> {
    check_policy(mdp, theta)?;
    check_gamma(gamma)?;
    Ok(backward_with_grad(mdp, &policy_matrix(theta), gamma))
}

pub fn visitation(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<VisitationTable> {
    check_policy(mdp, theta)?;
    Ok(VisitationTable {
        p: forward(mdp, &policy_matrix(theta)),
        grad: None,
    })
}

pub fn visitation_grad(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<VisitationTable> {
    check_policy(mdp, theta)?;
    let pi = policy_matrix(theta);
    let p = forward(mdp, &pi);
    let grad = forward_grad(mdp, &pi, &p);
    Ok(VisitationTable { p, grad: Some(grad) })
}

pub fn weighting_d_gamma(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma: f64) -> Result<Weighting> {
    check_gamma(gamma)?;
    let vis = visitation_grad(mdp, theta)?;
    Ok(weighting_from(mdp.initial_dist(), &vis, gamma))
}

/// Expected undiscounted episode return J(θ).
pub fn objective(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<f64> {
    check_policy(mdp, theta)?;
    let pi = policy_matrix(theta);
    Ok(objective_from(mdp, &pi, &forward(mdp, &pi)))
}

/// The discounted approximation through its score-function form only.
/// This is the direction the optimizer follows; at `γ = 1` it is ∇J.
pub fn discounted_direction(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma: f64) -> Result<ParamTable> {
    check_policy(mdp, theta)?;
    check_gamma(gamma)?;
    let pi = policy_matrix(theta);
    let p = forward(mdp, &pi);
    let values = backward(mdp, &pi, gamma);
    Ok(score_form(mdp, &pi, &p, &values))
}

/// ∇J(θ).
pub fn true_gradient(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<ParamTable> {
    discounted_direction(mdp, theta, 1.0)
}

/// Every exact quantity at one `(θ, γ)`.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub gamma: f64,
    pub objective: f64,
    pub values: ValueTables,
    pub value_grad: Vec<ParamTable>,
    pub visitation: VisitationTable,
    pub weighting: Weighting,
    pub grad_j: ParamTable,
    /// Score-function form of the discounted approximation.
    pub approx: ParamTable,
    /// `Σ_s d_γ(s) ∂V_γ(s)/∂θ`.
    pub approx_weighted: ParamTable,
    /// `Σ_s V_γ(s) ∂d_γ(s)/∂θ`.
    pub error_vec: ParamTable,
}

pub fn analyze(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma: f64) -> Result<Analysis> {
    check_policy(mdp, theta)?;
    check_gamma(gamma)?;
    let pi = policy_matrix(theta);
    let p = forward(mdp, &pi);
    let grad = forward_grad(mdp, &pi, &p);
    let visitation = VisitationTable { p, grad: Some(grad) };
    let weighting = weighting_from(mdp.initial_dist(), &visitation, gamma);
    let (values, value_grad) = backward_with_grad(mdp, &pi, gamma);
    let undiscounted = backward(mdp, &pi, 1.0);

    let (n, na) = (mdp.num_states(), mdp.num_actions());
    let approx = score_form(mdp, &pi, &visitation.p, &values);
    let grad_j = score_form(mdp, &pi, &visitation.p, &undiscounted);
    let mut approx_weighted = ParamTable::zeros(n, na);
    let mut error_vec = ParamTable::zeros(n, na);
    #[allow(clippy::needless_range_loop)]
    for s in 0..n {
        approx_weighted.add_scaled(weighting.d[s], &value_grad[s]);
        error_vec.add_scaled(values.v[s], &weighting.d_grad[s]);
    }
    Ok(Analysis {
        gamma,
        objective: objective_from(mdp, &pi, &visitation.p),
        values,
        value_grad,
        visitation,
        weighting,
        grad_j,
        approx,
        approx_weighted,
        error_vec,
    })
}

impl Analysis {
    /// `|J - Σ_s d_γ(s) V_γ(s)|`.
    pub fn decomposition_residual(&self) -> f64 {
        let weighted: f64 = self.weighting.d.iter().zip(&self.values.v).map(|(d, v)| d * v).sum();
        (self.objective - weighted).abs()
    }

    /// `‖∇J - (Σ d ∂V + Σ V ∂d)‖`.
    pub fn product_rule_residual(&self) -> f64 {
        let mut rhs = self.approx_weighted.clone();
        rhs.add_scaled(1.0, &self.error_vec);
        self.grad_j.distance(&rhs)
    }

    /// `‖approx - (∇J - e)‖`.
    pub fn bias_identity_residual(&self) -> f64 {
        self.approx.distance(&self.grad_j.sub(&self.error_vec))
    }

    pub fn forms_residual(&self) -> f64 {
        self.approx.distance(&self.approx_weighted)
    }

    /// Largest `‖Σ_{t=1}^{T-1} ∂Pr(S_t = s)/∂θ‖` over states.
    pub fn visit_sum_grad_max(&self) -> f64 {
        let grad = self.visitation.grad.as_ref().expect("analysis always fills gradients");
        let n = self.values.v.len();
        (0..n)
            .map(|s| {
                let mut total = grad[0][s].clone();
                total.scale(0.0);
                for gt in grad.iter().skip(1) {
                    total.add_scaled(1.0, &gt[s]);
                }
                total.norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn report(&self) -> GradientReport {
        GradientReport {
            gamma: self.gamma,
            grad_j: self.grad_j.clone(),
            approx: self.approx.clone(),
            error_vec: self.error_vec.clone(),
            residual_bias_identity: self.bias_identity_residual(),
            residual_forms: self.forms_residual(),
        }
    }
}

fn ensure(what: &'static str, residual: f64, tolerance: f64) -> Result<()> {
    if residual <= tolerance {
        Ok(())
    } else {
        Err(Error::Consistency {
            what,
            residual,
            tolerance,
        })
    }
}

/// The discounted approximation computed through both of its forms; fails if
/// they disagree beyond [`IDENTITY_TOL`].
pub fn discounted_approximation(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma: f64) -> Result<ParamTable> {
    check_policy(mdp, theta)?;
    check_gamma(gamma)?;
    let pi = policy_matrix(theta);
    let p = forward(mdp, &pi);
    let vis = VisitationTable { p, grad: None };
    let weighting = weighting_from(mdp.initial_dist(), &vis, gamma);
    let (values, dv) = backward_with_grad(mdp, &pi, gamma);
    let by_score = score_form(mdp, &pi, &vis.p, &values);
    let mut by_weighting = ParamTable::zeros(mdp.num_states(), mdp.num_actions());
    for (d, g) in weighting.d.iter().zip(&dv) {
        by_weighting.add_scaled(*d, g);
    }
    ensure("discounted approximation forms", by_score.distance(&by_weighting), IDENTITY_TOL)?;
    Ok(by_score)
}

/// Full [`GradientReport`]; fails if either identity residual exceeds
/// [`IDENTITY_TOL`].
pub fn error_vector(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma: f64) -> Result<GradientReport> {
    let report = analyze(mdp, theta, gamma)?.report();
    ensure("bias identity", report.residual_bias_identity, IDENTITY_TOL)?;
    ensure("discounted approximation forms", report.residual_forms, IDENTITY_TOL)?;
    Ok(report)
}
