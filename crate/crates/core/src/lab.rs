//! Falsifiable numerical checks of the decomposition, bias and error-bound
//! identities, plus empirical Lipschitz constants.
//!
//! Empirical constants are maxima over a declared probe set. They are lower
//! bounds on the true suprema and are reported next to the (loose) analytic
//! recursion bound, never in place of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, objective, true_gradient, value_gradients, visitation, visitation_grad};
use crate::analysis::{IDENTITY_TOL, SCALAR_TOL};
use crate::envs::make_random;
use crate::error::Result;
use crate::mdp::{AbsorbingMdp, Mdp};
use crate::policy::{score_bound, ParamTable, PolicyParams};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance for finite-difference agreement.
pub const FD_TOL: f64 = 1e-6;
/// Allowed relative drift of `‖e‖/(1-γ)` for `γ ≥ 0.999`.
pub const RATIO_DRIFT_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub instance: String,
    pub worst_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// MDP and θ as JSON, filled in only for failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproduction: Option<String>,
}

impl CheckReport {
    fn new(check: &str, mdp: &Mdp, worst_residual: f64, tolerance: f64) -> Self {
        Self {
            check: check.to_string(),
            instance: describe(mdp),
            worst_residual,
            tolerance,
            pass: worst_residual <= tolerance,
            seed: None,
            reproduction: None,
        }
    }

    pub fn with_instance(mut self, instance: impl Into<String>) -> Self {
        self.instance = instance.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn attach_reproduction(&mut self, mdp: &Mdp, theta: &PolicyParams) {
        if !self.pass && self.reproduction.is_none() {
            let payload = serde_json::json!({ "mdp": mdp, "theta": theta });
            self.reproduction = Some(payload.to_string());
        }
    }

    /// Keeps whichever of the two has the larger residual.
    fn worse(self, other: Self) -> Self {
        if other.worst_residual > self.worst_residual || other.worst_residual.is_nan() {
            other
        } else {
            self
        }
    }
}

pub fn describe(mdp: &Mdp) -> String {
    format!(
        "|S|={} |A|={} T={}",
        mdp.num_states(),
        mdp.num_actions(),
        mdp.horizon()
    )
}

/// `{0, 0.1, …, 1}`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// `|J - Σ_s d_γ(s) V_γ(s)|`, worst over the grid.
pub fn check_decomposition(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma_grid: &[f64]) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for &g in gamma_grid {
        worst = worst.max(analyze(mdp, theta, g)?.decomposition_residual());
    }
    Ok(CheckReport::new("decomposition", mdp, worst, SCALAR_TOL))
}

/// `‖∇̂ - (∇J - e)‖`, worst over the grid.
pub fn check_bias_identity(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma_grid: &[f64]) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for &g in gamma_grid {
        worst = worst.max(analyze(mdp, theta, g)?.bias_identity_residual());
    }
    Ok(CheckReport::new("bias_identity", mdp, worst, IDENTITY_TOL))
}

/// `‖∇J - (Σ d ∂V + Σ V ∂d)‖`, worst over the grid.
pub fn check_product_rule(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma_grid: &[f64]) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for &g in gamma_grid {
        worst = worst.max(analyze(mdp, theta, g)?.product_rule_residual());
    }
    Ok(CheckReport::new("product_rule", mdp, worst, IDENTITY_TOL))
}

/// Score-function form vs weighting form of the approximation.
pub fn check_forms(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma_grid: &[f64]) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for &g in gamma_grid {
        worst = worst.max(analyze(mdp, theta, g)?.forms_residual());
    }
    Ok(CheckReport::new("approximation_forms", mdp, worst, IDENTITY_TOL))
}

/// One point of the error-vector sweep toward `γ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRatio {
    pub k: u32,
    pub gamma: f64,
    pub error_norm: f64,
    /// `‖e‖ / (1 - γ)`.
    pub ratio: f64,
}

/// `‖e‖` and `‖e‖/(1-γ)` at `γ = 1 - 10^{-k}` for `k` in `ks`.
pub fn error_ratios(mdp: &AbsorbingMdp, theta: &PolicyParams, ks: std::ops::RangeInclusive<u32>) -> Result<Vec<ErrorRatio>> {
    ks.map(|k| {
        let gamma = 1.0 - 10f64.powi(-(k as i32));
        let error_norm = analyze(mdp, theta, gamma)?.error_vec.norm();
        Ok(ErrorRatio {
            k,
            gamma,
            error_norm,
            ratio: error_norm / (1.0 - gamma),
        })
    })
    .collect()
}

/// Largest relative drift of the ratio from its `k = 3` value over `k ≥ 3`.
/// Zero when the ratio vanishes identically; infinite when it vanishes only
/// at `k = 3`.
pub fn ratio_drift(ratios: &[ErrorRatio]) -> f64 {
    let Some(anchor) = ratios.iter().find(|r| r.k == 3).map(|r| r.ratio) else {
        return f64::INFINITY;
    };
    let spread = ratios
        .iter()
        .filter(|r| r.k >= 3)
        .map(|r| (r.ratio - anchor).abs())
        .fold(0.0, f64::max);
    if spread == 0.0 {
        0.0
    } else if anchor == 0.0 {
        f64::INFINITY
    } else {
        spread / anchor
    }
}

/// Boundedness of `‖e‖/(1-γ)` as `γ → 1` and decay of `‖e‖`.
pub fn check_error_bound(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<CheckReport> {
    let ratios = error_ratios(mdp, theta, 0..=8)?;
    let running_max = ratios.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let bounded = ratios
        .iter()
        .all(|r| r.ratio.is_finite() && r.ratio <= running_max * (1.0 + 1e-6));
    let tail = &ratios[3..];
    let decays = tail.windows(2).all(|w| w[1].error_norm <= w[0].error_norm)
        && ratios[8].error_norm <= ratios[1].error_norm;
    let residual = if bounded && decays { ratio_drift(&ratios) } else { f64::INFINITY };
    Ok(CheckReport::new("error_bound", mdp, residual, RATIO_DRIFT_TOL))
}

/// `‖a - b‖ / max(‖b‖, 1)`.
pub fn relative_error(approx: &ParamTable, exact: &ParamTable) -> f64 {
    approx.distance(exact) / exact.norm().max(1.0)
}

fn perturbed(theta: &PolicyParams, index: usize, delta: f64) -> PolicyParams {
    let mut table = theta.table().clone();
    table.as_mut_slice()[index] += delta;
    PolicyParams::from_table(table).expect("small perturbation stays finite")
}

/// Central differences of J, coordinate by coordinate.
pub fn fd_objective_gradient(mdp: &AbsorbingMdp, theta: &PolicyParams, h: f64) -> Result<ParamTable> {
    let mut out = ParamTable::zeros(theta.num_states(), theta.num_actions());
    for i in 0..out.len() {
        let plus = objective(mdp, &perturbed(theta, i, h))?;
        let minus = objective(mdp, &perturbed(theta, i, -h))?;
        out.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

pub fn check_gradient_fd(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<CheckReport> {
    let fd = fd_objective_gradient(mdp, theta, FD_STEP)?;
    let exact = true_gradient(mdp, theta)?;
    Ok(CheckReport::new("gradient_fd", mdp, relative_error(&fd, &exact), FD_TOL))
}

/// Worst relative error of `∂Pr(S_t = s)/∂θ` against central differences.
pub fn check_visitation_fd(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<CheckReport> {
    let exact = visitation_grad(mdp, theta)?.grad.expect("requested gradients");
    let (n, na) = (theta.num_states(), theta.num_actions());
    let horizon = exact.len();
    let mut fd = vec![vec![ParamTable::zeros(n, na); n]; horizon];
    for i in 0..n * na {
        let plus = visitation(mdp, &perturbed(theta, i, FD_STEP))?.p;
        let minus = visitation(mdp, &perturbed(theta, i, -FD_STEP))?.p;
        for t in 0..horizon {
            for s in 0..n {
                fd[t][s].as_mut_slice()[i] = (plus[t][s] - minus[t][s]) / (2.0 * FD_STEP);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for t in 0..horizon {
        for s in 0..n {
            worst = worst.max(relative_error(&fd[t][s], &exact[t][s]));
        }
    }
    Ok(CheckReport::new("visitation_fd", mdp, worst, FD_TOL))
}

/// Worst relative error of `∂V_γ(s)/∂θ` against central differences.
pub fn check_value_grad_fd(mdp: &AbsorbingMdp, theta: &PolicyParams, gamma: f64) -> Result<CheckReport> {
    let (_, exact) = value_gradients(mdp, theta, gamma)?;
    let (n, na) = (theta.num_states(), theta.num_actions());
    let mut fd = vec![ParamTable::zeros(n, na); n];
    for i in 0..n * na {
        let plus = crate::analysis::value_functions(mdp, &perturbed(theta, i, FD_STEP), gamma)?.v;
        let minus = crate::analysis::value_functions(mdp, &perturbed(theta, i, -FD_STEP), gamma)?.v;
        for s in 0..n {
            fd[s].as_mut_slice()[i] = (plus[s] - minus[s]) / (2.0 * FD_STEP);
        }
    }
    let worst = (0..n).map(|s| relative_error(&fd[s], &exact[s])).fold(0.0, f64::max);
    Ok(CheckReport::new("value_gradient_fd", mdp, worst, FD_TOL))
}

/// The exact direction `s_i = ∇J` satisfies the ascent-direction conditions
/// with `c1 = c2 = 1`: residual `max(|∇J·s - ‖∇J‖²|, ‖s‖ - ‖∇J‖)`.
pub fn check_ascent_direction(mdp: &AbsorbingMdp, theta: &PolicyParams) -> Result<CheckReport> {
    let g = true_gradient(mdp, theta)?;
    let dir = analyze(mdp, theta, 1.0)?.approx;
    let norm_sq = g.norm().powi(2);
    let residual = (g.dot(&dir) - norm_sq).abs().max(dir.norm() - g.norm());
    Ok(CheckReport::new("ascent_direction", mdp, residual, 1e-12 * norm_sq.max(1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Random θ draws, entries i.i.d. uniform on `[-scale, scale]`.
    pub draws: usize,
    pub scale: f64,
    pub seed: u64,
    /// Discount factors used for `l_e`; `γ = 1` entries are skipped.
    pub gamma_grid: Vec<f64>,
    /// Additional θ included verbatim.
    #[serde(default)]
    pub extra: Vec<PolicyParams>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            draws: 20,
            scale: 3.0,
            seed: 0,
            gamma_grid: default_gamma_grid(),
            extra: Vec::new(),
        }
    }
}

impl ProbeConfig {
    pub fn thetas(&self, num_states: usize, num_actions: usize) -> Vec<PolicyParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = self.extra.clone();
        out.extend((0..self.draws).map(|_| PolicyParams::random_uniform(num_states, num_actions, self.scale, &mut rng)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    /// Analytic score bound, √2.
    pub l_pi: f64,
    /// Empirical `max ‖∂Pr(S_t = s)/∂θ‖` for `t = 0..T-1`.
    pub l_t: Vec<f64>,
    /// Empirical `max_s ‖∂/∂θ Σ_{t=1}^{T-1} Pr(S_t = s)‖`.
    pub l_d: f64,
    /// Empirical `max ‖e‖/(1-γ)` over the probe set and `γ < 1`.
    pub l_e: f64,
    /// `L_t = |S||A|(L_{t-1} + L_π)`, `L_0 = 0`.
    pub analytic_l_t: Vec<f64>,
    pub analytic_l_d: f64,
    /// Implied error-bound constant `p = |S|·V_max·l_d` (with `q = 0`).
    pub error_bound_p: f64,
    /// Empirical `max ‖∇J(θ) - ∇J(θ')‖/‖θ - θ'‖` over nearby probe pairs.
    pub l_grad_j: f64,
    pub probe: String,
}

pub fn estimate_lipschitz(mdp: &AbsorbingMdp, probe: &ProbeConfig) -> Result<LipschitzEstimates> {
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let thetas = probe.thetas(n, na);
    let mut l_t = vec![0.0f64; horizon];
    let mut l_d: f64 = 0.0;
    let mut l_e: f64 = 0.0;
    let mut l_grad_j: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed ^ 0x5eed);
    for theta in &thetas {
        let grad = visitation_grad(mdp, theta)?.grad.expect("requested gradients");
        for (t, gt) in grad.iter().enumerate() {
            l_t[t] = gt.iter().map(ParamTable::norm).fold(l_t[t], f64::max);
        }
        for s in 0..n {
            let mut total = ParamTable::zeros(n, na);
            for gt in grad.iter().skip(1) {
                total.add_scaled(1.0, &gt[s]);
            }
            l_d = l_d.max(total.norm());
        }
        for &g in probe.gamma_grid.iter().filter(|&&g| g < 1.0) {
            let e = analyze(mdp, theta, g)?.error_vec.norm();
            l_e = l_e.max(e / (1.0 - g));
        }
        let mut dir = ParamTable::zeros(n, na);
        for x in dir.as_mut_slice() {
            *x = rng.random_range(-1.0..=1.0);
        }
        let norm = dir.norm();
        if norm > 0.0 {
            dir.scale(1e-3 / norm);
            let near = theta.stepped(1.0, &dir)?;
            let diff = true_gradient(mdp, &near)?.distance(&true_gradient(mdp, theta)?);
            l_grad_j = l_grad_j.max(diff / 1e-3);
        }
    }

    let l_pi = score_bound();
    let width = (n * na) as f64;
    let mut analytic_l_t = vec![0.0; horizon];
    for t in 1..horizon {
        analytic_l_t[t] = width * (analytic_l_t[t - 1] + l_pi);
    }
    let analytic_l_d = analytic_l_t.iter().skip(1).sum();
    Ok(LipschitzEstimates {
        l_pi,
        l_t,
        l_d,
        l_e,
        analytic_l_t,
        analytic_l_d,
        error_bound_p: n as f64 * mdp.v_max() * l_d,
        l_grad_j,
        probe: format!(
            "{} random θ ~ U[-{}, {}] (seed {}) + {} fixed, γ grid {:?}",
            probe.draws,
            probe.scale,
            probe.scale,
            probe.seed,
            probe.extra.len(),
            probe.gamma_grid
        ),
    })
}

impl LipschitzEstimates {
    /// Largest violation of the required orderings: `l_d ≤ Σ_t l_t`,
    /// `l_e ≤ |S|·V_max·l_d` and `l_t ≤ analytic L_t`. Non-positive when all hold.
    pub fn ordering_violation(&self, num_states: usize, v_max: f64) -> f64 {
        let sum_t: f64 = self.l_t.iter().skip(1).sum();
        let mut worst = self.l_d - sum_t;
        worst = worst.max(self.l_e - num_states as f64 * v_max * self.l_d);
        for (e, a) in self.l_t.iter().zip(&self.analytic_l_t) {
            worst = worst.max(e - a);
        }
        worst
    }
}

/// `‖e(θ,γ)‖ - (1-γ)|S|V_max L̂_d`, worst over thetas and grid.
pub fn check_error_constant(
    mdp: &AbsorbingMdp,
    thetas: &[PolicyParams],
    gamma_grid: &[f64],
    l_d: f64,
) -> Result<CheckReport> {
    let scale = mdp.num_states() as f64 * mdp.v_max() * l_d;
    let mut worst = f64::NEG_INFINITY;
    for theta in thetas {
        for &g in gamma_grid {
            let e = analyze(mdp, theta, g)?.error_vec.norm();
            worst = worst.max(e - (1.0 - g) * scale);
        }
    }
    Ok(CheckReport::new("error_bound_constant", mdp, worst.max(0.0), 1e-12))
}

/// All per-θ checks on one instance, reduced to the worst report per check.
pub fn verify_instance(
    name: &str,
    mdp: &AbsorbingMdp,
    thetas: &[PolicyParams],
    gamma_grid: &[f64],
    seed: u64,
) -> Result<Vec<CheckReport>> {
    let mut merged: Vec<CheckReport> = Vec::new();
    for theta in thetas {
        let mut reports = vec![
            check_decomposition(mdp, theta, gamma_grid)?,
            check_bias_identity(mdp, theta, gamma_grid)?,
            check_product_rule(mdp, theta, gamma_grid)?,
            check_forms(mdp, theta, gamma_grid)?,
            check_error_bound(mdp, theta)?,
            check_gradient_fd(mdp, theta)?,
            check_visitation_fd(mdp, theta)?,
            check_value_grad_fd(mdp, theta, 0.5)?,
            check_ascent_direction(mdp, theta)?,
        ];
        for r in &mut reports {
            r.attach_reproduction(mdp, theta);
        }
        if merged.is_empty() {
            merged = reports;
        } else {
            merged = merged.into_iter().zip(reports).map(|(a, b)| a.worse(b)).collect();
        }
    }

    let probe = ProbeConfig {
        draws: 0,
        seed,
        gamma_grid: gamma_grid.to_vec(),
        extra: thetas.to_vec(),
        ..ProbeConfig::default()
    };
    let est = estimate_lipschitz(mdp, &probe)?;
    let ordering = est.ordering_violation(mdp.num_states(), mdp.v_max());
    merged.push(CheckReport::new("lipschitz_ordering", mdp, ordering.max(0.0), 1e-12));
    merged.push(check_error_constant(mdp, thetas, gamma_grid, est.l_d)?);

    Ok(merged
        .into_iter()
        .map(|r| r.with_instance(format!("{name} ({})", describe(mdp))).with_seed(seed))
        .collect())
}

/// Size-randomized layered instance used by the verification sweeps:
/// `|S| ∈ 2..=8`, `|A| ∈ 1..=3`, `T ∈ 1..=6`.
pub fn random_suite_instance(seed: u64) -> Result<AbsorbingMdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let n = rng.random_range(2..=8);
    let na = rng.random_range(1..=3);
    let horizon = rng.random_range(1..=6);
    AbsorbingMdp::new(make_random(n, na, horizon, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub random_instances: usize,
    pub thetas_per_instance: usize,
    pub theta_scale: f64,
    pub gamma_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            random_instances: 100,
            thetas_per_instance: 5,
            theta_scale: 3.0,
            gamma_grid: default_gamma_grid(),
            seed: 0,
        }
    }
}

/// Runs [`verify_instance`] over the named instances plus
/// `random_instances` seeded random ones, in parallel.
pub fn run_suite(named: &[(String, AbsorbingMdp)], cfg: &SuiteConfig) -> Result<Vec<CheckReport>> {
    let mut jobs: Vec<(String, AbsorbingMdp, u64)> = named
        .iter()
        .enumerate()
        .map(|(k, (name, mdp))| (name.clone(), mdp.clone(), cfg.seed.wrapping_add(k as u64)))
        .collect();
    for k in 0..cfg.random_instances as u64 {
        let seed = cfg.seed.wrapping_add(1_000 + k);
        jobs.push((format!("random#{seed}"), random_suite_instance(seed)?, seed));
    }
    let per_job: Vec<Result<Vec<CheckReport>>> = jobs
        .par_iter()
        .map(|(name, mdp, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut thetas = vec![PolicyParams::zeros(mdp.num_states(), mdp.num_actions())];
            thetas.extend((1..cfg.thetas_per_instance.max(1)).map(|_| {
                PolicyParams::random_uniform(mdp.num_states(), mdp.num_actions(), cfg.theta_scale, &mut rng)
            }));
            verify_instance(name, mdp, &thetas, &cfg.gamma_grid, *seed)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_job {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_bandit, make_bias_trap, make_chain};

    fn instance(seed: u64) -> (AbsorbingMdp, PolicyParams) {
        let mdp = AbsorbingMdp::new(make_random(6, 2, 5, seed).unwrap()).unwrap();
        let theta = PolicyParams::random_uniform(6, 2, 3.0, &mut ChaCha8Rng::seed_from_u64(seed));
        (mdp, theta)
    }

    #[test]
    fn decomposition_end_points() {
        let (mdp, theta) = instance(1);
        assert!(check_decomposition(&mdp, &theta, &[1.0]).unwrap().worst_residual <= 1e-12);
        assert!(check_decomposition(&mdp, &theta, &[0.0]).unwrap().pass);
    }

    #[test]
    fn bias_identity_end_points() {
        let (mdp, theta) = instance(2);
        assert!(check_bias_identity(&mdp, &theta, &[1.0]).unwrap().worst_residual <= 1e-12);
        let bandit = AbsorbingMdp::new(make_bandit(&[0.2, 0.9]).unwrap()).unwrap();
        let t = PolicyParams::from_rows(vec![vec![0.3, -1.0], vec![0.0, 0.0]]).unwrap();
        let r = check_bias_identity(&bandit, &t, &default_gamma_grid()).unwrap();
        assert!(r.worst_residual <= 1e-12);
    }

    #[test]
    fn error_bound_cases() {
        let bandit = AbsorbingMdp::new(make_bandit(&[0.2, 0.9]).unwrap()).unwrap();
        let t = PolicyParams::zeros(2, 2);
        let ratios = error_ratios(&bandit, &t, 0..=8).unwrap();
        assert!(ratios.iter().all(|r| r.ratio == 0.0));
        assert!(check_error_bound(&bandit, &t).unwrap().pass);

        let (mdp, theta) = instance(3);
        let ratios = error_ratios(&mdp, &theta, 0..=0).unwrap();
        assert_eq!(ratios[0].gamma, 0.0);
        assert_eq!(ratios[0].ratio, ratios[0].error_norm);
        assert!(ratios[0].ratio.is_finite());
        let report = check_error_bound(&mdp, &theta).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn fd_check_on_small_cases() {
        let single = AbsorbingMdp::new(make_chain(3, 1.0).unwrap()).unwrap();
        let t = PolicyParams::zeros(4, 1);
        let r = check_gradient_fd(&single, &t).unwrap();
        assert_eq!(r.worst_residual, 0.0);

        let bandit = AbsorbingMdp::new(make_bandit(&[1.0, 0.0]).unwrap()).unwrap();
        let t = PolicyParams::from_rows(vec![vec![0.4, -0.2], vec![0.0, 0.0]]).unwrap();
        let p: f64 = 1.0 / (1.0 + (-0.6f64).exp());
        let fd = fd_objective_gradient(&bandit, &t, FD_STEP).unwrap();
        assert!((fd.get(0, 0) - p * (1.0 - p)).abs() < 1e-9);
        assert!(check_gradient_fd(&bandit, &t).unwrap().pass);
    }

    #[test]
    fn lipschitz_base_cases() {
        let (mdp, _) = instance(4);
        let est = estimate_lipschitz(&mdp, &ProbeConfig::default()).unwrap();
        assert_eq!(est.l_t[0], 0.0);
        assert!(est.ordering_violation(mdp.num_states(), mdp.v_max()) <= 0.0, "{est:?}");
        for (e, a) in est.l_t.iter().zip(&est.analytic_l_t) {
            assert!(e <= a);
        }

        let single = AbsorbingMdp::new(make_random(5, 1, 4, 0).unwrap()).unwrap();
        let est = estimate_lipschitz(&single, &ProbeConfig::default()).unwrap();
        assert!(est.l_t.iter().all(|&x| x == 0.0));
        assert_eq!((est.l_d, est.l_e), (0.0, 0.0));
    }

    #[test]
    fn verify_builtin_instances() {
        let named = vec![
            ("chain".to_string(), AbsorbingMdp::new(make_chain(4, 1.0).unwrap()).unwrap()),
            ("bandit".to_string(), AbsorbingMdp::new(make_bandit(&[1.0, 0.0]).unwrap()).unwrap()),
            ("trap".to_string(), AbsorbingMdp::new(make_bias_trap(0.5, 1.0, 3).unwrap()).unwrap()),
        ];
        let cfg = SuiteConfig {
            random_instances: 5,
            thetas_per_instance: 2,
            ..SuiteConfig::default()
        };
        let reports = run_suite(&named, &cfg).unwrap();
        assert_eq!(reports.len(), 8 * 11);
        for r in &reports {
            assert!(r.pass, "{r:?}");
            assert!(r.reproduction.is_none());
        }
    }

    #[test]
    fn failures_carry_reproduction() {
        let (mdp, theta) = instance(5);
        let mut r = CheckReport::new("x", &mdp, 1.0, 0.5);
        r.attach_reproduction(&mdp, &theta);
        let payload: serde_json::Value = serde_json::from_str(r.reproduction.as_ref().unwrap()).unwrap();
        assert!(payload.get("mdp").is_some() && payload.get("theta").is_some());
    }
}
