mod support;

use annealpg::analysis::analyze;
use annealpg::envs::{make_bandit, make_bias_trap, make_random};
use annealpg::lab::{estimate_lipschitz, ProbeConfig};
use annealpg::optimizer::{read_trace_csv, run, summarize, Mode, RunConfig};
use annealpg::sampler::estimator_check;
use annealpg::schedule::{coupled_gamma, StepSchedule};
use annealpg::{AbsorbingMdp, PolicyParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::bandit_ascent;

fn harmonic() -> StepSchedule {
    StepSchedule::harmonic(1.0, 1.0).unwrap()
}

#[test]
fn exact_bandit_ascent_matches_closed_form() {
    let mdp = AbsorbingMdp::new(make_bandit(&[0.0, 1.0]).unwrap()).unwrap();
    let step = harmonic();
    let cfg = RunConfig::new(Mode::Exact, step, None, 500, PolicyParams::zeros(2, 2)).record_every(50);
    let trace = run(&mdp, &cfg).unwrap();
    let (j, grad) = bandit_ascent(0.0, 1.0, (0..500).map(|i| step.alpha(i)));
    let last = trace.rows.last().unwrap();
    assert!((last.j - j).abs() <= 1e-10, "{} vs {j}", last.j);
    assert!((last.grad_j_norm - grad).abs() <= 1e-10);
    let summary = summarize(&trace).unwrap();
    assert_eq!(summary.monotonicity_violations, 0);
    assert_eq!(summary.last_improvement_iter, 500);
    // Softmax saturation keeps the gradient far from zero at this budget.
    assert!(last.j > 0.9 && last.grad_j_norm > 0.1);
}

#[test]
fn fixed_gamma_one_is_exact_mode() {
    let mdp = AbsorbingMdp::new(make_random(6, 2, 4, 3).unwrap()).unwrap();
    let theta0 = PolicyParams::random_uniform(6, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let exact = run(&mdp, &RunConfig::new(Mode::Exact, harmonic(), None, 200, theta0.clone())).unwrap();
    let fixed = run(&mdp, &RunConfig::new(Mode::FixedGamma(1.0), harmonic(), None, 200, theta0)).unwrap();
    assert_eq!(exact, fixed);
}

#[test]
fn annealed_error_tracks_step_size() {
    let mdp = AbsorbingMdp::new(make_random(5, 2, 4, 11).unwrap()).unwrap();
    let c = 2.0;
    let cfg = RunConfig::new(Mode::Annealed, harmonic(), Some(c), 300, PolicyParams::zeros(5, 2));
    let trace = run(&mdp, &cfg).unwrap();
    // Random probes alone would not cover the iterate itself.
    let probe = ProbeConfig {
        draws: 50,
        extra: vec![trace.final_theta.clone()],
        ..ProbeConfig::default()
    };
    let est = estimate_lipschitz(&mdp, &probe).unwrap();
    let scale = mdp.num_states() as f64 * mdp.v_max() * est.l_d;
    for row in &trace.rows {
        assert!(row.gamma >= 0.0 && c * (1.0 - row.gamma) <= row.alpha);
        assert_eq!(row.gamma, coupled_gamma(row.alpha, c));
        // ‖e‖ ≤ (1-γ) K ≤ (α / c) K, with K from the analytic constant.
        assert!(row.error_norm <= row.alpha / c * n_bound(&mdp) + 1e-12);
    }
    let last = analyze(&mdp, &trace.final_theta, trace.rows.last().unwrap().gamma).unwrap();
    assert!(last.error_vec.norm() <= (1.0 - last.gamma) * scale + 1e-12);
}

/// `|S| V_max Σ_t L_t` with the analytic recursion, valid for every θ.
fn n_bound(mdp: &AbsorbingMdp) -> f64 {
    let est = estimate_lipschitz(mdp, &ProbeConfig { draws: 0, ..ProbeConfig::default() }).unwrap();
    mdp.num_states() as f64 * mdp.v_max() * est.analytic_l_d
}

#[test]
fn bias_trap_fixed_gamma_stalls_with_positive_gradient() {
    let mdp = AbsorbingMdp::new(make_bias_trap(0.5, 1.0, 3).unwrap()).unwrap();
    let theta0 = PolicyParams::zeros(mdp.num_states(), mdp.num_actions());
    let fixed = run(
        &mdp,
        &RunConfig::new(Mode::FixedGamma(0.2), harmonic(), None, 20_000, theta0.clone()).record_every(1_000),
    )
    .unwrap();
    let annealed = run(
        &mdp,
        &RunConfig::new(Mode::Annealed, harmonic(), Some(2.0), 20_000, theta0).record_every(1_000),
    )
    .unwrap();
    let f = summarize(&fixed).unwrap();
    let a = summarize(&annealed).unwrap();
    assert!(f.final_grad_j_norm > 0.01, "{f:?}");
    assert!(f.final_j < 0.6, "{f:?}");
    assert!(a.final_j > 0.85, "{a:?}");
    assert!(a.final_grad_j_norm < f.final_grad_j_norm * 2.0);
    // The fixed run drifts toward the myopic action throughout.
    assert_eq!(f.last_improvement_iter, 0);
}

#[test]
fn trace_csv_round_trips() {
    let mdp = AbsorbingMdp::new(make_random(4, 2, 3, 1).unwrap()).unwrap();
    let cfg = RunConfig::new(Mode::Annealed, harmonic(), Some(0.5), 25, PolicyParams::zeros(4, 2)).record_every(4);
    let trace = run(&mdp, &cfg).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), trace.rows);
}

#[test]
fn early_stop_on_small_updates() {
    let mdp = AbsorbingMdp::new(make_bandit(&[0.0, 1.0]).unwrap()).unwrap();
    let cfg = RunConfig::new(Mode::Exact, harmonic(), None, 1_000_000, PolicyParams::zeros(2, 2))
        .record_every(1_000_000)
        .stop_update_norm(Some(1e-4));
    let trace = run(&mdp, &cfg).unwrap();
    assert!(trace.final_update_norm < 1e-4);
    assert!(trace.rows.last().unwrap().iter < 1_000_000);
}

#[test]
fn estimator_unbiased_at_point_eight() {
    let mdp = AbsorbingMdp::new(make_random(5, 2, 4, 13).unwrap()).unwrap();
    let theta = PolicyParams::random_uniform(5, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(13));
    let report = estimator_check(&mdp, &theta, 0.8, 10_000, 5).unwrap();
    assert!(report.max_abs_z < 4.0, "{report:?}");
    assert!(report.structural_mismatch.is_empty());
    let again = estimator_check(&mdp, &theta, 0.8, 10_000, 5).unwrap();
    assert_eq!(report, again);
}
