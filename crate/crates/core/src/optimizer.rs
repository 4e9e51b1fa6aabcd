//! The ascent loop `θ_{i+1} = θ_i + α_i d(θ_i, γ_i)` and its traces.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, discounted_direction};
use crate::error::{Error, Result};
use crate::mdp::AbsorbingMdp;
use crate::policy::{ParamTable, PolicyParams};
use crate::sampler::{reinforce_estimate, rollouts};
use crate::schedule::{CoupledSchedule, StepSchedule};

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Follow the discounted approximation with `γ_i` from the coupled schedule.
    Annealed,
    /// Follow the discounted approximation at a constant discount.
    FixedGamma(f64),
    /// Follow ∇J.
    Exact,
}

/// Where the update direction comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    /// Mean of `batch_size` on-policy REINFORCE estimates per step. Episode
    /// `k` of step `i` uses stream index `i * batch_size + k`.
    Reinforce {
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub step: StepSchedule,
    /// Coupling constant `c`; required by, and only allowed in, annealed mode.
    pub coupling: Option<f64>,
    pub iterations: u64,
    pub theta0: PolicyParams,
    pub record_every: u64,
    pub estimator: Estimator,
    /// Stop early once `‖θ_{i+1} - θ_i‖` falls below this.
    pub stop_update_norm: Option<f64>,
}

impl RunConfig {
    pub fn new(mode: Mode, step: StepSchedule, coupling: Option<f64>, iterations: u64, theta0: PolicyParams) -> Self {
        Self {
            mode,
            step,
            coupling,
            iterations,
            theta0,
            record_every: 1,
            estimator: Estimator::Exact,
            stop_update_norm: None,
        }
    }

    pub fn record_every(mut self, every: u64) -> Self {
        self.record_every = every;
        self
    }

    pub fn estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn stop_update_norm(mut self, tol: Option<f64>) -> Self {
        self.stop_update_norm = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        match (self.mode, self.coupling) {
            (Mode::Annealed, None) => {
                return Err(Error::Config("annealed mode needs a coupling constant c".into()));
            }
            (Mode::Annealed, Some(c)) => {
                CoupledSchedule::new(self.step, c)?;
            }
            (Mode::FixedGamma(_) | Mode::Exact, Some(_)) => {
                return Err(Error::Config(
                    "coupling constant c is only valid in annealed mode".into(),
                ));
            }
            _ => {}
        }
        if let Mode::FixedGamma(g) = self.mode {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Gamma(g));
            }
        }
        if let Some(tol) = self.stop_update_norm {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(Error::Config(format!("stop_update_norm must be positive, got {tol}")));
            }
        }
        if let Estimator::Reinforce { batch_size: 0, .. } = self.estimator {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: u64,
    pub alpha: f64,
    pub gamma: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "grad_J_norm")]
    pub grad_j_norm: f64,
    pub approx_norm: f64,
    pub error_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub final_theta: PolicyParams,
    /// `‖θ_n - θ_{n-1}‖` for the last update.
    pub final_update_norm: f64,
}

pub const CSV_HEADER: &str = "iter,alpha,gamma,J,grad_J_norm,approx_norm,error_norm";

/// Plain decimal with at least 17 significant digits.
pub fn format_decimal(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0.0".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (16 - magnitude).max(1) as usize;
    format!("{x:.decimals$}")
}

impl Trace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter,
                format_decimal(r.alpha),
                format_decimal(r.gamma),
                format_decimal(r.j),
                format_decimal(r.grad_j_norm),
                format_decimal(r.approx_norm),
                format_decimal(r.error_norm)
            )?;
        }
        Ok(())
    }
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected trace header {header:?}")));
    }
    Ok(reader.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}

enum GammaRule {
    Coupled(CoupledSchedule),
    Fixed(StepSchedule, f64),
}

impl GammaRule {
    fn at(&self, i: u64) -> (f64, f64) {
        match self {
            GammaRule::Coupled(s) => s.at(i),
            GammaRule::Fixed(step, g) => (step.alpha(i), *g),
        }
    }
}

fn record(mdp: &AbsorbingMdp, theta: &PolicyParams, iter: u64, alpha: f64, gamma: f64) -> Result<TraceRow> {
    let a = analyze(mdp, theta, gamma)?;
    let row = TraceRow {
        iter,
        alpha,
        gamma,
        j: a.objective,
        grad_j_norm: a.grad_j.norm(),
        approx_norm: a.approx.norm(),
        error_norm: a.error_vec.norm(),
    };
    if [row.j, row.grad_j_norm, row.approx_norm, row.error_norm]
        .iter()
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFiniteIterate { iteration: iter as usize });
    }
    Ok(row)
}

fn direction(mdp: &AbsorbingMdp, cfg: &RunConfig, theta: &PolicyParams, gamma: f64, i: u64) -> Result<ParamTable> {
    match cfg.estimator {
        Estimator::Exact => discounted_direction(mdp, theta, gamma),
        Estimator::Reinforce { batch_size, seed } => {
            let episodes = rollouts(mdp, theta, seed, i * batch_size as u64, batch_size)?;
            reinforce_estimate(&episodes, theta, gamma)
        }
    }
}

/// Runs the ascent loop. Rows are recorded at every multiple of
/// `record_every` and after the final update (which may come early when
/// `stop_update_norm` is set).
pub fn run(mdp: &AbsorbingMdp, cfg: &RunConfig) -> Result<Trace> {
    cfg.validate()?;
    if cfg.theta0.num_states() != mdp.num_states() || cfg.theta0.num_actions() != mdp.num_actions() {
        return Err(Error::Shape("theta0 shape does not match the MDP".into()));
    }
    let rule = match cfg.mode {
        Mode::Annealed => GammaRule::Coupled(CoupledSchedule::new(cfg.step, cfg.coupling.unwrap_or_default())?),
        Mode::FixedGamma(g) => GammaRule::Fixed(cfg.step, g),
        Mode::Exact => GammaRule::Fixed(cfg.step, 1.0),
    };

    let mut theta = cfg.theta0.clone();
    let mut rows = Vec::with_capacity((cfg.iterations / cfg.record_every) as usize + 2);
    let mut last_update = 0.0;
    let mut done = cfg.iterations;
    for i in 0..cfg.iterations {
        let (alpha, gamma) = rule.at(i);
        if i % cfg.record_every == 0 {
            rows.push(record(mdp, &theta, i, alpha, gamma)?);
        }
        let d = direction(mdp, cfg, &theta, gamma, i)?;
        last_update = alpha * d.norm();
        theta = theta
            .stepped(alpha, &d)
            .map_err(|_| Error::NonFiniteIterate { iteration: i as usize })?;
        if cfg.stop_update_norm.is_some_and(|tol| last_update < tol) {
            done = i + 1;
            break;
        }
    }
    let (alpha, gamma) = rule.at(done);
    rows.push(record(mdp, &theta, done, alpha, gamma)?);
    Ok(Trace {
        rows,
        final_theta: theta,
        final_update_norm: last_update,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: usize,
    pub final_iter: u64,
    pub final_j: f64,
    pub final_grad_j_norm: f64,
    pub min_j: f64,
    pub max_j: f64,
    /// Iteration of the last row whose J beat every earlier row.
    pub last_improvement_iter: u64,
    /// Rows whose J is below the previous row's.
    pub monotonicity_violations: usize,
}

pub fn summarize_rows(rows: &[TraceRow]) -> Result<Summary> {
    let first = rows.first().ok_or_else(|| Error::Config("cannot summarize an empty trace".into()))?;
    let last = rows[rows.len() - 1];
    let mut best = first.j;
    let mut last_improvement_iter = first.iter;
    let mut violations = 0;
    for pair in rows.windows(2) {
        if pair[1].j < pair[0].j {
            violations += 1;
        }
        if pair[1].j > best {
            best = pair[1].j;
            last_improvement_iter = pair[1].iter;
        }
    }
    Ok(Summary {
        rows: rows.len(),
        final_iter: last.iter,
        final_j: last.j,
        final_grad_j_norm: last.grad_j_norm,
        min_j: rows.iter().map(|r| r.j).fold(f64::INFINITY, f64::min),
        max_j: best,
        last_improvement_iter,
        monotonicity_violations: violations,
    })
}

pub fn summarize(trace: &Trace) -> Result<Summary> {
    summarize_rows(&trace.rows)
}
