//! Step-size families and the coupled discount rule `γ_i = max(0, 1 - α_i/c)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StepFamily {
    /// `α_i = a / (i + b)`.
    Harmonic { a: f64, b: f64 },
    /// `α_i = a / (i + b)^p` with `p ∈ (0.5, 1]`.
    Power { a: f64, b: f64, p: f64 },
    /// `α_i = a`. Usable, but never certified.
    Constant { a: f64 },
}

/// A validated step-size sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepFamily", into = "StepFamily")]
pub struct StepSchedule(StepFamily);

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Schedule(format!("{name} must be positive and finite, got {x}")))
    }
}

impl StepSchedule {
    pub fn new(family: StepFamily) -> Result<Self> {
        match family {
            StepFamily::Harmonic { a, b } => {
                positive("a", a)?;
                positive("b", b)?;
            }
            StepFamily::Power { a, b, p } => {
                positive("a", a)?;
                positive("b", b)?;
                if !(p > 0.5 && p <= 1.0) {
                    return Err(Error::Schedule(format!(
                        "power exponent must lie in (0.5, 1], got {p}: p <= 0.5 breaks square-summability and p > 1 breaks divergence"
                    )));
                }
            }
            StepFamily::Constant { a } => positive("a", a)?,
        }
        Ok(Self(family))
    }

    pub fn harmonic(a: f64, b: f64) -> Result<Self> {
        Self::new(StepFamily::Harmonic { a, b })
    }

    pub fn power(a: f64, b: f64, p: f64) -> Result<Self> {
        Self::new(StepFamily::Power { a, b, p })
    }

    pub fn constant(a: f64) -> Result<Self> {
        Self::new(StepFamily::Constant { a })
    }

    pub fn family(&self) -> StepFamily {
        self.0
    }

    pub fn alpha(&self, i: u64) -> f64 {
        let i = i as f64;
        match self.0 {
            StepFamily::Harmonic { a, b } => a / (i + b),
            StepFamily::Power { a, b, p } => a / (i + b).powf(p),
            StepFamily::Constant { a } => a,
        }
    }
}

impl TryFrom<StepFamily> for StepSchedule {
    type Error = Error;

    fn try_from(family: StepFamily) -> Result<Self> {
        Self::new(family)
    }
}

impl From<StepSchedule> for StepFamily {
    fn from(s: StepSchedule) -> Self {
        s.0
    }
}

/// Step sizes paired with discount factors through the coupling constant `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledSchedule {
    step: StepSchedule,
    c: f64,
}

impl CoupledSchedule {
    pub fn new(step: StepSchedule, c: f64) -> Result<Self> {
        positive("c", c)?;
        Ok(Self { step, c })
    }

    pub fn step(&self) -> StepSchedule {
        self.step
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `(α_i, γ_i)`.
    pub fn at(&self, i: u64) -> (f64, f64) {
        let alpha = self.step.alpha(i);
        (alpha, coupled_gamma(alpha, self.c))
    }
}

/// Least-discounted `γ ∈ [0, 1]` with `α ≥ c(1 - γ)`, evaluated in floating
/// point exactly as the compliance check evaluates it.
pub fn coupled_gamma(alpha: f64, c: f64) -> f64 {
    if alpha >= c {
        return 0.0;
    }
    let mut gamma = 1.0 - alpha / c;
    while c * (1.0 - gamma) > alpha {
        gamma = gamma.next_up();
    }
    gamma
}

pub fn schedule_at(schedule: &CoupledSchedule, i: u64) -> (f64, f64) {
    schedule.at(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceStatus {
    Compliant,
    /// Series conditions certified but the pointwise coupling failed.
    CouplingViolated,
    /// The family has no analytic certificate for the series conditions.
    Uncertifiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub status: ComplianceStatus,
    /// Why `Σ α_i = ∞` and `Σ α_i² < ∞` hold (or why that cannot be claimed).
    pub certificate: String,
    /// `min_{i < n} (α_i - c(1 - γ_i))`.
    pub min_margin: f64,
    pub checked: u64,
    pub partial_sum_alpha: f64,
    pub partial_sum_alpha_sq: f64,
}

fn certificate(family: StepFamily) -> Option<String> {
    match family {
        StepFamily::Harmonic { .. } => Some(
            "harmonic: a/(i+b) ~ a/i, so Σα diverges like a·ln n and Σα² converges like a²·Σ1/i²".into(),
        ),
        StepFamily::Power { p, .. } => Some(format!(
            "power p={p}: Σ 1/i^p diverges for p <= 1 and Σ 1/i^(2p) converges for 2p > 1"
        )),
        StepFamily::Constant { .. } => None,
    }
}

/// Certifies the series conditions analytically and checks the coupling
/// pointwise for `i < n`.
pub fn verify_coupling(schedule: &CoupledSchedule, n: u64) -> Result<ComplianceReport> {
    if n == 0 {
        return Err(Error::Schedule("compliance check needs n >= 1".into()));
    }
    let mut min_margin = f64::INFINITY;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n {
        let (alpha, gamma) = schedule.at(i);
        min_margin = min_margin.min(alpha - schedule.c * (1.0 - gamma));
        sum += alpha;
        sum_sq += alpha * alpha;
    }
    let cert = certificate(schedule.step.family());
    let status = match (&cert, min_margin >= 0.0) {
        (None, _) => ComplianceStatus::Uncertifiable,
        (Some(_), true) => ComplianceStatus::Compliant,
        (Some(_), false) => ComplianceStatus::CouplingViolated,
    };
    Ok(ComplianceReport {
        status,
        certificate: cert.unwrap_or_else(|| "constant steps are not square-summable; no certificate".into()),
        min_margin,
        checked: n,
        partial_sum_alpha: sum,
        partial_sum_alpha_sq: sum_sq,
    })
}

/// Schedule as written in experiment configs:
/// `{"family":"harmonic","a":1.0,"b":1.0,"c":10.0}`. `c` is only meaningful
/// for annealed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub family: StepFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}
