//! Experiment configuration schema and loading.

use std::fs;
use std::path::{Path, PathBuf};

use annealpg::envs::{make_bandit, make_bias_trap, make_chain, make_random};
use annealpg::lab::{default_gamma_grid, SuiteConfig};
use annealpg::mdp::time_augment;
use annealpg::optimizer::{Estimator, Mode, RunConfig, DEFAULT_BATCH_SIZE};
use annealpg::schedule::{ScheduleSpec, StepSchedule};
use annealpg::{AbsorbingMdp, Mdp, PolicyParams};
use serde::{Deserialize, Serialize};

/// A config problem, reported as `path:line:column: message` when a
/// position is known.
#[derive(Debug)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.file.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Chain {
        length: usize,
        #[serde(default = "one")]
        reward_per_step: f64,
    },
    Random {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        #[serde(default)]
        seed: u64,
    },
    BiasTrap {
        small_reward: f64,
        big_reward: f64,
        delay: usize,
    },
    Bandit {
        rewards: Vec<f64>,
    },
    /// MDP JSON on disk, relative to the config file. With `time_augment`
    /// the MDP is first lifted onto `(state, time)` pairs.
    File {
        path: PathBuf,
        #[serde(default)]
        time_augment: bool,
    },
}

fn one() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Exact,
    Reinforce {
        #[serde(default = "default_batch")]
        batch_size: usize,
        /// Defaults to the master seed plus the run index.
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    pub mode: Mode,
    pub schedule: ScheduleSpec,
    pub iterations: u64,
    #[serde(default = "one_u64")]
    pub record_every: u64,
    /// Initial parameters as `[state][action]` rows; zeros when absent.
    #[serde(default)]
    pub theta0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub estimator: Option<EstimatorSpec>,
    #[serde(default)]
    pub stop_update_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub episodes: usize,
    /// Policy parameters; zeros when absent.
    #[serde(default)]
    pub theta: Option<Vec<Vec<f64>>>,
    /// Discounts at which to audit the estimator against the exact engine.
    #[serde(default)]
    pub audit_gammas: Vec<f64>,
    /// Also write every episode to `episodes.csv`.
    #[serde(default = "yes")]
    pub dump: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_random_instances")]
    pub random_instances: usize,
    #[serde(default = "default_thetas")]
    pub thetas_per_instance: usize,
    #[serde(default = "default_scale")]
    pub theta_scale: f64,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    /// Also check the configured environment.
    #[serde(default = "yes")]
    pub include_environment: bool,
}

fn default_random_instances() -> usize {
    50
}

fn default_thetas() -> usize {
    5
}

fn default_scale() -> f64 {
    3.0
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            random_instances: default_random_instances(),
            thetas_per_instance: default_thetas(),
            theta_scale: default_scale(),
            gamma_grid: default_gamma_grid(),
            include_environment: true,
        }
    }
}

impl VerifySpec {
    pub fn suite(&self, seed: u64) -> SuiteConfig {
        SuiteConfig {
            random_instances: self.random_instances,
            thetas_per_instance: self.thetas_per_instance,
            theta_scale: self.theta_scale,
            gamma_grid: self.gamma_grid.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A parsed config plus what is needed to anchor later errors.
pub struct Loaded {
    pub path: PathBuf,
    pub text: String,
    pub config: ExperimentConfig,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            file: path.to_path_buf(),
            line: None,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| ConfigError {
            file: path.to_path_buf(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        let loaded = Self {
            path: path.to_path_buf(),
            text,
            config,
        };
        loaded.check()?;
        Ok(loaded)
    }

    /// Error anchored at the first line mentioning `needle`.
    pub fn error_at(&self, needle: &str, message: impl Into<String>) -> ConfigError {
        self.error_at_all(&[needle], message)
    }

    /// Error anchored at the first line containing every needle.
    pub fn error_at_all(&self, needles: &[&str], message: impl Into<String>) -> ConfigError {
        let line = self
            .text
            .lines()
            .position(|l| needles.iter().all(|n| l.contains(n)))
            .map(|i| i + 1);
        ConfigError {
            file: self.path.clone(),
            line,
            column: None,
            message: message.into(),
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let mdp = self.environment()?;
        let mut names = std::collections::BTreeSet::new();
        for (k, run) in self.config.runs.iter().enumerate() {
            let quoted = format!("\"{}\"", run.name);
            let anchor = ["\"name\"", quoted.as_str()];
            if run.name.is_empty() || run.name.contains(['/', '\\']) {
                return Err(self.error_at_all(&anchor, format!("runs[{k}]: invalid run name {:?}", run.name)));
            }
            if !names.insert(run.name.clone()) {
                return Err(self.error_at_all(&anchor, format!("runs[{k}]: duplicate run name {:?}", run.name)));
            }
            self.run_config(k, &mdp).map_err(|e| self.error_at_all(&anchor, format!("runs[{k}] ({}): {e}", run.name)))?;
        }
        if let Some(s) = &self.config.sampler {
            if s.episodes == 0 {
                return Err(self.error_at("\"episodes\"", "sampler.episodes must be at least 1"));
            }
            if !s.audit_gammas.is_empty() && s.episodes < 100 {
                return Err(self.error_at("\"episodes\"", "estimator audits need at least 100 episodes"));
            }
            if let Some(g) = s.audit_gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
                return Err(self.error_at("\"audit_gammas\"", format!("discount {g} outside [0, 1]")));
            }
            self.theta(s.theta.as_ref(), &mdp)
                .map_err(|e| self.error_at("\"theta\"", format!("sampler.theta: {e}")))?;
        }
        if let Some(v) = &self.config.verify {
            if let Some(g) = v.gamma_grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
                return Err(self.error_at("\"gamma_grid\"", format!("discount {g} outside [0, 1]")));
            }
            if !(v.theta_scale.is_finite() && v.theta_scale >= 0.0) {
                return Err(self.error_at("\"theta_scale\"", "theta_scale must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Builds the environment and checks that it is analyzable.
    pub fn environment(&self) -> Result<AbsorbingMdp, ConfigError> {
        let built: Result<Mdp, String> = match &self.config.environment {
            EnvironmentSpec::Chain { length, reward_per_step } => {
                make_chain(*length, *reward_per_step).map_err(|e| e.to_string())
            }
            EnvironmentSpec::Random {
                num_states,
                num_actions,
                horizon,
                seed,
            } => make_random(*num_states, *num_actions, *horizon, *seed).map_err(|e| e.to_string()),
            EnvironmentSpec::BiasTrap {
                small_reward,
                big_reward,
                delay,
            } => make_bias_trap(*small_reward, *big_reward, *delay).map_err(|e| e.to_string()),
            EnvironmentSpec::Bandit { rewards } => make_bandit(rewards).map_err(|e| e.to_string()),
            EnvironmentSpec::File { path, time_augment: lift } => {
                let resolved = self.resolve(path);
                let anchor = path.to_string_lossy().into_owned();
                let text = fs::read_to_string(&resolved).map_err(|e| {
                    self.error_at(&anchor, format!("environment.path: cannot read {}: {e}", resolved.display()))
                })?;
                let mdp = Mdp::from_json(&text)
                    .map_err(|e| self.error_at(&anchor, format!("environment.path: {}: {e}", resolved.display())))?;
                if *lift {
                    time_augment(&mdp).map_err(|e| e.to_string())
                } else {
                    Ok(mdp)
                }
            }
        };
        let mdp = built.map_err(|e| self.error_at("\"environment\"", format!("environment: {e}")))?;
        AbsorbingMdp::new(mdp).map_err(|e| self.error_at("\"environment\"", format!("environment: {e}")))
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(path)
        }
    }

    pub fn theta(&self, rows: Option<&Vec<Vec<f64>>>, mdp: &AbsorbingMdp) -> annealpg::Result<PolicyParams> {
        let theta = match rows {
            Some(rows) => PolicyParams::from_rows(rows.clone())?,
            None => PolicyParams::zeros(mdp.num_states(), mdp.num_actions()),
        };
        if theta.num_states() != mdp.num_states() || theta.num_actions() != mdp.num_actions() {
            return Err(annealpg::Error::Shape(format!(
                "expected {}x{} parameters, got {}x{}",
                mdp.num_states(),
                mdp.num_actions(),
                theta.num_states(),
                theta.num_actions()
            )));
        }
        Ok(theta)
    }

    pub fn run_config(&self, index: usize, mdp: &AbsorbingMdp) -> annealpg::Result<RunConfig> {
        let spec = &self.config.runs[index];
        let step = StepSchedule::new(spec.schedule.family)?;
        let estimator = match spec.estimator {
            None | Some(EstimatorSpec::Exact) => Estimator::Exact,
            Some(EstimatorSpec::Reinforce { batch_size, seed }) => Estimator::Reinforce {
                batch_size,
                seed: seed.unwrap_or(self.config.seed.wrapping_add(index as u64)),
            },
        };
        let cfg = RunConfig::new(
            spec.mode,
            step,
            spec.schedule.c,
            spec.iterations,
            self.theta(spec.theta0.as_ref(), mdp)?,
        )
        .record_every(spec.record_every)
        .estimator(estimator)
        .stop_update_norm(spec.stop_update_norm);
        cfg.validate()?;
        Ok(cfg)
    }
}
