use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use annealpg::lab::{estimate_lipschitz, run_suite, CheckReport, LipschitzEstimates, ProbeConfig};
use annealpg::mdp::{absorption_check, validate as validate_mdp};
use annealpg::optimizer::{read_trace_csv, run, summarize, summarize_rows, Mode, Summary};
use annealpg::sampler::{estimator_check, rollouts, write_episodes_csv, BiasReport};
use annealpg::schedule::ScheduleSpec;
use annealpg::{AbsorbingMdp, Mdp};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Loaded, RunSpec};
use crate::{Failure, Options};

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn load(path: &Path, opts: &Options) -> Result<(Loaded, PathBuf), Failure> {
    let mut loaded = Loaded::read(path).map_err(usage)?;
    if let Some(seed) = opts.seed {
        loaded.config.seed = seed;
    }
    let out = opts.out.clone().unwrap_or_else(|| loaded.config.output_dir.clone());
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    Ok((loaded, out))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn say(opts: &Options, msg: impl AsRef<str>) {
    if !opts.quiet {
        println!("{}", msg.as_ref());
    }
}

pub fn validate(path: &Path, opts: &Options) -> Outcome {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(usage)?;
    let mdp = Mdp::from_json(&text).with_context(|| format!("{}", path.display())).map_err(usage)?;
    let report = validate_mdp(&mdp);
    if !report.ok {
        return Err(Failure::Check(anyhow!("{}: {report}", path.display())));
    }
    let leak = absorption_check(&mdp);
    if leak > 0.0 {
        return Err(Failure::Check(anyhow!(
            "{}: valid, but not absorbing by the horizon (max survival probability {leak:e})",
            path.display()
        )));
    }
    say(
        opts,
        format!(
            "{}: ok (|S|={}, |A|={}, T={}, absorbing)",
            path.display(),
            mdp.num_states(),
            mdp.num_actions(),
            mdp.horizon()
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct LipschitzOutput<'a> {
    environment: &'a str,
    estimates: &'a LipschitzEstimates,
}

/// Runs the configured suite; returns the number of failed checks.
fn run_checks(loaded: &Loaded, mdp: &AbsorbingMdp, out: &Path, opts: &Options) -> anyhow::Result<usize> {
    let spec = loaded.config.verify.clone().unwrap_or_default();
    let seed = loaded.config.seed;
    let named = if spec.include_environment {
        vec![("environment".to_string(), mdp.clone())]
    } else {
        Vec::new()
    };
    let reports: Vec<CheckReport> = run_suite(&named, &spec.suite(seed))?;
    write_json(&out.join("checks.json"), &reports)?;

    if spec.include_environment {
        let probe = ProbeConfig {
            seed,
            gamma_grid: spec.gamma_grid.clone(),
            ..ProbeConfig::default()
        };
        let estimates = estimate_lipschitz(mdp, &probe)?;
        write_json(
            &out.join("lipschitz.json"),
            &LipschitzOutput {
                environment: "environment",
                estimates: &estimates,
            },
        )?;
    }

    let failed: Vec<&CheckReport> = reports.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        eprintln!(
            "FAIL {} on {}: residual {:e} > {:e} (seed {:?})",
            r.check, r.instance, r.worst_residual, r.tolerance, r.seed
        );
        if let Some(repro) = &r.reproduction {
            eprintln!("  reproduce with: {repro}");
        }
    }
    say(
        opts,
        format!(
            "verify: {} checks, {} failed -> {}",
            reports.len(),
            failed.len(),
            out.join("checks.json").display()
        ),
    );
    Ok(failed.len())
}

pub fn verify(config: &Path, opts: &Options) -> Outcome {
    let (loaded, out) = load(config, opts)?;
    let mdp = loaded.environment().map_err(usage)?;
    match run_checks(&loaded, &mdp, &out, opts)? {
        0 => Ok(()),
        n => Err(Failure::Check(anyhow!("{n} checks failed"))),
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    run: &'a str,
    mode: Mode,
    schedule: ScheduleSpec,
    iterations: u64,
    record_every: u64,
    final_update_norm: f64,
    final_theta: Vec<Vec<f64>>,
    summary: Summary,
}

fn train_one(loaded: &Loaded, index: usize, mdp: &AbsorbingMdp, out: &Path) -> anyhow::Result<Summary> {
    let spec: &RunSpec = &loaded.config.runs[index];
    let cfg = loaded.run_config(index, mdp)?;
    let trace = run(mdp, &cfg).with_context(|| format!("run {}", spec.name))?;
    let csv_path = out.join(format!("{}.trace.csv", spec.name));
    let file = File::create(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?;
    trace.write_csv(BufWriter::new(file))?;
    let summary = summarize(&trace)?;
    write_json(
        &out.join(format!("{}.summary.json", spec.name)),
        &RunSummary {
            run: &spec.name,
            mode: spec.mode,
            schedule: spec.schedule,
            iterations: spec.iterations,
            record_every: spec.record_every,
            final_update_norm: trace.final_update_norm,
            final_theta: trace.final_theta.table().to_rows(),
            summary: summary.clone(),
        },
    )?;
    Ok(summary)
}

pub fn train(config: &Path, opts: &Options) -> Outcome {
    let (loaded, out) = load(config, opts)?;
    let mdp = loaded.environment().map_err(usage)?;
    if loaded.config.runs.is_empty() {
        return Err(usage(loaded.error_at("{", "train needs at least one entry in `runs`")));
    }
    let results: Vec<anyhow::Result<Summary>> = (0..loaded.config.runs.len())
        .into_par_iter()
        .map(|k| train_one(&loaded, k, &mdp, &out))
        .collect();
    let mut failures = 0;
    for (spec, result) in loaded.config.runs.iter().zip(results) {
        match result {
            Ok(s) => say(
                opts,
                format!(
                    "{}: {} rows, final J={} ‖∇J‖={}",
                    spec.name, s.rows, s.final_j, s.final_grad_j_norm
                ),
            ),
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e:#}", spec.name);
            }
        }
    }
    if loaded.config.verify.is_some() {
        failures += run_checks(&loaded, &mdp, &out, opts)?;
    }
    if failures > 0 {
        return Err(Failure::Check(anyhow!("{failures} runs or checks failed")));
    }
    Ok(())
}

pub fn sample(config: &Path, opts: &Options) -> Outcome {
    let (loaded, out) = load(config, opts)?;
    let mdp = loaded.environment().map_err(usage)?;
    let spec = loaded
        .config
        .sampler
        .clone()
        .ok_or_else(|| usage(loaded.error_at("{", "sample needs a `sampler` section")))?;
    let theta = loaded.theta(spec.theta.as_ref(), &mdp).map_err(usage)?;
    let seed = loaded.config.seed;
    if spec.dump {
        let episodes = rollouts(&mdp, &theta, seed, 0, spec.episodes)?;
        let path = out.join("episodes.csv");
        let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        write_episodes_csv(BufWriter::new(file), &episodes)?;
        say(opts, format!("sample: {} episodes -> {}", episodes.len(), path.display()));
    }
    if spec.audit_gammas.is_empty() {
        return Ok(());
    }
    let audits: Vec<BiasReport> = spec
        .audit_gammas
        .iter()
        .map(|&g| estimator_check(&mdp, &theta, g, spec.episodes, seed))
        .collect::<annealpg::Result<_>>()?;
    write_json(&out.join("sample_audit.json"), &audits)?;
    let mut bad = 0;
    for a in &audits {
        let ok = a.max_abs_z < 4.0 && a.structural_mismatch.is_empty();
        bad += usize::from(!ok);
        say(
            opts,
            format!(
                "audit γ={}: max |z| = {:.3}{}",
                a.gamma,
                a.max_abs_z,
                if ok { "" } else { "  FAIL" }
            ),
        );
    }
    if bad > 0 {
        return Err(Failure::Check(anyhow!("{bad} estimator audits exceeded 4 standard errors")));
    }
    Ok(())
}

pub fn report(trace: &Path, _opts: &Options) -> Outcome {
    let file = File::open(trace).with_context(|| format!("cannot read {}", trace.display())).map_err(usage)?;
    let rows = read_trace_csv(file).with_context(|| format!("{}", trace.display())).map_err(usage)?;
    let summary = summarize_rows(&rows).with_context(|| format!("{}", trace.display())).map_err(usage)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?);
    Ok(())
}
