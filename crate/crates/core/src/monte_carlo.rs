//! Monte Carlo estimation of the detector's success probability and
//! common-random-numbers comparison against baseline rules.
//!
//! Replication `i` draws from substream `i + 1` of the master seed, so runs
//! are reproducible bit-for-bit for any thread count; aggregation follows
//! replication order.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{self, DetectionReport, DetectorFactory};
use crate::error::{Error, Result};
use crate::model::{require_valid, sample_path, sample_theta, DisorderModel, StateId};
use crate::posterior::{posterior_step, PosteriorState};
use crate::rng;
use crate::solver::{problem_value, ThresholdTable};

/// Residual prior mass allowed beyond the auto-computed horizon.
const HORIZON_RESIDUAL: f64 = 1e-6;

/// Experiment parameters; the model and table are passed alongside.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub replications: usize,
    pub seed: u64,
    /// Path length per replication; `None` picks the shortest horizon whose
    /// residual prior mass is below 1e-6.
    pub horizon: Option<usize>,
    /// Number of leading replications to record with full traces.
    pub trace_reps: usize,
}

impl ExperimentConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self {
            replications,
            seed,
            horizon: None,
            trace_reps: 0,
        }
    }
}

/// One replication outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub theta: u64,
    pub tau: Option<u64>,
    pub success: bool,
    pub undecided: bool,
}

/// Aggregated experiment outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub replications: usize,
    pub seed: u64,
    pub horizon: usize,
    pub success_rate: f64,
    /// `sqrt(rate (1-rate) / n)`; `None` for degenerate single-replication
    /// runs.
    pub standard_error: Option<f64>,
    pub undecided_count: usize,
    pub theoretical_value: f64,
    /// `(rate - value) / SE`; `None` when the standard error is null.
    pub z_score: Option<f64>,
    #[serde(skip)]
    pub records: Vec<RepRecord>,
    #[serde(skip)]
    pub traces: Vec<DetectionReport>,
}

impl ExperimentResult {
    /// Writes the per-replication CSV (`rep, theta, tau, success, undecided`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rep,theta,tau,success,undecided")?;
        for r in &self.records {
            let tau = r.tau.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                r.rep,
                r.theta,
                tau,
                u8::from(r.success),
                u8::from(r.undecided)
            )?;
        }
        Ok(())
    }
}

/// Shortest horizon with `P(theta > horizon - max(d1,d2)) < 1e-6`.
pub fn default_horizon(model: &DisorderModel) -> usize {
    let d = model.window.d1.max(model.window.d2);
    let p = model.prior.p;
    let pi = model.prior.pi;
    let target = HORIZON_RESIDUAL / (1.0 - pi);
    let steps = (target.ln() / p.ln()).floor() as usize + 1;
    d + steps
}

fn run_one(
    model: &DisorderModel,
    factory: &DetectorFactory<'_>,
    horizon: usize,
    seed: u64,
    rep: usize,
    with_trace: bool,
) -> Result<(RepRecord, Option<DetectionReport>)> {
    let mut stream = rng::derive(seed, rep as u64 + 1);
    let theta = sample_theta(&model.prior, &mut stream);
    let path = sample_path(model, theta, horizon, &mut stream);
    let report = factory.run(&path.observations, Some(theta), with_trace)?;
    let record = RepRecord {
        rep,
        theta,
        tau: report.stop_time,
        success: report.success == Some(true),
        undecided: report.undecided,
    };
    Ok((record, with_trace.then_some(report)))
}

/// Estimates the success probability of the optimal rule by simulation and
/// compares it to the solved value.
pub fn estimate_success(
    model: &DisorderModel,
    r_star: &ThresholdTable,
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    require_valid(model)?;
    if !r_star.converged {
        return Err(Error::Contract(
            "simulation requires a converged threshold table".into(),
        ));
    }
    r_star.check_model(model)?;
    if config.replications == 0 {
        return Err(Error::Contract("replications must be positive".into()));
    }
    let horizon = config.horizon.unwrap_or_else(|| default_horizon(model));
    let theoretical = problem_value(model, r_star)?;
    let factory = DetectorFactory::new(model, r_star)?;
    let outcomes: Vec<(RepRecord, Option<DetectionReport>)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            run_one(
                model,
                &factory,
                horizon,
                config.seed,
                rep,
                rep < config.trace_reps,
            )
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(outcomes.len());
    let mut traces = Vec::new();
    let mut successes = 0usize;
    let mut undecided = 0usize;
    for (record, trace) in outcomes {
        successes += usize::from(record.success);
        undecided += usize::from(record.undecided);
        records.push(record);
        if let Some(t) = trace {
            traces.push(t);
        }
    }
    let n = config.replications;
    let rate = successes as f64 / n as f64;
    let se = if n >= 2 {
        Some((rate * (1.0 - rate) / n as f64).sqrt())
    } else {
        None
    };
    let z = se.and_then(|se| (se > 0.0).then(|| (rate - theoretical) / se));
    Ok(ExperimentResult {
        replications: n,
        seed: config.seed,
        horizon,
        success_rate: rate,
        standard_error: se,
        undecided_count: undecided,
        theoretical_value: theoretical,
        z_score: z,
        records,
        traces,
    })
}

// ---------------------------------------------------------------------------
// Rule comparison with common random numbers
// ---------------------------------------------------------------------------

/// Baseline stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineRule {
    /// Stop at a fixed time regardless of observations.
    FixedTime(u64),
    /// Stop at the first time the posterior reaches the threshold.
    PosteriorThreshold(f64),
}

impl BaselineRule {
    pub fn name(&self) -> String {
        match self {
            Self::FixedTime(t) => format!("fixed_time_{t}"),
            Self::PosteriorThreshold(c) => format!("posterior_threshold_{c}"),
        }
    }

    /// Stop time on a full path, if any.
    fn stop_time(&self, model: &DisorderModel, path: &[StateId]) -> Result<Option<u64>> {
        match self {
            Self::FixedTime(t) => Ok((*t < path.len() as u64).then_some(*t)),
            Self::PosteriorThreshold(c) => {
                let mut st = PosteriorState::initial(model);
                if st.pi_n >= *c {
                    return Ok(Some(0));
                }
                for i in 1..path.len() {
                    st = posterior_step(model, &st, path[i - 1], path[i])?;
                    if st.pi_n >= *c {
                        return Ok(Some(i as u64));
                    }
                }
                Ok(None)
            }
        }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct RuleRow {
    pub name: String,
    pub success_rate: f64,
    pub standard_error: Option<f64>,
    /// Mean of per-replication (rule - optimal) success differences.
    pub paired_diff_vs_optimal: f64,
    /// Standard error of the paired differences.
    pub paired_se: Option<f64>,
}

/// Comparison of the optimal rule against baselines on common paths.
#[derive(Debug, Clone, Serialize)]
pub struct RuleComparison {
    pub replications: usize,
    pub seed: u64,
    pub horizon: usize,
    pub rows: Vec<RuleRow>,
}

/// Evaluates the optimal rule and each baseline on the same simulated paths.
pub fn compare_rules(
    model: &DisorderModel,
    r_star: &ThresholdTable,
    config: &ExperimentConfig,
    rules: &[BaselineRule],
) -> Result<RuleComparison> {
    require_valid(model)?;
    if !r_star.converged {
        return Err(Error::Contract(
            "rule comparison requires a converged threshold table".into(),
        ));
    }
    r_star.check_model(model)?;
    if config.replications == 0 {
        return Err(Error::Contract("replications must be positive".into()));
    }
    let horizon = config.horizon.unwrap_or_else(|| default_horizon(model));
    let n = config.replications;
    let factory = DetectorFactory::new(model, r_star)?;
    // successes[0] is the optimal rule, then one slot per baseline.
    let per_rep: Vec<Vec<bool>> = (0..n)
        .into_par_iter()
        .map(|rep| -> Result<Vec<bool>> {
            let mut stream = rng::derive(config.seed, rep as u64 + 1);
            let theta = sample_theta(&model.prior, &mut stream);
            let path = sample_path(model, theta, horizon, &mut stream);
            let mut row = Vec::with_capacity(rules.len() + 1);
            let report = factory.run(&path.observations, Some(theta), false)?;
            row.push(report.success == Some(true));
            for rule in rules {
                let tau = rule.stop_time(model, &path.observations)?;
                row.push(match tau {
                    Some(t) => detector::in_precision_window(model, theta, t),
                    None => false,
                });
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let names: Vec<String> = std::iter::once("optimal".to_string())
        .chain(rules.iter().map(|r| r.name()))
        .collect();
    let mut rows = Vec::with_capacity(names.len());
    for (idx, name) in names.iter().enumerate() {
        let successes = per_rep.iter().filter(|r| r[idx]).count();
        let rate = successes as f64 / n as f64;
        let se = (n >= 2).then(|| (rate * (1.0 - rate) / n as f64).sqrt());
        let diffs: Vec<f64> = per_rep
            .iter()
            .map(|r| f64::from(u8::from(r[idx])) - f64::from(u8::from(r[0])))
            .collect();
        let mean_diff = diffs.iter().sum::<f64>() / n as f64;
        let paired_se = (n >= 2).then(|| {
            let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>()
                / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        });
        rows.push(RuleRow {
            name: name.clone(),
            success_rate: rate,
            standard_error: se,
            paired_diff_vs_optimal: mean_diff,
            paired_se,
        });
    }
    Ok(RuleComparison {
        replications: n,
        seed: config.seed,
        horizon,
        rows,
    })
}
