//! Formula verification harness: compares every posterior/likelihood
//! identity, the payoff index conventions, the clamp dominance and the
//! solver value against the brute-force oracle on all positive-mass
//! prefixes up to a horizon, and reports per-formula max absolute errors.

use serde::Serialize;

use crate::error::Result;
use crate::likelihood::{g_kernel, joint_density_s, SumConvention};
use crate::model::{DisorderModel, StateId};
use crate::oracle::{
    enumerate_joint_budgeted, oracle_conditional, oracle_optimal_value_budgeted,
    oracle_rule_value, JointTable, ThetaRange,
};
use crate::posterior::{
    posterior_exact, posterior_multistep, posterior_step, prob_change_before_window,
    prob_change_within, window_payoff_with, PosteriorState,
};
use crate::solver::{solve_threshold_budgeted, ThresholdTable};
use crate::{budget, detector};

/// Tolerances pinned for the identity gates.
pub const IDENTITY_TOL: f64 = 1e-10;
/// A rejected payoff convention must miss by at least this much somewhere.
pub const DISCRIMINATION_MIN_ERR: f64 = 1e-3;
/// Slack for exact-arithmetic comparisons evaluated in floating point.
pub const EXACT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GateStatus {
    Pass,
    Fail,
    Skipped,
}

/// One verified formula (or one deliberately rejected variant).
#[derive(Debug, Clone, Serialize)]
pub struct GateOutcome {
    pub name: String,
    pub status: GateStatus,
    pub max_abs_error: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl GateOutcome {
    fn pass_if(name: &str, max_err: f64, tol: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            status: if max_err <= tol {
                GateStatus::Pass
            } else {
                GateStatus::Fail
            },
            max_abs_error: Some(max_err),
            tolerance: Some(tol),
            detail,
        }
    }

    fn skipped(name: &str, reason: &str) -> Self {
        Self {
            name: name.into(),
            status: GateStatus::Skipped,
            max_abs_error: None,
            tolerance: None,
            detail: reason.into(),
        }
    }
}

/// Full oracle-check report.
#[derive(Debug, Clone, Serialize)]
pub struct GateReport {
    pub model_hash: String,
    pub horizon: usize,
    pub payoff_convention: String,
    pub gates: Vec<GateOutcome>,
    pub all_pass: bool,
}

impl GateReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for g in &self.gates {
            let status = match g.status {
                GateStatus::Pass => "PASS",
                GateStatus::Fail => "FAIL",
                GateStatus::Skipped => "SKIP",
            };
            let err = g
                .max_abs_error
                .map(|e| format!("max_abs_err={e:.3e}"))
                .unwrap_or_default();
            let tol = g
                .tolerance
                .map(|t| format!("tol={t:.1e}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{status:4}  {:<34} {err:<22} {tol:<12} {}\n",
                g.name, g.detail
            ));
        }
        out
    }
}

/// Gate run configuration.
#[derive(Debug, Clone)]
pub struct GateConfig {
    pub horizon: usize,
    /// Payoff index convention for the main payoff gate; the default is the
    /// adopted one, the alternatives exist to demonstrate the gate fails
    /// them.
    pub payoff_convention: SumConvention,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
    pub budget_mb: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            horizon: 6,
            payoff_convention: SumConvention::Standard,
            solver_tolerance: 1e-10,
            solver_max_iterations: 100_000,
            budget_mb: budget::memory_budget_mb(),
        }
    }
}

/// Calls `f` with every positive-mass prefix `X_0..X_n`, `n <= max_n`.
fn for_each_positive_prefix<F>(joint: &JointTable, model: &DisorderModel, max_n: usize, mut f: F) -> Result<()>
where
    F: FnMut(&[StateId]) -> Result<()>,
{
    let s = model.n_states();
    for n in 0..=max_n {
        let count = s.pow(n as u32);
        for code in 0..count {
            let mut prefix = vec![model.x0];
            let mut rest = code;
            for _ in 0..n {
                prefix.push(StateId(rest % s));
                rest /= s;
            }
            if joint.prefix_mass(&prefix)? <= 0.0 {
                continue;
            }
            f(&prefix)?;
        }
    }
    Ok(())
}

fn kernels_equal(model: &DisorderModel) -> bool {
    let s = model.n_states();
    (0..s).all(|i| {
        (0..s).all(|j| {
            model.kernel0.prob(StateId(i), StateId(j)) == model.kernel1.prob(StateId(i), StateId(j))
        })
    })
}

/// Max error of a payoff convention against the oracle window probability.
fn payoff_max_error(
    joint: &JointTable,
    model: &DisorderModel,
    horizon: usize,
    convention: SumConvention,
) -> Result<(f64, usize)> {
    let d1 = model.window.d1;
    let mut max_err = 0.0f64;
    let mut windows = 0usize;
    for_each_positive_prefix(joint, model, horizon, |prefix| {
        let n = prefix.len() - 1;
        if n < d1 + 1 {
            return Ok(());
        }
        let state = posterior_exact(model, prefix)?;
        if state.pi_n >= 1.0 - 1e-12 {
            // The product form g * (1 - alpha) is defined for alpha < 1;
            // a saturated posterior (possible only when some transition is
            // pre-change impossible) is outside its domain.
            return Ok(());
        }
        let window = &prefix[n - d1 - 1..];
        let h = window_payoff_with(model, window, state.pi_n, convention)?;
        let truth = oracle_conditional(
            joint,
            prefix,
            ThetaRange::precision_window(n as u64, d1, model.window.d2),
        )?;
        max_err = max_err.max((h - truth).abs());
        windows += 1;
        Ok(())
    })?;
    Ok((max_err, windows))
}

/// The optimal rule as a prefix decision function over a threshold table.
pub fn optimal_rule<'a>(
    model: &'a DisorderModel,
    table: &'a ThresholdTable,
) -> impl Fn(&[StateId]) -> bool + 'a {
    let d1 = model.window.d1;
    move |prefix: &[StateId]| {
        let n = prefix.len() - 1;
        if n < d1 + 1 {
            return false;
        }
        let window = &prefix[n - d1 - 1..];
        match crate::likelihood::detection_statistic_g(model, window) {
            Ok(g) => g >= table.value(&window[1..]),
            Err(_) => true, // impossible window: zero-mass path, decision moot
        }
    }
}

/// Runs every gate and assembles the report.
pub fn run_gates(model: &DisorderModel, config: &GateConfig) -> Result<GateReport> {
    let horizon = config.horizon;
    let joint = enumerate_joint_budgeted(model, horizon, config.budget_mb)?;
    let d1 = model.window.d1;
    let d2 = model.window.d2;
    let mut gates = Vec::new();

    // --- posterior_exact vs oracle --------------------------------------
    {
        let mut max_err = 0.0f64;
        let mut count = 0usize;
        for_each_positive_prefix(&joint, model, horizon, |prefix| {
            let n = prefix.len() - 1;
            let st = posterior_exact(model, prefix)?;
            let truth = oracle_conditional(&joint, prefix, ThetaRange::at_most(n as i64))?;
            max_err = max_err.max((st.pi_n - truth).abs());
            count += 1;
            Ok(())
        })?;
        gates.push(GateOutcome::pass_if(
            "posterior_exact",
            max_err,
            IDENTITY_TOL,
            format!("{count} prefixes"),
        ));
    }

    // --- one-step recursion composed from time 0 ------------------------
    if horizon >= 1 {
        let mut max_err = 0.0f64;
        for_each_positive_prefix(&joint, model, horizon, |prefix| {
            let n = prefix.len() - 1;
            if n == 0 {
                return Ok(());
            }
            let mut st = PosteriorState::initial(model);
            for i in 1..prefix.len() {
                st = posterior_step(model, &st, prefix[i - 1], prefix[i])?;
            }
            let truth = oracle_conditional(&joint, prefix, ThetaRange::at_most(n as i64))?;
            max_err = max_err.max((st.pi_n - truth).abs());
            Ok(())
        })?;
        gates.push(GateOutcome::pass_if(
            "posterior_step_composition",
            max_err,
            IDENTITY_TOL,
            String::new(),
        ));
    } else {
        gates.push(GateOutcome::skipped(
            "posterior_step_composition",
            "insufficient horizon",
        ));
    }

    // --- multi-step recursion for every split ---------------------------
    if horizon >= 1 {
        let mut max_err = 0.0f64;
        for_each_positive_prefix(&joint, model, horizon, |prefix| {
            let n = prefix.len() - 1;
            for t in 0..n {
                let st = posterior_exact(model, &prefix[..=t])?;
                let multi = posterior_multistep(model, &st, &prefix[t..])?;
                let truth = oracle_conditional(&joint, prefix, ThetaRange::at_most(n as i64))?;
                max_err = max_err.max((multi.pi_n - truth).abs());
            }
            Ok(())
        })?;
        gates.push(GateOutcome::pass_if(
            "posterior_multistep",
            max_err,
            IDENTITY_TOL,
            String::new(),
        ));
    } else {
        gates.push(GateOutcome::skipped(
            "posterior_multistep",
            "insufficient horizon",
        ));
    }

    // --- forward interval probability ------------------------------------
    {
        let mut max_err = 0.0f64;
        for_each_positive_prefix(&joint, model, horizon, |prefix| {
            let n = prefix.len() - 1;
            let st = posterior_exact(model, prefix)?;
            for k in 0..=d2 + 3 {
                let claim = prob_change_within(model, &st, k);
                let truth =
                    oracle_conditional(&joint, prefix, ThetaRange::at_most((n + k) as i64))?;
                max_err = max_err.max((claim - truth).abs());
            }
            Ok(())
        })?;
        gates.push(GateOutcome::pass_if(
            "prob_change_within",
            max_err,
            IDENTITY_TOL,
            String::new(),
        ));
    }

    // --- backward window probability -------------------------------------
    if horizon >= 1 {
        let mut max_err = 0.0f64;
        for_each_positive_prefix(&joint, model, horizon, |prefix| {
            let n = prefix.len() - 1;
            for t in 0..n {
                let st = posterior_exact(model, &prefix[..=t])?;
                let claim = prob_change_before_window(model, &st, &prefix[t..])?;
                let truth = oracle_conditional(&joint, prefix, ThetaRange::at_most(t as i64))?;
                max_err = max_err.max((claim - truth).abs());
            }
            Ok(())
        })?;
        gates.push(GateOutcome::pass_if(
            "prob_change_before_window",
            max_err,
            IDENTITY_TOL,
            String::new(),
        ));
    } else {
        gates.push(GateOutcome::skipped(
            "prob_change_before_window",
            "insufficient horizon",
        ));
    }

    // --- density factorization S = S * G ---------------------------------
    if horizon >= 1 {
        let mut max_err = 0.0f64;
        for_each_positive_prefix(&joint, model, horizon, |prefix| {
            let n = prefix.len() - 1;
            let full = joint_density_s(model, prefix)?;
            for t in 0..n {
                let head = joint_density_s(model, &prefix[..=t])?;
                let st = posterior_exact(model, &prefix[..=t])?;
                let g = g_kernel(model, &prefix[t..], st.pi_n)?;
                max_err = max_err.max((full - head * g).abs());
            }
            Ok(())
        })?;
        gates.push(GateOutcome::pass_if(
            "density_factorization",
            max_err,
            IDENTITY_TOL,
            String::new(),
        ));
    } else {
        gates.push(GateOutcome::skipped(
            "density_factorization",
            "insufficient horizon",
        ));
    }

    // --- S sums to one over windows of each length -----------------------
    {
        let s = model.n_states();
        let mut max_err = 0.0f64;
        for n in 0..=horizon {
            let mut total = 0.0;
            for code in 0..s.pow(n as u32) {
                let mut w = vec![model.x0];
                let mut rest = code;
                for _ in 0..n {
                    w.push(StateId(rest % s));
                    rest /= s;
                }
                total += joint_density_s(model, &w)?;
            }
            max_err = max_err.max((total - 1.0).abs());
        }
        gates.push(GateOutcome::pass_if(
            "s_normalization",
            max_err,
            IDENTITY_TOL,
            String::new(),
        ));
    }

    // --- payoff against the oracle window probability ---------------------
    let informative = !kernels_equal(model);
    if horizon > d1 {
        let (max_err, windows) =
            payoff_max_error(&joint, model, horizon, config.payoff_convention)?;
        gates.push(GateOutcome::pass_if(
            "payoff_window_probability",
            max_err,
            IDENTITY_TOL,
            format!("{windows} windows, convention {:?}", config.payoff_convention),
        ));
        // Rejected index conventions must visibly fail somewhere.
        for (name, convention) in [
            ("payoff_variant_scaled_rejected", SumConvention::ScaledByP),
            (
                "payoff_variant_zeroth_rejected",
                SumConvention::IncludesZerothRatio,
            ),
        ] {
            let (err, _) = payoff_max_error(&joint, model, horizon, convention)?;
            gates.push(GateOutcome {
                name: name.into(),
                status: if err > DISCRIMINATION_MIN_ERR {
                    GateStatus::Pass
                } else {
                    GateStatus::Fail
                },
                max_abs_error: Some(err),
                tolerance: Some(DISCRIMINATION_MIN_ERR),
                detail: "pass means the variant is detectably wrong".into(),
            });
        }
    } else {
        for name in [
            "payoff_window_probability",
            "payoff_variant_scaled_rejected",
            "payoff_variant_zeroth_rejected",
        ] {
            gates.push(GateOutcome::skipped(name, "insufficient horizon"));
        }
    }

    // --- one-step predictive mean of the posterior -----------------------
    {
        let p = model.prior.p;
        let q = model.prior.q();
        let mut max_err = 0.0f64;
        for_each_positive_prefix(&joint, model, horizon.saturating_sub(1), |prefix| {
            let st = posterior_exact(model, prefix)?;
            let x_n = *prefix.last().unwrap();
            let mut mean = 0.0;
            for y in 0..model.n_states() {
                let pair = [x_n, StateId(y)];
                let g = g_kernel(model, &pair, st.pi_n)?;
                if g <= 0.0 {
                    continue;
                }
                let next = posterior_step(model, &st, x_n, StateId(y))?;
                mean += g * next.pi_n;
            }
            max_err = max_err.max((mean - (q + p * st.pi_n)).abs());
            Ok(())
        })?;
        gates.push(GateOutcome::pass_if(
            "posterior_predictive_mean",
            max_err,
            1e-12,
            String::new(),
        ));
    }

    // --- clamp dominance over early fixed rules ---------------------------
    // Holds as printed only without an atom at zero (it needs
    // P(theta >= 1) = 1); with pi > 0 the violation equals a closed-form
    // prior gap, which is asserted instead.
    if horizon > d1 {
        let clamp = d1 + 1;
        let pi = model.prior.pi;
        let p = model.prior.p;
        let clamped_value = oracle_rule_value(&joint, |prefix| prefix.len() == clamp + 1);
        let mut worst = 0.0f64;
        for t in 0..clamp {
            let early = oracle_rule_value(&joint, |prefix| prefix.len() == t + 1);
            if pi == 0.0 {
                worst = worst.max(early - clamped_value);
            } else {
                let expected_gap =
                    pi - (1.0 - pi) * (p.powi((t + d2) as i32) - p.powi((d1 + d2 + 1) as i32));
                worst = worst.max(((early - clamped_value) - expected_gap).abs());
            }
        }
        let (name, detail) = if pi == 0.0 {
            (
                "clamp_dominance",
                format!("clamped rule value {clamped_value:.12}"),
            )
        } else {
            (
                "clamp_dominance_atom_gap",
                "pi > 0: early stops catch the atom; gap matches the closed form".to_string(),
            )
        };
        gates.push(GateOutcome::pass_if(name, worst.max(0.0), EXACT_TOL, detail));
    } else {
        gates.push(GateOutcome::skipped("clamp_dominance", "insufficient horizon"));
    }

    // --- stop payoff tail vanishes ----------------------------------------
    // The max window payoff peaks on the prior's time scale (about 1/q
    // steps) and only then decays toward zero; the decreasing-tail check is
    // meaningful only when the enumerable horizon reaches past that peak.
    let prior_scale = (1.0 / model.prior.q()).ceil() as usize;
    if horizon > d1 + d2 + prior_scale {
        let mut peaks = Vec::new();
        for n in 0..=horizon {
            let mut peak = 0.0f64;
            let s = model.n_states();
            for code in 0..s.pow(n as u32) {
                let mut prefix = vec![model.x0];
                let mut rest = code;
                for _ in 0..n {
                    prefix.push(StateId(rest % s));
                    rest /= s;
                }
                if joint.prefix_mass(&prefix)? <= 0.0 {
                    continue;
                }
                let v = oracle_conditional(
                    &joint,
                    &prefix,
                    ThetaRange::precision_window(n as u64, d1, d2),
                )?;
                peak = peak.max(v);
            }
            peaks.push(peak);
        }
        let last = *peaks.last().unwrap();
        let prev = peaks[peaks.len() - 2];
        let overall = peaks.iter().copied().fold(0.0f64, f64::max);
        let ok = last <= prev + 1e-12 && last < overall;
        gates.push(GateOutcome {
            name: "stop_payoff_tail_decreasing".into(),
            status: if ok { GateStatus::Pass } else { GateStatus::Fail },
            max_abs_error: Some(last),
            tolerance: None,
            detail: format!("peak payoff by time: {peaks:?}"),
        });
    } else {
        gates.push(GateOutcome::skipped(
            "stop_payoff_tail_decreasing",
            "horizon below the prior's peak scale",
        ));
    }

    // --- truncated optimality envelope -------------------------------------
    // The backward induction optimizes over all stopping times. For pi = 0
    // the solved rule is globally optimal and both its value and its
    // horizon-restricted evaluation must land inside the envelope. For
    // pi > 0 the rule is optimal only among stops at or after d1+1 (the
    // atom rewards earlier stops), so only the sound inequalities are
    // checked.
    if horizon >= d1 + 2 {
        let (table, _) = solve_threshold_budgeted(
            model,
            config.solver_tolerance,
            config.solver_max_iterations,
            config.budget_mb,
        )?;
        if table.converged {
            let value = crate::solver::problem_value(model, &table)?;
            let (tv, _) = oracle_optimal_value_budgeted(model, horizon, config.budget_mb)?;
            let rule_value = oracle_rule_value(&joint, optimal_rule(model, &table));
            let slack = 1e-12;
            let (ok, name) = if !model.post_change_dominated() {
                // Post-change moves outside the pre-change support make the
                // value formula a lower bound (the factored value function
                // assigns zero where the posterior saturates) while the
                // executed rule still collects that payoff; only the sound
                // inequalities remain.
                let residual = tv.value_upper - tv.value_lower;
                (
                    value <= tv.value_upper + slack
                        && rule_value <= tv.value_lower + slack
                        && value <= rule_value + residual + slack,
                    "truncated_envelope_saturating_kernels",
                )
            } else if model.prior.pi == 0.0 {
                let in_envelope =
                    |v: f64| v >= tv.value_lower - slack && v <= tv.value_upper + slack;
                (
                    in_envelope(value) && in_envelope(rule_value),
                    "truncated_optimality_envelope",
                )
            } else {
                let restriction_loss = model.prior.tail(horizon as i64 - d1 as i64);
                (
                    value <= tv.value_upper + slack
                        && rule_value <= value + slack
                        && rule_value >= value - restriction_loss - slack,
                    "truncated_envelope_clamped_class",
                )
            };
            gates.push(GateOutcome {
                name: name.into(),
                status: if ok { GateStatus::Pass } else { GateStatus::Fail },
                max_abs_error: Some(
                    (value - tv.value_lower)
                        .abs()
                        .max((rule_value - tv.value_lower).abs()),
                ),
                tolerance: Some(tv.value_upper - tv.value_lower),
                detail: format!(
                    "value={value:.12} rule_value={rule_value:.12} envelope=[{:.12}, {:.12}]",
                    tv.value_lower, tv.value_upper
                ),
            });
        } else {
            gates.push(GateOutcome::skipped(
                "truncated_optimality_envelope",
                "solver did not converge",
            ));
        }
    } else {
        gates.push(GateOutcome::skipped(
            "truncated_optimality_envelope",
            "insufficient horizon",
        ));
    }

    // --- detector trace posterior consistency ------------------------------
    if horizon > d1 && informative {
        let (table, _) = solve_threshold_budgeted(
            model,
            config.solver_tolerance,
            config.solver_max_iterations,
            config.budget_mb,
        )?;
        let mut max_err = 0.0f64;
        // One representative stream: greedy most-likely pre-change path.
        let mut stream = vec![model.x0];
        for _ in 0..horizon {
            let last = *stream.last().unwrap();
            let row = model.kernel0.row(last);
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            stream.push(StateId(best));
        }
        let report = detector::run_to_decision(model, &table, &stream, None, true)?;
        if let Some(trace) = &report.trace {
            for (i, rec) in trace.iter().enumerate() {
                let exact = posterior_exact(model, &stream[..=i])?;
                max_err = max_err.max((rec.pi_n - exact.pi_n).abs());
            }
        }
        gates.push(GateOutcome::pass_if(
            "detector_trace_posterior",
            max_err,
            IDENTITY_TOL,
            String::new(),
        ));
    } else {
        gates.push(GateOutcome::skipped(
            "detector_trace_posterior",
            "insufficient horizon or uninformative model",
        ));
    }

    let all_pass = gates.iter().all(|g| g.status != GateStatus::Fail);
    Ok(GateReport {
        model_hash: model.hash_hex(),
        horizon,
        payoff_convention: format!("{:?}", config.payoff_convention),
        gates,
        all_pass,
    })
}
