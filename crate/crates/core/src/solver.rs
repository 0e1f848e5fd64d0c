//! Value iteration for the stopping threshold.
//!
//! The threshold function `r_k` lives on state tuples of length `d1+1` and
//! obeys
//!
//!   r_k(u) = p * sum_y f0_{u_last}(y) * max{ g(u.y), r_{k-1}(shift(u, y)) }
//!
//! starting from `r_0(u) = p [1 - p^d2 + q sum_{m=1}^{d1+1} L_{m-1}(u) /
//! (p^m L_0(u))]`, which is one pre-change expectation of the statistic.
//! The sequence is pointwise nondecreasing and bounded, so it converges;
//! its limit `r*` is the stopping boundary: stop at the first eligible time
//! where the statistic reaches `r*` on the trailing tuple.
//!
//! Tuples whose transitions are impossible under the pre-change kernel get
//! the saturating sentinel `+inf`; such tuples can only follow an already
//! impossible history and never feed a finite entry.

use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{bytes_to_mb, memory_budget_mb};
use crate::error::{Error, Result};
use crate::likelihood::{detection_statistic_g, log_l_all};
use crate::model::{require_valid, DisorderModel, StateId};

/// Slack for the pointwise monotonicity check. The iteration is
/// nondecreasing in exact arithmetic; in floating point the closed-form
/// `r_0` meets the operator route on sweep 1 with rounding of either sign,
/// and one-ulp wobbles can carry through later sweeps.
const MONOTONE_SLACK: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Tuple indexing
// ---------------------------------------------------------------------------

/// Number of tuples of the given length over `s` states, or an error when it
/// does not fit in memory accounting.
fn domain_size(s: usize, len: usize) -> u128 {
    (s as u128).pow(len as u32)
}

/// Decodes a mixed-radix tuple index (most significant digit first).
pub fn tuple_of_index(mut idx: usize, s: usize, len: usize) -> Vec<StateId> {
    let mut out = vec![StateId(0); len];
    for slot in out.iter_mut().rev() {
        *slot = StateId(idx % s);
        idx /= s;
    }
    out
}

/// Encodes a tuple as its mixed-radix index.
pub fn index_of_tuple(tuple: &[StateId], s: usize) -> usize {
    tuple.iter().fold(0, |acc, id| acc * s + id.0)
}

// ---------------------------------------------------------------------------
// Threshold table
// ---------------------------------------------------------------------------

/// The threshold function tabulated over all state tuples of length `d1+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub model_hash: String,
    pub states: Vec<String>,
    pub d1: usize,
    pub d2: usize,
    /// Tolerance the solve ran with; `None` for an unsolved `r_0` table.
    pub tolerance: Option<f64>,
    /// Number of iteration sweeps applied after `r_0`.
    pub iterations: usize,
    pub converged: bool,
    /// Last sup-norm change, once at least one sweep has run.
    pub sup_delta: Option<f64>,
    /// `r` values indexed by the mixed-radix tuple encoding.
    pub values: Vec<f64>,
}

impl ThresholdTable {
    pub fn value(&self, tuple: &[StateId]) -> f64 {
        self.values[index_of_tuple(tuple, self.states.len())]
    }

    /// Errs unless the table was built for this exact model.
    pub fn check_model(&self, model: &DisorderModel) -> Result<()> {
        if self.d1 != model.window.d1 {
            return Err(Error::TableMismatch(format!(
                "table built for d1 = {}, model has d1 = {}",
                self.d1, model.window.d1
            )));
        }
        let hash = model.hash_hex();
        if self.model_hash != hash {
            return Err(Error::TableMismatch(format!(
                "table hash {} does not match model hash {hash}",
                self.model_hash
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = TableFile {
            header: TableHeader {
                model_hash: self.model_hash.clone(),
                d1: self.d1,
                d2: self.d2,
                tolerance: self.tolerance,
                iterations: self.iterations,
                converged: self.converged,
                sup_delta: self.sup_delta,
                states: self.states.clone(),
            },
            records: (0..self.values.len())
                .map(|idx| TableRecord {
                    tuple: tuple_of_index(idx, self.states.len(), self.d1 + 1)
                        .iter()
                        .map(|id| self.states[id.0].clone())
                        .collect(),
                    r: self.values[idx],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("table file: {e}")))?;
        let s = file.header.states.len();
        let len = file.header.d1 + 1;
        let expected = domain_size(s, len);
        if file.records.len() as u128 != expected {
            return Err(Error::Parse(format!(
                "table must have {expected} records, found {}",
                file.records.len()
            )));
        }
        let mut values = vec![f64::NAN; file.records.len()];
        let mut seen = vec![false; file.records.len()];
        for rec in &file.records {
            if rec.tuple.len() != len {
                return Err(Error::Parse(format!(
                    "record tuple {:?} must have length {len}",
                    rec.tuple
                )));
            }
            let ids: Vec<StateId> = rec
                .tuple
                .iter()
                .map(|label| {
                    file.header
                        .states
                        .iter()
                        .position(|s| s == label)
                        .map(StateId)
                        .ok_or_else(|| Error::UnknownState {
                            label: label.clone(),
                            context: Some("table record".into()),
                        })
                })
                .collect::<Result<_>>()?;
            let idx = index_of_tuple(&ids, s);
            if seen[idx] {
                return Err(Error::Parse(format!("duplicate record for {:?}", rec.tuple)));
            }
            seen[idx] = true;
            values[idx] = rec.r;
        }
        Ok(Self {
            model_hash: file.header.model_hash,
            states: file.header.states,
            d1: file.header.d1,
            d2: file.header.d2,
            tolerance: file.header.tolerance,
            iterations: file.header.iterations,
            converged: file.header.converged,
            sup_delta: file.header.sup_delta,
            values,
        })
    }

    pub fn from_file(path: &FsPath) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    model_hash: String,
    d1: usize,
    d2: usize,
    tolerance: Option<f64>,
    iterations: usize,
    converged: bool,
    #[serde(with = "crate::float_serde::opt")]
    sup_delta: Option<f64>,
    states: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    tuple: Vec<String>,
    #[serde(with = "crate::float_serde")]
    r: f64,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    header: TableHeader,
    records: Vec<TableRecord>,
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Convergence record of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    pub tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change per sweep.
    pub sup_delta_history: Vec<f64>,
    /// Smallest pointwise change per sweep; nonnegative up to first-sweep
    /// rounding slack because the iteration is monotone.
    pub min_delta_history: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Statistic cache
// ---------------------------------------------------------------------------

/// `g` for every window `(tuple, y)` of length `d1+2`, indexed by
/// `tuple_index * s + y`. Impossible windows hold `+inf`.
pub(crate) fn statistic_cache(model: &DisorderModel) -> Result<Vec<f64>> {
    let s = model.n_states();
    let len = model.window.d1 + 2;
    let total = domain_size(s, len);
    let mut cache = Vec::with_capacity(total as usize);
    let mut window = vec![StateId(0); len];
    for idx in 0..total as usize {
        let mut rest = idx;
        for slot in window.iter_mut().rev() {
            *slot = StateId(rest % s);
            rest /= s;
        }
        let g = match detection_statistic_g(model, &window) {
            Ok(v) => v,
            Err(Error::ImpossiblePath(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        cache.push(g);
    }
    Ok(cache)
}

fn check_budget(model: &DisorderModel, budget_mb: u64) -> Result<()> {
    let s = model.n_states();
    let len = model.window.d1 + 1;
    // Two tables plus the statistic cache.
    let bytes = (2 * domain_size(s, len) + domain_size(s, len + 1)) * 8;
    let required_mb = bytes_to_mb(bytes);
    if required_mb > budget_mb {
        return Err(Error::BudgetExceeded {
            required_mb,
            budget_mb,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Iteration
// ---------------------------------------------------------------------------

fn fresh_table(model: &DisorderModel, values: Vec<f64>) -> ThresholdTable {
    ThresholdTable {
        model_hash: model.hash_hex(),
        states: model.states().to_vec(),
        d1: model.window.d1,
        d2: model.window.d2,
        tolerance: None,
        iterations: 0,
        converged: false,
        sup_delta: None,
        values,
    }
}

/// The starting table `r_0`: one pre-change expectation of the statistic,
/// evaluated in closed form on each tuple.
pub fn r0_table(model: &DisorderModel) -> Result<ThresholdTable> {
    require_valid(model)?;
    check_budget(model, memory_budget_mb())?;
    let s = model.n_states();
    let d1 = model.window.d1;
    let p = model.prior.p;
    let q = model.prior.q();
    let total = domain_size(s, d1 + 1) as usize;
    let mut values = Vec::with_capacity(total);
    for idx in 0..total {
        let tuple = tuple_of_index(idx, s, d1 + 1);
        let logs = log_l_all(model, &tuple)?;
        if logs[0] == f64::NEG_INFINITY {
            values.push(f64::INFINITY);
            continue;
        }
        let mut sum = 0.0;
        for m in 1..=d1 + 1 {
            sum += (logs[m - 1] - logs[0]).exp() / p.powi(m as i32);
        }
        values.push(p * (1.0 - p.powi(model.window.d2 as i32) + q * sum));
    }
    Ok(fresh_table(model, values))
}

/// One sweep of the threshold recursion over `r_prev`.
pub fn iterate_threshold(model: &DisorderModel, r_prev: &ThresholdTable) -> Result<ThresholdTable> {
    let cache = statistic_cache(model)?;
    let values = sweep(model, &r_prev.values, &cache);
    let mut next = fresh_table(model, values);
    next.iterations = r_prev.iterations + 1;
    Ok(next)
}

/// Applies the recursion once; entries are independent and computed in
/// parallel, each with a fixed summation order over successors, so the
/// result is identical for any thread count.
fn sweep(model: &DisorderModel, prev: &[f64], cache: &[f64]) -> Vec<f64> {
    let s = model.n_states();
    let len = model.window.d1 + 1;
    let p = model.prior.p;
    let tail_mod = prev.len() / s; // s^(len-1)
    (0..prev.len())
        .into_par_iter()
        .map(|idx| {
            let last = StateId(idx % s);
            let mut acc = 0.0;
            for y in 0..s {
                let f0 = model.kernel0.prob(last, StateId(y));
                if f0 == 0.0 {
                    continue;
                }
                let g = cache[idx * s + y];
                let shifted = (idx % tail_mod) * s + y;
                acc += f0 * g.max(prev[shifted]);
            }
            debug_assert!(len == model.window.d1 + 1);
            p * acc
        })
        .collect()
}

/// Iterates from `r_0` until the sup-norm change drops below `tolerance` or
/// `max_iterations` sweeps have run. The memory budget comes from
/// `DISORDER_DETECT_BUDGET_MB`.
pub fn solve_threshold(
    model: &DisorderModel,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(ThresholdTable, SolveDiagnostics)> {
    solve_threshold_budgeted(model, tolerance, max_iterations, memory_budget_mb())
}

/// [`solve_threshold`] with an explicit memory budget in megabytes.
pub fn solve_threshold_budgeted(
    model: &DisorderModel,
    tolerance: f64,
    max_iterations: usize,
    budget_mb: u64,
) -> Result<(ThresholdTable, SolveDiagnostics)> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::Contract(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    require_valid(model)?;
    check_budget(model, budget_mb)?;
    let cache = statistic_cache(model)?;
    // The nondecreasing guarantee needs every post-change move to be
    // pre-change possible; otherwise the pre-change expectation in the
    // recursion drops mass that the starting table counts, and the
    // iteration approaches its fixed point from above instead.
    let monotone = model.post_change_dominated();
    let mut table = r0_table(model)?;
    table.tolerance = Some(tolerance);
    let mut sup_history = Vec::new();
    let mut min_history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_iterations {
        let next = sweep(model, &table.values, &cache);
        sweeps += 1;
        let mut sup = 0.0f64;
        let mut min = f64::INFINITY;
        for (idx, (&new, &old)) in next.iter().zip(&table.values).enumerate() {
            let delta = if new == old { 0.0 } else { new - old };
            assert!(
                !monotone || delta >= -MONOTONE_SLACK,
                "threshold iteration decreased at entry {idx} on sweep {sweeps}: {old} -> {new}"
            );
            sup = sup.max(delta.abs());
            min = min.min(delta);
        }
        sup_history.push(sup);
        min_history.push(min);
        table.values = next;
        table.iterations = sweeps;
        table.sup_delta = Some(sup);
        if sup < tolerance {
            converged = true;
            break;
        }
    }
    table.converged = converged;
    let diagnostics = SolveDiagnostics {
        tolerance,
        iterations: sweeps,
        converged,
        sup_delta_history: sup_history,
        min_delta_history: min_history,
    };
    Ok((table, diagnostics))
}

// ---------------------------------------------------------------------------
// Problem value
// ---------------------------------------------------------------------------

/// The maximal probability of stopping within the precision window,
/// `P(theta > d1+1) * sum_u max{g(x0.u), r*(u)} L_0(x0.u)` with
/// `P(theta > d1+1) = (1-pi) p^(d1+1)`.
///
/// Exact when every post-change transition is pre-change possible. When the
/// post-change law escapes the pre-change support the factored value
/// function assigns zero to the saturated-posterior states the rule still
/// profits from, so the formula is then a lower bound on the rule's value.
pub fn problem_value(model: &DisorderModel, r_star: &ThresholdTable) -> Result<f64> {
    if !r_star.converged {
        return Err(Error::Contract(
            "problem value requires a converged threshold table".into(),
        ));
    }
    r_star.check_model(model)?;
    let s = model.n_states();
    let d1 = model.window.d1;
    let mut total = 0.0;
    let tuples = r_star.values.len();
    let mut window = vec![model.x0; d1 + 2];
    for idx in 0..tuples {
        let tuple = tuple_of_index(idx, s, d1 + 1);
        window[1..].copy_from_slice(&tuple);
        let logs = log_l_all(model, &window)?;
        if logs[0] == f64::NEG_INFINITY {
            continue; // zero pre-change probability contributes nothing
        }
        let g = detection_statistic_g(model, &window)?;
        total += g.max(r_star.values[idx]) * logs[0].exp();
    }
    let prior_factor = (1.0 - model.prior.pi) * model.prior.p.powi(d1 as i32 + 1);
    Ok(prior_factor * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::g_kernel;
    use crate::model::{MarkovKernel, PrecisionWindow, PriorParams};
    use crate::posterior::{posterior_step, PosteriorState};
    use approx::assert_relative_eq;

    fn model_2(
        pi: f64,
        p: f64,
        d1: usize,
        d2: usize,
        rows0: [[f64; 2]; 2],
        rows1: [[f64; 2]; 2],
    ) -> DisorderModel {
        let states = vec!["0".to_string(), "1".to_string()];
        DisorderModel::new(
            PriorParams::new(pi, p),
            MarkovKernel::new(states.clone(), rows0.iter().map(|r| r.to_vec()).collect())
                .unwrap(),
            MarkovKernel::new(states, rows1.iter().map(|r| r.to_vec()).collect()).unwrap(),
            PrecisionWindow::new(d1, d2),
            StateId(0),
        )
    }

    fn informative(d1: usize, d2: usize) -> DisorderModel {
        model_2(
            0.0,
            0.5,
            d1,
            d2,
            [[0.75, 0.25], [0.5, 0.5]],
            [[0.25, 0.75], [0.25, 0.75]],
        )
    }

    fn no_info(pi: f64, p: f64, d1: usize, d2: usize) -> DisorderModel {
        let rows = [[0.75, 0.25], [0.5, 0.5]];
        model_2(pi, p, d1, d2, rows, rows)
    }

    #[test]
    fn tuple_index_round_trip() {
        for idx in 0..27 {
            let t = tuple_of_index(idx, 3, 3);
            assert_eq!(index_of_tuple(&t, 3), idx);
        }
    }

    #[test]
    fn r0_no_info_closed_form() {
        for (d1, d2, p) in [(0, 0, 0.5), (1, 1, 0.5), (2, 1, 0.3)] {
            let m = no_info(0.1, p, d1, d2);
            let table = r0_table(&m).unwrap();
            let expect = p * (p.powi(-(d1 as i32 + 1)) - p.powi(d2 as i32));
            for &v in &table.values {
                assert_relative_eq!(v, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn r0_d1_zero_single_term() {
        // d1 = 0: r0(x) = p [1 - p^d2 + q/p] for every state.
        let m = no_info(0.0, 0.5, 0, 2);
        let table = r0_table(&m).unwrap();
        let (p, q) = (0.5, 0.5);
        let expect: f64 = p * (1.0 - p * p + q / p);
        for &v in &table.values {
            assert_relative_eq!(v, expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn r0_equals_direct_expectation_of_payoff() {
        // r0(trailing tuple of w) agrees with the one-step expectation of
        // the payoff product g * (1 - pi), computed from G and the posterior
        // step: an independent route through different modules. The raw
        // product is the payoff of the operator algebra; the clamped form
        // coincides with it on consistent (window, posterior) pairs.
        let m = informative(1, 1);
        let s = m.n_states();
        let table = r0_table(&m).unwrap();
        for idx in 0..table.values.len() {
            let tuple = tuple_of_index(idx, s, m.window.d1 + 1);
            for alpha in [0.0, 0.4, 0.9] {
                let st = PosteriorState {
                    pi_n: alpha,
                    n: 10,
                    clamp_events: 0,
                };
                let last = *tuple.last().unwrap();
                let mut direct = 0.0;
                for y in 0..s {
                    let pair = [last, StateId(y)];
                    let g = g_kernel(&m, &pair, alpha).unwrap();
                    if g == 0.0 {
                        continue;
                    }
                    let next = posterior_step(&m, &st, last, StateId(y)).unwrap();
                    let mut w = tuple.clone();
                    w.push(StateId(y));
                    let stat = detection_statistic_g(&m, &w).unwrap();
                    direct += g * stat * (1.0 - next.pi_n);
                }
                assert_relative_eq!(
                    direct,
                    (1.0 - alpha) * table.values[idx],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn iterate_no_info_fixed_point_at_r0() {
        let m = no_info(0.0, 0.5, 1, 1);
        let r0 = r0_table(&m).unwrap();
        let r1 = iterate_threshold(&m, &r0).unwrap();
        for (&a, &b) in r1.values.iter().zip(&r0.values) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn iterate_continuation_dominates_when_prev_large() {
        let m = informative(1, 1);
        let r0 = r0_table(&m).unwrap();
        let mut big = r0.clone();
        for v in &mut big.values {
            *v = 100.0;
        }
        let next = iterate_threshold(&m, &big).unwrap();
        // Statistic values are all below 100, so every max resolves to the
        // continuation entry: r = p * sum f0 * 100 = p * 100.
        for &v in &next.values {
            assert_relative_eq!(v, m.prior.p * 100.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn solve_no_info_converges_immediately() {
        let m = no_info(0.0, 0.5, 1, 1);
        let (table, diag) = solve_threshold(&m, 1e-10, 100).unwrap();
        assert!(table.converged);
        assert_eq!(diag.iterations, 1);
        let expect = 0.5 * (0.5f64.powi(-2) - 0.5);
        for &v in &table.values {
            assert_relative_eq!(v, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_zero_max_iterations_returns_r0_unconverged() {
        let m = informative(1, 1);
        let (table, diag) = solve_threshold(&m, 1e-10, 0).unwrap();
        assert!(!table.converged);
        assert_eq!(diag.iterations, 0);
        let r0 = r0_table(&m).unwrap();
        assert_eq!(table.values, r0.values);
    }

    #[test]
    fn solve_monotone_and_geometric_tail() {
        let m = informative(1, 1);
        let (table, diag) = solve_threshold(&m, 1e-12, 10_000).unwrap();
        assert!(table.converged);
        for &min_d in &diag.min_delta_history {
            assert!(min_d >= -MONOTONE_SLACK);
        }
        // After the max pattern stabilizes the contraction rate is at most p.
        let tail: Vec<f64> = diag
            .sup_delta_history
            .iter()
            .rev()
            .take(5)
            .copied()
            .collect();
        for pair in tail.windows(2) {
            let (later, earlier) = (pair[0], pair[1]);
            if earlier > 0.0 && later > 0.0 {
                assert!(
                    later / earlier <= m.prior.p + 0.05,
                    "ratio {} too large",
                    later / earlier
                );
            }
        }
    }

    #[test]
    fn solve_fixed_point_residual() {
        let m = informative(1, 2);
        let tol = 1e-10;
        let (table, _) = solve_threshold(&m, tol, 10_000).unwrap();
        assert!(table.converged);
        let next = iterate_threshold(&m, &table).unwrap();
        let residual = next
            .values
            .iter()
            .zip(&table.values)
            .map(|(&a, &b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0f64, f64::max);
        assert!(residual < 2.0 * tol, "residual {residual}");
    }

    #[test]
    fn no_info_collapse_is_exact_equality() {
        let m = no_info(0.2, 0.9, 1, 1);
        let (table, _) = solve_threshold(&m, 1e-10, 1000).unwrap();
        let first = table.values[0];
        assert!(table.values.iter().all(|&v| v == first));
    }

    #[test]
    fn problem_value_no_info_closed_forms() {
        for (d1, d2) in [(0usize, 0usize), (1, 1), (2, 0), (0, 2)] {
            for p in [0.3, 0.5, 0.9] {
                for pi in [0.0, 0.2] {
                    let m = no_info(pi, p, d1, d2);
                    let (table, _) = solve_threshold(&m, 1e-12, 1000).unwrap();
                    let value = problem_value(&m, &table).unwrap();
                    let expect = (1.0 - pi) * (1.0 - p.powi((d1 + d2) as i32 + 1));
                    assert!(
                        (value - expect).abs() < 1e-12,
                        "value {value} vs {expect} for d1={d1} d2={d2} p={p} pi={pi}"
                    );
                }
            }
        }
    }

    #[test]
    fn problem_value_requires_convergence() {
        let m = informative(1, 1);
        let (table, _) = solve_threshold(&m, 1e-10, 0).unwrap();
        assert!(problem_value(&m, &table).is_err());
    }

    #[test]
    fn solver_refuses_budget_overflow() {
        let m = informative(1, 1);
        match solve_threshold_budgeted(&m, 1e-10, 10, 0) {
            Err(Error::BudgetExceeded { required_mb, .. }) => assert!(required_mb >= 1),
            other => panic!("expected budget refusal, got {other:?}"),
        }
    }

    #[test]
    fn table_json_round_trip() {
        let m = informative(1, 1);
        let (table, _) = solve_threshold(&m, 1e-10, 1000).unwrap();
        let back = ThresholdTable::from_json(&table.to_json()).unwrap();
        assert_eq!(table, back);
        assert!(back.check_model(&m).is_ok());
    }

    #[test]
    fn table_mismatch_detected() {
        let m = informative(1, 1);
        let other = informative(1, 2);
        let (table, _) = solve_threshold(&m, 1e-10, 1000).unwrap();
        assert!(table.check_model(&other).is_err());
        let different_d1 = model_2(
            0.0,
            0.5,
            2,
            1,
            [[0.75, 0.25], [0.5, 0.5]],
            [[0.25, 0.75], [0.25, 0.75]],
        );
        match table.check_model(&different_d1) {
            Err(Error::TableMismatch(msg)) => assert!(msg.contains("d1"), "{msg}"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn sentinel_entries_for_pre_change_impossible_tuples() {
        // f0 forbids 0 -> 1, so any tuple containing that transition holds
        // the saturating sentinel.
        let m = model_2(
            0.0,
            0.5,
            1,
            1,
            [[1.0, 0.0], [0.5, 0.5]],
            [[0.5, 0.5], [0.5, 0.5]],
        );
        let table = r0_table(&m).unwrap();
        let idx_01 = index_of_tuple(&[StateId(0), StateId(1)], 2);
        assert!(table.values[idx_01].is_infinite());
        let idx_00 = index_of_tuple(&[StateId(0), StateId(0)], 2);
        assert!(table.values[idx_00].is_finite());
        // Iteration keeps the split and never produces NaN.
        let next = iterate_threshold(&m, &table).unwrap();
        assert!(next.values.iter().all(|v| !v.is_nan()));
        assert!(next.values[idx_01].is_infinite());
        assert!(next.values[idx_00].is_finite());
    }

    #[test]
    fn solved_table_is_self_consistently_bounded() {
        // Each entry is a pre-change average of max(statistic, successor
        // entry), so it cannot exceed p times the best successor, and the
        // whole table sits below the largest finite statistic value.
        for m in [
            informative(1, 1),
            informative(2, 0),
            no_info(0.2, 0.9, 1, 1),
        ] {
            let (table, _) = solve_threshold(&m, 1e-11, 100_000).unwrap();
            let cache = statistic_cache(&m).unwrap();
            let s = m.n_states();
            let tail_mod = table.values.len() / s;
            let mut max_g = 0.0f64;
            for &g in cache.iter().filter(|g| g.is_finite()) {
                max_g = max_g.max(g);
            }
            for (idx, &r) in table.values.iter().enumerate() {
                if !r.is_finite() {
                    continue;
                }
                let mut best = 0.0f64;
                for y in 0..s {
                    let g = cache[idx * s + y];
                    let succ = table.values[(idx % tail_mod) * s + y];
                    best = best.max(g.max(succ));
                }
                assert!(r <= m.prior.p * best + 1e-12, "entry {idx}: {r} vs {best}");
                assert!(r <= max_g + 1e-12);
            }
        }
    }

    #[test]
    fn solve_thread_count_does_not_change_bits() {
        let m = informative(1, 1);
        let run = |threads: usize| -> Vec<u64> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let (table, _) = pool
                .install(|| solve_threshold(&m, 1e-12, 10_000))
                .unwrap();
            table.values.iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(run(1), run(4));
    }
}
