//! Brute-force ground truth at desk scale.
//!
//! Everything here is computed by direct enumeration of change times and
//! paths with plain products of kernel entries (no log-space, no shared
//! code with the likelihood or posterior modules), so it can arbitrate the
//! index conventions those modules implement. Change times beyond the
//! enumeration horizon share a common path law, so their contribution to
//! any interval probability is split off analytically from the geometric
//! tail, keeping every answer exact.

use std::collections::HashMap;

use crate::budget::{bytes_to_mb, memory_budget_mb};
use crate::error::{Error, Result};
use crate::model::{require_valid, DisorderModel, PriorParams, StateId};

// ---------------------------------------------------------------------------
// Theta predicates
// ---------------------------------------------------------------------------

/// Inclusive interval of change times; `None` bounds are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaRange {
    pub min: Option<u64>,
    pub max: Option<u64>,
}

impl ThetaRange {
    pub fn all() -> Self {
        Self {
            min: None,
            max: None,
        }
    }

    /// `theta <= bound`.
    pub fn at_most(bound: i64) -> Self {
        if bound < 0 {
            // Empty: min > max.
            Self {
                min: Some(1),
                max: Some(0),
            }
        } else {
            Self {
                min: None,
                max: Some(bound as u64),
            }
        }
    }

    /// The precision window around a stop at `n`: `n - d1 <= theta <= n + d2`.
    pub fn precision_window(n: u64, d1: usize, d2: usize) -> Self {
        Self {
            min: Some(n.saturating_sub(d1 as u64)),
            max: Some(n + d2 as u64),
        }
    }

    fn contains(&self, j: u64) -> bool {
        self.min.is_none_or(|lo| j >= lo) && self.max.is_none_or(|hi| j <= hi)
    }

    /// Fraction of the prior tail mass `P(theta > cut)` that falls inside
    /// the range; exact geometric arithmetic.
    fn tail_fraction(&self, prior: &PriorParams, cut: u64) -> f64 {
        let tail = prior.tail(cut as i64);
        if tail <= 0.0 {
            return 0.0;
        }
        let lo = self.min.unwrap_or(0).max(cut + 1) as i64;
        let inside = match self.max {
            Some(hi) => prior.interval_mass(lo, hi as i64),
            None => prior.tail(lo - 1),
        };
        (inside / tail).clamp(0.0, 1.0)
    }
}

// ---------------------------------------------------------------------------
// Joint enumeration
// ---------------------------------------------------------------------------

/// Exact joint distribution of `(theta, X_0..X_N)`.
///
/// Change-time cells are `theta = 0 ..= N+1` plus one aggregate cell for
/// `theta > N+1`; all cells in the aggregate share the all-pre-change path
/// law, so interval probabilities that reach past `N+1` are recovered
/// exactly from the geometric tail.
#[derive(Debug, Clone)]
pub struct JointTable {
    pub horizon: usize,
    n_states: usize,
    x0: StateId,
    prior: PriorParams,
    d1: usize,
    d2: usize,
    /// `cells[suffix * (N + 3) + j]` = `P(theta cell j, path)`, where the
    /// suffix index encodes `X_1..X_N` most significant first and cell
    /// `N + 2` is the aggregate.
    cells: Vec<f64>,
}

impl JointTable {
    fn stride(&self) -> usize {
        self.horizon + 3
    }

    /// Total mass of one full path over all change-time cells.
    fn path_mass(&self, suffix: usize) -> f64 {
        let st = self.stride();
        self.cells[suffix * st..(suffix + 1) * st].iter().sum()
    }

    /// Decodes the full path (including `X_0  = x0`) of a suffix index.
    fn path_of(&self, mut suffix: usize) -> Vec<StateId> {
        let mut path = vec![StateId(0); self.horizon + 1];
        path[0] = self.x0;
        for slot in path[1..].iter_mut().rev() {
            *slot = StateId(suffix % self.n_states);
            suffix /= self.n_states;
        }
        path
    }

    /// Range of suffix indices extending the given prefix.
    fn suffix_range(&self, prefix: &[StateId]) -> Result<std::ops::Range<usize>> {
        if prefix.first() != Some(&self.x0) {
            return Err(Error::Contract(
                "prefix must start with the initial state".into(),
            ));
        }
        let n = prefix.len() - 1;
        if n > self.horizon {
            return Err(Error::Contract(format!(
                "prefix of length {} exceeds horizon {}",
                prefix.len(),
                self.horizon
            )));
        }
        let mut base = 0usize;
        for id in &prefix[1..] {
            if id.0 >= self.n_states {
                return Err(Error::Contract(format!(
                    "state index {} outside state set",
                    id.0
                )));
            }
            base = base * self.n_states + id.0;
        }
        let block = self.n_states.pow((self.horizon - n) as u32);
        Ok(base * block..(base + 1) * block)
    }

    /// `P(theta in range, prefix observed)`, marginalized over extensions,
    /// with the aggregate cell split analytically.
    pub fn joint_mass(&self, prefix: &[StateId], range: ThetaRange) -> Result<f64> {
        let suffixes = self.suffix_range(prefix)?;
        let st = self.stride();
        let cut = self.horizon as u64 + 1;
        let mut total = 0.0;
        for suffix in suffixes {
            let cells = &self.cells[suffix * st..(suffix + 1) * st];
            for (j, &mass) in cells.iter().enumerate().take(st - 1) {
                if range.contains(j as u64) {
                    total += mass;
                }
            }
            let aggregate = cells[st - 1];
            if aggregate > 0.0 {
                total += aggregate * range.tail_fraction(&self.prior, cut);
            }
        }
        Ok(total)
    }

    /// Marginal probability of a prefix.
    pub fn prefix_mass(&self, prefix: &[StateId]) -> Result<f64> {
        self.joint_mass(prefix, ThetaRange::all())
    }
}

/// Enumerates the joint distribution up to the horizon.
pub fn enumerate_joint(model: &DisorderModel, horizon: usize) -> Result<JointTable> {
    enumerate_joint_budgeted(model, horizon, memory_budget_mb())
}

/// [`enumerate_joint`] with an explicit memory budget in megabytes.
pub fn enumerate_joint_budgeted(
    model: &DisorderModel,
    horizon: usize,
    budget_mb: u64,
) -> Result<JointTable> {
    require_valid(model)?;
    let s = model.n_states();
    let n_paths = (s as u128).pow(horizon as u32);
    let bytes = n_paths * (horizon as u128 + 3) * 8;
    let required_mb = bytes_to_mb(bytes);
    if required_mb > budget_mb {
        return Err(Error::BudgetExceeded {
            required_mb,
            budget_mb,
        });
    }
    let stride = horizon + 3;
    let mut cells = vec![0.0; (n_paths as usize) * stride];
    let mut path = vec![model.x0; horizon + 1];
    for suffix in 0..n_paths as usize {
        let mut rest = suffix;
        for slot in path[1..].iter_mut().rev() {
            *slot = StateId(rest % s);
            rest /= s;
        }
        let out = &mut cells[suffix * stride..(suffix + 1) * stride];
        // Exact theta = j cells.
        for j in 0..=horizon as u64 + 1 {
            let mut prob = model.prior.pmf(j);
            for r in 1..=horizon as u64 {
                let kernel = model.kernel(DisorderModel::regime_at(j, r));
                prob *= kernel.prob(path[r as usize - 1], path[r as usize]);
            }
            out[j as usize] = prob;
        }
        // Aggregate theta > N+1: every transition pre-change.
        let mut pre = model.prior.tail(horizon as i64 + 1);
        for r in 1..=horizon {
            pre *= model.kernel0.prob(path[r - 1], path[r]);
        }
        out[stride - 1] = pre;
    }
    Ok(JointTable {
        horizon,
        n_states: s,
        x0: model.x0,
        prior: model.prior,
        d1: model.window.d1,
        d2: model.window.d2,
        cells,
    })
}

/// Bayes by table lookup: `P(theta in range | prefix)`.
pub fn oracle_conditional(
    joint: &JointTable,
    prefix: &[StateId],
    range: ThetaRange,
) -> Result<f64> {
    let mass = joint.prefix_mass(prefix)?;
    if mass <= 0.0 {
        return Err(Error::ImpossiblePath(
            "prefix has zero probability in the joint table".into(),
        ));
    }
    Ok(joint.joint_mass(prefix, range)? / mass)
}

// ---------------------------------------------------------------------------
// Exact value of arbitrary rules
// ---------------------------------------------------------------------------

/// Exact success probability `P(-d1 <= theta - tau <= d2)` of a stopping
/// rule given as a decision function over prefixes. A rule that never stops
/// on a path contributes nothing (undecided counts as failure).
pub fn oracle_rule_value<F>(joint: &JointTable, rule: F) -> f64
where
    F: Fn(&[StateId]) -> bool,
{
    let st = joint.stride();
    let cut = joint.horizon as u64 + 1;
    let n_paths = joint.cells.len() / st;
    let mut total = 0.0;
    for suffix in 0..n_paths {
        if joint.path_mass(suffix) <= 0.0 {
            continue;
        }
        let path = joint.path_of(suffix);
        let mut tau = None;
        for n in 0..=joint.horizon {
            if rule(&path[..=n]) {
                tau = Some(n as u64);
                break;
            }
        }
        let Some(tau) = tau else { continue };
        let range = ThetaRange::precision_window(tau, joint.d1, joint.d2);
        let cells = &joint.cells[suffix * st..(suffix + 1) * st];
        for (j, &mass) in cells.iter().enumerate().take(st - 1) {
            if range.contains(j as u64) {
                total += mass;
            }
        }
        let aggregate = cells[st - 1];
        if aggregate > 0.0 {
            total += aggregate * range.tail_fraction(&joint.prior, cut);
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Truncated-horizon backward induction
// ---------------------------------------------------------------------------

/// Envelope around the untruncated optimal value obtained from a horizon-`N`
/// relaxation: the best rule forced to stop by `N` from below, plus the
/// prior mass that could still pay off after `N` from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedValue {
    pub horizon: usize,
    pub value_lower: f64,
    pub value_upper: f64,
}

/// The optimal truncated rule: stop decisions for every positive-mass
/// prefix shorter than the horizon (stopping at the horizon is forced).
#[derive(Debug, Clone)]
pub struct TruncatedPolicy {
    horizon: usize,
    decisions: HashMap<Vec<StateId>, bool>,
}

impl TruncatedPolicy {
    /// Decision for a prefix (`X_0..X_n`); the horizon forces a stop.
    pub fn should_stop(&self, prefix: &[StateId]) -> bool {
        if prefix.len() > self.horizon {
            return true;
        }
        *self.decisions.get(prefix).unwrap_or(&true)
    }
}

struct InductionCtx<'a> {
    model: &'a DisorderModel,
    horizon: usize,
    decisions: HashMap<Vec<StateId>, bool>,
}

/// Unnormalized node value: `P(prefix) * V(prefix)` via backward induction.
/// `theta_cells[j] = P(theta = j, prefix)` for `j <= n`, `pure0` is the
/// pre-change product of the prefix without prior weight.
fn node_value(
    ctx: &mut InductionCtx<'_>,
    prefix: &mut Vec<StateId>,
    theta_cells: &[f64],
    pure0: f64,
) -> f64 {
    let n = prefix.len() - 1;
    let prior = &ctx.model.prior;
    let (d1, d2) = (ctx.model.window.d1, ctx.model.window.d2);
    let lo = n.saturating_sub(d1) as u64;
    let hi = (n + d2) as u64;
    let mut stop_mass = 0.0;
    for (j, &mass) in theta_cells.iter().enumerate() {
        if (j as u64) >= lo && (j as u64) <= hi {
            stop_mass += mass;
        }
    }
    // Change times beyond n share the pure pre-change law.
    stop_mass += prior.interval_mass(n as i64 + 1, hi as i64) * pure0;
    if n == ctx.horizon {
        return stop_mass;
    }
    let s = ctx.model.n_states();
    let mut continuation = 0.0;
    let mut child_cells = vec![0.0; n + 2];
    for y in 0..s {
        let x_n = *prefix.last().unwrap();
        let f0 = ctx.model.kernel0.prob(x_n, StateId(y));
        let f1 = ctx.model.kernel1.prob(x_n, StateId(y));
        for (j, &mass) in theta_cells.iter().enumerate() {
            // Transition into n+1 is post-change for every theta <= n.
            child_cells[j] = mass * f1;
        }
        child_cells[n + 1] = prior.pmf(n as u64 + 1) * pure0 * f1;
        let child_pure0 = pure0 * f0;
        let child_mass: f64 = child_cells.iter().sum::<f64>()
            + prior.tail(n as i64 + 1) * child_pure0;
        if child_mass <= 0.0 {
            continue;
        }
        prefix.push(StateId(y));
        continuation += node_value(ctx, prefix, &child_cells.clone(), child_pure0);
        prefix.pop();
    }
    let stop = stop_mass >= continuation;
    ctx.decisions.insert(prefix.clone(), stop);
    stop_mass.max(continuation)
}

/// Finite-horizon backward induction over the full prefix tree.
pub fn oracle_optimal_value(
    model: &DisorderModel,
    horizon: usize,
) -> Result<(TruncatedValue, TruncatedPolicy)> {
    oracle_optimal_value_budgeted(model, horizon, memory_budget_mb())
}

/// [`oracle_optimal_value`] with an explicit memory budget in megabytes.
pub fn oracle_optimal_value_budgeted(
    model: &DisorderModel,
    horizon: usize,
    budget_mb: u64,
) -> Result<(TruncatedValue, TruncatedPolicy)> {
    require_valid(model)?;
    let s = model.n_states() as u128;
    let bytes = s.pow(horizon as u32 + 1) * (horizon as u128 + 2) * 8;
    let required_mb = bytes_to_mb(bytes);
    if required_mb > budget_mb {
        return Err(Error::BudgetExceeded {
            required_mb,
            budget_mb,
        });
    }
    let mut ctx = InductionCtx {
        model,
        horizon,
        decisions: HashMap::new(),
    };
    let mut prefix = vec![model.x0];
    let root_cells = vec![model.prior.pmf(0)];
    let value_lower = node_value(&mut ctx, &mut prefix, &root_cells, 1.0);
    // A rule stopping after the horizon can only succeed when theta lands
    // beyond N - max(d1, d2); that prior tail bounds what the truncation
    // can miss.
    let d = model.window.d1.max(model.window.d2) as i64;
    let residual = model.prior.tail(horizon as i64 - d);
    let value_upper = (value_lower + residual).min(1.0);
    Ok((
        TruncatedValue {
            horizon,
            value_lower,
            value_upper,
        },
        TruncatedPolicy {
            horizon,
            decisions: ctx.decisions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{prior_pmf, MarkovKernel, PrecisionWindow, PriorParams};
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

    fn ids(path: &[usize]) -> Vec<StateId> {
        path.iter().map(|&i| StateId(i)).collect()
    }

    #[test]
    fn total_mass_is_one() {
        for model in [&informative(1, 1), &no_info(0.2, 0.9, 1, 1)] {
            for horizon in [0usize, 1, 4] {
                let joint = enumerate_joint(model, horizon).unwrap();
                let total: f64 = joint.cells.iter().sum();
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "mass {total} at horizon {horizon}"
                );
            }
        }
    }

    #[test]
    fn theta_marginal_matches_prior() {
        let m = informative(1, 1);
        let joint = enumerate_joint(&m, 3).unwrap();
        let st = joint.stride();
        for j in 0..=4u64 {
            let mut marginal = 0.0;
            for suffix in 0..joint.cells.len() / st {
                marginal += joint.cells[suffix * st + j as usize];
            }
            assert!(
                (marginal - prior_pmf(&m.prior, j)).abs() < 1e-14,
                "theta = {j}"
            );
        }
    }

    #[test]
    fn no_info_marginal_path_law_is_kernel0_chain() {
        let m = no_info(0.3, 0.6, 1, 1);
        let joint = enumerate_joint(&m, 3).unwrap();
        for suffix in 0..joint.cells.len() / joint.stride() {
            let path = joint.path_of(suffix);
            let mut chain = 1.0;
            for r in 1..path.len() {
                chain *= m.kernel0.prob(path[r - 1], path[r]);
            }
            assert!((joint.path_mass(suffix) - chain).abs() < 1e-13);
        }
    }

    #[test]
    fn conditional_always_true_is_one() {
        let m = informative(1, 1);
        let joint = enumerate_joint(&m, 4).unwrap();
        let c = oracle_conditional(&joint, &ids(&[0, 1, 0]), ThetaRange::all()).unwrap();
        assert_relative_eq!(c, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn conditional_zero_mass_prefix_errors() {
        // kernel0 and kernel1 both forbid 0 -> 1 so that prefix is dead.
        let m = model_2(
            0.0,
            0.5,
            1,
            1,
            [[1.0, 0.0], [0.5, 0.5]],
            [[1.0, 0.0], [0.5, 0.5]],
        );
        let joint = enumerate_joint(&m, 3).unwrap();
        assert!(matches!(
            oracle_conditional(&joint, &ids(&[0, 1]), ThetaRange::all()),
            Err(Error::ImpossiblePath(_))
        ));
    }

    #[test]
    fn tail_split_matches_longer_enumeration() {
        // P(theta <= n+k | prefix) computed with a short table and the
        // analytic tail must agree with a longer table where the cells are
        // explicit.
        let m = informative(1, 1);
        let short = enumerate_joint(&m, 3).unwrap();
        let long = enumerate_joint(&m, 7).unwrap();
        let prefix = ids(&[0, 1, 0, 1]);
        for k in 0..=6i64 {
            let range = ThetaRange::at_most(3 + k);
            let a = oracle_conditional(&short, &prefix, range).unwrap();
            let b = oracle_conditional(&long, &prefix, range).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn fixed_rule_value_closed_form_no_info() {
        // tau = d1+1 on an uninformative model with pi = 0 scores
        // 1 - p^(d1+d2+1) exactly.
        for (d1, d2, p) in [(0usize, 0usize, 0.5), (1, 1, 0.5), (1, 2, 0.3)] {
            let m = no_info(0.0, p, d1, d2);
            let joint = enumerate_joint(&m, d1 + 3).unwrap();
            let t = d1 + 1;
            let value = oracle_rule_value(&joint, |prefix| prefix.len() == t + 1);
            let expect = 1.0 - p.powi((d1 + d2) as i32 + 1);
            assert!(
                (value - expect).abs() < 1e-14,
                "value {value} vs {expect} for d1={d1} d2={d2} p={p}"
            );
        }
    }

    #[test]
    fn clamped_rule_dominates_early_rule_without_atom() {
        // The clamp dominance needs P(theta >= 1) = 1, i.e. pi = 0.
        for model in [&informative(2, 1), &no_info(0.0, 0.7, 2, 1)] {
            let joint = enumerate_joint(model, 5).unwrap();
            let clamp = model.window.d1 + 1;
            for t in 0..clamp {
                let early = oracle_rule_value(&joint, |prefix| prefix.len() == t + 1);
                let clamped = oracle_rule_value(&joint, |prefix| prefix.len() == clamp + 1);
                assert!(
                    clamped >= early - 1e-14,
                    "t={t}: clamped {clamped} < early {early}"
                );
            }
        }
    }

    #[test]
    fn atom_at_zero_breaks_clamp_dominance_by_exact_gap() {
        // With pi > 0 an early fixed stop catches the atom that the clamped
        // rule misses; the gap is pure prior arithmetic. Every t < d1+1 has
        // window floor at 0, so value(t) = pi + (1-pi)(1 - p^(t+d2)).
        let m = no_info(0.2, 0.7, 2, 1);
        let (pi, p) = (m.prior.pi, m.prior.p);
        let (d1, d2) = (m.window.d1, m.window.d2);
        let joint = enumerate_joint(&m, 5).unwrap();
        let clamp = d1 + 1;
        let clamped = oracle_rule_value(&joint, |prefix| prefix.len() == clamp + 1);
        for t in 0..clamp {
            let early = oracle_rule_value(&joint, |prefix| prefix.len() == t + 1);
            let expected_gap =
                pi - (1.0 - pi) * (p.powi((t + d2) as i32) - p.powi((d1 + d2 + 1) as i32));
            assert!(
                ((early - clamped) - expected_gap).abs() < 1e-13,
                "t={t}: gap {} vs {expected_gap}",
                early - clamped
            );
        }
    }

    #[test]
    fn undecided_rule_scores_zero() {
        let m = informative(1, 1);
        let joint = enumerate_joint(&m, 4).unwrap();
        let value = oracle_rule_value(&joint, |_| false);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn optimal_value_no_info_is_fixed_rule() {
        let m = no_info(0.0, 0.5, 1, 1);
        let (tv, policy) = oracle_optimal_value(&m, 5).unwrap();
        let expect = 1.0 - 0.5f64.powi(3);
        assert!((tv.value_lower - expect).abs() < 1e-13, "{tv:?}");
        assert!(tv.value_upper >= tv.value_lower);
        // The optimal truncated rule stops at d1+1 = 2 everywhere.
        assert!(!policy.should_stop(&ids(&[0, 1])));
        assert!(policy.should_stop(&ids(&[0, 1, 0])));
        assert!(policy.should_stop(&ids(&[0, 0, 1])));
    }

    #[test]
    fn envelope_shrinks_with_horizon() {
        let m = informative(1, 1);
        let mut prev_lower = 0.0;
        let mut prev_width = f64::INFINITY;
        for n in 3..=7 {
            let (tv, _) = oracle_optimal_value(&m, n).unwrap();
            assert!(tv.value_lower >= prev_lower - 1e-13);
            let width = tv.value_upper - tv.value_lower;
            assert!(width <= prev_width + 1e-13);
            assert!(tv.value_lower >= 0.0 && tv.value_upper <= 1.0 + 1e-12);
            prev_lower = tv.value_lower;
            prev_width = width;
        }
    }

    #[test]
    fn optimal_policy_value_matches_value_lower() {
        // Replaying the extracted policy through the exact rule evaluator
        // must reproduce the backward-induction value.
        let m = informative(1, 1);
        let horizon = 5;
        let (tv, policy) = oracle_optimal_value(&m, horizon).unwrap();
        let joint = enumerate_joint(&m, horizon).unwrap();
        let value = oracle_rule_value(&joint, |prefix| policy.should_stop(prefix));
        assert_relative_eq!(value, tv.value_lower, epsilon = 1e-12);
    }

    #[test]
    fn budget_refusal_names_requirement() {
        let m = informative(1, 1);
        match enumerate_joint_budgeted(&m, 6, 0) {
            Err(Error::BudgetExceeded { required_mb, .. }) => assert!(required_mb >= 1),
            other => panic!("expected refusal, got {other:?}"),
        }
        assert!(matches!(
            oracle_optimal_value_budgeted(&m, 6, 0),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
