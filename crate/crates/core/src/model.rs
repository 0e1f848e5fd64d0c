//! Disorder model: geometric change-time prior, a pre-change and a
//! post-change Markov kernel over a common finite state space, and the
//! precision window for the detection objective.
//!
//! The observed chain follows the pre-change kernel up to the random change
//! time and the post-change kernel from it onward; the post-change segment
//! restarts from the last pre-change state. The reference measure is the
//! counting measure, so transition "densities" are ordinary transition
//! probabilities.

use std::fmt;
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-sum and pmf tolerance used by validation.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Index of a state in the model's ordered state set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which transition law is in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Before the change time.
    Pre,
    /// At or after the change time.
    Post,
}

// ---------------------------------------------------------------------------
// Prior
// ---------------------------------------------------------------------------

/// Geometric prior for the change time with an atom at zero:
/// `P(theta = 0) = pi`, `P(theta = j) = (1-pi) p^(j-1) q` for `j >= 1`,
/// with `q = 1 - p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    /// Mass of the atom at zero; in `[0, 1)`.
    pub pi: f64,
    /// Geometric continuation probability; in `(0, 1)`.
    pub p: f64,
}

impl PriorParams {
    pub fn new(pi: f64, p: f64) -> Self {
        Self { pi, p }
    }

    /// `q = 1 - p`, always derived so the identity is exact.
    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    /// `P(theta = j)`.
    pub fn pmf(&self, j: u64) -> f64 {
        if j == 0 {
            self.pi
        } else {
            (1.0 - self.pi) * pow_u(self.p, j - 1) * self.q()
        }
    }

    /// `P(theta > j)`; `j < 0` gives 1.
    pub fn tail(&self, j: i64) -> f64 {
        if j < 0 {
            1.0
        } else {
            (1.0 - self.pi) * pow_u(self.p, j as u64)
        }
    }

    /// `P(a <= theta <= b)` for `a <= b` (inclusive, saturating at 0).
    pub fn interval_mass(&self, a: i64, b: i64) -> f64 {
        if b < a {
            return 0.0;
        }
        self.tail(a - 1) - self.tail(b)
    }
}

/// Integer power that stays in `powi` range and underflows to zero beyond it.
fn pow_u(base: f64, exp: u64) -> f64 {
    if exp <= i32::MAX as u64 {
        base.powi(exp as i32)
    } else {
        0.0
    }
}

/// `P(theta = j)` for the given prior.
pub fn prior_pmf(prior: &PriorParams, j: u64) -> f64 {
    prior.pmf(j)
}

/// Samples a change time from the prior by inverse transform.
pub fn sample_theta<R: Rng + ?Sized>(prior: &PriorParams, rng: &mut R) -> u64 {
    let u: f64 = rng.gen();
    if u < prior.pi {
        return 0;
    }
    // Remaining mass is geometric on {1, 2, ...} with success q.
    let v: f64 = rng.gen();
    if v <= 0.0 {
        return 1;
    }
    1 + (v.ln() / prior.p.ln()).floor() as u64
}

// ---------------------------------------------------------------------------
// Markov kernel
// ---------------------------------------------------------------------------

/// A stochastic matrix over the ordered state set.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovKernel {
    states: Vec<String>,
    /// Row-major `s x s` transition probabilities.
    rows: Vec<f64>,
    /// Cached natural logs of `rows` (`-inf` for zero entries).
    ln_rows: Vec<f64>,
}

impl MarkovKernel {
    pub fn new(states: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = states.len();
        if rows.len() != s || rows.iter().any(|r| r.len() != s) {
            return Err(Error::Parse(format!(
                "kernel matrix must be {s}x{s} to match {s} states"
            )));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let ln = flat.iter().map(|&v| v.ln()).collect();
        Ok(Self {
            states,
            rows: flat,
            ln_rows: ln,
        })
    }

    pub fn size(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    /// Transition probability `f_x(y)`.
    #[inline]
    pub fn prob(&self, x: StateId, y: StateId) -> f64 {
        self.rows[x.0 * self.states.len() + y.0]
    }

    /// `ln f_x(y)`, `-inf` when the entry is zero.
    #[inline]
    pub fn ln_prob(&self, x: StateId, y: StateId) -> f64 {
        self.ln_rows[x.0 * self.states.len() + y.0]
    }

    pub fn row(&self, x: StateId) -> &[f64] {
        let s = self.states.len();
        &self.rows[x.0 * s..(x.0 + 1) * s]
    }

    /// Samples the next state from row `x`.
    pub fn sample_next<R: Rng + ?Sized>(&self, x: StateId, rng: &mut R) -> StateId {
        let u: f64 = rng.gen();
        let row = self.row(x);
        let mut acc = 0.0;
        for (y, &w) in row.iter().enumerate() {
            acc += w;
            if u < acc {
                return StateId(y);
            }
        }
        StateId(row.len() - 1)
    }
}

// ---------------------------------------------------------------------------
// Precision window
// ---------------------------------------------------------------------------

/// Allowed deviation of the stop time from the change time: a stop at `tau`
/// succeeds when `tau - d1 <= theta <= tau + d2` (at most `d1` late, `d2`
/// early).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionWindow {
    pub d1: usize,
    pub d2: usize,
}

impl PrecisionWindow {
    pub fn new(d1: usize, d2: usize) -> Self {
        Self { d1, d2 }
    }
}

// ---------------------------------------------------------------------------
// Disorder model
// ---------------------------------------------------------------------------

/// The full model: prior, both kernels, precision window and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderModel {
    pub prior: PriorParams,
    pub kernel0: MarkovKernel,
    pub kernel1: MarkovKernel,
    pub window: PrecisionWindow,
    pub x0: StateId,
}

impl DisorderModel {
    pub fn new(
        prior: PriorParams,
        kernel0: MarkovKernel,
        kernel1: MarkovKernel,
        window: PrecisionWindow,
        x0: StateId,
    ) -> Self {
        Self {
            prior,
            kernel0,
            kernel1,
            window,
            x0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.kernel0.size()
    }

    pub fn states(&self) -> &[String] {
        self.kernel0.states()
    }

    pub fn kernel(&self, regime: Regime) -> &MarkovKernel {
        match regime {
            Regime::Pre => &self.kernel0,
            Regime::Post => &self.kernel1,
        }
    }

    /// Resolves a state label to its index.
    pub fn state_index(&self, label: &str) -> Result<StateId> {
        self.states()
            .iter()
            .position(|s| s == label)
            .map(StateId)
            .ok_or_else(|| Error::UnknownState {
                label: label.to_string(),
                context: None,
            })
    }

    pub fn label(&self, id: StateId) -> &str {
        &self.states()[id.0]
    }

    /// Whether every post-change transition is also possible pre-change
    /// (`f1(x,y) > 0` implies `f0(x,y) > 0`). The threshold recursion is
    /// monotone exactly on this model class; outside it the posterior can
    /// jump to 1 on mass the pre-change expectation never sees.
    pub fn post_change_dominated(&self) -> bool {
        let s = self.n_states();
        (0..s).all(|x| {
            (0..s).all(|y| {
                self.kernel1.prob(StateId(x), StateId(y)) == 0.0
                    || self.kernel0.prob(StateId(x), StateId(y)) > 0.0
            })
        })
    }

    /// The regime governing the transition into time `n >= 1` when the
    /// change happens at `theta`. `theta = 0` and `theta = 1` coincide:
    /// both put every transition under the post-change law.
    pub fn regime_at(theta: u64, n: u64) -> Regime {
        if theta == 0 || n >= theta {
            Regime::Post
        } else {
            Regime::Pre
        }
    }

    /// Stable content hash of the model (prior, kernels, window, x0).
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"disorder-model-v1");
        h.update(self.prior.pi.to_bits().to_le_bytes());
        h.update(self.prior.p.to_bits().to_le_bytes());
        h.update((self.window.d1 as u64).to_le_bytes());
        h.update((self.window.d2 as u64).to_le_bytes());
        h.update((self.n_states() as u64).to_le_bytes());
        for s in self.states() {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        for k in [&self.kernel0, &self.kernel1] {
            for &v in &k.rows {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update((self.x0.0 as u64).to_le_bytes());
        format!("{:x}", h.finalize())
    }

    /// Parses the model from its JSON document form.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        file.into_model()
    }

    pub fn from_file(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            pi: self.prior.pi,
            p: self.prior.p,
            d1: self.window.d1,
            d2: self.window.d2,
            states: self.states().to_vec(),
            p0: self
                .states()
                .iter()
                .enumerate()
                .map(|(i, _)| self.kernel0.row(StateId(i)).to_vec())
                .collect(),
            p1: self
                .states()
                .iter()
                .enumerate()
                .map(|(i, _)| self.kernel1.row(StateId(i)).to_vec())
                .collect(),
            x0: self.label(self.x0).to_string(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }
}

/// On-disk model document.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    pi: f64,
    p: f64,
    d1: usize,
    d2: usize,
    states: Vec<String>,
    #[serde(rename = "P0")]
    p0: Vec<Vec<f64>>,
    #[serde(rename = "P1")]
    p1: Vec<Vec<f64>>,
    x0: String,
}

impl ModelFile {
    fn into_model(self) -> Result<DisorderModel> {
        let kernel0 = MarkovKernel::new(self.states.clone(), self.p0)?;
        let kernel1 = MarkovKernel::new(self.states.clone(), self.p1)?;
        let x0 = self
            .states
            .iter()
            .position(|s| *s == self.x0)
            .map(StateId)
            .ok_or_else(|| Error::UnknownState {
                label: self.x0.clone(),
                context: Some("x0".to_string()),
            })?;
        Ok(DisorderModel::new(
            PriorParams::new(self.pi, self.p),
            kernel0,
            kernel1,
            PrecisionWindow::new(self.d1, self.d2),
            x0,
        ))
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Checks every type invariant and returns one message per violation.
/// Empty result means the model is valid.
pub fn validate_model(model: &DisorderModel) -> Vec<String> {
    let mut v = Vec::new();
    let pi = model.prior.pi;
    let p = model.prior.p;
    if !(0.0..1.0).contains(&pi) {
        v.push("pi must lie in [0,1)".to_string());
    }
    if !(p > 0.0 && p < 1.0) {
        v.push("p must lie in (0,1)".to_string());
    }
    if model.n_states() < 2 {
        v.push(format!(
            "state set must have size >= 2, got {}",
            model.n_states()
        ));
    }
    for (name, k) in [("kernel0", &model.kernel0), ("kernel1", &model.kernel1)] {
        for i in 0..k.size() {
            let row = k.row(StateId(i));
            if row.iter().any(|&e| e < 0.0 || !e.is_finite()) {
                v.push(format!("{name} row {i} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                v.push(format!("{name} row {i} sums to {sum}"));
            }
        }
    }
    if model.kernel0.states() != model.kernel1.states() {
        v.push("kernel0 and kernel1 must share the same ordered state set".to_string());
    }
    if model.x0.0 >= model.n_states() {
        v.push(format!(
            "x0 index {} outside state set of size {}",
            model.x0.0,
            model.n_states()
        ));
    }
    v
}

/// Validates and wraps violations in an error.
pub fn require_valid(model: &DisorderModel) -> Result<()> {
    let v = validate_model(model);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidModel(v))
    }
}

// ---------------------------------------------------------------------------
// Path sampling
// ---------------------------------------------------------------------------

/// A simulated trajectory together with the change time that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub theta: u64,
    pub observations: Vec<StateId>,
}

/// Samples `X_0 .. X_{n_steps}` for a given change time.
///
/// `X_0 = x0`; the transition into time `n` uses the pre-change kernel while
/// `n < theta` and the post-change kernel from `n >= theta` on (`theta = 0`
/// behaves as `theta = 1`).
pub fn sample_path<R: Rng + ?Sized>(
    model: &DisorderModel,
    theta: u64,
    n_steps: usize,
    rng: &mut R,
) -> Path {
    let mut obs = Vec::with_capacity(n_steps + 1);
    obs.push(model.x0);
    let mut current = model.x0;
    for n in 1..=n_steps as u64 {
        let kernel = model.kernel(DisorderModel::regime_at(theta, n));
        current = kernel.sample_next(current, rng);
        obs.push(current);
    }
    Path {
        theta,
        observations: obs,
    }
}

/// Transition probability under the given regime, by state label.
pub fn transition_density(
    model: &DisorderModel,
    regime: Regime,
    x: &str,
    y: &str,
) -> Result<f64> {
    let xi = model.state_index(x)?;
    let yi = model.state_index(y)?;
    Ok(model.kernel(regime).prob(xi, yi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn two_state(pi: f64, p: f64, rows0: [[f64; 2]; 2], rows1: [[f64; 2]; 2]) -> DisorderModel {
        let states = vec!["0".to_string(), "1".to_string()];
        DisorderModel::new(
            PriorParams::new(pi, p),
            MarkovKernel::new(states.clone(), rows0.iter().map(|r| r.to_vec()).collect()).unwrap(),
            MarkovKernel::new(states, rows1.iter().map(|r| r.to_vec()).collect()).unwrap(),
            PrecisionWindow::new(1, 1),
            StateId(0),
        )
    }

    fn reference() -> DisorderModel {
        two_state(
            0.2,
            0.5,
            [[0.9, 0.1], [0.2, 0.8]],
            [[0.5, 0.5], [0.5, 0.5]],
        )
    }

    #[test]
    fn prior_pmf_matches_definition() {
        let prior = PriorParams::new(0.2, 0.5);
        assert_eq!(prior_pmf(&prior, 0), 0.2);
        let flat = PriorParams::new(0.0, 0.5);
        assert_relative_eq!(prior_pmf(&flat, 2), 0.25, epsilon = 1e-15);
        assert_eq!(prior_pmf(&flat, 0), 0.0);
    }

    #[test]
    fn prior_pmf_mass_sums_to_one() {
        for (pi, p) in [(0.0, 0.5), (0.2, 0.9), (0.7, 0.3)] {
            let prior = PriorParams::new(pi, p);
            let j_max = (1e-12_f64.ln() / p.ln()).ceil() as u64 + 1;
            let sum: f64 = (0..=j_max).map(|j| prior.pmf(j)).sum();
            assert!(
                (sum - 1.0).abs() < 1e-12,
                "pmf mass {sum} for pi={pi} p={p}"
            );
        }
    }

    #[test]
    fn interval_mass_matches_pmf_sums() {
        let prior = PriorParams::new(0.2, 0.7);
        let direct: f64 = (2..=5).map(|j| prior.pmf(j)).sum();
        assert_relative_eq!(prior.interval_mass(2, 5), direct, epsilon = 1e-14);
        assert_relative_eq!(prior.interval_mass(0, 3), prior.pmf(0) + prior.pmf(1) + prior.pmf(2) + prior.pmf(3), epsilon = 1e-14);
        assert_eq!(prior.interval_mass(4, 2), 0.0);
    }

    #[test]
    fn sample_theta_is_deterministic_per_seed() {
        let prior = PriorParams::new(0.3, 0.6);
        let a: Vec<u64> = {
            let mut r = rng::master(11);
            (0..64).map(|_| sample_theta(&prior, &mut r)).collect()
        };
        let b: Vec<u64> = {
            let mut r = rng::master(11);
            (0..64).map(|_| sample_theta(&prior, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn sample_theta_near_degenerate_atom() {
        let prior = PriorParams::new(0.999, 0.5);
        let mut r = rng::master(5);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample_theta(&prior, &mut r) == 0).count();
        let rate = zeros as f64 / n as f64;
        let se = (0.999f64 * 0.001 / n as f64).sqrt();
        assert!((rate - 0.999).abs() < 4.0 * se, "rate {rate}");
    }

    #[test]
    fn sample_theta_geometric_mean() {
        let prior = PriorParams::new(0.0, 0.5);
        let mut r = rng::master(17);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_theta(&prior, &mut r) as f64).sum::<f64>() / n as f64;
        // Mean of geometric on {1,2,...} with success q = 0.5 is 2; var = p/q^2 = 2.
        let se = (2.0f64 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn sample_theta_empirical_pmf() {
        let prior = PriorParams::new(0.2, 0.5);
        let mut r = rng::master(23);
        let n = 1_000_000usize;
        let mut counts = [0u64; 24];
        let last = counts.len() - 1;
        for _ in 0..n {
            let t = sample_theta(&prior, &mut r) as usize;
            counts[t.min(last)] += 1;
        }
        // Per-cell 4-SE binomial check; last cell aggregates the tail.
        for (j, &c) in counts.iter().enumerate() {
            let p_cell = if j + 1 == counts.len() {
                prior.tail(j as i64 - 1)
            } else {
                prior.pmf(j as u64)
            };
            let se = (p_cell * (1.0 - p_cell) / n as f64).sqrt().max(1e-9);
            let emp = c as f64 / n as f64;
            assert!(
                (emp - p_cell).abs() < 4.0 * se,
                "cell {j}: emp {emp} vs {p_cell}"
            );
        }
    }

    #[test]
    fn validate_accepts_reference() {
        assert!(validate_model(&reference()).is_empty());
    }

    #[test]
    fn validate_reports_bad_row_sum() {
        let m = two_state(
            0.2,
            0.5,
            [[0.8, 0.1], [0.2, 0.8]],
            [[0.5, 0.5], [0.5, 0.5]],
        );
        let v = validate_model(&m);
        assert!(
            v.iter().any(|s| s.contains("kernel0 row 0 sums to 0.9")),
            "{v:?}"
        );
    }

    #[test]
    fn validate_reports_pi_out_of_range() {
        let m = two_state(
            1.0,
            0.5,
            [[0.9, 0.1], [0.2, 0.8]],
            [[0.5, 0.5], [0.5, 0.5]],
        );
        let v = validate_model(&m);
        assert!(v.iter().any(|s| s == "pi must lie in [0,1)"), "{v:?}");
    }

    #[test]
    fn transition_density_looks_up_rows() {
        let m = reference();
        assert_eq!(
            transition_density(&m, Regime::Pre, "0", "1").unwrap(),
            0.1
        );
        assert_eq!(
            transition_density(&m, Regime::Post, "1", "0").unwrap(),
            0.5
        );
        assert!(transition_density(&m, Regime::Pre, "z", "0").is_err());
    }

    #[test]
    fn identity_kernel_density() {
        let states = vec!["a".to_string(), "b".to_string()];
        let id = MarkovKernel::new(
            states.clone(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(id.prob(StateId(0), StateId(0)), 1.0);
        assert_eq!(id.prob(StateId(0), StateId(1)), 0.0);
    }

    #[test]
    fn theta_zero_and_one_share_path_law() {
        // Exact enumeration of 3-step path probabilities under the sampler's
        // regime rule.
        let m = reference();
        let prob_of = |theta: u64, path: &[usize]| -> f64 {
            let mut p = 1.0;
            for n in 1..path.len() {
                let k = m.kernel(DisorderModel::regime_at(theta, n as u64));
                p *= k.prob(StateId(path[n - 1]), StateId(path[n]));
            }
            p
        };
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let path = [0, a, b, c];
                    assert_eq!(prob_of(0, &path), prob_of(1, &path));
                }
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn sample_path_regimes_match_kernels() {
        // theta = 3 over 6 steps: transitions into times 1..2 follow kernel0,
        // into times 3..6 follow kernel1.
        let m = two_state(
            0.0,
            0.5,
            [[0.9, 0.1], [0.2, 0.8]],
            [[0.3, 0.7], [0.6, 0.4]],
        );
        let reps = 100_000;
        let mut r = rng::master(37);
        // counts[time-1][from][to]
        let mut counts = [[[0u64; 2]; 2]; 6];
        for _ in 0..reps {
            let path = sample_path(&m, 3, 6, &mut r);
            for n in 1..=6usize {
                counts[n - 1][path.observations[n - 1].0][path.observations[n].0] += 1;
            }
        }
        for n in 1..=6usize {
            let expected = if n < 3 { &m.kernel0 } else { &m.kernel1 };
            for from in 0..2 {
                let total: u64 = counts[n - 1][from].iter().sum();
                if total == 0 {
                    continue;
                }
                for to in 0..2 {
                    let p = expected.prob(StateId(from), StateId(to));
                    let emp = counts[n - 1][from][to] as f64 / total as f64;
                    let se = (p * (1.0 - p) / total as f64).sqrt().max(1e-9);
                    assert!(
                        (emp - p).abs() < 4.0 * se,
                        "time {n} from {from} to {to}: {emp} vs {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn theta_beyond_horizon_is_all_pre_change() {
        let m = reference();
        let mut r = rng::master(3);
        let path = sample_path(&m, 100, 10, &mut r);
        assert_eq!(path.observations.len(), 11);
        assert_eq!(path.observations[0], m.x0);
        // Regime check only; distributional identity is covered above.
        for n in 1..=10u64 {
            assert_eq!(DisorderModel::regime_at(100, n), Regime::Pre);
        }
    }

    #[test]
    fn equal_kernels_make_theta_unidentifiable() {
        let rows = [[0.7, 0.3], [0.4, 0.6]];
        let m = two_state(0.0, 0.5, rows, rows);
        let reps = 60_000;
        let count_transitions = |theta: u64, seed: u64| -> [[u64; 2]; 2] {
            let mut r = rng::master(seed);
            let mut c = [[0u64; 2]; 2];
            for _ in 0..reps {
                let path = sample_path(&m, theta, 5, &mut r);
                for n in 1..path.observations.len() {
                    c[path.observations[n - 1].0][path.observations[n].0] += 1;
                }
            }
            c
        };
        let a = count_transitions(0, 101);
        let b = count_transitions(1_000, 202);
        for from in 0..2 {
            let ta: u64 = a[from].iter().sum();
            let tb: u64 = b[from].iter().sum();
            for to in 0..2 {
                let pa = a[from][to] as f64 / ta as f64;
                let pb = b[from][to] as f64 / tb as f64;
                let se = (pa * (1.0 - pa) / ta as f64 + pb * (1.0 - pb) / tb as f64)
                    .sqrt()
                    .max(1e-9);
                assert!((pa - pb).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn model_json_round_trip_and_hash_stability() {
        let m = reference();
        let text = m.to_json();
        let back = DisorderModel::from_json(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.hash_hex(), back.hash_hex());
        let other = two_state(
            0.2,
            0.5,
            [[0.9, 0.1], [0.2, 0.8]],
            [[0.5, 0.5], [0.4, 0.6]],
        );
        assert_ne!(m.hash_hex(), other.hash_hex());
    }

    #[test]
    fn model_json_missing_field_is_parse_error() {
        let text = r#"{"pi": 0.1, "d1": 1, "d2": 1, "states": ["0","1"],
            "P0": [[1.0,0.0],[0.0,1.0]], "P1": [[1.0,0.0],[0.0,1.0]], "x0": "0"}"#;
        match DisorderModel::from_json(text) {
            Err(Error::Parse(msg)) => assert!(msg.contains("p"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
