//! Posterior probability of the change having occurred, in every form the
//! solution uses: the exact window formula, the one-step and multi-step
//! recursions, the forward/backward conditional probabilities, and the
//! window payoff that drives the stopping rule.

use crate::error::{Error, Result};
use crate::likelihood::{
    self, detection_statistic_with, log_g_kernel, log_l_all, SumConvention,
};
use crate::model::{DisorderModel, StateId};

/// Filtered probability `Pi_n = P(theta <= n | X_0..X_n)` together with its
/// time index, so window-alignment mistakes surface as contract errors
/// instead of silently wrong numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorState {
    /// `Pi_n`, kept in `[0,1]`.
    pub pi_n: f64,
    /// Time index `n`.
    pub n: u64,
    /// Number of updates where floating-point drift pushed the value outside
    /// `[0,1]` and it was clamped back.
    pub clamp_events: u32,
}

impl PosteriorState {
    /// State at time 0: `Pi_0 = pi`.
    pub fn initial(model: &DisorderModel) -> Self {
        Self {
            pi_n: model.prior.pi,
            n: 0,
            clamp_events: 0,
        }
    }
}

fn clamped(value: f64, events: &mut u32) -> f64 {
    if (0.0..=1.0).contains(&value) {
        value
    } else {
        *events += 1;
        value.clamp(0.0, 1.0)
    }
}

/// `Pi_n` from the full prefix `w = X_0..X_n` via
/// `1 - Pi_n = (1-pi) p^n L_0(w) / S(w)`.
pub fn posterior_exact(model: &DisorderModel, w: &[StateId]) -> Result<PosteriorState> {
    let log_s = likelihood::log_joint_density_s(model, w)?;
    if log_s == f64::NEG_INFINITY {
        return Err(Error::ImpossiblePath(
            "prefix has zero probability under the model".into(),
        ));
    }
    let n = w.len() - 1;
    let logs = log_l_all(model, w)?;
    let log_tail =
        (1.0 - model.prior.pi).ln() + n as f64 * model.prior.p.ln() + logs[0] - log_s;
    let mut events = 0;
    let pi_n = clamped(1.0 - log_tail.exp(), &mut events);
    Ok(PosteriorState {
        pi_n,
        n: n as u64,
        clamp_events: events,
    })
}

/// One-step update `Pi_{n+1} = f1(q + p Pi_n) / G` given the observation at
/// the state's time and the next one.
pub fn posterior_step(
    model: &DisorderModel,
    state: &PosteriorState,
    x_n: StateId,
    x_next: StateId,
) -> Result<PosteriorState> {
    let p = model.prior.p;
    let q = model.prior.q();
    let f0 = model.kernel0.prob(x_n, x_next);
    let f1 = model.kernel1.prob(x_n, x_next);
    let pi = state.pi_n;
    let g = p * (1.0 - pi) * f0 + (q + p * pi) * f1;
    if g <= 0.0 {
        return Err(Error::ImpossiblePath(format!(
            "transition {} -> {} has zero predictive probability",
            x_n, x_next
        )));
    }
    let mut events = state.clamp_events;
    let pi_next = clamped(f1 * (q + p * pi) / g, &mut events);
    Ok(PosteriorState {
        pi_n: pi_next,
        n: state.n + 1,
        clamp_events: events,
    })
}

/// Multi-step update across a window `w = X_t..X_n` where `t` is the
/// state's time: `Pi_n = [Pi_t L_{l+1} + (1-Pi_t) q sum p^{l-k} L_{k+1}] / G`
/// with `l = n - t - 1`.
pub fn posterior_multistep(
    model: &DisorderModel,
    state: &PosteriorState,
    w: &[StateId],
) -> Result<PosteriorState> {
    if w.len() < 2 {
        return Err(Error::Contract(
            "multi-step window must contain at least two observations".into(),
        ));
    }
    let l = w.len() - 2;
    let logs = log_l_all(model, w)?;
    let p = model.prior.p;
    let q = model.prior.q();
    let log_g = log_g_kernel(model, w, state.pi_n)?;
    if log_g == f64::NEG_INFINITY {
        return Err(Error::ImpossiblePath(
            "window has zero predictive probability".into(),
        ));
    }
    let mut terms = Vec::with_capacity(l + 2);
    terms.push(state.pi_n.ln() + logs[l + 1]);
    for k in 0..=l {
        terms.push((1.0 - state.pi_n).ln() + q.ln() + (l - k) as f64 * p.ln() + logs[k + 1]);
    }
    let log_num = likelihood::log_sum_exp(&terms);
    let mut events = state.clamp_events;
    let pi_n = clamped((log_num - log_g).exp(), &mut events);
    Ok(PosteriorState {
        pi_n,
        n: state.n + (w.len() - 1) as u64,
        clamp_events: events,
    })
}

/// `P(theta <= n + k | F_n) = 1 - p^k (1 - Pi_n)`.
pub fn prob_change_within(model: &DisorderModel, state: &PosteriorState, k: usize) -> f64 {
    1.0 - model.prior.p.powi(k as i32) * (1.0 - state.pi_n)
}

/// `P(theta <= n - l - 1 | F_n) = Pi_{n-l-1} L_{l+1}(w) / G(w, Pi_{n-l-1})`
/// where the state is at the window start and `w = X_{n-l-1}..X_n`.
pub fn prob_change_before_window(
    model: &DisorderModel,
    state: &PosteriorState,
    w: &[StateId],
) -> Result<f64> {
    if w.len() < 2 {
        return Err(Error::Contract(
            "window must contain at least two observations".into(),
        ));
    }
    let l = w.len() - 2;
    let logs = log_l_all(model, w)?;
    let log_g = log_g_kernel(model, w, state.pi_n)?;
    if log_g == f64::NEG_INFINITY {
        return Err(Error::ImpossiblePath(
            "window has zero predictive probability".into(),
        ));
    }
    Ok((state.pi_n.ln() + logs[l + 1] - log_g).exp().clamp(0.0, 1.0))
}

/// Window payoff `h(w, alpha) = g(w) (1 - alpha)` clamped to `[0,1]`.
///
/// With `alpha = Pi_n` and `w = X_{n-d1-1}..X_n` this equals the conditional
/// probability that the change lies within the precision window of `n`.
/// `alpha = 1` gives 0; an infinite statistic saturates to 1.
pub fn window_payoff_h(model: &DisorderModel, w: &[StateId], alpha: f64) -> Result<f64> {
    window_payoff_with(model, w, alpha, SumConvention::Standard)
}

/// [`window_payoff_h`] under an alternative index convention; used by the
/// oracle gate to show the adopted convention is the only one that matches.
pub fn window_payoff_with(
    model: &DisorderModel,
    w: &[StateId],
    alpha: f64,
    convention: SumConvention,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha = {alpha} outside [0,1]")));
    }
    if alpha >= 1.0 {
        return Ok(0.0);
    }
    let g = detection_statistic_with(model, w, convention)?;
    Ok((g * (1.0 - alpha)).clamp(0.0, 1.0))
}
