//! Likelihood machinery: the window products `L_m`, the joint window
//! density `S`, the one-window predictive kernel `G`, and the detection
//! statistic `g`.
//!
//! `L_m(w)` is the probability of a window's transitions when exactly the
//! last `m` of them follow the post-change kernel and the rest follow the
//! pre-change kernel; empty products are 1. Everything is computed and
//! combined in log space; ratios are exponentials of log differences, so a
//! window with a zero pre-change probability but positive post-change
//! probability yields an infinite statistic (certain change) instead of a
//! 0/0 failure.

use crate::error::{Error, Result};
use crate::model::{DisorderModel, StateId};

/// Numerically stable `ln(sum(exp(terms)))`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

fn check_window(model: &DisorderModel, w: &[StateId]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Contract("window must contain at least one observation".into()));
    }
    let s = model.n_states();
    if let Some(bad) = w.iter().find(|id| id.0 >= s) {
        return Err(Error::Contract(format!(
            "window state index {} outside state set of size {s}",
            bad.0
        )));
    }
    Ok(())
}

/// `ln L_m(w)`: the first `len-1-m` transitions under the pre-change kernel,
/// the trailing `m` under the post-change kernel. `-inf` when the product is
/// zero.
pub fn log_l(model: &DisorderModel, w: &[StateId], m: usize) -> Result<f64> {
    check_window(model, w)?;
    let t = w.len() - 1;
    if m > t {
        return Err(Error::Contract(format!(
            "m = {m} exceeds the {t} transitions of the window"
        )));
    }
    let mut acc = 0.0;
    for r in 1..=t {
        let kernel = if r <= t - m {
            &model.kernel0
        } else {
            &model.kernel1
        };
        acc += kernel.ln_prob(w[r - 1], w[r]);
    }
    Ok(acc)
}

/// `ln L_m(w)` for every `m = 0..=len-1` in one pass, via pre-change prefix
/// sums and post-change suffix sums.
pub fn log_l_all(model: &DisorderModel, w: &[StateId]) -> Result<Vec<f64>> {
    check_window(model, w)?;
    let t = w.len() - 1;
    // pre[i] = sum of ln f0 over transitions 1..=i; suf[i] = sum of ln f1
    // over transitions i+1..=t.
    let mut pre = vec![0.0; t + 1];
    for r in 1..=t {
        pre[r] = pre[r - 1] + model.kernel0.ln_prob(w[r - 1], w[r]);
    }
    let mut suf = vec![0.0; t + 2];
    for r in (1..=t).rev() {
        suf[r] = suf[r + 1] + model.kernel1.ln_prob(w[r - 1], w[r]);
    }
    Ok((0..=t).map(|m| pre[t - m] + suf[t - m + 1]).collect())
}

/// `ln S(w)` for a window starting at time 0 (`w[0]` must be the initial
/// state): the log of the total probability of observing `w` under the
/// prior-mixed switching law.
pub fn log_joint_density_s(model: &DisorderModel, w: &[StateId]) -> Result<f64> {
    if w.first() != Some(&model.x0) {
        return Err(Error::Contract(
            "joint density window must start at time 0 with the initial state".into(),
        ));
    }
    let logs = log_l_all(model, w)?;
    let n = w.len() - 1;
    let pi = model.prior.pi;
    let p = model.prior.p;
    let q = model.prior.q();
    let mut terms = Vec::with_capacity(n + 2);
    terms.push(pi.ln() + logs[n]);
    for i in 1..=n {
        terms.push((1.0 - pi).ln() + (i as f64 - 1.0) * p.ln() + q.ln() + logs[n - i + 1]);
    }
    terms.push((1.0 - pi).ln() + n as f64 * p.ln() + logs[0]);
    Ok(log_sum_exp(&terms))
}

/// `S(w)`: total probability of the window from time 0.
pub fn joint_density_s(model: &DisorderModel, w: &[StateId]) -> Result<f64> {
    Ok(log_joint_density_s(model, w)?.exp())
}

/// `ln G(w, alpha)` on a window of length `l+2`: the predictive density of
/// the last `l+1` observations given the first one, when the posterior mass
/// of an already-occurred change is `alpha`.
pub fn log_g_kernel(model: &DisorderModel, w: &[StateId], alpha: f64) -> Result<f64> {
    if w.len() < 2 {
        return Err(Error::Contract("G needs a window of length >= 2".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha = {alpha} outside [0,1]")));
    }
    let logs = log_l_all(model, w)?;
    let l = w.len() - 2;
    let p = model.prior.p;
    let q = 1.0 - p;
    let mut terms = Vec::with_capacity(l + 3);
    terms.push(alpha.ln() + logs[l + 1]);
    for i in 0..=l {
        terms.push((1.0 - alpha).ln() + (l - i) as f64 * p.ln() + q.ln() + logs[i + 1]);
    }
    terms.push((1.0 - alpha).ln() + (l + 1) as f64 * p.ln() + logs[0]);
    Ok(log_sum_exp(&terms))
}

/// `G(w, alpha)`.
pub fn g_kernel(model: &DisorderModel, w: &[StateId], alpha: f64) -> Result<f64> {
    Ok(log_g_kernel(model, w, alpha)?.exp())
}

/// Index conventions for the likelihood-ratio sum inside the statistic.
/// Exactly one reproduces the conditional window probability; the others are
/// retained so the oracle gate can demonstrate it discriminates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumConvention {
    /// `sum_{m=1}^{d1+1} L_m / (p^m L_0)`, the adopted form.
    #[default]
    Standard,
    /// `sum_{m=0}^{d1} L_{m+1} / (p^m L_0)`: the standard sum scaled by `p`.
    ScaledByP,
    /// `sum_{m=0}^{d1} L_m / (p^m L_0)`: keeps the identity ratio `L_0/L_0`
    /// and drops the deepest post-change term.
    IncludesZerothRatio,
}

/// Detection statistic on a window of length `d1+2` under a chosen sum
/// convention. Returns `+inf` when the pre-change likelihood of the window
/// is zero but some mixed hypothesis is positive (certain change).
pub fn detection_statistic_with(
    model: &DisorderModel,
    w: &[StateId],
    convention: SumConvention,
) -> Result<f64> {
    let d1 = model.window.d1;
    if w.len() != d1 + 2 {
        return Err(Error::Contract(format!(
            "statistic window must have length d1+2 = {}, got {}",
            d1 + 2,
            w.len()
        )));
    }
    let logs = log_l_all(model, w)?;
    let p = model.prior.p;
    let q = 1.0 - p;
    if logs[0] == f64::NEG_INFINITY {
        if logs.iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(Error::ImpossiblePath(
                "window has zero probability under every change hypothesis".into(),
            ));
        }
        return Ok(f64::INFINITY);
    }
    let ratio = |m: usize| (logs[m] - logs[0]).exp();
    let mut sum = 0.0;
    match convention {
        SumConvention::Standard => {
            for m in 1..=d1 + 1 {
                sum += ratio(m) / p.powi(m as i32);
            }
        }
        SumConvention::ScaledByP => {
            for m in 0..=d1 {
                sum += ratio(m + 1) / p.powi(m as i32);
            }
        }
        SumConvention::IncludesZerothRatio => {
            for m in 0..=d1 {
                sum += ratio(m) / p.powi(m as i32);
            }
        }
    }
    Ok(1.0 - p.powi(model.window.d2 as i32) + q * sum)
}

/// The detection statistic `g` of the optimal rule (standard convention).
pub fn detection_statistic_g(model: &DisorderModel, w: &[StateId]) -> Result<f64> {
    detection_statistic_with(model, w, SumConvention::Standard)
}
