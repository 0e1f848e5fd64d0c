//! Online execution of the optimal stopping rule: slide a `d1+2` window
//! over the stream and stop at the first `n >= d1+1` where the detection
//! statistic on the window reaches the threshold on its trailing tuple.
//!
//! The decision at time `n` depends only on the last `d1+2` observations;
//! the posterior is carried along (one-step recursion) for diagnostics and
//! traces, so a detector needs O(d1) memory per stream.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::detection_statistic_g;
use crate::model::{require_valid, DisorderModel, StateId};
use crate::posterior::{posterior_step, PosteriorState};
use crate::solver::{statistic_cache, ThresholdTable};

/// Largest `s^(d1+2)` for which the statistic is pre-tabulated per detector.
const STATISTIC_TABLE_CAP: u128 = 1 << 16;

/// Outcome of feeding one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// Stopped at the given time index.
    Stop(u64),
}

/// Per-step trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: u64,
    /// Statistic value; absent before the window fills.
    #[serde(with = "crate::float_serde::opt")]
    pub g: Option<f64>,
    /// Threshold on the trailing tuple; absent before the window fills.
    #[serde(with = "crate::float_serde::opt")]
    pub r_star: Option<f64>,
    pub pi_n: f64,
}

/// Result of running a detector over a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub model_hash: String,
    pub n_observations: usize,
    pub stop_time: Option<u64>,
    pub undecided: bool,
    /// True change time, when known (simulation mode).
    pub theta: Option<u64>,
    /// Whether the stop landed within the precision window of `theta`;
    /// `None` on live streams, `false` when undecided.
    pub success: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRecord>>,
}

/// Streaming detector state.
pub struct Detector<'a> {
    model: &'a DisorderModel,
    table: &'a ThresholdTable,
    /// Last `min(n+1, d1+2)` observations.
    ring: Vec<StateId>,
    /// Rolling mixed-radix code of the ring (valid once the ring is full).
    window_code: usize,
    /// Observations seen minus one; -1 before the first push.
    n: i64,
    stopped_at: Option<u64>,
    posterior: PosteriorState,
    trace: Option<Vec<TraceRecord>>,
    /// Statistic per window code when the domain is small enough.
    g_table: Option<Arc<[f64]>>,
}

/// Prevalidated detector construction: the model/table compatibility check
/// and the statistic table are paid once, then detectors for individual
/// streams are cheap to mint. The table is shared read-only, so distinct
/// streams may run on distinct threads.
pub struct DetectorFactory<'a> {
    model: &'a DisorderModel,
    table: &'a ThresholdTable,
    g_table: Option<Arc<[f64]>>,
}

impl<'a> DetectorFactory<'a> {
    pub fn new(model: &'a DisorderModel, r_star: &'a ThresholdTable) -> Result<Self> {
        require_valid(model)?;
        r_star.check_model(model)?;
        let s = model.n_states() as u128;
        let g_table = if s.pow(model.window.d1 as u32 + 2) <= STATISTIC_TABLE_CAP {
            Some(statistic_cache(model)?.into())
        } else {
            None
        };
        Ok(Self {
            model,
            table: r_star,
            g_table,
        })
    }

    /// A fresh detector for one stream.
    pub fn detector(&self, record_trace: bool) -> Detector<'a> {
        Detector {
            model: self.model,
            table: self.table,
            ring: Vec::with_capacity(self.model.window.d1 + 2),
            window_code: 0,
            n: -1,
            stopped_at: None,
            posterior: PosteriorState::initial(self.model),
            trace: record_trace.then(Vec::new),
            g_table: self.g_table.clone(),
        }
    }

    /// Runs one observation sequence to a decision; see [`run_to_decision`].
    pub fn run(
        &self,
        observations: &[StateId],
        true_theta: Option<u64>,
        record_trace: bool,
    ) -> Result<DetectionReport> {
        let mut detector = self.detector(record_trace);
        let mut stop = None;
        let mut consumed = 0;
        for &x in observations {
            consumed += 1;
            if let Decision::Stop(n) = detector.push_observation(x)? {
                stop = Some(n);
                break;
            }
        }
        let success = true_theta.map(|theta| match stop {
            Some(tau) => in_precision_window(self.model, theta, tau),
            None => false,
        });
        Ok(DetectionReport {
            model_hash: self.table.model_hash.clone(),
            n_observations: consumed,
            stop_time: stop,
            undecided: stop.is_none(),
            theta: true_theta,
            success,
            trace: detector.trace.take(),
        })
    }
}

/// Builds a detector bound to a model and its solved threshold table.
pub fn new_detector<'a>(
    model: &'a DisorderModel,
    r_star: &'a ThresholdTable,
    record_trace: bool,
) -> Result<Detector<'a>> {
    Ok(DetectorFactory::new(model, r_star)?.detector(record_trace))
}

impl Detector<'_> {
    pub fn time(&self) -> i64 {
        self.n
    }

    pub fn stopped_at(&self) -> Option<u64> {
        self.stopped_at
    }

    pub fn posterior(&self) -> &PosteriorState {
        &self.posterior
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    /// Feeds one observation; returns the stop decision for its time index.
    pub fn push_observation(&mut self, x: StateId) -> Result<Decision> {
        if self.stopped_at.is_some() {
            return Err(Error::Contract(
                "push_observation called after the detector stopped".into(),
            ));
        }
        let s = self.model.n_states();
        if x.0 >= s {
            return Err(Error::UnknownState {
                label: format!("index {}", x.0),
                context: Some("observation".into()),
            });
        }
        if self.n < 0 {
            if x != self.model.x0 {
                return Err(Error::Contract(format!(
                    "first observation must be the initial state {:?}",
                    self.model.label(self.model.x0)
                )));
            }
            self.n = 0;
            self.ring.push(x);
            self.window_code = x.0;
            self.record_trace(None, None);
            return Ok(Decision::Continue);
        }
        let prev = *self.ring.last().expect("ring nonempty after first push");
        self.posterior = posterior_step(self.model, &self.posterior, prev, x)?;
        self.n += 1;
        let d1 = self.model.window.d1;
        let full_len = d1 + 2;
        if self.ring.len() == full_len {
            self.ring.remove(0);
        }
        self.ring.push(x);
        let tuple_mod = s.pow(d1 as u32 + 1);
        self.window_code = (self.window_code % tuple_mod) * s + x.0;
        if self.ring.len() < full_len {
            self.record_trace(None, None);
            return Ok(Decision::Continue);
        }
        let g = match &self.g_table {
            Some(t) => t[self.window_code],
            None => detection_statistic_g(self.model, &self.ring)?,
        };
        if g.is_infinite() && self.ring_impossible()? {
            return Err(Error::ImpossiblePath(
                "window has zero probability under every change hypothesis".into(),
            ));
        }
        let r = self.table.values[self.window_code % tuple_mod];
        self.record_trace(Some(g), Some(r));
        if g >= r {
            let n = self.n as u64;
            self.stopped_at = Some(n);
            Ok(Decision::Stop(n))
        } else {
            Ok(Decision::Continue)
        }
    }

    /// Distinguishes the saturating statistic (stop immediately) from a
    /// window that no hypothesis can produce (malformed stream). Only
    /// consulted when the cached statistic is infinite.
    fn ring_impossible(&self) -> Result<bool> {
        match detection_statistic_g(self.model, &self.ring) {
            Ok(_) => Ok(false),
            Err(Error::ImpossiblePath(_)) => Ok(true),
            Err(e) => Err(e),
        }
    }

    fn record_trace(&mut self, g: Option<f64>, r: Option<f64>) {
        let pi_n = self.posterior.pi_n;
        let n = self.n as u64;
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                n,
                g,
                r_star: r,
                pi_n,
            });
        }
    }
}

/// Whether a stop at `tau` catches a change at `theta` within the window.
pub fn in_precision_window(model: &DisorderModel, theta: u64, tau: u64) -> bool {
    let lo = tau as i128 - model.window.d1 as i128;
    let hi = tau as i128 + model.window.d2 as i128;
    let th = theta as i128;
    lo <= th && th <= hi
}

/// Runs the detector over a full observation sequence.
///
/// With `true_theta` supplied (simulation mode) the report scores success by
/// the precision window; an undecided run counts as failure.
pub fn run_to_decision(
    model: &DisorderModel,
    r_star: &ThresholdTable,
    observations: &[StateId],
    true_theta: Option<u64>,
    record_trace: bool,
) -> Result<DetectionReport> {
    DetectorFactory::new(model, r_star)?.run(observations, true_theta, record_trace)
}
