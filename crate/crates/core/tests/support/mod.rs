//! Reference models shared by the integration and acceptance suites.
#![allow(dead_code)] // each test binary uses a different subset

use disorder_core::model::{DisorderModel, MarkovKernel, PrecisionWindow, PriorParams, StateId};

pub fn model_from(
    pi: f64,
    p: f64,
    d1: usize,
    d2: usize,
    rows0: Vec<Vec<f64>>,
    rows1: Vec<Vec<f64>>,
) -> DisorderModel {
    let labels: Vec<String> = (0..rows0.len()).map(|i| i.to_string()).collect();
    DisorderModel::new(
        PriorParams::new(pi, p),
        MarkovKernel::new(labels.clone(), rows0).unwrap(),
        MarkovKernel::new(labels, rows1).unwrap(),
        PrecisionWindow::new(d1, d2),
        StateId(0),
    )
}

fn rows2_pre() -> Vec<Vec<f64>> {
    vec![vec![0.75, 0.25], vec![0.5, 0.5]]
}

fn rows2_post() -> Vec<Vec<f64>> {
    vec![vec![0.375, 0.625], vec![0.375, 0.625]]
}

fn rows3_pre() -> Vec<Vec<f64>> {
    vec![
        vec![0.5, 0.25, 0.25],
        vec![0.25, 0.5, 0.25],
        vec![0.25, 0.25, 0.5],
    ]
}

fn rows3_post() -> Vec<Vec<f64>> {
    vec![
        vec![0.125, 0.375, 0.5],
        vec![0.125, 0.25, 0.625],
        vec![0.25, 0.25, 0.5],
    ]
}

/// The 2-state informative reference model: pi = 0, p = 0.5, d1 = d2 = 1.
pub fn reference_two_state() -> DisorderModel {
    model_from(0.0, 0.5, 1, 1, rows2_pre(), rows2_post())
}

/// The 3-state informative reference model: pi = 0.2, p = 0.9, d1 = 1,
/// d2 = 2. Its optimal rule has a rich continue region (14 of 27 windows).
pub fn reference_three_state() -> DisorderModel {
    model_from(0.2, 0.9, 1, 2, rows3_pre(), rows3_post())
}

/// A 2-state model with a stronger post-change pull whose optimal rule
/// keeps waiting on the all-zeros window; its stop time is unbounded, which
/// exercises the truncation-gap behavior of horizon-restricted values.
pub fn persistent_wait_two_state() -> DisorderModel {
    model_from(
        0.0,
        0.5,
        1,
        1,
        rows2_pre(),
        vec![vec![0.25, 0.75], vec![0.25, 0.75]],
    )
}

/// Uninformative model (equal kernels) for closed-form checks.
pub fn no_info_two_state(pi: f64, p: f64, d1: usize, d2: usize) -> DisorderModel {
    model_from(pi, p, d1, d2, rows2_pre(), rows2_pre())
}

/// The full parameter grid behind the posterior identity criteria:
/// both state-space sizes crossed with pi in {0, 0.2} and p in {0.5, 0.9},
/// keeping each reference model's precision window.
pub fn identity_grid() -> Vec<(String, DisorderModel)> {
    let mut out = Vec::new();
    for &pi in &[0.0, 0.2] {
        for &p in &[0.5, 0.9] {
            out.push((
                format!("2-state pi={pi} p={p}"),
                model_from(pi, p, 1, 1, rows2_pre(), rows2_post()),
            ));
            out.push((
                format!("3-state pi={pi} p={p}"),
                model_from(pi, p, 1, 2, rows3_pre(), rows3_post()),
            ));
        }
    }
    out
}
