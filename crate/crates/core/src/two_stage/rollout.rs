use std::time::{Duration, Instant};

use super::model::TwoStageModel;
use crate::clustering::ParameterPoint;
use crate::error::{Result, RomError};
use crate::linalg::Matrix;
use crate::ode::Trajectory;

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// `z × horizon`, physical units.
    pub predicted: Matrix,
    /// Same states in the model's normalized units.
    pub normalized: Matrix,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// Autoregressive forecast of `horizon` states after a physical `w × z` window.
///
/// Each iteration predicts `m` states; the last one is truncated to the horizon.
pub fn rollout(
    model: &TwoStageModel,
    initial_window: &Matrix,
    theta: &ParameterPoint,
    horizon: usize,
) -> Result<RolloutResult> {
    let start = Instant::now();
    let (w, m, z) = (model.w, model.m, model.z());
    if initial_window.shape() != (w, z) {
        return Err(RomError::shape(format!(
            "initial window must be {w}x{z}, got {:?}",
            initial_window.shape()
        )));
    }
    let theta_n = model.theta_normalizer.apply_point(theta)?;
    let mut window = model.normalizer.apply_rows(initial_window)?;
    let iterations = horizon.div_ceil(m);
    let mut rows: Vec<f64> = Vec::with_capacity(horizon * z);
    for it in 0..iterations {
        let pred = model.predict_normalized(&window, &theta_n)?;
        if !pred.is_finite() {
            return Err(RomError::divergence("rollout iteration", it));
        }
        let keep = m.min(horizon - it * m);
        rows.extend_from_slice(&pred.as_slice()[..keep * z]);
        if it + 1 < iterations {
            let mut next = window.as_slice().to_vec();
            next.extend_from_slice(pred.as_slice());
            let drop = next.len() - w * z;
            window = Matrix::from_vec(w, z, next[drop..].to_vec())?;
        }
    }
    let normalized_rows = Matrix::from_vec(horizon, z, rows)?;
    let predicted = model.normalizer.invert_rows(&normalized_rows)?.transpose();
    Ok(RolloutResult {
        predicted,
        normalized: normalized_rows.transpose(),
        iterations,
        wall_time: start.elapsed(),
    })
}

/// One row of the metrics table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetric {
    pub theta: f64,
    pub step: usize,
    pub mae: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSummary {
    pub theta: ParameterPoint,
    pub mae: f64,
    pub rel_err: f64,
    /// Least-squares slope of per-step MAE against step index.
    pub error_slope: f64,
    /// Largest absolute normalized predicted value.
    pub max_abs_normalized: f64,
    pub wall_time: Duration,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub steps: Vec<StepMetric>,
    pub per_theta: Vec<ThetaSummary>,
}

impl EvalReport {
    pub fn mean_mae(&self) -> f64 {
        mean(self.per_theta.iter().map(|s| s.mae))
    }

    pub fn mean_rel_err(&self) -> f64 {
        mean(self.per_theta.iter().map(|s| s.rel_err))
    }

    pub fn total_wall_time(&self) -> Duration {
        self.per_theta.iter().map(|s| s.wall_time).sum()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Per-step metrics of a forecast against truth, both `z × horizon`.
///
/// MAE is taken on normalized states, relative error on physical ones.
pub fn step_metrics(
    model: &TwoStageModel,
    predicted: &Matrix,
    truth: &Matrix,
    theta: f64,
) -> Result<Vec<StepMetric>> {
    if predicted.shape() != truth.shape() {
        return Err(RomError::shape("prediction and truth differ in shape"));
    }
    let pn = model.normalizer.apply(predicted)?;
    let tn = model.normalizer.apply(truth)?;
    let z = truth.rows();
    Ok((0..truth.cols())
        .map(|t| {
            let (mut abs, mut diff2, mut norm2) = (0.0, 0.0, 0.0);
            for i in 0..z {
                abs += (pn[(i, t)] - tn[(i, t)]).abs();
                let d = predicted[(i, t)] - truth[(i, t)];
                diff2 += d * d;
                norm2 += truth[(i, t)] * truth[(i, t)];
            }
            let rel_err = if norm2 > 0.0 {
                (diff2 / norm2).sqrt()
            } else {
                diff2.sqrt()
            };
            StepMetric {
                theta,
                step: t,
                mae: abs / z as f64,
                rel_err,
            }
        })
        .collect())
}

/// Rolls out from the first `w` states of each truth trajectory and scores the
/// next `horizon` states.
pub fn evaluate(
    model: &TwoStageModel,
    truths: &[Trajectory],
    horizon: usize,
) -> Result<EvalReport> {
    let mut steps = Vec::new();
    let mut per_theta = Vec::new();
    for tr in truths {
        if tr.len() < model.w + horizon {
            return Err(RomError::input(format!(
                "truth trajectory has {} states, need {}",
                tr.len(),
                model.w + horizon
            )));
        }
        let window = tr.rows(0, model.w);
        let r = rollout(model, &window, &tr.theta, horizon)?;
        let truth = tr.rows(model.w, model.w + horizon).transpose();
        let label = tr.theta.coords()[0];
        let rows = step_metrics(model, &r.predicted, &truth, label)?;
        let maes: Vec<f64> = rows.iter().map(|s| s.mae).collect();
        per_theta.push(ThetaSummary {
            theta: tr.theta.clone(),
            mae: mean(maes.iter().copied()),
            rel_err: mean(rows.iter().map(|s| s.rel_err)),
            error_slope: slope(&maes),
            max_abs_normalized: r
                .normalized
                .as_slice()
                .iter()
                .fold(0.0, |a: f64, v| a.max(v.abs())),
            wall_time: r.wall_time,
            iterations: r.iterations,
        });
        steps.extend(rows);
    }
    Ok(EvalReport { steps, per_theta })
}
