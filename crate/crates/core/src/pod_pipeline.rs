//! POD reduction of full-order snapshots and the two-basis pipelined forecaster:
//! model 1 covers the swing-in on the full-history basis, model 2 takes over
//! on the periodic-only basis after a basis change.

use std::time::{Duration, Instant};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::clustering::ParameterPoint;
use crate::error::{Result, RomError};
use crate::linalg::{basis_change, energy_rank, matmul, pod_project, svd, Matrix, PodBasis};
use crate::ode::Trajectory;
use crate::two_stage::{fit_two_stage, rollout, sub_seed, TrainConfig, TwoStageFit, TwoStageModel};

/// Which basis a reduced trajectory lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisId {
    FullHistory,
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrajectory {
    pub theta: ParameterPoint,
    pub basis_id: BasisId,
    /// `N_POD × T`
    pub coeffs: Matrix,
    pub dt: f64,
}

impl ReducedTrajectory {
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(self.theta.clone(), self.dt, self.coeffs.clone())
    }
}

pub fn reduce(traj: &Trajectory, basis: &PodBasis, basis_id: BasisId) -> Result<ReducedTrajectory> {
    let coeffs = pod_project(basis, &traj.states)?;
    if !coeffs.is_finite() {
        return Err(RomError::Degenerate(
            "non-finite reduced coefficients".into(),
        ));
    }
    Ok(ReducedTrajectory {
        theta: traj.theta.clone(),
        basis_id,
        coeffs,
        dt: traj.dt,
    })
}

/// Columns `start..` of every trajectory side by side.
pub fn stack_snapshots(trajs: &[Trajectory], start: usize) -> Result<Matrix> {
    let dim = trajs
        .first()
        .ok_or_else(|| RomError::input("no trajectories"))?
        .dim();
    let total: usize = trajs.iter().map(|t| t.len().saturating_sub(start)).sum();
    let mut out = Matrix::zeros(dim, total);
    let mut col = 0;
    for t in trajs {
        if t.dim() != dim {
            return Err(RomError::shape("trajectories of different dimension"));
        }
        for j in start..t.len() {
            out.set_column(col, &t.states.column(j));
            col += 1;
        }
    }
    Ok(out)
}

/// POD of each contiguous row block, concatenated into one block-diagonal basis.
///
/// Every block keeps its own energy rank. The retained modes are ordered by
/// singular value across blocks, and `cap` keeps the first `cap` of them.
pub fn block_pod(
    snapshots: &Matrix,
    blocks: usize,
    energy_target: f64,
    cap: Option<usize>,
) -> Result<PodBasis> {
    let dim = snapshots.rows();
    if blocks == 0 || dim % blocks != 0 {
        return Err(RomError::input(format!(
            "{dim} rows do not split into {blocks} equal blocks"
        )));
    }
    if cap == Some(0) {
        return Err(RomError::input("coefficient cap must be at least 1"));
    }
    let n = dim / blocks;
    // (σ, block, mode index within block)
    let mut retained: Vec<(f64, usize, usize)> = Vec::new();
    let mut all_sigma = Vec::new();
    let mut block_u = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let mut part = Matrix::zeros(n, snapshots.cols());
        for i in 0..n {
            part.row_mut(i).copy_from_slice(snapshots.row(b * n + i));
        }
        let dec = svd(&part)?;
        let r = energy_rank(&dec.sigma, energy_target)?;
        retained.extend(dec.sigma[..r].iter().enumerate().map(|(j, &s)| (s, b, j)));
        all_sigma.extend_from_slice(&dec.sigma);
        block_u.push(dec.u);
    }
    retained.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    if let Some(c) = cap {
        retained.truncate(c);
    }
    let mut modes = Matrix::zeros(dim, retained.len());
    for (col, &(_, b, j)) in retained.iter().enumerate() {
        for i in 0..n {
            modes[(b * n + i, col)] = block_u[b][(i, j)];
        }
    }
    // Retained values first, in column order, then the discarded ones.
    let total: f64 = all_sigma.iter().sum();
    let kept: f64 = retained.iter().map(|r| r.0).sum();
    let mut rest = all_sigma;
    for &(s, _, _) in &retained {
        if let Some(pos) = rest.iter().position(|&v| v == s) {
            rest.remove(pos);
        }
    }
    rest.sort_by(|a, b| b.total_cmp(a));
    let mut singular_values: Vec<f64> = retained.iter().map(|r| r.0).collect();
    singular_values.extend(rest);
    Ok(PodBasis {
        modes,
        singular_values,
        energy_ratio: if total > 0.0 { kept / total } else { 1.0 },
        full_dim: dim,
    })
}

/// Relative Frobenius error of projecting snapshots onto a basis and lifting back.
pub fn projection_error(basis: &PodBasis, snapshots: &Matrix) -> Result<f64> {
    let back = basis.lift(&pod_project(basis, snapshots)?)?;
    let norm = snapshots.frobenius_norm();
    let err = back.sub(snapshots)?.frobenius_norm();
    Ok(if norm > 0.0 { err / norm } else { err })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodSettings {
    pub energy_target: f64,
    pub coeff_cap: Option<usize>,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Swing-in length, in trajectory steps.
    pub n_i: usize,
    pub pod: PodSettings,
    pub k: usize,
    pub w: usize,
    pub m: usize,
    pub train_1: TrainConfig,
    pub train_2: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub basis_1: PodBasis,
    pub basis_2: PodBasis,
    /// `None` when there is no swing-in phase.
    pub model_1: Option<TwoStageModel>,
    pub model_2: TwoStageModel,
    /// `basis_2ᵀ · basis_1`
    pub transfer: Matrix,
    pub n_i: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineFit {
    pub pipeline: PipelineModel,
    pub fit_1: Option<TwoStageFit>,
    pub fit_2: TwoStageFit,
}

const STREAM_MODEL_1: u64 = 11;
const STREAM_MODEL_2: u64 = 12;

pub fn build_pipeline(
    trajs: &[Trajectory],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineFit> {
    if trajs.is_empty() {
        return Err(RomError::input("no training trajectories"));
    }
    if let Some(t) = trajs.iter().find(|t| t.len() <= cfg.n_i) {
        return Err(RomError::input(format!(
            "trajectory at θ = {:?} has {} states, not longer than N_I = {}",
            t.theta.coords(),
            t.len(),
            cfg.n_i
        )));
    }
    let p = &cfg.pod;
    let basis_1 = block_pod(
        &stack_snapshots(trajs, 0)?,
        p.blocks,
        p.energy_target,
        p.coeff_cap,
    )?;
    let basis_2 = if cfg.n_i == 0 {
        basis_1.clone()
    } else {
        block_pod(
            &stack_snapshots(trajs, cfg.n_i)?,
            p.blocks,
            p.energy_target,
            p.coeff_cap,
        )?
    };
    let transfer = basis_change(&basis_1, &basis_2)?;

    let fit_1 = if cfg.n_i == 0 {
        None
    } else {
        let reduced: Vec<Trajectory> = trajs
            .iter()
            .map(|t| reduce(t, &basis_1, BasisId::FullHistory)?.to_trajectory())
            .collect::<Result<_>>()?;
        Some(fit_two_stage(
            &reduced,
            cfg.k,
            cfg.w,
            cfg.m,
            &cfg.train_1,
            sub_seed(seed, STREAM_MODEL_1),
        )?)
    };
    let periodic: Vec<Trajectory> = trajs
        .iter()
        .map(|t| {
            let tail = Trajectory::new(t.theta.clone(), t.dt, t.states.columns(cfg.n_i, t.len()))?;
            reduce(&tail, &basis_2, BasisId::Periodic)?.to_trajectory()
        })
        .collect::<Result<_>>()?;
    let fit_2 = fit_two_stage(
        &periodic,
        cfg.k,
        cfg.w,
        cfg.m,
        &cfg.train_2,
        sub_seed(seed, STREAM_MODEL_2),
    )?;
    let pipeline = PipelineModel {
        basis_1,
        basis_2,
        model_1: fit_1.as_ref().map(|f| f.model.clone()),
        model_2: fit_2.model.clone(),
        transfer,
        n_i: cfg.n_i,
    };
    pipeline.validate()?;
    Ok(PipelineFit {
        pipeline,
        fit_1,
        fit_2,
    })
}

impl PipelineModel {
    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = (self.basis_1.n_pod(), self.basis_2.n_pod());
        if self.transfer.shape() != (n2, n1) {
            return Err(RomError::shape(
                "basis-change matrix does not match the bases",
            ));
        }
        if self.basis_1.full_dim != self.basis_2.full_dim {
            return Err(RomError::shape("bases over different spaces"));
        }
        if self.model_2.z() != n2 {
            return Err(RomError::shape("model 2 width differs from basis 2"));
        }
        match &self.model_1 {
            Some(m1) => {
                if m1.z() != n1 {
                    return Err(RomError::shape("model 1 width differs from basis 1"));
                }
                if m1.w != self.model_2.w {
                    return Err(RomError::shape(
                        "the two models use different window lengths",
                    ));
                }
            }
            None if self.n_i > 0 => {
                return Err(RomError::input("a swing-in phase needs model 1"));
            }
            None => {}
        }
        self.model_2.validate()
    }

    pub fn w(&self) -> usize {
        self.model_2.w
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRollout {
    /// `D × horizon`
    pub full: Matrix,
    /// Basis-1 coefficients of the swing-in predictions.
    pub coeffs_1: Matrix,
    /// Basis-2 coefficients of the periodic predictions.
    pub coeffs_2: Matrix,
    /// Number of leading predicted steps produced by model 1.
    pub phase_1_steps: usize,
    pub wall_time: Duration,
}

fn window_rows(coeffs: &Matrix, end: usize, w: usize) -> Matrix {
    coeffs.columns(end - w, end).transpose()
}

/// Forecast of the `horizon` states following a `D × w` full-order window
/// that starts at trajectory step 0. Model 1 predicts the first `N_I` of
/// them, so model 2 starts from the window at steps `N_I..N_I + w`, which
/// is where its training data begins.
pub fn pipeline_rollout(
    pipeline: &PipelineModel,
    initial_full_window: &Matrix,
    theta: &ParameterPoint,
    horizon: usize,
) -> Result<PipelineRollout> {
    let start = Instant::now();
    let w = pipeline.w();
    if initial_full_window.shape() != (pipeline.basis_1.full_dim, w) {
        return Err(RomError::shape(format!(
            "initial window must be {}x{w}, got {:?}",
            pipeline.basis_1.full_dim,
            initial_full_window.shape()
        )));
    }
    let h1 = pipeline.n_i.min(horizon);
    let h2 = horizon - h1;
    if h1 == 0 {
        let c2 = pod_project(&pipeline.basis_2, initial_full_window)?;
        let r = rollout(&pipeline.model_2, &c2.transpose(), theta, h2)
            .map_err(|e| e.in_phase("phase 2"))?;
        return Ok(PipelineRollout {
            full: pipeline.basis_2.lift(&r.predicted)?,
            coeffs_1: Matrix::zeros(pipeline.basis_1.n_pod(), 0),
            coeffs_2: r.predicted,
            phase_1_steps: 0,
            wall_time: start.elapsed(),
        });
    }
    let model_1 = pipeline
        .model_1
        .as_ref()
        .ok_or_else(|| RomError::input("pipeline has a swing-in phase but no model 1"))?;
    let c1 = pod_project(&pipeline.basis_1, initial_full_window)?;
    let r1 = rollout(model_1, &c1.transpose(), theta, h1).map_err(|e| e.in_phase("phase 1"))?;
    let lifted_1 = pipeline.basis_1.lift(&r1.predicted)?;
    if h2 == 0 {
        return Ok(PipelineRollout {
            full: lifted_1,
            coeffs_1: r1.predicted,
            coeffs_2: Matrix::zeros(pipeline.basis_2.n_pod(), 0),
            phase_1_steps: h1,
            wall_time: start.elapsed(),
        });
    }
    let history = hstack(&c1, &r1.predicted)?;
    let last_1 = window_rows(&history, history.cols(), w);
    let window_2 = matmul(&pipeline.transfer, &last_1.transpose())?.transpose();
    let r2 = rollout(&pipeline.model_2, &window_2, theta, h2).map_err(|e| e.in_phase("phase 2"))?;
    let lifted_2 = pipeline.basis_2.lift(&r2.predicted)?;
    Ok(PipelineRollout {
        full: hstack(&lifted_1, &lifted_2)?,
        coeffs_1: r1.predicted,
        coeffs_2: r2.predicted,
        phase_1_steps: h1,
        wall_time: start.elapsed(),
    })
}

pub fn hstack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(RomError::shape("hstack: row counts differ"));
    }
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        row[..a.cols()].copy_from_slice(a.row(i));
        row[a.cols()..].copy_from_slice(b.row(i));
    }
    Ok(out)
}

/// Per-column relative L2 error `‖pred − truth‖ / ‖truth‖`.
pub fn relative_errors(pred: &Matrix, truth: &Matrix) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() {
        return Err(RomError::shape("prediction and truth differ in shape"));
    }
    Ok((0..truth.cols())
        .map(|j| {
            let (mut d2, mut n2) = (0.0, 0.0);
            for i in 0..truth.rows() {
                let d = pred[(i, j)] - truth[(i, j)];
                d2 += d * d;
                n2 += truth[(i, j)] * truth[(i, j)];
            }
            if n2 > 0.0 {
                (d2 / n2).sqrt()
            } else {
                d2.sqrt()
            }
        })
        .collect())
}

/// First start index where a `window`-long stretch is reproduced later in the
/// series with similarity `2⟨a,b⟩ / (‖a‖² + ‖b‖²)` above `threshold`.
///
/// Shifts below the first local minimum of the similarity are skipped so that
/// smooth signals do not match themselves at lag 1.
pub fn suggest_swing_in(series: &Matrix, window: usize, threshold: f64) -> Option<usize> {
    let t_len = series.cols();
    if window == 0 || 2 * window + 1 > t_len {
        return None;
    }
    let rows = series.transpose();
    let flat = rows.as_slice();
    let d = series.rows();
    let seg = |t: usize| &flat[t * d..(t + window) * d];
    for t in 0..t_len - 2 * window {
        let a = seg(t);
        let aa: f64 = a.iter().map(|v| v * v).sum();
        let mut prev = f64::INFINITY;
        let mut descending = true;
        for tau in 1..=window {
            if t + tau + window > t_len {
                break;
            }
            let b = seg(t + tau);
            let bb: f64 = b.iter().map(|v| v * v).sum();
            let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let s = if aa + bb > 0.0 {
                2.0 * ab / (aa + bb)
            } else {
                1.0
            };
            if descending {
                if s > prev {
                    descending = false;
                } else {
                    prev = s;
                    continue;
                }
            }
            if s > threshold {
                return Some(t);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakPair {
    pub pred_bin: usize,
    pub true_bin: usize,
    /// Cycles per sample.
    pub pred_freq: f64,
    pub true_freq: f64,
}

/// Non-DC bins of the FFT magnitude spectrum of a series, sorted by magnitude.
///
/// The series is truncated to the largest power of two and its mean removed.
pub fn spectrum_peaks(series: &[f64]) -> Result<Vec<(usize, f64)>> {
    if series.len() < 4 {
        return Err(RomError::input("spectrum needs at least 4 samples"));
    }
    let n = 1usize << (usize::BITS - 1 - series.len().leading_zeros());
    let mean = series[..n].iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series[..n]
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut mags: Vec<(usize, f64)> = (1..=n / 2).map(|k| (k, buf[k].norm())).collect();
    mags.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(mags)
}

/// Dominant frequency of each row of the predicted and true coefficient series.
pub fn spectral_compare(pred: &Matrix, truth: &Matrix) -> Result<Vec<PeakPair>> {
    if pred.shape() != truth.shape() {
        return Err(RomError::shape("prediction and truth differ in shape"));
    }
    let n = 1usize << (usize::BITS - 1 - pred.cols().max(1).leading_zeros());
    (0..pred.rows())
        .map(|i| {
            let p = spectrum_peaks(pred.row(i))?[0].0;
            let t = spectrum_peaks(truth.row(i))?[0].0;
            Ok(PeakPair {
                pred_bin: p,
                true_bin: t,
                pred_freq: p as f64 / n as f64,
                true_freq: t as f64 / n as f64,
            })
        })
        .collect()
}
