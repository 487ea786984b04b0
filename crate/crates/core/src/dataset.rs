//! Supervised windows cut from trajectories, per-cluster training sets and
//! min-max normalization.

use crate::clustering::{assign, Clustering, ParameterPoint};
use crate::error::{Result, RomError};
use crate::linalg::Matrix;
use crate::ode::Trajectory;

/// `w` consecutive states followed immediately by the next `m` states.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `w × z`, oldest row first.
    pub input: Matrix,
    /// `m × z`
    pub target: Matrix,
    pub theta: ParameterPoint,
    /// Index into the source trajectory list.
    pub trajectory: usize,
    /// Trajectory time index of `input` row 0.
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDataset {
    pub cluster_index: usize,
    pub samples: Vec<WindowSample>,
}

/// Keeps every `stride`-th state, starting with the first.
pub fn subsample(traj: &Trajectory, stride: usize) -> Result<Trajectory> {
    if stride == 0 {
        return Err(RomError::input("subsampling stride must be at least 1"));
    }
    let keep: Vec<usize> = (0..traj.len()).step_by(stride).collect();
    let mut states = Matrix::zeros(traj.dim(), keep.len());
    for (j, &t) in keep.iter().enumerate() {
        states.set_column(j, &traj.states.column(t));
    }
    Trajectory::new(traj.theta.clone(), traj.dt * stride as f64, states)
}

/// Number of windows `make_windows` produces.
pub fn window_count(len: usize, w: usize, m: usize, step: usize) -> usize {
    if len < w + m || step == 0 {
        0
    } else {
        (len - w - m) / step + 1
    }
}

/// Sliding stride-1 windows.
pub fn make_windows(traj: &Trajectory, w: usize, m: usize) -> Result<Vec<WindowSample>> {
    make_windows_strided(traj, w, m, 1, 0)
}

/// Windows starting every `step` states; `source` is recorded on every sample.
pub fn make_windows_strided(
    traj: &Trajectory,
    w: usize,
    m: usize,
    step: usize,
    source: usize,
) -> Result<Vec<WindowSample>> {
    if w == 0 || m == 0 || step == 0 {
        return Err(RomError::input(
            "window length, horizon and stride must be at least 1",
        ));
    }
    if traj.len() < w + m {
        return Err(RomError::input(format!(
            "trajectory of {} states is too short for w = {w}, m = {m}",
            traj.len()
        )));
    }
    let rows = traj.rows(0, traj.len());
    let count = window_count(traj.len(), w, m, step);
    Ok((0..count)
        .map(|i| {
            let start = i * step;
            WindowSample {
                input: rows.row_range(start, start + w),
                target: rows.row_range(start + w, start + w + m),
                theta: traj.theta.clone(),
                trajectory: source,
                start,
            }
        })
        .collect())
}

/// Windows each trajectory on its own and pools the samples by the cluster
/// of the trajectory's parameter.
pub fn build_cluster_datasets(
    trajs: &[Trajectory],
    clustering: &Clustering,
    w: usize,
    m: usize,
    step: usize,
) -> Result<Vec<ClusterDataset>> {
    let mut out: Vec<ClusterDataset> = (0..clustering.k)
        .map(|c| ClusterDataset {
            cluster_index: c,
            samples: Vec::new(),
        })
        .collect();
    for (i, tr) in trajs.iter().enumerate() {
        let c = assign(clustering, &tr.theta)?;
        out[c]
            .samples
            .extend(make_windows_strided(tr, w, m, step, i)?);
    }
    Ok(out)
}

/// Per-feature min-max scaling to `[-1, 1]`, fitted once on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// Fits on the columns of `dim × T` state matrices.
    pub fn fit<'a>(data: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut it = data.into_iter().peekable();
        let dim = it
            .peek()
            .map(|m| m.rows())
            .ok_or_else(|| RomError::input("no data to fit"))?;
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for m in it {
            if m.rows() != dim {
                return Err(RomError::shape("normalizer data with mixed dimensions"));
            }
            for i in 0..dim {
                for &v in m.row(i) {
                    min[i] = min[i].min(v);
                    max[i] = max[i].max(v);
                }
            }
        }
        if min.iter().chain(&max).any(|v| !v.is_finite()) {
            return Err(RomError::input(
                "normalizer fitted on empty or non-finite data",
            ));
        }
        Ok(Self { min, max })
    }

    /// Fits on parameter points (one feature per coordinate).
    pub fn fit_points(points: &[ParameterPoint]) -> Result<Self> {
        let columns: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
        let m = Matrix::from_columns(&columns)?;
        Self::fit([&m])
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    #[inline]
    pub fn apply_value(&self, i: usize, v: f64) -> f64 {
        let span = self.max[i] - self.min[i];
        if span > 0.0 {
            2.0 * (v - self.min[i]) / span - 1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn invert_value(&self, i: usize, v: f64) -> f64 {
        let span = self.max[i] - self.min[i];
        if span > 0.0 {
            (v + 1.0) * 0.5 * span + self.min[i]
        } else {
            self.min[i]
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| self.apply_value(i, v))
            .collect()
    }

    pub fn invert_vec(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| self.invert_value(i, v))
            .collect()
    }

    /// Normalizes a `dim × T` state matrix.
    pub fn apply(&self, states: &Matrix) -> Result<Matrix> {
        self.map_rows(states, |i, v| self.apply_value(i, v))
    }

    pub fn invert(&self, states: &Matrix) -> Result<Matrix> {
        self.map_rows(states, |i, v| self.invert_value(i, v))
    }

    /// Normalizes a time-major `T × dim` block.
    pub fn apply_rows(&self, rows: &Matrix) -> Result<Matrix> {
        Ok(self.apply(&rows.transpose())?.transpose())
    }

    pub fn invert_rows(&self, rows: &Matrix) -> Result<Matrix> {
        Ok(self.invert(&rows.transpose())?.transpose())
    }

    fn map_rows(&self, states: &Matrix, f: impl Fn(usize, f64) -> f64) -> Result<Matrix> {
        if states.rows() != self.dim() {
            return Err(RomError::shape(format!(
                "normalizer over {} features applied to {} rows",
                self.dim(),
                states.rows()
            )));
        }
        let mut out = states.clone();
        for i in 0..out.rows() {
            for v in out.row_mut(i) {
                *v = f(i, *v);
            }
        }
        Ok(out)
    }

    pub fn apply_trajectory(&self, traj: &Trajectory) -> Result<Trajectory> {
        Trajectory::new(traj.theta.clone(), traj.dt, self.apply(&traj.states)?)
    }

    pub fn apply_point(&self, p: &ParameterPoint) -> Result<Vec<f64>> {
        if p.dim() != self.dim() {
            return Err(RomError::shape(
                "parameter dimension differs from its normalizer",
            ));
        }
        Ok(self.apply_vec(&p.0))
    }
}

/// Structured summary of a set of cluster datasets for experiment logs.
pub fn manifest(
    datasets: &[ClusterDataset],
    w: usize,
    m: usize,
    stride: usize,
    norm: &Normalizer,
) -> String {
    let mut s = String::new();
    s.push_str(&format!("w = {w}\nm = {m}\nstride = {stride}\n"));
    s.push_str(&format!(
        "samples_per_cluster = [{}]\n",
        datasets
            .iter()
            .map(|d| d.samples.len().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    s.push_str(&format!(
        "normalizer_min = {:?}\nnormalizer_max = {:?}\n",
        norm.min, norm.max
    ));
    s
}
