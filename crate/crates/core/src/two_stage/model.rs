use super::clstm::{clstm_forward, CLstmModel};
use crate::clustering::ParameterPoint;
use crate::dataset::Normalizer;
use crate::error::{Result, RomError};
use crate::linalg::Matrix;
use crate::nn::{CellMode, Tensor3};

/// Partitioning-averaging forecaster: `k` local experts and the combiner G.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageModel {
    /// Physical-unit centroids, in expert order.
    pub centroids: Vec<ParameterPoint>,
    pub first_stage: Vec<CLstmModel>,
    pub second_stage: CLstmModel,
    pub normalizer: Normalizer,
    pub theta_normalizer: Normalizer,
    pub w: usize,
    pub m: usize,
}

/// Rows `[x_t, θ]` for `t` over the window.
pub fn first_stage_input(window: &Matrix, theta_norm: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(window.rows() * (window.cols() + theta_norm.len()));
    for t in 0..window.rows() {
        out.extend_from_slice(window.row(t));
        out.extend_from_slice(theta_norm);
    }
    out
}

/// One row per expert: `[flatten(f_i), θc_i − θ]`, in centroid order.
pub fn second_stage_input(
    locals: &[Matrix],
    centroids_norm: &[Vec<f64>],
    theta_norm: &[f64],
) -> Result<Vec<f64>> {
    if locals.len() != centroids_norm.len() {
        return Err(RomError::shape(format!(
            "{} expert predictions for {} centroids",
            locals.len(),
            centroids_norm.len()
        )));
    }
    let mut out = Vec::new();
    for (f, c) in locals.iter().zip(centroids_norm) {
        if c.len() != theta_norm.len() {
            return Err(RomError::shape("centroid and parameter dimensions differ"));
        }
        out.extend_from_slice(f.as_slice());
        out.extend(c.iter().zip(theta_norm).map(|(a, b)| a - b));
    }
    Ok(out)
}

fn single(model: &CLstmModel, steps: usize, features: usize, data: Vec<f64>) -> Result<Matrix> {
    let x = Tensor3::from_vec(1, steps, features, data)?;
    let (y, _) = clstm_forward(model, &x)?;
    let (m, z) = model.output_shape;
    Matrix::from_vec(m, z, y.into_vec())
}

/// Local prediction `m × z` of one expert from a normalized `w × z` window.
pub fn first_stage_forward(
    model: &CLstmModel,
    window: &Matrix,
    theta_norm: &[f64],
) -> Result<Matrix> {
    let features = window.cols() + theta_norm.len();
    single(
        model,
        window.rows(),
        features,
        first_stage_input(window, theta_norm),
    )
}

/// Combined prediction `m × z` from the `k` local predictions.
pub fn second_stage_forward(
    model: &CLstmModel,
    locals: &[Matrix],
    centroids_norm: &[Vec<f64>],
    theta_norm: &[f64],
) -> Result<Matrix> {
    let data = second_stage_input(locals, centroids_norm, theta_norm)?;
    let features = data.len() / locals.len().max(1);
    single(model, locals.len(), features, data)
}

impl TwoStageModel {
    pub fn k(&self) -> usize {
        self.first_stage.len()
    }

    pub fn z(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn p(&self) -> usize {
        self.theta_normalizer.dim()
    }

    pub fn centroids_normalized(&self) -> Result<Vec<Vec<f64>>> {
        self.centroids
            .iter()
            .map(|c| self.theta_normalizer.apply_point(c))
            .collect()
    }

    pub fn set_mode(&mut self, mode: CellMode) {
        for f in &mut self.first_stage {
            f.mode = mode;
        }
        self.second_stage.mode = mode;
    }

    /// Shape and consistency checks, run after assembly and after loading.
    pub fn validate(&self) -> Result<()> {
        let (k, z, p) = (self.k(), self.z(), self.p());
        if k == 0 || self.centroids.len() != k {
            return Err(RomError::shape(format!(
                "{} experts for {} centroids",
                k,
                self.centroids.len()
            )));
        }
        if self.w == 0 || self.m == 0 {
            return Err(RomError::input(
                "window length and horizon must be at least 1",
            ));
        }
        if self.centroids.iter().any(|c| c.dim() != p) {
            return Err(RomError::shape(
                "centroid dimension differs from parameter dimension",
            ));
        }
        for (i, f) in self.first_stage.iter().enumerate() {
            if f.input_features != z + p || f.output_shape != (self.m, z) {
                return Err(RomError::shape(format!(
                    "expert {i} has the wrong input or output shape"
                )));
            }
        }
        let g = &self.second_stage;
        if g.input_features != self.m * z + p || g.output_shape != (self.m, z) {
            return Err(RomError::shape(
                "second stage has the wrong input or output shape",
            ));
        }
        Ok(())
    }

    /// Expert predictions followed by G, all in normalized units.
    pub fn predict_normalized(&self, window: &Matrix, theta_norm: &[f64]) -> Result<Matrix> {
        if window.shape() != (self.w, self.z()) {
            return Err(RomError::shape(format!(
                "window must be {}x{}, got {:?}",
                self.w,
                self.z(),
                window.shape()
            )));
        }
        let locals = self
            .first_stage
            .iter()
            .map(|f| first_stage_forward(f, window, theta_norm))
            .collect::<Result<Vec<_>>>()?;
        second_stage_forward(
            &self.second_stage,
            &locals,
            &self.centroids_normalized()?,
            theta_norm,
        )
    }
}
